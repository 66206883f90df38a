"""Comparison harness: squared-error ESS for sampler arms on known targets.

An experiment runs R replicate chains per arm.  All arms of a chain share
the same seeds and the same tuned settings, so arm comparisons are paired
and two identical arms give identical output bit for bit.  Each chain is
reduced in place to one estimate per (parameter, statistic); across chains

    mse_cell = mean_r (estimate_r - truth)^2
    ess_cell = n * mse_iid(n) / mse_cell

with n the post-burn-in iteration count and mse_iid the error an estimator
would have from n independent target draws (analytic for the built-in
targets, simulated for the principal-component summaries).  Output is one
CSV row per (parameter, statistic, arm) plus a JSON sidecar; both are
deterministic functions of the config, with no timestamps, so reruns are
byte-identical.

Vector-level statistics (``pca_eig``, ``pca_angle``) are reported with
parameter index -1.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import special as sp
from scipy import stats as sps

from .adapt import tune_chain
from .baseline import CalderheadKernel
from .estimators import (
    ess_from_mse,
    gaussian_iid_mse,
    integrated_autocorr_time,
    mse,
    pca_statistics,
    scalar_statistic,
)
from .hmc import (
    ChainConfigError,
    HmcKernel,
    PathLengthDistribution,
    SubsetScheme,
    run_chain,
)
from .nuts import NutsKernel, RecycleStrategy
from .phase import MassMatrix
from .targets import (
    GaussianSpec,
    TargetDensity,
    load_logistic_csv,
    load_returns_csv,
    make_gaussian,
    make_log_gamma,
    make_logistic_model,
    make_sv_model,
)

VECTOR_PARAM = -1
SCALAR_STATISTICS = ("mean", "variance")  # plus any qX label
VECTOR_STATISTICS = ("pca_eig", "pca_angle")

_TUNE_SEED_OFFSET = 1_000_003
_COMPARE_SEED_OFFSET = 2_000_003
_EVAL_SEED_OFFSET = 3_000_003
_EVAL_GRADS_PER_ITERATION = 8
_SIM_SPAWN_KEY = 4_000_001


class ConfigError(ChainConfigError):
    pass


class NumericalFailure(RuntimeError):
    """Raised when divergences exceed the configured rate in any chain."""


def _is_scalar_statistic(name: str) -> bool:
    if name in SCALAR_STATISTICS:
        return True
    if name.startswith("q"):
        try:
            q = float(name[1:])
        except ValueError:
            return False
        return 0.0 < q < 1.0
    return False


@dataclass(frozen=True)
class TruthModel:
    """Exact values and iid-error references for a benchmark target."""

    mean: np.ndarray
    variance: np.ndarray
    quantile: Callable[[float], np.ndarray]
    iid_mse: Callable[[str, int, int], float]
    eigvals: Optional[np.ndarray] = None
    eigvecs: Optional[np.ndarray] = None
    sample: Optional[Callable] = None

    def true_value(self, statistic: str, param_index: int) -> float:
        if statistic == "pca_eig":
            return float(self.eigvals[0])
        if statistic == "pca_angle":
            return 0.0
        if statistic == "mean":
            return float(self.mean[param_index])
        if statistic == "variance":
            return float(self.variance[param_index])
        if statistic.startswith("q"):
            return float(self.quantile(float(statistic[1:]))[param_index])
        raise ConfigError(f"unknown statistic {statistic!r}")


def _gaussian_truth(spec: GaussianSpec) -> TruthModel:
    variances = spec.marginal_variances()
    eigvals, eigvecs = spec.eigenpairs()

    def iid(statistic: str, param_index: int, n: int) -> float:
        return gaussian_iid_mse(statistic, float(variances[param_index]), n)

    return TruthModel(
        mean=spec.mean(),
        variance=variances,
        quantile=spec.marginal_quantile,
        iid_mse=iid,
        eigvals=eigvals,
        eigvecs=eigvecs,
        sample=spec.sample,
    )


def _log_gamma_truth(shape: float, rate: float) -> TruthModel:
    mean = sp.digamma(shape) - math.log(rate)
    var = sp.polygamma(1, shape)
    mu4 = sp.polygamma(3, shape) + 3.0 * var**2

    def quantile(q: float) -> np.ndarray:
        return np.array([math.log(sps.gamma.ppf(q, shape, scale=1.0 / rate))])

    def pdf(x: float) -> float:
        return math.exp(
            shape * x - rate * math.exp(x) + shape * math.log(rate) - sp.gammaln(shape)
        )

    def iid(statistic: str, param_index: int, n: int) -> float:
        if statistic == "mean":
            return var / n
        if statistic == "variance":
            return (mu4 - var**2) / n
        if statistic.startswith("q"):
            q = float(statistic[1:])
            xq = float(quantile(q)[0])
            return q * (1.0 - q) / (n * pdf(xq) ** 2)
        raise ConfigError(f"unknown statistic {statistic!r}")

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.log(rng.gamma(shape, 1.0 / rate, size=(size, 1)))

    return TruthModel(
        mean=np.array([mean]),
        variance=np.array([var]),
        quantile=quantile,
        iid_mse=iid,
        sample=sample,
    )


def build_target(spec: dict) -> tuple[TargetDensity, Optional[TruthModel], np.ndarray]:
    """Target density, truth (None for data-driven targets), and a start point."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("target spec must be a dict with a 'kind'")
    kind = spec["kind"]
    if kind == "gaussian-iid":
        dim = int(spec.get("dim", 1))
        var = float(spec.get("variance", 1.0))
        gspec = GaussianSpec.diagonal(np.full(dim, var))
    elif kind == "gaussian-scaled":
        dim = int(spec.get("dim", 10))
        scales = np.arange(1, dim + 1, dtype=float)
        gspec = GaussianSpec.diagonal(scales**2)
    elif kind == "gaussian-diagonal":
        gspec = GaussianSpec.diagonal(np.asarray(spec["variances"], dtype=float))
    elif kind == "gaussian-correlated":
        dim = int(spec.get("dim", 2))
        rho = float(spec.get("rho", 0.9))
        if not -1.0 < rho < 1.0:
            raise ConfigError("correlation must lie in (-1, 1)")
        scales = np.asarray(spec.get("scales", np.ones(dim)), dtype=float)
        corr = np.full((dim, dim), rho) + (1.0 - rho) * np.eye(dim)
        cov = corr * np.outer(scales, scales)
        gspec = GaussianSpec.dense(cov)
    elif kind == "log-gamma":
        shape = float(spec.get("shape", 1.0))
        rate = float(spec.get("rate", 1.0))
        if shape <= 0 or rate <= 0:
            raise ConfigError("log-gamma shape and rate must be positive")
        target, _ = make_log_gamma(shape, rate)
        theta0 = np.array([math.log(shape / rate)])
        return target, _log_gamma_truth(shape, rate), theta0
    elif kind == "logistic":
        if "csv" not in spec:
            raise ConfigError("logistic target needs a 'csv' path")
        try:
            data = load_logistic_csv(spec["csv"])
        except OSError as exc:
            raise ConfigError(f"cannot read {spec['csv']}: {exc}") from exc
        target = make_logistic_model(data)
        return target, None, np.zeros(target.dim)
    elif kind == "stochastic-volatility":
        if "csv" not in spec:
            raise ConfigError("stochastic-volatility target needs a 'csv' path")
        try:
            series = load_returns_csv(spec["csv"])
        except OSError as exc:
            raise ConfigError(f"cannot read {spec['csv']}: {exc}") from exc
        target = make_sv_model(
            series,
            walk_scale=float(spec.get("walk_scale", 100.0)),
            precision_shape=float(spec.get("precision_shape", 0.5)),
            precision_rate=float(spec.get("precision_rate", 0.5)),
            s0_mean=float(spec.get("s0_mean", 0.1)),
        )
        rms = float(np.sqrt(np.mean(series.log_returns**2)))
        return target, None, np.full(target.dim, math.log(max(rms, 1e-12)))
    else:
        raise ConfigError(f"unknown target kind {kind!r}")
    target = make_gaussian(gspec)
    return target, _gaussian_truth(gspec), np.zeros(target.dim)


@dataclass
class ExperimentConfig:
    """Everything a comparison run depends on; JSON round-trippable."""

    target: dict
    algorithm: str = "hmc"
    arms: list = field(default_factory=list)
    n_chains: int = 8
    n_iterations: int = 1000
    burn_in: int = 100
    eps: Optional[float] = None
    path_steps: Optional[dict] = None
    max_depth: int = 10
    n_adapt: int = 0
    target_accept: float = 0.7
    statistics: list = field(default_factory=lambda: ["mean", "variance", "q0.975"])
    params: Optional[list] = None
    seed: int = 0
    workers: int = 1
    grad_budget: Optional[int] = None
    divergence_limit: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "target" not in data:
            raise ConfigError("config needs a 'target'")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self, require_truth: bool = True) -> None:
        if self.algorithm not in ("hmc", "nuts", "calderhead"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not self.arms:
            raise ConfigError("at least one arm is required")
        names = []
        for arm in self.arms:
            if not isinstance(arm, dict) or "name" not in arm:
                raise ConfigError("each arm must be a dict with a 'name'")
            names.append(arm["name"])
        if len(set(names)) != len(names):
            raise ConfigError("arm names must be unique")
        if self.n_chains < 2:
            raise ConfigError(
                "need at least two replicate chains to estimate squared error"
            )
        if self.n_iterations < 1 or not 0 <= self.burn_in < self.n_iterations:
            raise ConfigError("need n_iterations >= 1 and 0 <= burn_in < n_iterations")
        if self.eps is not None and self.eps <= 0:
            raise ConfigError("step size must be positive")
        if self.algorithm in ("hmc", "calderhead") and self.path_steps is None:
            raise ConfigError(f"{self.algorithm} needs path_steps")
        if self.algorithm == "calderhead":
            if self.path_steps.get("kind") != "fixed":
                raise ConfigError("the windowed baseline needs a fixed step count")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.n_adapt < 0:
            raise ConfigError("n_adapt must be nonnegative")
        if not self.statistics:
            raise ConfigError("at least one statistic is required")
        target, truth, _ = build_target(self.target)
        dim = target.dim
        if require_truth and truth is None:
            raise ConfigError(
                "target has no closed-form truth; use the reference-chain runner"
            )
        for s in self.statistics:
            if s in VECTOR_STATISTICS:
                if truth is None or truth.eigvals is None or dim < 2:
                    raise ConfigError(
                        f"statistic {s!r} needs a multivariate target with known eigenstructure"
                    )
            elif not _is_scalar_statistic(s):
                raise ConfigError(f"unknown statistic {s!r}")
        if self.params is not None:
            for j in self.params:
                if not 0 <= int(j) < dim:
                    raise ConfigError(f"parameter index {j} out of range for dim {dim}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.grad_budget is not None and self.grad_budget < 1:
            raise ConfigError("grad_budget must be positive")
        if not 0.0 <= self.divergence_limit <= 1.0:
            raise ConfigError("divergence_limit must lie in [0, 1]")


def _path_length(config: ExperimentConfig) -> PathLengthDistribution:
    d = config.path_steps
    kind = d.get("kind")
    if kind == "fixed":
        return PathLengthDistribution.fixed(int(d["steps"]))
    if kind == "uniform":
        return PathLengthDistribution.uniform_steps(int(d["low"]), int(d["high"]))
    if kind == "jitter":
        return PathLengthDistribution.time_jitter(
            float(d["tau_low"]), float(d["tau_high"])
        )
    raise ConfigError(f"unknown path_steps kind {kind!r}")


def _subset_scheme(d: Optional[dict]) -> SubsetScheme:
    if d is None:
        return SubsetScheme.full()
    kind = d.get("kind", "full")
    if kind == "full":
        return SubsetScheme.full()
    if kind == "random":
        return SubsetScheme.random(int(d["m"]))
    if kind == "strided":
        return SubsetScheme.strided(int(d["exponent"]))
    raise ConfigError(f"unknown subset kind {kind!r}")


def _nuts_strategy(rec) -> RecycleStrategy:
    if rec == "none" or rec is None:
        return RecycleStrategy.none()
    if not isinstance(rec, dict):
        raise ConfigError(f"arm recycle must be 'none' or an object, got {rec!r}")
    name = rec.get("strategy")
    if name == "simple":
        return RecycleStrategy.simple(int(rec["k"]))
    if name == "rao-blackwell":
        return RecycleStrategy.rao_blackwell()
    if name == "evenly":
        return RecycleStrategy.evenly(int(rec["k"]))
    if name == "all-leaves":
        return RecycleStrategy.all_leaves()
    raise ConfigError(f"unknown recycle strategy {name!r}")


def build_kernel(
    config: ExperimentConfig,
    arm: dict,
    eps: float,
    mass: MassMatrix,
    target: TargetDensity,
):
    if config.algorithm == "hmc":
        rec = arm.get("recycle", "none")
        if rec == "none" or rec is None:
            return HmcKernel(target, mass, eps, _path_length(config))
        if not isinstance(rec, dict):
            raise ConfigError(
                f"arm recycle must be 'none' or an object, got {rec!r}"
            )
        return HmcKernel(
            target,
            mass,
            eps,
            _path_length(config),
            recycle=rec.get("mode", "traversed"),
            subset=_subset_scheme(rec.get("subset")),
        )
    if config.algorithm == "nuts":
        return NutsKernel(
            target,
            mass,
            eps,
            max_depth=config.max_depth,
            strategy=_nuts_strategy(arm.get("recycle", "none")),
        )
    if config.algorithm == "calderhead":
        return CalderheadKernel(
            target,
            mass,
            eps,
            n_steps=int(config.path_steps["steps"]),
            rao_blackwell=bool(arm.get("rao_blackwell", False)),
        )
    raise ConfigError(f"unknown algorithm {config.algorithm!r}")


def _standard_kernel_factory(config: ExperimentConfig, target: TargetDensity):
    arm = {"name": "tuning", "recycle": "none"}
    return lambda eps, mass: build_kernel(config, arm, eps, mass, target)


def _budget_reserve(config: ExperimentConfig, eps: float) -> int:
    if config.algorithm == "nuts":
        return 2 ** (config.max_depth + 1)
    return _path_length(config).max_steps(eps)


def _chain_settings(
    config: ExperimentConfig, target: TargetDensity, theta0: np.ndarray, r: int
) -> tuple[float, MassMatrix]:
    """Step size and mass for chain r, shared by every arm of that chain."""
    if config.eps is not None and config.n_adapt == 0:
        return config.eps, MassMatrix.identity(target.dim)
    factory = _standard_kernel_factory(config, target)
    if config.eps is None:
        tr = tune_chain(
            factory,
            target,
            theta0,
            config.n_adapt,
            seed=config.seed + _TUNE_SEED_OFFSET,
            chain_index=r,
            eps0=0.1,
            target_accept=config.target_accept,
        )
    else:
        tr = tune_chain(
            factory,
            target,
            theta0,
            config.n_adapt,
            seed=config.seed + _TUNE_SEED_OFFSET,
            chain_index=r,
            eps0=config.eps,
            target_accept=config.target_accept,
            da_iters_identity=0,
            da_iters_mass=0,
        )
    return tr.eps, tr.mass


def _arm_recycles(config: ExperimentConfig, arm: dict) -> bool:
    if config.algorithm == "calderhead":
        return True
    rec = arm.get("recycle", "none")
    return rec not in ("none", None)


def _cell_keys(config: ExperimentConfig, dim: int) -> list[tuple[int, str]]:
    params = (
        [int(j) for j in config.params] if config.params is not None else range(dim)
    )
    keys: list[tuple[int, str]] = []
    for s in config.statistics:
        if s in VECTOR_STATISTICS:
            keys.append((VECTOR_PARAM, s))
        else:
            keys.extend((int(j), s) for j in params)
    return keys


def _chain_estimates(
    config: ExperimentConfig,
    truth: TruthModel,
    values: np.ndarray,
    weights: np.ndarray,
) -> dict[tuple[int, str], float]:
    out: dict[tuple[int, str], float] = {}
    pca_pair = None
    for key in _cell_keys(config, values.shape[1]):
        j, s = key
        if s in VECTOR_STATISTICS:
            if pca_pair is None:
                pca_pair = pca_statistics(values, weights, truth.eigvals, truth.eigvecs)
            out[key] = pca_pair[0] if s == "pca_eig" else pca_pair[1]
        else:
            out[key] = scalar_statistic(s, values[:, j], weights)
    return out


def _draw_matrix(result, recycled: bool) -> tuple[np.ndarray, np.ndarray]:
    if recycled:
        if result.recycled_weights.size == 0:
            raise NumericalFailure("recycling arm produced no draws")
        return result.recycled_thetas, result.recycled_weights
    return result.states, np.ones(len(result.states))


def _run_one_chain(config: ExperimentConfig, r: int) -> dict:
    target, truth, theta0 = build_target(config.target)
    eps, mass = _chain_settings(config, target, theta0, r)
    per_arm = {}
    for arm in config.arms:
        kernel = build_kernel(config, arm, eps, mass, target)
        result = run_chain(
            kernel,
            theta0,
            config.n_iterations,
            config.burn_in,
            seed=config.seed,
            chain_index=r,
            grad_budget=config.grad_budget,
            budget_reserve=_budget_reserve(config, eps) if config.grad_budget else 0,
        )
        values, weights = _draw_matrix(result, _arm_recycles(config, arm))
        per_arm[arm["name"]] = {
            "estimates": _chain_estimates(config, truth, values, weights),
            "divergence_rate": result.diagnostics.divergence_rate(),
            "n_kept": len(result.states),
        }
    return per_arm


def _run_one_chain_mp(payload: tuple[dict, int]) -> dict:
    config_dict, r = payload
    return _run_one_chain(ExperimentConfig.from_dict(config_dict), r)


@dataclass
class EssCell:
    param_index: int
    statistic: str
    arm: str
    mse: float
    ess: float
    ess_ratio: float
    log2_ratio: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list
    n_kept: dict
    divergence_rates: dict

    def arm_mean_ess(self, arm: str) -> float:
        vals = [c.ess for c in self.cells if c.arm == arm]
        return float(np.mean(vals))

    def cell(self, param_index: int, statistic: str, arm: str) -> EssCell:
        for c in self.cells:
            if (c.param_index, c.statistic, c.arm) == (param_index, statistic, arm):
                return c
        raise KeyError((param_index, statistic, arm))

    def summary_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_kept": self.n_kept,
            "divergence_rates": self.divergence_rates,
            "arm_mean_ess": {
                arm["name"]: self.arm_mean_ess(arm["name"])
                for arm in self.config.arms
            },
        }


def _simulated_iid_mse(
    config: ExperimentConfig, truth: TruthModel, statistic: str, n: int
) -> float:
    """Monte Carlo iid reference for vector statistics, deterministic in the seed."""
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(_SIM_SPAWN_KEY,))
    )
    n_reps = 200
    sq = np.empty(n_reps)
    truth_val = truth.true_value(statistic, VECTOR_PARAM)
    for i in range(n_reps):
        draws = truth.sample(rng, n)
        lam, angle = pca_statistics(
            draws, np.ones(n), truth.eigvals, truth.eigvecs
        )
        est = lam if statistic == "pca_eig" else angle
        sq[i] = (est - truth_val) ** 2
    return float(sq.mean())


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """All chains, all arms; aggregate squared errors into ESS cells."""
    config.validate()
    _, truth, _ = build_target(config.target)

    if config.workers > 1:
        payloads = [(config.to_dict(), r) for r in range(config.n_chains)]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chain_results = list(pool.map(_run_one_chain_mp, payloads))
    else:
        chain_results = [_run_one_chain(config, r) for r in range(config.n_chains)]

    arm_names = [arm["name"] for arm in config.arms]
    divergence_rates = {}
    n_kept = {}
    for name in arm_names:
        rates = [cr[name]["divergence_rate"] for cr in chain_results]
        worst = max(rates)
        divergence_rates[name] = float(np.mean(rates))
        if worst > config.divergence_limit:
            raise NumericalFailure(
                f"arm {name!r}: divergence rate {worst:.3f} exceeds "
                f"limit {config.divergence_limit:.3f}"
            )
        n_kept[name] = int(round(np.mean([cr[name]["n_kept"] for cr in chain_results])))

    dim = truth.mean.shape[0]
    keys = _cell_keys(config, dim)
    iid_cache: dict[tuple[int, str, str], float] = {}
    cells: list[EssCell] = []
    base_ess: dict[tuple[int, str], float] = {}
    for name in arm_names:
        n = n_kept[name]
        for key in keys:
            j, s = key
            estimates = np.array([cr[name]["estimates"][key] for cr in chain_results])
            cell_mse = mse(estimates, truth.true_value(s, j))
            cache_key = (n, s, "vec" if s in VECTOR_STATISTICS else str(j))
            if cache_key not in iid_cache:
                if s in VECTOR_STATISTICS:
                    iid_cache[cache_key] = _simulated_iid_mse(config, truth, s, n)
                else:
                    iid_cache[cache_key] = truth.iid_mse(s, j, n)
            ess = ess_from_mse(cell_mse, iid_cache[cache_key], n)
            if name == arm_names[0]:
                base_ess[key] = ess
            ratio = ess / base_ess[key]
            cells.append(
                EssCell(
                    param_index=j,
                    statistic=s,
                    arm=name,
                    mse=float(cell_mse),
                    ess=float(ess),
                    ess_ratio=float(ratio),
                    log2_ratio=float(math.log2(ratio)),
                )
            )
    return ExperimentResult(
        config=config, cells=cells, n_kept=n_kept, divergence_rates=divergence_rates
    )


def write_cells_csv(path: str, cells: list) -> None:
    """One row per cell; floats via repr so identical runs are byte-identical."""
    with open(path, "w") as f:
        f.write("param_index,statistic,arm,mse,ess,ess_ratio,log2_ratio\n")
        for c in cells:
            f.write(
                f"{c.param_index},{c.statistic},{c.arm},"
                f"{float(c.mse)!r},{float(c.ess)!r},"
                f"{float(c.ess_ratio)!r},{float(c.log2_ratio)!r}\n"
            )


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def write_experiment_outputs(result: ExperimentResult, out_base: str) -> tuple[str, str]:
    csv_path = out_base + ".csv"
    json_path = out_base + ".json"
    write_cells_csv(csv_path, result.cells)
    write_json(json_path, result.summary_dict())
    return csv_path, json_path


@dataclass
class SweepResult:
    experiment: ExperimentResult
    ks: list
    mean_ess: dict
    reference_arm: str
    chosen_k: Optional[int]
    saturated: bool

    def summary_dict(self) -> dict:
        return {
            "config": self.experiment.config.to_dict(),
            "ks": list(self.ks),
            "mean_ess": self.mean_ess,
            "reference_arm": self.reference_arm,
            "chosen_k": self.chosen_k,
            "saturated": self.saturated,
        }


def run_recycle_count_sweep(
    config: ExperimentConfig, ks: tuple[int, ...] = (16, 8, 4, 2, 1)
) -> SweepResult:
    """How many recycled draws per iteration are worth keeping.

    Arms are the simple scheme at each K (descending) plus an
    all-acceptable-states reference; the chosen K is the smallest whose mean
    ESS over cells reaches 95% of the reference's.
    """
    if config.algorithm != "nuts":
        raise ConfigError("the recycle-count sweep applies to the nuts algorithm")
    if any(k < 1 for k in ks) or len(set(ks)) != len(ks):
        raise ConfigError("sweep K values must be distinct positive integers")
    ks = tuple(sorted(ks, reverse=True))
    arms = [
        {"name": f"k{k}", "recycle": {"strategy": "simple", "k": int(k)}} for k in ks
    ]
    reference_arm = "all-acceptable"
    arms.append({"name": reference_arm, "recycle": {"strategy": "rao-blackwell"}})
    sweep_config = replace(config, arms=arms)
    experiment = run_experiment(sweep_config)
    mean_ess = {arm["name"]: experiment.arm_mean_ess(arm["name"]) for arm in arms}
    threshold = 0.95 * mean_ess[reference_arm]
    qualifying = [k for k in ks if mean_ess[f"k{k}"] >= threshold]
    chosen_k = min(qualifying) if qualifying else None
    return SweepResult(
        experiment=experiment,
        ks=list(ks),
        mean_ess=mean_ess,
        reference_arm=reference_arm,
        chosen_k=chosen_k,
        saturated=chosen_k is not None,
    )


def write_sweep_outputs(result: SweepResult, out_base: str) -> tuple[str, str]:
    csv_path = out_base + ".csv"
    json_path = out_base + ".json"
    ref = result.mean_ess[result.reference_arm]
    with open(csv_path, "w") as f:
        f.write("arm,k,mean_ess,relative_to_reference\n")
        for k in result.ks:
            v = result.mean_ess[f"k{k}"]
            f.write(f"k{k},{k},{float(v)!r},{float(v / ref)!r}\n")
        f.write(f"{result.reference_arm},-1,{float(ref)!r},{1.0!r}\n")
    write_json(json_path, result.summary_dict())
    return csv_path, json_path


def _recycled_cov_kernel_factory(config: ExperimentConfig, target: TargetDensity):
    """Kernel factory for the covariance window when tuning with recycling."""
    if config.algorithm == "hmc":
        arm = {"name": "cov", "recycle": {"mode": "traversed", "subset": {"kind": "full"}}}
    elif config.algorithm == "nuts":
        arm = {"name": "cov", "recycle": {"strategy": "rao-blackwell"}}
    else:
        arm = {"name": "cov", "rao_blackwell": True}
    return lambda eps, mass: build_kernel(config, arm, eps, mass, target)


def _eval_block_score(
    config: ExperimentConfig,
    target: TargetDensity,
    truth: TruthModel,
    theta0: np.ndarray,
    eps: float,
    mass: MassMatrix,
    pair_index: int,
    eval_chains: int,
) -> float:
    """Mean over cells of log2 ESS from a block of budgeted evaluation chains.

    Each chain runs until a fixed gradient-evaluation budget is spent, so a
    tuning whose trajectories need more leapfrog steps per unit of integration
    time completes fewer draws: the score measures error per gradient, not per
    draw.  The block's chain seeds depend only on the pair index, so the two
    tunings of a pair are scored against identical evaluation randomness.
    Chains start from exact target draws when the truth model can provide
    them: a start at the fixed initial point (the mode for the analytic
    targets) would hand slow-mixing settings artificially small errors on the
    mean cells.
    """
    kernel = build_kernel(config, {"name": "eval", "recycle": "none"}, eps, mass, target)
    budget = (
        config.grad_budget
        if config.grad_budget is not None
        else _EVAL_GRADS_PER_ITERATION * config.n_iterations
    )
    reserve = _budget_reserve(config, eps) + 1
    per_chain: list[dict] = []
    kept_counts: list[int] = []
    for j in range(eval_chains):
        chain_index = pair_index * eval_chains + j
        start_rng = np.random.default_rng(
            np.random.SeedSequence(
                config.seed + _EVAL_SEED_OFFSET, spawn_key=(chain_index,)
            )
        )
        if truth.sample is not None:
            start = np.asarray(truth.sample(start_rng, 1), dtype=float)[0]
            burn_in = 0
        else:
            start = theta0
            burn_in = config.burn_in
        result = run_chain(
            kernel,
            start,
            n_iterations=budget,
            burn_in=burn_in,
            seed=config.seed + _EVAL_SEED_OFFSET,
            chain_index=chain_index,
            grad_budget=budget,
            budget_reserve=reserve,
        )
        values, weights = result.states, np.ones(len(result.states))
        kept_counts.append(len(result.states))
        per_chain.append(_chain_estimates(config, truth, values, weights))
    n = max(1, round(float(np.mean(kept_counts))))
    scores = []
    for key in per_chain[0]:
        j, s = key
        if s in VECTOR_STATISTICS:
            continue
        ests = np.array([c[key] for c in per_chain])
        mse_chain = mse(ests, truth.true_value(s, j))
        if mse_chain == 0.0:
            continue
        scores.append(math.log2(ess_from_mse(mse_chain, truth.iid_mse(s, j, n), n)))
    return float(np.mean(scores))


@dataclass
class TuningComparisonResult:
    n_pairs: int
    wins: int
    win_fraction: float
    scores_recycled: list
    scores_standard: list

    def summary_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "wins": self.wins,
            "win_fraction": self.win_fraction,
            "scores_recycled": self.scores_recycled,
            "scores_standard": self.scores_standard,
        }


def run_tuning_comparison(
    config: ExperimentConfig, eval_chains: int = 8
) -> TuningComparisonResult:
    """Does feeding recycled draws to the covariance window improve tuning?

    Each of n_chains pairs tunes twice from the same start (same tuning
    seeds): once with the plain covariance window, once with the recycled
    one.  Both tunings are then scored on an identical block of evaluation
    chains, and a pair is a win when the recycled tuning's mean log2 ESS is
    higher.  With n_adapt 0 the covariance window is empty in both arms, the
    tunings coincide, and every pair scores an exact tie.
    """
    config.validate()
    target, truth, theta0 = build_target(config.target)
    factory = _standard_kernel_factory(config, target)
    cov_factory = _recycled_cov_kernel_factory(config, target)
    eps0 = config.eps if config.eps is not None else 0.1

    scores_rec: list[float] = []
    scores_std: list[float] = []
    wins = 0
    for r in range(config.n_chains):
        common = dict(
            seed=config.seed + _COMPARE_SEED_OFFSET,
            chain_index=r,
            eps0=eps0,
            target_accept=config.target_accept,
        )
        t_std = tune_chain(factory, target, theta0, config.n_adapt, **common)
        t_rec = tune_chain(
            factory,
            target,
            theta0,
            config.n_adapt,
            make_cov_kernel=cov_factory,
            **common,
        )
        s_std = _eval_block_score(
            config, target, truth, theta0, t_std.eps, t_std.mass, r, eval_chains
        )
        s_rec = _eval_block_score(
            config, target, truth, theta0, t_rec.eps, t_rec.mass, r, eval_chains
        )
        scores_std.append(s_std)
        scores_rec.append(s_rec)
        if s_rec > s_std:
            wins += 1
    return TuningComparisonResult(
        n_pairs=config.n_chains,
        wins=wins,
        win_fraction=wins / config.n_chains,
        scores_recycled=scores_rec,
        scores_standard=scores_std,
    )


@dataclass
class ReferenceResult:
    n_kept: int
    mean: list
    variance: list
    q975: list
    autocorr_time: list

    def summary_dict(self) -> dict:
        return {
            "n_kept": self.n_kept,
            "mean": self.mean,
            "variance": self.variance,
            "q0.975": self.q975,
            "autocorr_time": self.autocorr_time,
        }


def run_reference_chain(config: ExperimentConfig) -> ReferenceResult:
    """One long plain chain: empirical moments plus autocorrelation times.

    For targets without closed-form truth, the output serves as the reference
    in place of analytic values, with ess ~ n / autocorr_time as the iid
    yardstick.
    """
    config.validate(require_truth=False)
    target, _, theta0 = build_target(config.target)
    eps, mass = _chain_settings(config, target, theta0, 0)
    kernel = build_kernel(config, {"name": "ref", "recycle": "none"}, eps, mass, target)
    result = run_chain(
        kernel, theta0, config.n_iterations, config.burn_in, seed=config.seed, chain_index=0
    )
    states = result.states
    w = np.ones(len(states))
    mean = [float(states[:, j].mean()) for j in range(target.dim)]
    var = [float(states[:, j].var()) for j in range(target.dim)]
    q = [
        float(scalar_statistic("q0.975", states[:, j], w)) for j in range(target.dim)
    ]
    iat = [float(integrated_autocorr_time(states[:, j])) for j in range(target.dim)]
    return ReferenceResult(
        n_kept=len(states), mean=mean, variance=var, q975=q, autocorr_time=iat
    )
