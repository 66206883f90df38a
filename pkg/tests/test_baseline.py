import numpy as np
import pytest

from rehmc.baseline import CalderheadKernel, calderhead_iteration, window_offset, _softmax
from rehmc.hmc import ChainConfigError, ChainRngs, _accept, run_chain
from rehmc.integrator import leapfrog_step
from rehmc.phase import MassMatrix, make_phase_point, with_momentum
from rehmc.targets import GaussianSpec, make_gaussian, make_log_gamma


def _setup(dim=1):
    return make_gaussian(GaussianSpec.iid_standard(dim)), MassMatrix.identity(dim)


def test_window_offset_frozen_cases():
    assert window_offset(4, 0) == 4
    assert window_offset(4, 1) == 3
    assert window_offset(4, 2) == 2
    assert window_offset(4, 3) == -3
    assert window_offset(4, 4) == -4
    assert window_offset(5, 2) == 3
    assert window_offset(1, 0) == 1
    assert window_offset(1, 1) == -1


def test_softmax_frozen_pair():
    w = _softmax(np.array([0.0, -1.0]))
    assert w[0] == 0.7310585786300049
    assert w[1] == 0.2689414213699951


def test_window_matches_orbit_replay():
    """Window states must be consecutive leapfrog points with z0 at slot L."""
    target, m = _setup(2)
    eps, k = 0.3, 5
    for seed in range(10):
        rngs = ChainRngs.from_seed(300 + seed, 0)
        shadow = ChainRngs.from_seed(300 + seed, 0)
        state = make_phase_point(np.array([0.4, -0.2]), np.zeros(2), target, m)
        batch = calderhead_iteration(
            state, eps, k, target, m, rngs, rao_blackwell=True
        )

        z0 = with_momentum(state, m.draw(shadow.trajectory), m)
        pos = int(shadow.trajectory.integers(0, k + 1))

        # independent orbit: negative-step integration for the backward part
        expected = [z0]
        point = z0
        for _ in range(pos):
            point = leapfrog_step(point, -eps, target, m)
            expected.insert(0, point)
        point = z0
        for _ in range(k - pos):
            point = leapfrog_step(point, eps, target, m)
            expected.append(point)

        assert len(batch.recycled) == k + 1
        for draw, exp in zip(batch.recycled, expected):
            assert np.array_equal(draw.theta, exp.theta)
        assert np.array_equal(batch.recycled[pos].theta, state.theta)

        # weights are the normalized joint densities, last entry pinned
        joints = np.array([p.log_joint for p in expected])
        w_exp = _softmax(joints)
        w_got = np.array([d.weight for d in batch.recycled])
        assert np.allclose(w_got[:-1], w_exp[:-1], rtol=0, atol=1e-15)
        assert w_got.sum() == 1.0

        # the move proposal is the far window end
        far = pos + window_offset(k, pos)
        proposal = expected[far]
        delta = proposal.log_joint - z0.log_joint
        want = proposal if _accept(delta, shadow.accept) else z0
        assert np.array_equal(batch.next_state.theta, want.theta)


def test_plain_variant_draw_replay():
    target, m = _setup(1)
    eps, k = 0.4, 4
    rngs = ChainRngs.from_seed(91, 0)
    shadow = ChainRngs.from_seed(91, 0)
    state = make_phase_point(np.array([0.9]), np.zeros(1), target, m)
    batch = calderhead_iteration(state, eps, k, target, m, rngs)

    z0 = with_momentum(state, m.draw(shadow.trajectory), m)
    pos = int(shadow.trajectory.integers(0, k + 1))
    window = [z0]
    point = z0
    for _ in range(pos):
        point = leapfrog_step(point, -eps, target, m)
        window.insert(0, point)
    point = z0
    for _ in range(k - pos):
        point = leapfrog_step(point, eps, target, m)
        window.append(point)
    weights = _softmax(np.array([p.log_joint for p in window]))
    idx = shadow.recycle.choice(len(window), size=k, p=weights)

    assert len(batch.recycled) == k
    for draw, j in zip(batch.recycled, idx):
        assert np.array_equal(draw.theta, window[j].theta)
        assert draw.weight == 1.0


def test_rao_blackwell_weights_sum_to_one_each_iteration():
    target, m = _setup(1)
    kernel = CalderheadKernel(target, m, 0.3, n_steps=6, rao_blackwell=True)
    r = run_chain(kernel, np.zeros(1), 120, seed=14)
    for i in np.unique(r.recycled_iterations):
        w = r.recycled_weights[r.recycled_iterations == i]
        assert len(w) == 7
        assert w.sum() == 1.0


def test_plain_variant_emits_k_unit_draws():
    target, m = _setup(1)
    kernel = CalderheadKernel(target, m, 0.3, n_steps=6)
    r = run_chain(kernel, np.zeros(1), 120, seed=15)
    assert len(r.recycled_weights) == 120 * 6
    assert np.all(r.recycled_weights == 1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_collapses_window():
    target, _truth = make_log_gamma(2.0, 1.0)
    m = MassMatrix.identity(1)
    rngs = ChainRngs.from_seed(4, 0)
    state = make_phase_point(np.array([0.5]), np.zeros(1), target, m)
    batch = calderhead_iteration(state, 60.0, 4, target, m, rngs)
    assert batch.diagnostics.diverged
    assert batch.diagnostics.accept_stat == 0.0
    assert batch.diagnostics.n_acceptable == 1
    assert np.array_equal(batch.next_state.theta, state.theta)
    assert len(batch.recycled) == 4
    for d in batch.recycled:
        assert np.array_equal(d.theta, state.theta)


def test_chain_path_invariant_to_recycle_variant():
    target, m = _setup(2)
    plain = CalderheadKernel(target, m, 0.35, n_steps=5)
    rb = CalderheadKernel(target, m, 0.35, n_steps=5, rao_blackwell=True)
    a = run_chain(plain, np.zeros(2), 200, seed=16)
    b = run_chain(rb, np.zeros(2), 200, seed=16)
    assert np.array_equal(a.states, b.states)


def test_kernel_validation():
    target, m = _setup(1)
    with pytest.raises(ChainConfigError):
        CalderheadKernel(target, m, 0.0, n_steps=4)
    with pytest.raises(ChainConfigError):
        CalderheadKernel(target, m, 0.3, n_steps=0)
