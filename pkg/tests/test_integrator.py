import numpy as np
import pytest

from conftest import counting_target
from rehmc.integrator import DivergenceError, leapfrog_step, simulate_trajectory
from rehmc.phase import MassMatrix, make_phase_point
from rehmc.targets import GaussianSpec, make_gaussian, make_log_gamma


def _std_point(theta, p, dim=1):
    target = make_gaussian(GaussianSpec.iid_standard(dim))
    m = MassMatrix.identity(dim)
    return make_phase_point(np.asarray(theta, float), np.asarray(p, float), target, m), target, m


def test_single_step_frozen_values():
    # standard normal, eps = 0.1, start (theta, p) = (1, 0):
    # p_half = -0.05, theta_1 = 0.995, p_1 = -0.09975
    z, target, m = _std_point([1.0], [0.0])
    z1 = leapfrog_step(z, 0.1, target, m)
    assert z1.theta[0] == pytest.approx(0.995, abs=0, rel=0)
    assert z1.momentum[0] == pytest.approx(-0.09975, abs=0, rel=0)


def test_one_gradient_eval_per_step():
    base = make_gaussian(GaussianSpec.iid_standard(3))
    target, counter = counting_target(base)
    m = MassMatrix.identity(3)
    z = make_phase_point(np.ones(3), np.zeros(3), target, m)
    counter["n"] = 0
    simulate_trajectory(z, 0.1, 25, target, m)
    assert counter["n"] == 25


def test_reversibility():
    target = make_gaussian(GaussianSpec.diagonal([1.0, 4.0, 0.25]))
    m = MassMatrix.diagonal(np.array([2.0, 1.0, 0.5]))
    rng = np.random.default_rng(0)
    z = make_phase_point(rng.normal(size=3), rng.normal(size=3), target, m)
    forward = z
    for _ in range(20):
        forward = leapfrog_step(forward, 0.05, target, m)
    back = make_phase_point(forward.theta, -forward.momentum, target, m)
    for _ in range(20):
        back = leapfrog_step(back, 0.05, target, m)
    assert np.allclose(back.theta, z.theta, atol=1e-12)
    assert np.allclose(-back.momentum, z.momentum, atol=1e-12)


def test_energy_error_second_order():
    # halving eps should shrink the energy error by about 4x
    target = make_gaussian(GaussianSpec.iid_standard(2))
    m = MassMatrix.identity(2)
    z0 = make_phase_point(np.array([1.0, -0.5]), np.array([0.4, 1.1]), target, m)

    def max_err(eps, n):
        z = z0
        worst = 0.0
        for _ in range(n):
            z = leapfrog_step(z, eps, target, m)
            worst = max(worst, abs(z.log_joint - z0.log_joint))
        return worst

    e_coarse = max_err(0.2, 50)
    e_fine = max_err(0.1, 100)
    assert 3.0 < e_coarse / e_fine < 5.0


def test_trajectory_matches_repeated_steps():
    z, target, m = _std_point([0.3], [0.7])
    traj = simulate_trajectory(z, 0.2, 5, target, m)
    assert len(traj) == 5
    step = z
    for k in range(5):
        step = leapfrog_step(step, 0.2, target, m)
        assert np.array_equal(traj[k].theta, step.theta)


def test_divergence_raises_with_step_index():
    target, _ = make_log_gamma(2.0, 1.0)
    m = MassMatrix.identity(1)
    z = make_phase_point(np.array([0.5]), np.array([20.0]), target, m)
    with pytest.raises(DivergenceError) as e:
        simulate_trajectory(z, 60.0, 10, target, m)
    assert e.value.step_index >= 1


def test_harmonic_trajectory_tracks_exact_flow():
    # eps = 0.01 for 157 steps moves (1, 0) close to the quarter rotation (0, -1)
    z, target, m = _std_point([1.0], [0.0])
    traj = simulate_trajectory(z, 0.01, 157, target, m)
    assert traj[-1].theta[0] == pytest.approx(0.0, abs=6e-3)
    assert traj[-1].momentum[0] == pytest.approx(-1.0, abs=6e-3)
