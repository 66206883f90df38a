import numpy as np

from rehmc.targets import TargetDensity


def finite_diff_grad(f, theta, h=1e-6):
    """Central-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def counting_target(target):
    """Wrap a target so every density/gradient evaluation is counted."""
    counter = {"n": 0}

    def vg(theta):
        counter["n"] += 1
        return target.value_and_grad(theta)

    wrapped = TargetDensity(
        dim=target.dim,
        log_density=lambda th: vg(th)[0],
        grad_log_density=lambda th: vg(th)[1],
        value_and_grad=vg,
    )
    return wrapped, counter
