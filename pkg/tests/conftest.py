"""Shared helpers: randomized model instances for property tests."""

from __future__ import annotations

import numpy as np

from hjbvi import LevyMeasure, ProblemSpec, SchemeParams, discretize_controls


def random_measure(rng, epsilon=None):
    """Tempered-exponential jump density with random rate and truncation."""
    mu = rng.uniform(3.0, 8.0)
    lam = rng.uniform(0.2, 2.0)
    eps = epsilon if epsilon is not None else rng.uniform(0.02, 0.1)
    return LevyMeasure(
        density=lambda e, mu=mu, lam=lam: lam * np.exp(-mu * np.abs(e)) / np.abs(e),
        epsilon=eps, e_max=3.0, bins_per_unit=120)


def random_problem(rng, *, bumped: bool = False):
    """A random admissible problem on [0, 1] exercising every operator path.

    With ``bumped`` the terminal payoff and exterior extension are raised by
    a nonnegative bump while the obstacle stays identical, giving an ordered
    pair of problems for discrete-comparison tests.
    """
    a0, a1 = rng.uniform(0.2, 0.6), rng.uniform(0.1, 0.3)
    drop = rng.uniform(0.05, 0.3)
    s0 = rng.uniform(0.05, 0.4)
    b0 = rng.uniform(-0.4, 0.4)
    e0 = rng.uniform(0.0, 0.8)
    g0 = rng.uniform(0.0, 0.5)
    beta = rng.uniform(0.1, 1.0)
    ck = rng.uniform(0.0, 0.5)
    kz = rng.uniform(0.0, 0.3)
    r0, r1 = rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)
    phase = rng.uniform(0.0, np.pi)

    def g_base(x):
        return a0 + a1 * np.sin(np.pi * np.asarray(x, dtype=float) + phase)

    if bumped:
        def g(x):
            return g_base(x) + 0.1 + 0.05 * np.cos(np.asarray(x, dtype=float))
    else:
        g = g_base

    measure = random_measure(rng)
    spec = ProblemSpec(
        drift=lambda a, x: b0 * (a - 0.5) * (np.asarray(x) - 0.5),
        diffusion=lambda a, x: s0 * (0.1 + 0.9 * a) * np.asarray(x) * (1.0 - np.asarray(x)),
        jump_amp=lambda a, x, e: e0 * a * np.asarray(x) * (1.0 - np.asarray(x))
                                 * np.minimum(1.0, np.abs(e)),
        driver=lambda alpha, t, x, y, z, k:
            r0 + r1 * np.sin(3.0 * np.asarray(x)) - beta * y + ck * k - kz * np.abs(z),
        obstacle=lambda t, x: g_base(x) - drop,
        terminal=g,
        control_interval=(0.0, 1.0),
        measure=measure,
        domain=(0.0, 1.0),
        horizon=1.0,  # overwritten by the caller through SchemeParams.dt
        exterior=lambda t, x: g(x),
        driver_weight=lambda x, e: g0 * np.minimum(1.0, np.abs(e))
                                   * (1.0 + np.asarray(x)) / 2.0,
        lip_y=beta, lip_z=kz, lip_k=ck,
        f0_bound=abs(r0) + abs(r1),
        time_dependent_ext=False,
        time_dependent_obstacle=False,
    )
    return spec


def small_scheme(rng, spec, n_space, n_steps=20):
    """Scheme parameters satisfying the monotonicity/contraction conditions."""
    import dataclasses

    from hjbvi import SpaceTimeGrid, driver_lipschitz_in_p

    h = 1.0 / n_space
    dt = h / 8.0
    horizon = n_steps * dt
    spec = dataclasses.replace(spec, horizon=horizon)
    grid = SpaceTimeGrid(0.0, 1.0, h, dt, horizon)
    controls = discretize_controls((0.0, 1.0), int(rng.integers(2, 4)))
    c_p = driver_lipschitz_in_p(spec, grid, controls)
    theta = max(0.02, 1.5 * c_p * dt / h)
    params = SchemeParams(h=h, dt=dt, epsilon=spec.measure.epsilon,
                          theta=theta, cost=0.01, snapshot_stride=1)
    return spec, controls, params
