"""Problem data contracts and the recursive-utility benchmark instance.

A ProblemSpec collects the continuous coefficients of the mixed optimal
stopping / control problem under nonlinear expectation:

    state dynamics   dX = b(a, X) dt + sigma(a, X) dW + jumps of size
                     eta(a, X, e) with intensity nu(de),
    evaluation       BSDE driver f(a, t, x, y, z, k), z-slot fed with
                     sigma_tilde^T Du and k-slot with the gamma-weighted
                     nonlocal term,
    rewards          obstacle zeta(t, x) while running, terminal payoff g(x).

The solver marches the time-reversed equation forward from u(0, .) = g, so
drivers written here take the forward PDE time t in [0, T] (the value of the
original problem over the full horizon is read off at t = T).

Lipschitz / monotonicity constants of the driver are declared, not inferred:
lip_y bounds the y-slope, lip_z the z-slope, lip_k the k-slope, f0_bound the
size of f(a, t, x, 0, 0, 0).  They feed the theta selection, the contraction
validation, and the sup-norm stability recursion.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import levy
from .exceptions import ConfigurationError
from .grid import ExteriorExtension, SpaceTimeGrid
from .levy import LevyMeasure

__all__ = [
    "ProblemSpec",
    "ControlGrid",
    "BenchmarkParams",
    "discretize_controls",
    "recursive_utility_spec",
    "zero_dynamics_spec",
    "sigma_tilde_nodes",
    "drift_tilde_nodes",
    "driver_lipschitz_in_p",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous coefficients, domain localization, and declared constants."""

    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    jump_amp: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    driver: Callable[..., np.ndarray]
    obstacle: Callable[[float, np.ndarray], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray]
    control_interval: tuple[float, float]
    measure: LevyMeasure
    domain: tuple[float, float]
    horizon: float
    exterior: ExteriorExtension
    driver_weight: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    lip_y: float = 0.0
    lip_z: float = 0.0
    lip_k: float = 0.0
    f0_bound: float = 0.0
    time_dependent_ext: bool = False
    time_dependent_obstacle: bool = True

    def __post_init__(self):
        a_lo, a_hi = self.control_interval
        if a_hi < a_lo:
            raise ConfigurationError("control interval must satisfy a_lo <= a_hi")
        x_lo, x_hi = self.domain
        if x_hi <= x_lo:
            raise ConfigurationError("domain must satisfy x_lo < x_hi")
        if self.horizon <= 0.0:
            raise ConfigurationError("horizon must be > 0")
        for name in ("lip_y", "lip_z", "lip_k", "f0_bound"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError(f"{name} must be >= 0")
        g0 = np.asarray(self.terminal(np.asarray([x_lo + 1e-12, x_hi - 1e-12])))
        z0 = np.asarray(self.obstacle(0.0, np.asarray([x_lo + 1e-12, x_hi - 1e-12])))
        if np.any(g0 < z0 - 1e-12):
            raise ConfigurationError("terminal payoff must dominate the "
                                     "obstacle at t = 0")


@dataclass(frozen=True)
class ControlGrid:
    """Finite control set alpha_1 < ... < alpha_J inside the admissible interval."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ConfigurationError("control grid needs at least one value")
        if v.size > 1 and np.any(np.diff(v) <= 0.0):
            raise ConfigurationError("control values must be strictly increasing")
        object.__setattr__(self, "values", v)

    @property
    def j(self) -> int:
        return self.values.size

    @property
    def delta(self) -> float:
        """Resolution of the control discretization (max gap, 0 if a singleton)."""
        if self.values.size == 1:
            return 0.0
        return float(np.max(np.diff(self.values)))


@dataclass(frozen=True)
class BenchmarkParams:
    """Market / preference parameters of the recursive utility maximization."""

    beta: float = 0.2
    kappa: float = 1.0
    b: float = 0.1
    sigma: float = 0.15
    mu: float = 6.0
    T: float = 1.0
    x0: float = 1.0
    r: float = 0.0
    psi_scale: float = 0.8
    domain: tuple[float, float] = (0.0, 2.0)

    def __post_init__(self):
        if not (self.sigma > 0.0 and self.mu > 0.0):
            raise ConfigurationError("sigma and mu must be > 0")
        for name in ("beta", "kappa", "b", "T", "x0", "r", "psi_scale"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")


def discretize_controls(interval: tuple[float, float], j: int) -> ControlGrid:
    """Uniform control grid with j values including both endpoints."""
    if j < 1:
        raise ConfigurationError("control count must be >= 1")
    a_lo, a_hi = interval
    if j == 1:
        if a_hi != a_lo:
            raise ConfigurationError("a single control requires a degenerate interval")
        return ControlGrid(values=np.asarray([a_lo]))
    return ControlGrid(values=np.linspace(a_lo, a_hi, j))


def recursive_utility_spec(p: BenchmarkParams, epsilon: float,
                           e_max: float = 5.0,
                           bins_per_unit: int = 400) -> ProblemSpec:
    """Recursive utility maximization with tempered-stable jumps.

    Wealth with fraction alpha in the risky asset:
        b(a, x)   = (a b + (1 - a) r) x
        sigma(a, x) = a sigma x
        eta(a, x, e) = a x (1 ^ |e|),  nu(de) = exp(-mu|e|)/|e| de
    evaluated by the driver f = psi - beta y - kappa |z| with running reward
    psi(t, x) = psi_scale * exp(-(T - t)) * exp(-x/2) (forward PDE time) and
    exponential utility zeta = g = (1 - exp(-x))^+ as obstacle, payoff, and
    exterior extension.  gamma is identically zero (no k dependence).
    """
    T = p.T
    measure = levy.tempered_stable(p.mu, epsilon, e_max=e_max,
                                   bins_per_unit=bins_per_unit)

    def g(x):
        return np.maximum(1.0 - np.exp(-np.asarray(x, dtype=float)), 0.0)

    def driver(alpha, t, x, y, z, k):
        psi = p.psi_scale * np.exp(-(T - t)) * np.exp(-np.asarray(x) / 2.0)
        return psi - p.beta * y - p.kappa * np.abs(z)

    return ProblemSpec(
        drift=lambda a, x: (a * p.b + (1.0 - a) * p.r) * x,
        diffusion=lambda a, x: a * p.sigma * x,
        jump_amp=lambda a, x, e: a * x * np.minimum(1.0, np.abs(e)),
        driver=driver,
        obstacle=lambda t, x: g(x),
        terminal=g,
        control_interval=(0.0, 1.0),
        measure=measure,
        domain=p.domain,
        horizon=T,
        exterior=lambda t, x: g(x),
        driver_weight=None,
        lip_y=p.beta,
        lip_z=p.kappa,
        lip_k=0.0,
        f0_bound=p.psi_scale,
        time_dependent_ext=False,
        time_dependent_obstacle=False,
    )


def zero_dynamics_spec(g0: float, c0: float, beta: float,
                       obstacle_level: float = -10.0,
                       T: float = 1.0,
                       domain: tuple[float, float] = (0.0, 1.0)) -> ProblemSpec:
    """Degenerate model with closed-form solution, used for validation.

    No dynamics (sigma = b = 0, zero jump measure) and the linear driver
    f = c0 - beta y reduce the scheme to an implicit Euler ODE solve; with an
    inactive obstacle the value is u(t) = c0/beta + (g0 - c0/beta)
    exp(-beta t) at every node.  The exterior extension is this exact flow,
    the honest localization of a spatially constant solution (a frozen
    extension would leak its lag into the domain through the flux viscosity).
    When g0 equals the equilibrium c0/beta the flow is the exact constant g0.
    """

    def exact_flow(t, x):
        if beta == 0.0:
            level = g0 + c0 * t
        else:
            level = c0 / beta + (g0 - c0 / beta) * np.exp(-beta * t)
        return np.full_like(np.asarray(x, dtype=float), level)

    return ProblemSpec(
        drift=lambda a, x: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion=lambda a, x: np.zeros_like(np.asarray(x, dtype=float)),
        jump_amp=lambda a, x, e: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(e))),
        driver=lambda alpha, t, x, y, z, k: c0 - beta * y,
        obstacle=lambda t, x: np.full_like(np.asarray(x, dtype=float), obstacle_level),
        terminal=lambda x: np.full_like(np.asarray(x, dtype=float), g0),
        control_interval=(0.0, 0.0),
        measure=levy.zero_measure(),
        domain=domain,
        horizon=T,
        exterior=exact_flow,
        driver_weight=None,
        lip_y=beta,
        lip_z=0.0,
        lip_k=0.0,
        f0_bound=abs(c0),
        time_dependent_ext=True,
        time_dependent_obstacle=False,
    )


def sigma_tilde_nodes(spec: ProblemSpec, alpha: float, x: np.ndarray) -> np.ndarray:
    """Modified diffusion sqrt(sigma^2 + int_{|e|<eps} |eta|^2 nu(de)) at nodes."""
    x = np.asarray(x, dtype=float)
    nodes, weights = levy.small_jump_nodes(spec.measure)
    if nodes.size:
        amp = np.asarray(spec.jump_amp(alpha, x[:, None], nodes[None, :]), dtype=float)
        amp = np.broadcast_to(amp, (x.size, nodes.size))
        v = (amp * amp) @ weights
    else:
        v = np.zeros_like(x)
    sig = np.asarray(spec.diffusion(alpha, x), dtype=float)
    return np.sqrt(sig * sig + v)


def drift_tilde_nodes(spec: ProblemSpec, alpha: float, x: np.ndarray,
                      quad) -> np.ndarray:
    """Modified drift b + b_eps with b_eps = -int_{|e|>=eps} eta nu(de) at nodes."""
    x = np.asarray(x, dtype=float)
    amp = np.asarray(spec.jump_amp(alpha, x[:, None], quad.all_nodes[None, :]),
                     dtype=float)
    amp = np.broadcast_to(amp, (x.size, quad.all_nodes.size))
    b_eps = -(amp @ quad.all_weights)
    return np.asarray(spec.drift(alpha, x), dtype=float) + b_eps


def driver_lipschitz_in_p(spec: ProblemSpec, grid: SpaceTimeGrid,
                          controls: ControlGrid) -> float:
    """Upper bound for the Lipschitz constant of p -> f(..., sigma_tilde^T p, .).

    Conservative sup of lip_z * |sigma_tilde(x)| over grid nodes and the
    control grid; finite whenever sigma is bounded on the localized domain.
    """
    if spec.lip_z == 0.0:
        return 0.0
    worst = 0.0
    for a in controls.values:
        worst = max(worst, float(np.max(np.abs(
            sigma_tilde_nodes(spec, float(a), grid.nodes)))))
    return spec.lip_z * worst
