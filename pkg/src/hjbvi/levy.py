"""Jump-measure truncation and quadrature.

A Levy measure nu(de) on R \\ {0} enters the scheme only through a handful of
derived quantities:

* ``truncated_mass``      int_{|e|>=eps} nu(de), the intensity of the retained
  (large) jumps,
* ``small_jump_variance`` int_{|e|<eps} |eta(e)|^2 nu(de), folded into the
  diffusion coefficient to compensate the removed small jumps,
* ``drift_correction``    -int_{|e|>=eps} eta(e) nu(de), the drift shift that
  turns the compensated jump integral into an uncompensated one,
* the quadrature nodes/weights used to assemble the nonlocal stencil
  coefficients.

All production integrals use the composite midpoint rule with bin width
1/bins_per_unit so every weight is a nonnegative point mass (midpoint weights
are rho(e_q)*de >= 0, the property the monotone stencils rely on).  The
integration range is truncated at ``e_max``; the measure mass beyond e_max is
lumped into two point masses sitting at the representative marks +-e_max.
For amplitudes that saturate beyond |e| = 1 (such as eta(e) = 1 ^ |e|) this
lumping is exact for every amplitude integral and only approximates the mass
integral by the choice of representative mark.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .exceptions import ConfigurationError, IntegrationError

__all__ = [
    "LevyMeasure",
    "QuadratureSet",
    "tempered_stable",
    "zero_measure",
    "build_quadrature",
    "truncated_mass",
    "small_jump_variance",
    "drift_correction",
    "small_jump_nodes",
]


@dataclass(frozen=True)
class LevyMeasure:
    """Radial density of a 1-D jump measure plus its truncation controls.

    ``density`` maps marks e (numpy array, never 0) to rho(e) >= 0.  ``epsilon``
    is the small-jump truncation level, ``e_max`` the outer truncation radius
    of the numerical integration, ``bins_per_unit`` the midpoint resolution.
    ``tail_mass_plus`` / ``tail_mass_minus`` hold the measure of {e > e_max}
    and {e < -e_max}; pass None to have them integrated numerically.
    """

    density: Callable[[np.ndarray], np.ndarray]
    epsilon: float
    e_max: float = 5.0
    bins_per_unit: int = 400
    tail_mass_plus: float | None = None
    tail_mass_minus: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.e_max < 1.0 or self.e_max <= self.epsilon:
            raise ConfigurationError(
                f"e_max must be >= 1 and > epsilon, got e_max={self.e_max}, "
                f"epsilon={self.epsilon}"
            )
        if self.bins_per_unit < 1:
            raise ConfigurationError(
                f"bins_per_unit must be >= 1, got {self.bins_per_unit}"
            )
        if self.tail_mass_plus is None:
            object.__setattr__(self, "tail_mass_plus", self._integrate_tail(+1))
        if self.tail_mass_minus is None:
            object.__setattr__(self, "tail_mass_minus", self._integrate_tail(-1))
        for name in ("tail_mass_plus", "tail_mass_minus"):
            m = getattr(self, name)
            if not np.isfinite(m) or m < 0.0:
                raise IntegrationError(f"{name} must be finite and >= 0, got {m}")

    def _integrate_tail(self, side: int) -> float:
        try:
            val, _ = quad(lambda s: float(self.density(np.asarray([side * s]))[0]),
                          self.e_max, np.inf)
        except Exception as exc:  # quad raises on hopeless integrands
            raise IntegrationError(
                f"tail mass integration beyond e_max={self.e_max} failed: {exc}"
            ) from exc
        if not np.isfinite(val):
            raise IntegrationError("tail mass integral diverged")
        return float(val)


@dataclass(frozen=True)
class QuadratureSet:
    """Midpoint nodes/weights on [-e_max,-eps] u [eps,e_max] plus tail lumps.

    Weights are rho(e_q)*de >= 0.  ``tail_nodes`` holds the representative
    marks (-e_max, +e_max) and ``tail_masses`` the lumped measure beyond them.
    """

    nodes: np.ndarray
    weights: np.ndarray
    tail_nodes: np.ndarray
    tail_masses: np.ndarray

    @property
    def all_nodes(self) -> np.ndarray:
        return np.concatenate([self.nodes, self.tail_nodes])

    @property
    def all_weights(self) -> np.ndarray:
        return np.concatenate([self.weights, self.tail_masses])

    def total_mass(self) -> float:
        return float(self.weights.sum() + self.tail_masses.sum())


def tempered_stable(mu: float, epsilon: float, e_max: float = 5.0,
                    bins_per_unit: int = 400) -> LevyMeasure:
    """Symmetric tempered-stable measure nu(de) = exp(-mu|e|)/|e| de."""
    if mu <= 0.0:
        raise ConfigurationError(f"tempering rate mu must be > 0, got {mu}")

    def density(e):
        a = np.abs(np.asarray(e, dtype=float))
        return np.exp(-mu * a) / a

    return LevyMeasure(density=density, epsilon=epsilon, e_max=e_max,
                       bins_per_unit=bins_per_unit)


def zero_measure(epsilon: float = 1.0) -> LevyMeasure:
    """The zero measure (no jumps); every derived quantity vanishes."""
    return LevyMeasure(density=lambda e: np.zeros_like(np.asarray(e, dtype=float)),
                       epsilon=epsilon, tail_mass_plus=0.0, tail_mass_minus=0.0)


def _midpoints(lo: float, hi: float, bins_per_unit: int):
    """Midpoint nodes and the (uniform) bin width partitioning [lo, hi]."""
    n = max(1, int(round((hi - lo) * bins_per_unit)))
    de = (hi - lo) / n
    return lo + de * (np.arange(n) + 0.5), de


def build_quadrature(nu: LevyMeasure) -> QuadratureSet:
    """Assemble the positive-weight midpoint quadrature for int_{|e|>=eps} . nu(de)."""
    if nu.epsilon >= nu.e_max:
        raise ConfigurationError("epsilon must be < e_max")
    pos, de = _midpoints(nu.epsilon, nu.e_max, nu.bins_per_unit)
    nodes = np.concatenate([-pos[::-1], pos])
    rho = np.asarray(nu.density(nodes), dtype=float)
    if not np.all(np.isfinite(rho)):
        raise IntegrationError("density produced non-finite quadrature weights")
    if np.any(rho < 0.0):
        raise ConfigurationError("density must be nonnegative")
    return QuadratureSet(
        nodes=nodes,
        weights=rho * de,
        tail_nodes=np.array([-nu.e_max, nu.e_max]),
        tail_masses=np.array([nu.tail_mass_minus, nu.tail_mass_plus], dtype=float),
    )


def truncated_mass(nu: LevyMeasure) -> float:
    """int_{|e|>=eps} nu(de), including the lumped tail masses."""
    return build_quadrature(nu).total_mass()


def small_jump_nodes(nu: LevyMeasure):
    """Midpoint nodes/weights for integrals over the removed range 0 < |e| < eps.

    Returned as a single (nodes, weights) pair covering both signs; the bin
    width follows the measure's bins_per_unit (at least one bin per side).
    """
    pos, de = _midpoints(0.0, nu.epsilon, nu.bins_per_unit)
    nodes = np.concatenate([-pos[::-1], pos])
    rho = np.asarray(nu.density(nodes), dtype=float)
    if not np.all(np.isfinite(rho)):
        raise IntegrationError("density non-finite inside the truncation range")
    return nodes, rho * de


def small_jump_variance(nu: LevyMeasure,
                        jump_amp: Callable[[np.ndarray], np.ndarray]) -> float:
    """int_{|e|<eps} |eta(e)|^2 nu(de) for a single state component.

    ``jump_amp`` maps an array of marks to the amplitude eta(e); the integrand
    |eta|^2 rho stays integrable at 0 whenever |eta(e)| <= C(1 ^ |e|).
    """
    nodes, weights = small_jump_nodes(nu)
    amp = np.asarray(jump_amp(nodes), dtype=float)
    val = float(np.dot(amp * amp, weights))
    if not np.isfinite(val):
        raise IntegrationError("small-jump variance integral diverged")
    return val


def drift_correction(nu: LevyMeasure,
                     jump_amp: Callable[[np.ndarray], np.ndarray]) -> float:
    """-int_{|e|>=eps} eta(e) nu(de), the drift shift of the truncated problem.

    Tail contributions evaluate eta at the representative marks +-e_max, which
    is exact when the amplitude is constant beyond the truncation radius.
    """
    q = build_quadrature(nu)
    amp = np.asarray(jump_amp(q.all_nodes), dtype=float)
    val = -float(np.dot(amp, q.all_weights))
    if not np.isfinite(val):
        raise IntegrationError("drift correction integral diverged")
    return val
