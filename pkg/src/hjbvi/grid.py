"""Uniform space-time grids, tent interpolation, and the exterior extension.

Evaluation points inside [x_lo, x_hi] are interpolated with piecewise-linear
tent weights (nonnegative, summing to 1).  Points outside the domain are not
clamped: they evaluate the exterior extension ext(t, x) at the exact point,
matching the localization convention u(t, x) = ext(t, x) off the domain.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError

__all__ = ["EXTERIOR", "SpaceTimeGrid", "ExteriorExtension", "tent_weights", "interp"]


class _Exterior:
    """Sentinel index for evaluation points outside the domain."""

    __slots__ = ()

    def __repr__(self):
        return "EXTERIOR"


EXTERIOR = _Exterior()

# Exterior extension: (t, x array) -> values, must broadcast over x.
ExteriorExtension = Callable[[float, np.ndarray], np.ndarray]

_INTEGRALITY_RTOL = 1e-12


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform nodes x_i = x_lo + i*h, i = 0..n_space, and timesteps of size dt."""

    x_lo: float
    x_hi: float
    h: float
    dt: float
    horizon: float

    def __post_init__(self):
        if self.h <= 0.0 or self.dt <= 0.0:
            raise ConfigurationError("h and dt must be > 0")
        if self.x_hi <= self.x_lo:
            raise ConfigurationError("x_hi must exceed x_lo")
        for label, ratio in (("(x_hi - x_lo)/h", (self.x_hi - self.x_lo) / self.h),
                             ("T/dt", self.horizon / self.dt)):
            if abs(ratio - round(ratio)) > _INTEGRALITY_RTOL * max(1.0, abs(ratio)):
                raise ConfigurationError(f"{label} = {ratio} is not an integer")
        object.__setattr__(self, "_nodes",
                           self.x_lo + self.h * np.arange(self.n_space + 1))

    @property
    def n_space(self) -> int:
        return int(round((self.x_hi - self.x_lo) / self.h))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def index_of(self, x: float) -> int:
        """Node index of an on-grid point (raises if x is not a node)."""
        s = (x - self.x_lo) / self.h
        i = int(round(s))
        if not (0 <= i <= self.n_space) or abs(s - i) > 1e-9:
            raise ConfigurationError(f"x={x} is not a grid node")
        return i


def tent_weights(x: float, grid: SpaceTimeGrid) -> list[tuple]:
    """Tent (piecewise-linear) weights of x against the grid nodes.

    Returns at most two (index, weight) pairs with weights in [0, 1] summing
    to 1; an exterior x returns the single pair (EXTERIOR, 1.0).
    """
    span = grid.x_hi - grid.x_lo
    tol = 1e-12 * max(1.0, span)
    if x < grid.x_lo - tol or x > grid.x_hi + tol:
        return [(EXTERIOR, 1.0)]
    s = min(max((x - grid.x_lo) / grid.h, 0.0), float(grid.n_space))
    lo = min(int(np.floor(s)), grid.n_space - 1)
    frac = s - lo
    # snap sub-1e-9 fractional parts so on-node queries keep the delta property
    if frac < 1e-9:
        return [(lo, 1.0)]
    if frac > 1.0 - 1e-9:
        return [(lo + 1, 1.0)]
    return [(lo, 1.0 - frac), (lo + 1, frac)]


def interp(U: np.ndarray, x: float, grid: SpaceTimeGrid,
           ext: ExteriorExtension, t: float) -> float:
    """Evaluate the tent interpolant of nodal values U at x, ext off-domain.

    The result is a convex combination of nodal / extension values, so it is
    bounded by max(|U|_inf, sup |ext|) and monotone in (U, ext).
    """
    total = 0.0
    for idx, w in tent_weights(x, grid):
        if idx is EXTERIOR:
            total += w * float(np.asarray(ext(t, np.asarray([x])))[0])
        else:
            total += w * float(U[idx])
    return total
