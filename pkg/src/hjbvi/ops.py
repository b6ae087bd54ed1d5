"""Monotone discrete operators for the localized nonlocal HJB system.

All three spatial operators are assembled in the same nonnegative
difference form

    (L U)_i = sum_m c_{m,i} [U(x_m) - U(x_i)],   c_{m,i} >= 0,

stored as a sparse matrix whose off-diagonal entries are the coefficients
and whose diagonal carries minus the total off-diagonal-plus-exterior mass
(so constants are annihilated exactly whenever the extension matches).

* nonlocal jump operator: c = kappa with
  kappa_{m,i} = sum_q w_q * tent_m(eta(x_i, e_q)) over positive quadrature
  weights w_q; tents act on the displacement lattice h*Z, so a landing
  x_i + m*h outside the domain contributes an exterior mass evaluated at the
  exact landing point.
* driver-weight operator: beta, same tents with the extra factor
  gamma(x_i, e_q) >= 0.
* semi-Lagrangian local operator: d-coefficients from tent weights of the
  displaced points x_i +- k*sigma_tilde(x_i) (factor 1/(2 k^2) each) and
  x_i + k^2*b_tilde(x_i) (factor 1/k^2), which stays nonnegative for
  degenerate diffusions.

Tent weights falling on the node itself accumulate into a self mass that
cancels in the difference form; it is retained so row masses satisfy the
partition-of-unity identities (sum of kappa row mass = truncated measure
mass, sum of d row mass = 2/k^2 in one dimension).

The gradient nonlinearity is discretized by the Lax-Friedrichs flux

    lf = fbar(t, x_i, u, (U_{i+1}-U_{i-1})/(2h), k)
         + (theta/lambda) * (U_{i+1} - 2 U_i + U_{i-1})/h,

monotone in the neighbor values when theta exceeds the gradient-Lipschitz
constant of fbar times lambda = dt/h.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .exceptions import ConfigurationError
from .grid import SpaceTimeGrid
from .levy import QuadratureSet

__all__ = [
    "JumpOperator",
    "NonlocalStencil",
    "LocalStencil",
    "build_nonlocal",
    "build_local",
    "apply_K1",
    "apply_B",
    "apply_A",
    "lf_flux",
]


@dataclass
class JumpOperator:
    """A difference-form operator with exterior landings.

    ``mat`` holds the off-diagonal coefficients plus the cancelling diagonal;
    ``ext_row/ext_landing/ext_mass`` record mass leaving the domain and where
    it lands; ``self_mass`` is the per-row mass sitting on the node itself
    (cancels when applied); ``row_mass`` the total per-row coefficient mass
    including self and exterior entries.
    """

    mat: sparse.csr_matrix
    ext_row: np.ndarray
    ext_landing: np.ndarray
    ext_mass: np.ndarray
    self_mass: np.ndarray
    row_mass: np.ndarray

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    def exterior_vector(self, ext, t: float) -> np.ndarray:
        """Per-row exterior contribution sum_ext mass * ext(t, landing)."""
        if self.ext_row.size == 0:
            return np.zeros(self.n)
        vals = self.ext_mass * np.asarray(ext(t, self.ext_landing), dtype=float)
        return np.bincount(self.ext_row, weights=vals, minlength=self.n)

    def apply(self, U: np.ndarray, ext, t: float) -> np.ndarray:
        return self.mat @ U + self.exterior_vector(ext, t)

    def apply_with_exterior(self, U: np.ndarray, ext_vec: np.ndarray) -> np.ndarray:
        """apply() with a precomputed exterior vector (static extensions)."""
        return self.mat @ U + ext_vec

    def offdiag_row_sums(self) -> np.ndarray:
        """Per-row sum of non-self coefficients (matrix off-diagonal + exterior)."""
        if self.ext_row.size:
            ext = np.bincount(self.ext_row, weights=self.ext_mass, minlength=self.n)
        else:
            ext = np.zeros(self.n)
        offdiag = np.asarray(self.mat.sum(axis=1)).ravel() - self.mat.diagonal()
        return offdiag + ext


@dataclass
class NonlocalStencil:
    """kappa/beta jump operators built for one frozen control value."""

    alpha: float
    kappa: JumpOperator
    beta: JumpOperator


@dataclass
class LocalStencil:
    """Semi-Lagrangian d-coefficient operator plus the fields that built it."""

    alpha: float
    k_sl: float
    sigma_tilde: np.ndarray
    b_tilde: np.ndarray
    dop: JumpOperator


def _zero_operator(n: int) -> JumpOperator:
    empty_i = np.zeros(0, dtype=np.int64)
    empty_f = np.zeros(0)
    return JumpOperator(
        mat=sparse.csr_matrix((n, n)),
        ext_row=empty_i, ext_landing=empty_f, ext_mass=empty_f,
        self_mass=np.zeros(n), row_mass=np.zeros(n),
    )


def _assemble(rows, cols, masses, landings, grid: SpaceTimeGrid) -> JumpOperator:
    """Build a JumpOperator from flat (row, column, mass) entries.

    ``cols`` may fall outside 0..n_space; those entries become exterior masses
    at the corresponding ``landings``.  Entries with column == row go to the
    self mass.  The diagonal is set to minus (off-diagonal + exterior) mass.
    """
    n = grid.n_space + 1
    keep = masses > 0.0
    rows, cols, masses, landings = rows[keep], cols[keep], masses[keep], landings[keep]

    inside = (cols >= 0) & (cols <= grid.n_space)
    is_self = inside & (cols == rows)

    row_mass = np.bincount(rows, weights=masses, minlength=n)
    self_mass = np.bincount(rows[is_self], weights=masses[is_self], minlength=n)

    off = inside & ~is_self
    mat = sparse.coo_matrix((masses[off], (rows[off], cols[off])), shape=(n, n)).tocsr()

    ext = ~inside
    ext_row = rows[ext].astype(np.int64)
    ext_mass = masses[ext]
    ext_landing = landings[ext]

    diag = -(np.asarray(mat.sum(axis=1)).ravel()
             + np.bincount(ext_row, weights=ext_mass, minlength=n))
    mat = (mat + sparse.diags(diag)).tocsr()
    mat.sum_duplicates()
    return JumpOperator(mat=mat, ext_row=ext_row, ext_landing=ext_landing,
                        ext_mass=ext_mass, self_mass=self_mass, row_mass=row_mass)


def _tent_split(s: np.ndarray):
    """Split fractional lattice positions s into (floor, 1-frac) and (floor+1, frac).

    Fractions within 1e-12 of a lattice point snap onto it, so displacements
    that are nodes up to float dust keep the exact delta property.
    """
    lo = np.floor(s)
    frac = s - lo
    hi_snap = frac > 1.0 - 1e-12
    lo = lo + hi_snap
    frac = np.where(hi_snap | (frac < 1e-12), 0.0, frac)
    return lo.astype(np.int64), frac


def build_nonlocal(quad: QuadratureSet, eta, gamma, grid: SpaceTimeGrid,
                   alpha: float) -> NonlocalStencil:
    """Assemble the nonlocal kappa (and beta, when gamma is given) stencils.

    ``eta(alpha, x, e)`` and ``gamma(x, e)`` must broadcast over an (x, e)
    outer product.  Rows are built for interior nodes only; boundary nodes are
    exterior under the open-domain localization and never updated.
    """
    e = quad.all_nodes
    w = quad.all_weights
    if e.size == 0:
        raise ConfigurationError("quadrature set has no nodes")
    n_int = grid.n_space - 1
    x_int = grid.nodes[1:-1]
    i_int = np.arange(1, grid.n_space)

    disp = np.asarray(eta(alpha, x_int[:, None], e[None, :]), dtype=float)
    disp = np.broadcast_to(disp, (n_int, e.size))
    m_lo, frac = _tent_split(disp / grid.h)

    rows = np.repeat(i_int, e.size)
    w_row = np.broadcast_to(w[None, :], (n_int, e.size))

    def flat(parts):
        return np.concatenate([p.ravel() for p in parts])

    cols = flat([rows.reshape(n_int, e.size) + m_lo,
                 rows.reshape(n_int, e.size) + m_lo + 1])
    rows2 = np.concatenate([rows, rows])
    landings = grid.x_lo + grid.h * cols

    def operator_for(weight_matrix):
        masses = flat([weight_matrix * (1.0 - frac), weight_matrix * frac])
        return _assemble(rows2, cols, masses, landings, grid)

    kappa = operator_for(w_row)
    if gamma is None:
        beta = _zero_operator(grid.n_space + 1)
    else:
        gvals = np.asarray(gamma(x_int[:, None], e[None, :]), dtype=float)
        gvals = np.broadcast_to(gvals, (n_int, e.size))
        if np.any(gvals < 0.0):
            raise ConfigurationError("driver weight gamma must be nonnegative")
        beta = operator_for(w_row * gvals)
    return NonlocalStencil(alpha=alpha, kappa=kappa, beta=beta)


def build_local(sigma_tilde: np.ndarray, b_tilde: np.ndarray,
                grid: SpaceTimeGrid, k_sl: float,
                alpha: float = float("nan")) -> LocalStencil:
    """Assemble the semi-Lagrangian stencil for modified coefficients.

    ``sigma_tilde`` and ``b_tilde`` are nodal arrays (all nodes); k_sl > 0 is
    the semi-Lagrangian step.  The three displaced points per node are tent
    interpolated against the absolute grid; exterior displacements keep their
    exact landing point.
    """
    if not k_sl > 0.0:
        raise ConfigurationError("k_sl must be > 0")
    x_int = grid.nodes[1:-1]
    i_int = np.arange(1, grid.n_space)
    st = np.asarray(sigma_tilde, dtype=float)[1:-1]
    bt = np.asarray(b_tilde, dtype=float)[1:-1]

    points = np.stack([x_int + k_sl * st,
                       x_int - k_sl * st,
                       x_int + k_sl * k_sl * bt])
    factors = np.array([0.5, 0.5, 1.0]) / (k_sl * k_sl)

    span = grid.x_hi - grid.x_lo
    tol = 1e-12 * max(1.0, span)
    inside = (points >= grid.x_lo - tol) & (points <= grid.x_hi + tol)

    s_in = np.clip((points - grid.x_lo) / grid.h, 0.0, float(grid.n_space))
    lo, frac = _tent_split(s_in)

    rows = np.broadcast_to(i_int[None, :], points.shape)
    fmat = np.broadcast_to(factors[:, None], points.shape)

    # Interior displacements split over two tents; exterior ones carry the
    # full factor at the exact landing point (column -1 marks exterior).
    r = np.concatenate([rows.ravel(), rows.ravel(), rows.ravel()])
    c = np.concatenate([np.where(inside, lo, -1).ravel(),
                        np.where(inside, lo + 1, -1).ravel(),
                        np.full(points.size, -1, dtype=np.int64)])
    m = np.concatenate([np.where(inside, fmat * (1.0 - frac), 0.0).ravel(),
                        np.where(inside, fmat * frac, 0.0).ravel(),
                        np.where(inside, 0.0, fmat).ravel()])
    land = np.concatenate([(grid.x_lo + grid.h * lo).ravel(),
                           (grid.x_lo + grid.h * (lo + 1)).ravel(),
                           points.ravel()])

    dop = _assemble(r, c, m, land, grid)
    return LocalStencil(alpha=alpha, k_sl=k_sl,
                        sigma_tilde=np.asarray(sigma_tilde, dtype=float),
                        b_tilde=np.asarray(b_tilde, dtype=float), dop=dop)


def apply_K1(st: NonlocalStencil, U: np.ndarray, ext, t: float) -> np.ndarray:
    """sum_m kappa_{m,i} [U(x_i + x_m) - U(x_i)], exterior landings via ext."""
    return st.kappa.apply(U, ext, t)


def apply_B(st: NonlocalStencil, U: np.ndarray, ext, t: float) -> np.ndarray:
    """Same difference form with beta coefficients; feeds the driver k-slot."""
    return st.beta.apply(U, ext, t)


def apply_A(st: LocalStencil, U: np.ndarray, ext, t: float) -> np.ndarray:
    """Semi-Lagrangian local operator sum_m d_{m,i} [U(x_m) - U(x_i)]."""
    return st.dop.apply(U, ext, t)


def lf_flux(driver, alpha: float, t: float, x, u, u_left, u_center, u_right,
            b_val, theta: float, lam: float, h: float, sigma_tilde,
            grad_lipschitz: float | None = None):
    """Lax-Friedrichs numerical flux, vectorized over nodes.

    Evaluates fbar = driver(alpha, t, x, u, sigma_tilde * central_difference,
    b_val) plus the artificial viscosity (theta/lam) * second_difference / h.
    Monotonicity in the neighbors requires theta > grad_lipschitz * lam; a
    warning is issued when a Lipschitz bound is supplied and violated.
    """
    if grad_lipschitz is not None and theta <= grad_lipschitz * lam:
        warnings.warn(
            f"theta={theta} <= C*lambda={grad_lipschitz * lam}: "
            "Lax-Friedrichs flux monotonicity is not guaranteed",
            stacklevel=2,
        )
    p = (u_right - u_left) / (2.0 * h)
    fbar = driver(alpha, t, x, u, sigma_tilde * p, b_val)
    return fbar + (theta / lam) * (u_right - 2.0 * u_center + u_left) / h
