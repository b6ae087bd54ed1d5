"""Switching-system time-marching with piecewise constant policy timestepping.

One timestep advances all J components (one per frozen control value) in two
stages, both at the new time level t^{n+1}:

1. switching step (pointwise max, applied at the beginning of the step)

       U_half_j = max( zeta(t^{n+1}), U^n_j, max_{k != j} (U^n_k - c) ),

2. fully implicit component step, decoupled across j,

       U^{n+1}_j - dt * ( A U^{n+1}_j + K1 U^{n+1}_j
                          + lf_flux(U^{n+1}_j, B U^{n+1}_j) ) = U_half_j,

   solved as the fixed point of the sparse contraction map T,

       (I - dt A) (T V) = dt * ( K1 V + lf_flux(V, B V) ) + U_half_j,

   iterated from V = U_half_j until the sup-norm increment drops below the
   Picard tolerance.  Only the banded local operator sits on the left, so
   each iteration costs one sparse matvec plus one banded back-substitution;
   the dense nonlocal part never needs factorizing.

Startup validation enforces the monotonicity and contraction preconditions:
theta > C_p * lambda for the Lax-Friedrichs flux (C_p the gradient-Lipschitz
bound of the Hamiltonian, lambda = dt/h) and

    dt * ( max_i sum kappa + C (1 + max_i sum beta) ) + 4 d theta < 1

with C = max(lip_y, lip_k), evaluated on the actually assembled coefficient
sums.  Every run also tracks the sup-norm recursion a_n = a_{n-1}/(1 + dt C)
+ dt C1 (C1 = C |zeta|_inf + f0_bound) and the empirical Picard contraction
ratios, and raises if either certificate is violated.

The domain is open: boundary nodes belong to the exterior and stay pinned to
ext(t, x); stencil mass landing outside [x_lo, x_hi] is evaluated at the
exact landing point and moved to the right-hand side as Dirichlet data.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import lapack as _lapack

from . import levy, ops
from .exceptions import (ConfigurationError, ConvergenceError,
                         SchemeValidationError)
from .grid import SpaceTimeGrid, interp
from .model import (ControlGrid, ProblemSpec, drift_tilde_nodes,
                    driver_lipschitz_in_p, sigma_tilde_nodes)

__all__ = [
    "SchemeParams",
    "SwitchingState",
    "PicardStats",
    "SolveResult",
    "SwitchingSystemSolver",
    "switching_step",
    "extract_policy",
    "solve",
]

_STAB_SLACK = 1e-7


@dataclass
class SchemeParams:
    """Discretization parameters of one solve.

    k_sl defaults to sqrt(h) (balances the h^2/k^2 interpolation error of the
    semi-Lagrangian stencil against its O(k^2) truncation).  snapshot_stride
    thins the stored time slices used for surface export and value queries
    (policy records, when enabled, stay per-step); n_threads caps the worker
    pool when parallel_components is set.
    """

    h: float
    dt: float
    epsilon: float
    theta: float
    cost: float
    k_sl: float | None = None
    picard_tol: float = 1e-10
    picard_max: int = 200
    record_policy: bool = False
    parallel_components: bool = False
    n_threads: int | None = None
    snapshot_stride: int | None = None

    def __post_init__(self):
        for name in ("h", "dt", "epsilon", "theta", "cost", "picard_tol"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.picard_max < 1:
            raise ConfigurationError("picard_max must be >= 1")
        if self.k_sl is None:
            self.k_sl = float(np.sqrt(self.h))
        elif not self.k_sl > 0.0:
            raise ConfigurationError("k_sl must be > 0")


@dataclass
class SwitchingState:
    """Component arrays U_j over all grid nodes after completing step n."""

    n: int
    U: np.ndarray  # shape (J, n_space + 1)


@dataclass
class PicardStats:
    total_iterations: int
    max_iterations: int
    mean_iterations: float
    max_contraction_ratio: float
    contraction_bound: float
    wall_time: float
    iterations_per_step: np.ndarray  # (n_steps, J)


@dataclass
class SolveResult:
    """Final slice, thinned snapshots, optional policy record, and run stats."""

    grid: SpaceTimeGrid
    controls: ControlGrid
    params: SchemeParams
    spec: ProblemSpec
    final: np.ndarray                  # (J, n_space + 1)
    snapshot_times: np.ndarray         # (S,)
    snapshots: np.ndarray              # (S, J, n_space + 1)
    policy_indices: np.ndarray | None  # (n_steps + 1, n_space + 1) int16
    stopping_mask: np.ndarray | None   # same shape, bool
    stats: PicardStats

    def value(self, x: float, t: float | None = None, component: int | str = "last") -> float:
        """Value at (t, x); t defaults to the horizon.

        On-grid queries are exact; off-grid x uses tent interpolation and
        off-slice t linear interpolation between recorded snapshots.
        """
        if component == "last":
            j = self.controls.j - 1
        elif component == "max":
            j = None
        else:
            j = int(component)
        if t is None or t >= self.grid.horizon:
            slab = self.final
        else:
            k = int(np.searchsorted(self.snapshot_times, t, side="right")) - 1
            k = max(0, min(k, len(self.snapshot_times) - 2))
            t0, t1 = self.snapshot_times[k], self.snapshot_times[k + 1]
            w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            slab = (1.0 - w) * self.snapshots[k] + w * self.snapshots[k + 1]
        U = slab.max(axis=0) if j is None else slab[j]
        return interp(U, x, self.grid, self.spec.exterior, self.grid.horizon if t is None else t)


def switching_step(U: np.ndarray, zeta_next: np.ndarray, cost: float) -> np.ndarray:
    """Nodewise max of obstacle, own value, and best switch target minus cost."""
    J = U.shape[0]
    if J == 1:
        return np.maximum(zeta_next, U)
    top1 = U.max(axis=0)
    top1_idx = U.argmax(axis=0)
    top2 = np.partition(U, J - 2, axis=0)[J - 2]
    best_other = np.where(np.arange(J)[:, None] == top1_idx[None, :], top2, top1)
    return np.maximum(zeta_next, np.maximum(U, best_other - cost))


def _band_limits(mat) -> tuple[int, int]:
    coo = mat.tocoo()
    if coo.nnz == 0:
        return 0, 0
    return int(np.max(coo.row - coo.col, initial=0)), int(np.max(coo.col - coo.row, initial=0))


def _banded_factor(mat_csr, kl: int, ku: int):
    """LAPACK band-storage LU of a sparse matrix with known bandwidths."""
    n = mat_csr.shape[0]
    ab = np.zeros((2 * kl + ku + 1, n), order="F")
    coo = mat_csr.tocoo()
    ab[kl + ku + coo.row - coo.col, coo.col] = coo.data
    lu, piv, info = _lapack.dgbtrf(ab, kl, ku)
    if info != 0:
        raise ConfigurationError(f"banded LU factorization failed (info={info})")
    return lu, piv


@dataclass
class _Component:
    alpha: float
    nonlocal_st: ops.NonlocalStencil
    local_st: ops.LocalStencil
    sigma_tilde_int: np.ndarray
    lu: np.ndarray
    piv: np.ndarray
    kl: int
    ku: int
    a_col_lo: np.ndarray   # A coefficients from interior rows into node 0
    a_col_hi: np.ndarray   # ... into node n_space
    has_beta: bool
    ext_k: np.ndarray | None = None     # cached static exterior vectors
    ext_b: np.ndarray | None = None
    dir_a: np.ndarray | None = None     # cached static Dirichlet rhs of A


class SwitchingSystemSolver:
    """Stencil assembly, validation, and the two-stage timestep loop."""

    def __init__(self, spec: ProblemSpec, controls: ControlGrid,
                 params: SchemeParams):
        if abs(params.epsilon - spec.measure.epsilon) > 1e-12 * params.epsilon:
            raise SchemeValidationError(
                f"scheme epsilon {params.epsilon} does not match the measure "
                f"truncation level {spec.measure.epsilon}")
        a_lo, a_hi = spec.control_interval
        if np.any(controls.values < a_lo - 1e-12) or np.any(controls.values > a_hi + 1e-12):
            raise ConfigurationError("control grid leaves the admissible interval")

        self.spec = spec
        self.controls = controls
        self.params = params
        self.grid = SpaceTimeGrid(spec.domain[0], spec.domain[1],
                                  params.h, params.dt, spec.horizon)
        self.lam = params.dt / params.h
        self.dt = params.dt

        quad = levy.build_quadrature(spec.measure)
        n = self.grid.n_space
        eye_int = sparse.identity(n - 1, format="csr")
        self.components: list[_Component] = []
        for a in controls.values:
            a = float(a)
            st = sigma_tilde_nodes(spec, a, self.grid.nodes)
            bt = drift_tilde_nodes(spec, a, self.grid.nodes, quad)
            nonlocal_st = ops.build_nonlocal(quad, spec.jump_amp,
                                             spec.driver_weight, self.grid, a)
            local_st = ops.build_local(st, bt, self.grid, params.k_sl, a)

            a_full = local_st.dop.mat
            m_int = (eye_int - self.dt * a_full[1:-1, 1:-1]).tocsr()
            kl, ku = _band_limits(m_int)
            lu, piv = _banded_factor(m_int, kl, ku)
            comp = _Component(
                alpha=a, nonlocal_st=nonlocal_st, local_st=local_st,
                sigma_tilde_int=st[1:-1], lu=lu, piv=piv, kl=kl, ku=ku,
                a_col_lo=a_full[1:-1, [0]].toarray().ravel(),
                a_col_hi=a_full[1:-1, [n]].toarray().ravel(),
                has_beta=spec.driver_weight is not None,
            )
            self.components.append(comp)

        self._n_workers = min(params.n_threads or os.cpu_count() or 1,
                              controls.j)
        self._validate()
        self._prepare_static_caches()
        self._prepare_stability_bound()

    # -- validation -------------------------------------------------------

    def _validate(self):
        p = self.params
        self.grad_lipschitz = driver_lipschitz_in_p(self.spec, self.grid,
                                                    self.controls)
        if p.theta <= self.grad_lipschitz * self.lam:
            raise SchemeValidationError(
                f"theta={p.theta} must exceed C_p*lambda="
                f"{self.grad_lipschitz * self.lam:.6g} for flux monotonicity")
        c_yk = max(self.spec.lip_y, self.spec.lip_k)
        kappa_max = max(float(np.max(c.nonlocal_st.kappa.offdiag_row_sums()))
                        for c in self.components)
        beta_max = max(float(np.max(c.nonlocal_st.beta.offdiag_row_sums()))
                       for c in self.components)
        self.contraction_bound = (self.dt * (kappa_max + c_yk * (1.0 + beta_max))
                                  + 4.0 * p.theta)
        if self.contraction_bound >= 1.0:
            raise SchemeValidationError(
                f"Picard map is not a contraction: dt*(sum kappa + C(1 + sum "
                f"beta)) + 4*theta = {self.contraction_bound:.4g} >= 1")

    def _prepare_static_caches(self):
        if self.spec.time_dependent_ext:
            return
        ext = self.spec.exterior
        for c in self.components:
            c.ext_k = c.nonlocal_st.kappa.exterior_vector(ext, 0.0)
            c.ext_b = c.nonlocal_st.beta.exterior_vector(ext, 0.0)
            c.dir_a = self._dirichlet_a(c, 0.0)
        xb = np.asarray([self.grid.x_lo, self.grid.x_hi])
        self._static_bvals = np.asarray(ext(0.0, xb), dtype=float)

    def _prepare_stability_bound(self):
        """Sup-norm certificate a_n over nodes plus every exterior landing."""
        spec, grid = self.spec, self.grid
        pts = [grid.nodes]
        for c in self.components:
            pts.append(c.nonlocal_st.kappa.ext_landing)
            pts.append(c.local_st.dop.ext_landing)
        pts = np.unique(np.concatenate(pts))
        if spec.time_dependent_obstacle:
            zeta_sup = 0.0
            for tn in grid.times:
                zeta_sup = max(zeta_sup, float(np.max(np.abs(spec.obstacle(tn, grid.nodes)))))
        else:
            zeta_sup = float(np.max(np.abs(spec.obstacle(0.0, grid.nodes))))
        g_sup = float(np.max(np.abs(spec.terminal(grid.nodes))))
        ext_sup = float(np.max(np.abs(spec.exterior(0.0, pts))))
        self._zeta_sup = zeta_sup
        self._a_bound = max(g_sup, zeta_sup, ext_sup)
        # The induction behind a_n needs the bound to dominate the obstacle
        # and every pinned exterior value the stencils can touch.
        self._a_floor = max(zeta_sup, ext_sup)
        self._c_stab = spec.lip_y
        self._c1_stab = spec.lip_y * zeta_sup + spec.f0_bound

    # -- per-step pieces ---------------------------------------------------

    def _dirichlet_a(self, comp: _Component, t: float) -> np.ndarray:
        ext = self.spec.exterior
        xb = np.asarray([self.grid.x_lo, self.grid.x_hi])
        bvals = np.asarray(ext(t, xb), dtype=float)
        vec = comp.a_col_lo * bvals[0] + comp.a_col_hi * bvals[1]
        vec = vec + comp.local_st.dop.exterior_vector(ext, t)[1:-1]
        return self.dt * vec

    def _component_data(self, comp: _Component, t_next: float):
        if self.spec.time_dependent_ext:
            ext = self.spec.exterior
            ext_k = comp.nonlocal_st.kappa.exterior_vector(ext, t_next)
            ext_b = comp.nonlocal_st.beta.exterior_vector(ext, t_next)
            dir_a = self._dirichlet_a(comp, t_next)
        else:
            ext_k, ext_b, dir_a = comp.ext_k, comp.ext_b, comp.dir_a
        return ext_k, ext_b, dir_a

    def picard_map(self, j: int, U_guess: np.ndarray, U_half_j: np.ndarray,
                   t_next: float) -> np.ndarray:
        """One application of the contraction map T for component j.

        Assembles rhs = dt*(K1 U + lf_flux(U, B U)) + U_half plus the
        Dirichlet data of A, then back-substitutes the banded factorization
        of (I - dt A).  Boundary nodes are carried over from U_half.
        """
        comp = self.components[j]
        ext_k, ext_b, dir_a = self._component_data(comp, t_next)
        return self._picard_apply(comp, U_guess, U_half_j, t_next,
                                  ext_k, ext_b, dir_a)

    def _picard_apply(self, comp, Ug, U_half_j, t_next, ext_k, ext_b, dir_a):
        p = self.params
        ku = comp.nonlocal_st.kappa.apply_with_exterior(Ug, ext_k)
        if comp.has_beta:
            bu = comp.nonlocal_st.beta.apply_with_exterior(Ug, ext_b)[1:-1]
        else:
            bu = 0.0
        x_int = self.grid.nodes[1:-1]
        u_int = Ug[1:-1]
        flux = ops.lf_flux(self.spec.driver, comp.alpha, t_next, x_int, u_int,
                           Ug[:-2], u_int, Ug[2:], bu, p.theta, self.lam,
                           self.grid.h, comp.sigma_tilde_int)
        rhs = self.dt * (ku[1:-1] + flux) + U_half_j[1:-1] + dir_a
        v, info = _lapack.dgbtrs(comp.lu, comp.kl, comp.ku, rhs, comp.piv)
        if info != 0:
            raise ConfigurationError(f"banded solve failed (info={info})")
        out = np.empty_like(Ug)
        out[0] = U_half_j[0]
        out[-1] = U_half_j[-1]
        out[1:-1] = v
        return out

    def implicit_step(self, j: int, U_half_j: np.ndarray, t_next: float,
                      step_index: int = -1):
        """Picard-iterate component j to the implicit solution.

        Returns (U_next, iterations, max_observed_ratio).  Seeded with
        U_half_j; stops on the sup-norm increment below picard_tol (relative
        fallback once |U| exceeds 10); raises ConvergenceError past
        picard_max.
        """
        comp = self.components[j]
        ext_k, ext_b, dir_a = self._component_data(comp, t_next)
        p = self.params
        U = U_half_j
        prev_inc = None
        max_ratio = 0.0
        for it in range(1, p.picard_max + 1):
            U_new = self._picard_apply(comp, U, U_half_j, t_next,
                                       ext_k, ext_b, dir_a)
            inc = float(np.max(np.abs(U_new - U)))
            U = U_new
            norm = float(np.max(np.abs(U)))
            tol_eff = p.picard_tol * max(1.0, norm / 10.0)
            if prev_inc is not None and prev_inc > 10.0 * tol_eff:
                max_ratio = max(max_ratio, inc / prev_inc)
            if inc < tol_eff:
                return U, it, max_ratio
            prev_inc = inc
        raise ConvergenceError(
            f"Picard iteration exceeded {p.picard_max} iterations "
            f"(step {step_index}, component {j}, increment {prev_inc:.3e})",
            step=step_index, component=j, last_increment=prev_inc,
            est_ratio=max_ratio)

    def scheme_residual(self, U_prev: np.ndarray, U_next_j: np.ndarray,
                        j: int, t_next: float) -> np.ndarray:
        """dt-scaled three-way min form at interior nodes, for verification.

        All three rows carry the same implicit operator term; the time-
        difference row is multiplied by dt (same zero set) so the residual of
        a converged split step is comparable to the Picard tolerance.
        """
        comp = self.components[j]
        ext = self.spec.exterior
        ku = comp.nonlocal_st.kappa.apply(U_next_j, ext, t_next)[1:-1]
        au = comp.local_st.dop.apply(U_next_j, ext, t_next)[1:-1]
        if comp.has_beta:
            bu = comp.nonlocal_st.beta.apply(U_next_j, ext, t_next)[1:-1]
        else:
            bu = 0.0
        x_int = self.grid.nodes[1:-1]
        u_int = U_next_j[1:-1]
        flux = ops.lf_flux(self.spec.driver, comp.alpha, t_next, x_int, u_int,
                           U_next_j[:-2], u_int, U_next_j[2:], bu,
                           self.params.theta, self.lam, self.grid.h,
                           comp.sigma_tilde_int)
        core = u_int - self.dt * (au + ku + flux)
        zeta_next = np.asarray(self.spec.obstacle(t_next, x_int), dtype=float)
        r1 = core - zeta_next
        r2 = core - U_prev[j][1:-1]
        res = np.minimum(r1, r2)
        if self.controls.j > 1:
            others = np.delete(U_prev, j, axis=0).max(axis=0)[1:-1]
            res = np.minimum(res, core - (others - self.params.cost))
        return res

    # -- main loop ---------------------------------------------------------

    def initial_state(self) -> SwitchingState:
        g = np.asarray(self.spec.terminal(self.grid.nodes), dtype=float)
        U = np.tile(g, (self.controls.j, 1))
        bvals = self._boundary_values(0.0)
        U[:, 0] = bvals[0]
        U[:, -1] = bvals[1]
        return SwitchingState(n=0, U=U)

    def _boundary_values(self, t: float) -> np.ndarray:
        if not self.spec.time_dependent_ext:
            return self._static_bvals
        xb = np.asarray([self.grid.x_lo, self.grid.x_hi])
        return np.asarray(self.spec.exterior(t, xb), dtype=float)

    def _zeta(self, t: float) -> np.ndarray:
        if not self.spec.time_dependent_obstacle and hasattr(self, "_zeta0"):
            return self._zeta0
        z = np.asarray(self.spec.obstacle(t, self.grid.nodes), dtype=float)
        if not self.spec.time_dependent_obstacle:
            self._zeta0 = z
        return z

    def step(self, state: SwitchingState, executor=None):
        """Advance one timestep; returns (new state, per-component iters, ratios)."""
        t_next = (state.n + 1) * self.dt
        zeta_next = self._zeta(t_next)
        U_half = switching_step(state.U, zeta_next, self.params.cost)
        bvals = self._boundary_values(t_next)
        U_half[:, 0] = bvals[0]
        U_half[:, -1] = bvals[1]

        J = self.controls.j
        U_new = np.empty_like(state.U)
        iters = np.zeros(J, dtype=np.int32)
        ratios = np.zeros(J)

        def task(j):
            return self.implicit_step(j, U_half[j], t_next, step_index=state.n)

        if executor is not None and J > 1:
            # One contiguous chunk per worker per step: each component is
            # still computed by identical serial code (bitwise independent of
            # the chunking), but dispatch overhead stays O(workers).
            chunks = [c for c in np.array_split(np.arange(J), self._n_workers)
                      if c.size]
            nested = executor.map(lambda idx: [task(int(j)) for j in idx], chunks)
            results = [r for sub in nested for r in sub]
        else:
            results = [task(j) for j in range(J)]
        for j, (u, it, r) in enumerate(results):
            U_new[j] = u
            iters[j] = it
            ratios[j] = r
        return SwitchingState(n=state.n + 1, U=U_new), iters, ratios

    def run(self) -> SolveResult:
        p = self.params
        grid = self.grid
        n_steps = grid.n_steps
        J = self.controls.j
        stride = p.snapshot_stride or max(1, int(np.ceil(n_steps / 256)))

        state = self.initial_state()
        a_n = self._a_bound

        record_policy = p.record_policy
        if record_policy:
            pol = np.zeros((n_steps + 1, grid.n_space + 1), dtype=np.int16)
            stop = np.zeros((n_steps + 1, grid.n_space + 1), dtype=bool)
            self._record_policy(state, pol, stop)
        else:
            pol = stop = None

        snap_times = [0.0]
        snaps = [state.U.copy()]
        iters_per_step = np.zeros((n_steps, J), dtype=np.int32)
        max_ratio = 0.0
        total_iters = 0
        t0 = time.perf_counter()

        executor = None
        try:
            if p.parallel_components and J > 1:
                executor = ThreadPoolExecutor(max_workers=self._n_workers)
            for n in range(n_steps):
                state, iters, ratios = self.step(state, executor)
                iters_per_step[n] = iters
                total_iters += int(iters.sum())
                max_ratio = max(max_ratio, float(ratios.max()))
                if max_ratio > self.contraction_bound * 1.05 + 1e-12:
                    raise ConvergenceError(
                        f"observed Picard ratio {max_ratio:.4g} exceeds the "
                        f"contraction bound {self.contraction_bound:.4g} "
                        f"(step {n})", step=n, est_ratio=max_ratio)
                a_n = max(a_n / (1.0 + self.dt * self._c_stab)
                          + self.dt * self._c1_stab, self._a_floor)
                sup = float(np.max(np.abs(state.U)))
                if sup > a_n + _STAB_SLACK * (1.0 + a_n):
                    raise ConvergenceError(
                        f"sup-norm bound violated at step {n + 1}: "
                        f"|U|={sup:.6g} > a_n={a_n:.6g}", step=n + 1)
                if record_policy:
                    self._record_policy(state, pol, stop)
                if state.n % stride == 0 or state.n == n_steps:
                    snap_times.append(state.n * self.dt)
                    snaps.append(state.U.copy())
        finally:
            if executor is not None:
                executor.shutdown()

        wall = time.perf_counter() - t0
        stats = PicardStats(
            total_iterations=total_iters,
            max_iterations=int(iters_per_step.max(initial=0)),
            mean_iterations=float(iters_per_step.mean()) if n_steps else 0.0,
            max_contraction_ratio=max_ratio,
            contraction_bound=self.contraction_bound,
            wall_time=wall,
            iterations_per_step=iters_per_step,
        )
        return SolveResult(
            grid=grid, controls=self.controls, params=p, spec=self.spec,
            final=state.U,
            snapshot_times=np.asarray(snap_times),
            snapshots=np.stack(snaps),
            policy_indices=pol, stopping_mask=stop, stats=stats,
        )

    def _record_policy(self, state: SwitchingState, pol, stop):
        t_n = state.n * self.dt
        # numpy argmax already breaks ties toward the lowest control index
        pol[state.n] = state.U.argmax(axis=0).astype(np.int16)
        stop[state.n] = state.U.max(axis=0) <= self._zeta(t_n)


def extract_policy(result: SolveResult):
    """Optimal control field and stopping-region mask from a recorded run.

    alpha*(t_n, x_i) is the control value of the component attaining the
    nodewise max (ties toward the lowest index); the stopping flag is set
    where that max does not exceed the obstacle.
    """
    if result.policy_indices is None:
        raise ConfigurationError(
            "policy recording was not enabled for this solve "
            "(set record_policy=True)")
    alpha_field = result.controls.values[result.policy_indices]
    return alpha_field, result.stopping_mask


def solve(spec: ProblemSpec, controls: ControlGrid,
          params: SchemeParams) -> SolveResult:
    """Build stencils once, validate the scheme, and march all timesteps."""
    return SwitchingSystemSolver(spec, controls, params).run()
