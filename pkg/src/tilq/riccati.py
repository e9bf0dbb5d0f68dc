"""Equilibrium Riccati solver.

The quadratic coefficient P(t) of the equilibrium value function solves

    P' + A^T P + P A + Q(t,t) - Qbb(t) - Gain^T M(t,t) Gain = 0,  P(T) = G(T),

where Gain(t) = M(t,t)^{-1} (B^T(t) P(t) + S(t,t)) and the correction Qbb(t)
aggregates the first-argument derivatives of the cost kernels along the
closed loop:

    Qbb(t) = E_cl(T,t)^T G'(t) E_cl(T,t)
           + int_t^T E_cl(s,t)^T [Q_t - Gain^T S_t - S_t^T Gain
                                  + Gain^T M_t Gain](t,s) E_cl(s,t) ds.

Qbb couples P(t) to the whole future of Gain through the closed-loop
propagator E_cl, so the equation is nonlocal and cannot be integrated
backward directly.  Each sweep here evaluates the equivalent open-loop
integral form

    P(t) = E(T,t)^T G(T) E(T,t)
         + int_t^T E(s,t)^T [Q(s,s) - Qbb(s) - Gain^T M Gain](s) E(s,t) ds

with Gain, E_cl, Qbb all rebuilt from the incoming P, and the solver runs a
damped fixed-point iteration on these sweeps.  When the kernels do not
depend on the evaluation time, Qbb vanishes and the fixed point is the
classical Riccati solution (see :func:`classical_riccati`, the oracle).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import AssumptionError, ConsistencyError, ConvergenceError, TilqError
from .grid import TimeGrid, TransitionTable, _rk4_linear_steps, open_loop_transition
from .problem import ProblemSpec
from .tables import SpecTables

SWEEP_ASYMMETRY_RTOL = 1e-8
TIME_CONSISTENT_SUP = 1e-12
PSD_WARN_FLOOR = -1e-8


@dataclass
class SolveOptions:
    """Fixed-point controls shared by the Riccati and affine-term solvers."""

    tolerance: float = 1e-10
    max_iterations: int = 200
    damping: float = 1.0
    damping_floor: float = 0.0625
    initial: object = "terminal"  # "terminal" | "zero" | explicit table

    def __post_init__(self):
        if self.tolerance <= 0:
            raise TilqError("tolerance must be positive")
        if not (0 < self.damping <= 1):
            raise TilqError("damping must lie in (0, 1]")


@dataclass
class FixedPointDiagnostics:
    iterations: int = 0
    deltas: list = field(default_factory=list)
    damping_history: list = field(default_factory=list)
    converged: bool = False
    note: str = ""


def damped_fixed_point(x0: np.ndarray, sweep, opts: SolveOptions,
                       what: str) -> tuple[np.ndarray, FixedPointDiagnostics]:
    """Iterate x <- (1 - theta) x + theta sweep(x) to a sup-norm fixed point.

    The recorded delta is the raw residual ||sweep(x) - x||_sup, so the
    convergence test does not depend on the damping in effect.  The damping
    starts at opts.damping and is halved (down to the floor) whenever the
    residual grows on two consecutive iterations.
    """
    diag = FixedPointDiagnostics()
    x = np.array(x0, dtype=float)
    theta = opts.damping
    growth_streak = 0
    decay_streak = 0
    best_x = x
    best_delta = np.inf
    floor_reverts = 0
    for _ in range(opts.max_iterations):
        with np.errstate(over="ignore", invalid="ignore"):
            fx = sweep(x)
            delta = float(np.max(np.abs(fx - x)))
        diag.iterations += 1
        diag.damping_history.append(theta)
        if not np.isfinite(delta):
            # the iterate ran away; restart from the best point seen so far
            diag.deltas.append(np.inf)
            if theta <= opts.damping_floor:
                floor_reverts += 1
                if floor_reverts > 1:
                    break
            theta = max(opts.damping_floor, 0.5 * theta)
            x = best_x
            growth_streak = 0
            continue
        diag.deltas.append(delta)
        if delta <= opts.tolerance:
            diag.converged = True
            return fx, diag
        if delta < best_delta:
            best_delta = delta
            best_x = x
        if len(diag.deltas) >= 2 and delta > diag.deltas[-2]:
            growth_streak += 1
            decay_streak = 0
        else:
            growth_streak = 0
            decay_streak += 1
        if growth_streak >= 2 and theta > opts.damping_floor:
            theta = max(opts.damping_floor, 0.5 * theta)
            growth_streak = 0
        elif decay_streak >= 3 and theta < opts.damping:
            # transient over: let the damping recover toward the configured value
            theta = min(opts.damping, 2.0 * theta)
            decay_streak = 0
        x = (1.0 - theta) * x + theta * fx
    diag.note = (f"{what}: no fixed point within {diag.iterations} iterations "
                 f"(last residual {diag.deltas[-1]:.3e}, damping {theta})")
    raise ConvergenceError(diag.note, diagnostics=diag)


@dataclass
class RiccatiSolution:
    """Converged P, feedback gain, kernel-derivative correction, transitions."""

    grid: TimeGrid
    P: np.ndarray          # (N+1, n, n), symmetric, P[N] = G(T)
    gain: np.ndarray       # (N+1, m, n)
    qbb: np.ndarray        # (N+1, n, n), symmetric
    closed_loop: TransitionTable
    open_loop: TransitionTable
    diagnostics: FixedPointDiagnostics
    tables: SpecTables

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


# ---------------------------------------------------------------------------
# single-time operations (public contracts)


def gamma_from_p(P: np.ndarray, spec: ProblemSpec, t: float) -> np.ndarray:
    """Feedback gain M(t,t)^{-1} (B^T(t) P + S(t,t)) through a Cholesky solve."""
    P = np.asarray(P, dtype=float)
    M = np.asarray(spec.M(t, t), dtype=float)
    rhs = np.asarray(spec.dynamics.B(t), dtype=float).T @ P + np.asarray(
        spec.S(t, t), dtype=float)
    try:
        factor = cho_factor(0.5 * (M + M.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise AssumptionError(
            f"M(t,t) is not positive definite at t={t:.6g}; the running "
            f"control weight must be positive definite") from exc
    return cho_solve(factor, rhs)


def qbb_from_gamma(gain: np.ndarray, closed_loop: TransitionTable,
                   spec: ProblemSpec, grid: TimeGrid, t_idx: int) -> np.ndarray:
    """Kernel-derivative correction Qbb(t_i) by direct node quadrature.

    Self-contained row evaluation, deliberately independent of the batched
    sweep path so the two can be cross-checked.
    """
    from .grid import quadrature

    gain = np.asarray(gain, dtype=float)
    n = spec.dims.n
    nodes = grid.nodes
    t = float(nodes[t_idx])
    s_range = nodes[t_idx:]
    Qt = spec.Q.row(t, s_range, derivative=True)
    St = spec.S.row(t, s_range, derivative=True)
    Mt = spec.M.row(t, s_range, derivative=True)
    G = gain[t_idx:]
    K = (Qt - np.einsum("jab,jac->jbc", G, St)
         - np.einsum("jab,jac->jcb", G, St)
         + np.einsum("jab,jac,jcd->jbd", G, Mt, G))
    prop = np.asarray([closed_loop.matrix(j, t_idx)
                       for j in range(t_idx, grid.N + 1)])
    integrand = np.einsum("jba,jbc,jcd->jad", prop, K, prop)
    out = quadrature(integrand, grid, t_idx, grid.N)
    EN = closed_loop.matrix(grid.N, t_idx)
    Gdot = np.asarray(spec.terminal.dG_dt(t), dtype=float).reshape(n, n)
    out = out + EN.T @ Gdot @ EN
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# batched sweep machinery


def _gain_table(P: np.ndarray, tables: SpecTables) -> np.ndarray:
    rhs = np.swapaxes(tables.B, -1, -2) @ P + tables.Sd
    try:
        return tables.solve_md(rhs)
    except np.linalg.LinAlgError as exc:
        raise AssumptionError(
            "M(t,t) is not positive definite on the grid") from exc


def _closed_loop_table(gain: np.ndarray, tables: SpecTables,
                       store_full: bool | None = None) -> TransitionTable:
    gain_half = 0.5 * (gain[:-1] + gain[1:])
    eff_nodes = tables.A - tables.B @ gain
    eff_half = tables.A_half - tables.B_half @ gain_half
    steps = _rk4_linear_steps(eff_nodes, eff_half, tables.grid.h)
    return TransitionTable(tables.grid, steps, flavor="closed_loop",
                           store_full=store_full)


def _qbb_table(gain: np.ndarray, cl_full: np.ndarray,
               tables: SpecTables) -> np.ndarray:
    """Qbb at every node from the full closed-loop triangle."""
    W = tables.W
    GS = np.einsum("jab,ijac->ijbc", gain, tables.St)
    K = tables.Qt - GS - np.swapaxes(GS, -1, -2)
    del GS
    K += np.einsum("jab,ijac,jcd->ijbd", gain, tables.Mt, gain, optimize=True)
    mid = np.einsum("jiba,ijbc->ijac", cl_full, K, optimize=True)
    del K
    out = np.einsum("ijac,jicd,ij->iad", mid, cl_full, W, optimize=True)
    del mid
    EN = cl_full[tables.grid.N]
    out += np.einsum("iab,iac,icd->ibd", EN, tables.Gdot, EN, optimize=True)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _sweep_core(P: np.ndarray, tables: SpecTables, E_full: np.ndarray):
    """One full sweep: gain, closed loop, Qbb, then the open-loop integral."""
    grid = tables.grid
    gain = _gain_table(P, tables)
    cl = _closed_loop_table(gain, tables)
    cl_full = cl.full_table()
    qbb = _qbb_table(gain, cl_full, tables)
    inner = (tables.Qd - qbb
             - np.einsum("jab,jac,jcd->jbd", gain, tables.Md, gain, optimize=True))
    mid = np.einsum("jiba,jbc->jiac", E_full, inner, optimize=True)
    P_out = np.einsum("jiac,jicd,ij->iad", mid, E_full, tables.W, optimize=True)
    del mid
    EN = E_full[grid.N]
    P_out += np.einsum("iab,ac,icd->ibd", EN, tables.G_T, EN, optimize=True)
    asym = float(np.max(np.abs(P_out - np.swapaxes(P_out, -1, -2))))
    scale = max(1.0, float(np.max(np.abs(P_out))))
    if asym > SWEEP_ASYMMETRY_RTOL * scale:
        raise ConsistencyError(
            f"sweep produced an asymmetric P (relative asymmetry "
            f"{asym / scale:.3e}); check the problem data")
    P_out = 0.5 * (P_out + np.swapaxes(P_out, -1, -2))
    P_out[grid.N] = tables.G_T
    return P_out, gain, qbb, cl


def riccati_sweep(P_in: np.ndarray, spec: ProblemSpec, grid: TimeGrid,
                  tables: SpecTables | None = None,
                  open_loop: TransitionTable | None = None) -> np.ndarray:
    """One fixed-point sweep of the integral form; returns the new P table."""
    if tables is None:
        tables = SpecTables(spec, grid)
    if open_loop is None:
        open_loop = open_loop_transition(spec.dynamics, grid)
    P_in = np.asarray(P_in, dtype=float)
    if P_in.shape != (grid.N + 1, spec.dims.n, spec.dims.n):
        raise TilqError(f"P table has shape {P_in.shape}, expected "
                        f"{(grid.N + 1, spec.dims.n, spec.dims.n)}")
    P_out, _, _, _ = _sweep_core(P_in, tables, open_loop.full_table())
    return P_out


def _initial_table(initial, tables: SpecTables) -> np.ndarray:
    N, n = tables.grid.N, tables.n
    if isinstance(initial, str):
        if initial == "terminal":
            return np.broadcast_to(tables.G_T, (N + 1, n, n)).copy()
        if initial == "zero":
            return np.zeros((N + 1, n, n))
        raise TilqError(f"unknown initial P choice {initial!r}")
    arr = np.asarray(initial, dtype=float)
    if arr.shape == (n, n):
        return np.broadcast_to(arr, (N + 1, n, n)).copy()
    if arr.shape != (N + 1, n, n):
        raise TilqError(f"initial P table has shape {arr.shape}, expected "
                        f"{(N + 1, n, n)}")
    return arr.copy()


def solve_equilibrium_riccati(spec: ProblemSpec, grid: TimeGrid,
                              opts: SolveOptions | None = None,
                              tables: SpecTables | None = None) -> RiccatiSolution:
    """Damped fixed-point solve of the equilibrium Riccati equation.

    Returns the converged tables with gain, Qbb and the closed-loop
    propagators all recomputed from the final P, so the stored set is
    mutually consistent to machine precision.  Raises ConvergenceError,
    carrying the iteration diagnostics, when no fixed point is reached:
    uniqueness of solutions is a theorem, existence of this iteration's
    limit is not, so failures are reported rather than masked.
    """
    opts = opts or SolveOptions()
    if tables is None:
        tables = SpecTables(spec, grid)
    open_loop = open_loop_transition(spec.dynamics, grid)
    E_full = open_loop.full_table()

    def sweep(P):
        return _sweep_core(P, tables, E_full)[0]

    P0 = _initial_table(opts.initial, tables)
    P_final, diag = damped_fixed_point(P0, sweep, opts, "equilibrium Riccati")

    gain = _gain_table(P_final, tables)
    cl = _closed_loop_table(gain, tables)
    qbb = _qbb_table(gain, cl.full_table(), tables)
    eigs = np.linalg.eigvalsh(P_final)
    min_eig = float(eigs.min())
    if min_eig < PSD_WARN_FLOOR * max(1.0, float(np.max(np.abs(P_final)))):
        diag.note = (f"P has negative eigenvalues (min {min_eig:.3e}); "
                     f"semi-definiteness is not guaranteed for coupled costs")
        warnings.warn(diag.note, stacklevel=2)
    return RiccatiSolution(grid=grid, P=P_final, gain=gain, qbb=qbb,
                           closed_loop=cl, open_loop=open_loop,
                           diagnostics=diag, tables=tables)


# ---------------------------------------------------------------------------
# classical (time-consistent) oracle


def classical_riccati(spec: ProblemSpec, grid: TimeGrid) -> np.ndarray:
    """Backward RK4 on the classical Riccati equation; time-consistent specs only.

    With every first-argument derivative identically zero the correction Qbb
    drops out of the equilibrium equation, leaving the textbook terminal
    value problem P' = -(A^T P + P A + Q - Gain^T M Gain), P(T) = G(T).
    This is the independent oracle for the fixed-point solver.
    """
    tables = SpecTables(spec, grid)
    sup = tables.max_derivative_scale()
    if sup > TIME_CONSISTENT_SUP:
        raise AssumptionError(
            f"classical_riccati requires a time-consistent problem; "
            f"kernel t-derivatives reach {sup:.3e}")

    dyn = spec.dynamics

    def rhs(t: float, P: np.ndarray) -> np.ndarray:
        A = np.asarray(dyn.A(t), dtype=float)
        gain = gamma_from_p(P, spec, t)
        M = np.asarray(spec.M(t, t), dtype=float)
        Q = np.asarray(spec.Q(t, t), dtype=float)
        return -(A.T @ P + P @ A + Q - gain.T @ M @ gain)

    N = grid.N
    h = grid.h
    nodes = grid.nodes
    out = np.empty((N + 1, spec.dims.n, spec.dims.n))
    out[N] = tables.G_T
    for i in range(N, 0, -1):
        t1 = float(nodes[i])
        tm = t1 - 0.5 * h
        t0 = float(nodes[i - 1])
        P1 = out[i]
        k1 = rhs(t1, P1)
        k2 = rhs(tm, P1 - 0.5 * h * k1)
        k3 = rhs(tm, P1 - 0.5 * h * k2)
        k4 = rhs(t0, P1 - h * k3)
        Pn = P1 - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i - 1] = 0.5 * (Pn + Pn.T)
    return out
