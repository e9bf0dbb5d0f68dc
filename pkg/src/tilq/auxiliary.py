"""Affine and scalar terms of the equilibrium value function.

Given a converged Riccati solution, the linear coefficient phi solves the
backward equation

    phi' + (A - B Gain)^T phi - Sbb(t) + P b + q(t,t) - Gain^T rho(t,t) = 0,
    phi(T) = g(T),

and the scalar term psi integrates

    psi' + 2 <phi, b - B Upsilon> - omega(t) + <M(t,t) Upsilon - 2 rho(t,t),
    Upsilon> = 0,  psi(T) = 0,

where Upsilon(t) = M(t,t)^{-1} (B^T(t) phi(t) + rho(t,t)) is the affine part
of the feedback law, btilde(s,t) is the zero-state closed-loop response

    btilde(s,t) = int_t^s E_cl(s,tau) (b - B Upsilon)(tau) dtau,

and Sbb, omega aggregate the kernel time-derivatives along that response.
Although the phi equation looks like a plain linear ODE, Sbb(t) depends on
phi over all of [t, T] through Upsilon and btilde, so it is solved here by
Picard iteration: freeze phi, rebuild Upsilon/btilde/Sbb, integrate backward
with RK4, repeat.  The nonlocal map is affine in phi, which keeps the
iteration contractive at the scales this library targets; non-convergence
is reported, never masked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import AssumptionError, TilqError
from .grid import TimeGrid, TransitionTable, quadrature
from .problem import ProblemSpec
from .riccati import (FixedPointDiagnostics, RiccatiSolution, SolveOptions,
                      damped_fixed_point)
from .tables import SpecTables, cumulative_trapezoid


@dataclass
class PhiSolution:
    """Converged linear coefficient with its dependent tables."""

    phi: np.ndarray       # (N+1, n)
    upsilon: np.ndarray   # (N+1, m)
    btilde: np.ndarray    # (N+1, N+1, n), [s_idx, t_idx], zero for s < t
    sbb: np.ndarray       # (N+1, n)
    diagnostics: FixedPointDiagnostics


@dataclass
class AuxiliarySolution:
    """phi, psi and every nonlocal quantity entering them."""

    phi: np.ndarray
    psi: np.ndarray       # (N+1,)
    upsilon: np.ndarray
    sbb: np.ndarray
    omega: np.ndarray     # (N+1,)
    btilde: np.ndarray
    diagnostics: FixedPointDiagnostics

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


# ---------------------------------------------------------------------------
# public single-point / single-table operations


def upsilon_from_phi(phi: np.ndarray, spec: ProblemSpec, t: float) -> np.ndarray:
    """Affine feedback component M(t,t)^{-1} (B^T(t) phi + rho(t,t))."""
    phi = np.asarray(phi, dtype=float)
    M = np.asarray(spec.M(t, t), dtype=float)
    rhs = np.asarray(spec.dynamics.B(t), dtype=float).T @ phi + np.asarray(
        spec.rho(t, t), dtype=float)
    try:
        factor = cho_factor(0.5 * (M + M.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise AssumptionError(
            f"M(t,t) is not positive definite at t={t:.6g}") from exc
    return cho_solve(factor, rhs)


def btilde_table(closed_loop: TransitionTable, upsilon: np.ndarray,
                 dynamics, grid: TimeGrid) -> np.ndarray:
    """Zero-state responses btilde(s, t) for every node pair t <= s.

    Entry [j, i] holds btilde(t_j, t_i); the strict lower region s < t is
    zero, as is the whole diagonal btilde(t, t) = 0.
    """
    from .grid import _eval_dynamics

    upsilon = np.asarray(upsilon, dtype=float)
    N = grid.N
    n = closed_loop.dim
    m = upsilon.shape[1]
    b_nodes = _eval_dynamics(dynamics.b, grid.nodes, (n,))
    B_nodes = _eval_dynamics(dynamics.B, grid.nodes, (n, m))
    drive = b_nodes - np.einsum("tab,tb->ta", B_nodes, upsilon)
    return _btilde_from_drive(closed_loop.full_table(), drive, grid)


def _btilde_from_drive(cl_full: np.ndarray, drive: np.ndarray,
                       grid: TimeGrid) -> np.ndarray:
    moved = np.einsum("jtab,tb->jta", cl_full, drive, optimize=True)
    running = cumulative_trapezoid(moved, grid.h, axis=1)
    diag = running[np.arange(grid.N + 1), np.arange(grid.N + 1)]
    bt = diag[:, None, :] - running
    il, jl = np.tril_indices(grid.N + 1, k=-1)
    bt[jl, il] = 0.0  # zero out s < t, including any cumsum spill
    return bt


def sbb_at(t_idx: int, spec: ProblemSpec, grid: TimeGrid,
           closed_loop: TransitionTable, gain: np.ndarray,
           upsilon: np.ndarray, btilde: np.ndarray) -> np.ndarray:
    """Nonlocal drift correction Sbb(t_i) by direct node quadrature.

    All five bracketed terms of the defining integral are assembled from the
    supplied ingredient tables; independent of the batched solver path.
    """
    N = grid.N
    t = float(grid.nodes[t_idx])
    s_range = grid.nodes[t_idx:]
    G = np.asarray(gain, dtype=float)[t_idx:]
    U = np.asarray(upsilon, dtype=float)[t_idx:]
    bt = np.asarray(btilde, dtype=float)[t_idx:, t_idx]
    Qt = spec.Q.row(t, s_range, derivative=True)
    St = spec.S.row(t, s_range, derivative=True)
    Mt = spec.M.row(t, s_range, derivative=True)
    qt = spec.q.row(t, s_range, derivative=True)
    rhot = spec.rho.row(t, s_range, derivative=True)
    w = U + np.einsum("jmn,jn->jm", G, bt)
    vec = (np.einsum("jab,jb->ja", Qt, bt)
           - np.einsum("jma,jmn,jn->ja", G, St, bt)
           - np.einsum("jmn,jm->jn", St, np.einsum("jmn,jn->jm", G, bt))
           + qt
           - np.einsum("jmn,jm->jn", St, U)
           + np.einsum("jma,jmp,jp->ja", G, Mt, w)
           - np.einsum("jma,jm->ja", G, rhot))
    prop = np.asarray([closed_loop.matrix(j, t_idx) for j in range(t_idx, N + 1)])
    integ = quadrature(np.einsum("jba,jb->ja", prop, vec), grid, t_idx, N)
    EN = closed_loop.matrix(N, t_idx)
    gdot = np.asarray(spec.terminal.dg_dt(t), dtype=float).reshape(-1)
    Gdot = np.asarray(spec.terminal.dG_dt(t), dtype=float)
    return EN.T @ (gdot + Gdot @ bt[-1]) + integ


def omega_at(t_idx: int, spec: ProblemSpec, grid: TimeGrid,
             gain: np.ndarray, upsilon: np.ndarray,
             btilde: np.ndarray) -> float:
    """Scalar correction omega(t_i) by direct node quadrature."""
    N = grid.N
    t = float(grid.nodes[t_idx])
    s_range = grid.nodes[t_idx:]
    G = np.asarray(gain, dtype=float)[t_idx:]
    U = np.asarray(upsilon, dtype=float)[t_idx:]
    bt = np.asarray(btilde, dtype=float)[t_idx:, t_idx]
    Qt = spec.Q.row(t, s_range, derivative=True)
    St = spec.S.row(t, s_range, derivative=True)
    Mt = spec.M.row(t, s_range, derivative=True)
    qt = spec.q.row(t, s_range, derivative=True)
    rhot = spec.rho.row(t, s_range, derivative=True)
    w = U + np.einsum("jmn,jn->jm", G, bt)
    quad_term = np.einsum("jac,jc,ja->j", Qt, bt, bt)
    cross = qt - np.einsum("jma,jmn,jn->ja", G, St, bt) \
        - np.einsum("jmn,jm->jn", St, U)
    lin_term = 2.0 * np.einsum("ja,ja->j", cross, bt)
    ctl_term = (np.einsum("jmp,jp,jm->j", Mt, w, w)
                - 2.0 * np.einsum("jm,jm->j", rhot, w))
    integ = float(quadrature(quad_term + lin_term + ctl_term, grid, t_idx, N))
    gdot = np.asarray(spec.terminal.dg_dt(t), dtype=float).reshape(-1)
    Gdot = np.asarray(spec.terminal.dG_dt(t), dtype=float)
    bT = bt[-1]
    return float(np.dot(Gdot @ bT + 2.0 * gdot, bT)) + integ


# ---------------------------------------------------------------------------
# batched tables used by the Picard iteration


def _upsilon_table(phi: np.ndarray, tables: SpecTables) -> np.ndarray:
    rhs = np.einsum("inm,in->im", tables.B, phi) + tables.rhod
    return tables.solve_md(rhs)


def _sbb_table(gain, upsilon, bt, cl_full, tables: SpecTables) -> np.ndarray:
    Gb = np.einsum("jmn,jin->ijm", gain, bt, optimize=True)
    w = upsilon[None, :, :] + Gb
    vec = np.einsum("ijab,jib->ija", tables.Qt, bt, optimize=True)
    vec -= np.einsum("jma,ijmn,jin->ija", gain, tables.St, bt, optimize=True)
    vec -= np.einsum("ijmn,ijm->ijn", tables.St, Gb, optimize=True)
    vec += tables.qt
    vec -= np.einsum("ijmn,jm->ijn", tables.St, upsilon, optimize=True)
    vec += np.einsum("jma,ijmp,ijp->ija", gain, tables.Mt, w, optimize=True)
    vec -= np.einsum("jma,ijm->ija", gain, tables.rhot, optimize=True)
    out = np.einsum("jiab,ija,ij->ib", cl_full, vec, tables.W, optimize=True)
    EN = cl_full[tables.grid.N]
    out += np.einsum("iba,ib->ia", EN,
                     tables.gdot + np.einsum("iab,ib->ia", tables.Gdot,
                                             bt[tables.grid.N]))
    return out


def _omega_table(gain, upsilon, bt, tables: SpecTables) -> np.ndarray:
    Gb = np.einsum("jmn,jin->ijm", gain, bt, optimize=True)
    w = upsilon[None, :, :] + Gb
    quad_term = np.einsum("ijac,jic,jia->ij", tables.Qt, bt, bt, optimize=True)
    cross = tables.qt - np.einsum("jma,ijmn,jin->ija", gain, tables.St, bt,
                                  optimize=True)
    cross -= np.einsum("ijmn,jm->ijn", tables.St, upsilon, optimize=True)
    lin_term = 2.0 * np.einsum("ija,jia->ij", cross, bt, optimize=True)
    ctl_term = (np.einsum("ijmp,ijp,ijm->ij", tables.Mt, w, w, optimize=True)
                - 2.0 * np.einsum("ijm,ijm->ij", tables.rhot, w, optimize=True))
    out = np.einsum("ij,ij->i", quad_term + lin_term + ctl_term, tables.W)
    btN = bt[tables.grid.N]
    out += np.einsum("ia,ia->i",
                     np.einsum("iab,ib->ia", tables.Gdot, btN) + 2.0 * tables.gdot,
                     btN)
    return out


def _affine_backward_rk4(D_nodes, D_half, c_nodes, c_half, terminal, h):
    """Integrate x' = -D(t) x - c(t) backward from x(T) = terminal.

    The one-step map of an affine system is affine, so the per-step matrices
    and offsets are built in one batch and the time loop is two small
    operations per step.
    """
    N, n = D_half.shape[0], D_half.shape[-1]
    eye = np.eye(n)
    K1 = -D_nodes[1:]
    k1r = -c_nodes[1:]
    K2 = -D_half @ (eye - 0.5 * h * K1)
    k2r = 0.5 * h * np.einsum("iab,ib->ia", D_half, k1r) - c_half
    K3 = -D_half @ (eye - 0.5 * h * K2)
    k3r = 0.5 * h * np.einsum("iab,ib->ia", D_half, k2r) - c_half
    K4 = -D_nodes[:-1] @ (eye - h * K3)
    k4r = h * np.einsum("iab,ib->ia", D_nodes[:-1], k3r) - c_nodes[:-1]
    Tmat = eye - (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
    rvec = -(h / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
    out = np.empty((N + 1, n))
    out[N] = terminal
    for i in range(N - 1, -1, -1):
        out[i] = Tmat[i] @ out[i + 1] + rvec[i]
    return out


def _interp_half(table: np.ndarray) -> np.ndarray:
    return 0.5 * (table[:-1] + table[1:])


def solve_phi(spec: ProblemSpec, grid: TimeGrid, riccati: RiccatiSolution,
              opts: SolveOptions | None = None) -> PhiSolution:
    """Picard iteration for the linear value-function coefficient.

    Each pass freezes phi, rebuilds Upsilon, btilde and Sbb from it, then
    integrates the backward equation with RK4 from phi(T) = g(T).  The
    returned tables are the ones rebuilt from the converged phi, so they are
    mutually consistent.
    """
    opts = opts or SolveOptions()
    tables = riccati.tables
    if tables.grid.N != grid.N or tables.grid.T != grid.T:
        raise TilqError("riccati solution was computed on a different grid")
    cl_full = riccati.closed_loop.full_table()
    gain = riccati.gain
    N, n = grid.N, spec.dims.n
    h = grid.h

    D_nodes = np.swapaxes(tables.A - tables.B @ gain, -1, -2)
    D_half = np.swapaxes(tables.A_half - tables.B_half @ _interp_half(gain), -1, -2)
    Pb = np.einsum("iab,ib->ia", riccati.P, tables.b)
    Pb_half = np.einsum("iab,ib->ia", _interp_half(riccati.P), tables.b_half)
    g_rho = np.einsum("ima,im->ia", gain, tables.rhod)
    g_rho_half = np.einsum("ima,im->ia", _interp_half(gain), tables.rhod_half)

    def sweep(phi):
        ups = _upsilon_table(phi, tables)
        drive = tables.b - np.einsum("tab,tb->ta", tables.B, ups)
        bt = _btilde_from_drive(cl_full, drive, grid)
        sbb = _sbb_table(gain, ups, bt, cl_full, tables)
        c_nodes = -sbb + Pb + tables.qd - g_rho
        c_half = -_interp_half(sbb) + Pb_half + tables.qd_half - g_rho_half
        return _affine_backward_rk4(D_nodes, D_half, c_nodes, c_half,
                                    tables.g_T, h)

    if isinstance(opts.initial, str) and opts.initial == "terminal":
        phi0 = np.broadcast_to(tables.g_T, (N + 1, n)).copy()
    elif isinstance(opts.initial, str) and opts.initial == "zero":
        phi0 = np.zeros((N + 1, n))
    else:
        phi0 = np.asarray(opts.initial, dtype=float).reshape(N + 1, n).copy()
    phi, diag = damped_fixed_point(phi0, sweep, opts, "affine coefficient")

    ups = _upsilon_table(phi, tables)
    drive = tables.b - np.einsum("tab,tb->ta", tables.B, ups)
    bt = _btilde_from_drive(cl_full, drive, grid)
    sbb = _sbb_table(gain, ups, bt, cl_full, tables)
    return PhiSolution(phi=phi, upsilon=ups, btilde=bt, sbb=sbb, diagnostics=diag)


def solve_psi(spec: ProblemSpec, grid: TimeGrid, riccati: RiccatiSolution,
              phi_sol: PhiSolution) -> tuple[np.ndarray, np.ndarray]:
    """Scalar coefficient by suffix quadrature; psi(T) = 0 exactly.

    Returns (psi, omega) on the nodes.
    """
    tables = riccati.tables
    omega = _omega_table(riccati.gain, phi_sol.upsilon, phi_sol.btilde, tables)
    drive = tables.b - np.einsum("tab,tb->ta", tables.B, phi_sol.upsilon)
    mu = np.einsum("im,im->i",
                   np.einsum("iab,ib->ia", tables.Md, phi_sol.upsilon)
                   - 2.0 * tables.rhod, phi_sol.upsilon)
    integrand = 2.0 * np.einsum("ia,ia->i", phi_sol.phi, drive) - omega + mu
    running = cumulative_trapezoid(integrand, grid.h, axis=0)
    psi = running[-1] - running
    return psi, omega


def solve_auxiliary(spec: ProblemSpec, grid: TimeGrid, riccati: RiccatiSolution,
                    opts: SolveOptions | None = None) -> AuxiliarySolution:
    """phi then psi, with all dependent tables mutually consistent."""
    phi_sol = solve_phi(spec, grid, riccati, opts)
    psi, omega = solve_psi(spec, grid, riccati, phi_sol)
    return AuxiliarySolution(phi=phi_sol.phi, psi=psi, upsilon=phi_sol.upsilon,
                             sbb=phi_sol.sbb, omega=omega,
                             btilde=phi_sol.btilde, diagnostics=phi_sol.diagnostics)
