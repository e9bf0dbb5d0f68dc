"""Uniform time grids, trapezoid quadrature, and state-transition tables.

Propagators Phi(t_i, t_j) of the open-loop system x' = A(t) x and of the
closed-loop system x' = (A(t) - B(t) Gain(t)) x are built one grid step at a
time with classical fourth-order Runge-Kutta.  This coincides with the
matrix-exponential formula exp(int A) whenever the system matrices commute
pairwise and is the correct fundamental solution in general.

All tables are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TilqError

# Full (i, j) pair storage is kept only for grids within this budget;
# larger tables fall back to per-step factors composed on demand.
FULL_TABLE_MAX_N = 4000
FULL_TABLE_MAX_DIM = 8


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N intervals."""

    T: float
    N: int
    nodes: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def half_nodes(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])


def build_grid(T: float, N: int) -> TimeGrid:
    """Uniform grid with nodes i*T/N, i = 0..N.

    Raises for non-positive horizons and for N < 2 (a single interval cannot
    support the interior quadrature and differencing stencils used here).
    """
    if T <= 0:
        raise TilqError(f"horizon must be positive, got {T!r}")
    if N < 2:
        raise TilqError(f"grid needs at least 2 intervals, got {N!r}")
    nodes = np.linspace(0.0, float(T), N + 1)
    nodes.flags.writeable = False
    return TimeGrid(T=float(T), N=int(N), nodes=nodes)


def quadrature(samples: np.ndarray, grid: TimeGrid, a_idx: int = 0,
               b_idx: int | None = None) -> np.ndarray:
    """Composite trapezoid rule over the node range [a_idx, b_idx].

    ``samples`` holds the integrand values at the nodes of the range, one per
    node along axis 0 (entries may themselves be vectors or matrices).  Exact
    for affine integrands; O(h^2) for smooth ones.
    """
    if b_idx is None:
        b_idx = grid.N
    if b_idx < a_idx:
        raise TilqError(f"empty quadrature range [{a_idx}, {b_idx}]")
    samples = np.asarray(samples, dtype=float)
    k = b_idx - a_idx + 1
    if samples.shape[0] != k:
        raise TilqError(
            f"expected {k} samples for node range [{a_idx}, {b_idx}], "
            f"got {samples.shape[0]}")
    if k == 1:
        return np.zeros(samples.shape[1:])
    w = np.full(k, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return np.tensordot(w, samples, axes=(0, 0))


def _rk4_linear_steps(A_nodes: np.ndarray, A_half: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 propagators for X' = A(s) X on every grid interval.

    The one-step map of a linear system is itself linear, so each factor is
    the matrix I + h/6 (k1 + 2 k2 + 2 k3 + k4) with the stages evaluated on
    the identity.
    """
    n = A_nodes.shape[-1]
    eye = np.eye(n)
    k1 = A_nodes[:-1]
    k2 = A_half @ (eye + 0.5 * h * k1)
    k3 = A_half @ (eye + 0.5 * h * k2)
    k4 = A_nodes[1:] @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class TransitionTable:
    """Propagators Phi(t_i, t_j), j <= i, of a linear time-varying system.

    Phi(i, i) is the identity and the table satisfies the semigroup property
    Phi(i, j) = Phi(i, k) Phi(k, j) up to rounding.  Construction is
    deterministic: identical inputs give bit-identical tables.
    """

    def __init__(self, grid: TimeGrid, steps: np.ndarray, flavor: str,
                 store_full: bool | None = None):
        self.grid = grid
        self.flavor = flavor
        self.dim = steps.shape[-1]
        steps = np.ascontiguousarray(steps, dtype=float)
        steps.flags.writeable = False
        self.steps = steps
        if store_full is None:
            store_full = (grid.N <= FULL_TABLE_MAX_N
                          and self.dim <= FULL_TABLE_MAX_DIM)
        self._full = self._build_full() if store_full else None

    def _build_full(self) -> np.ndarray:
        N, n = self.grid.N, self.dim
        full = np.zeros((N + 1, N + 1, n, n))
        rng = np.arange(N + 1)
        full[rng, rng] = np.eye(n)
        for i in range(N):
            full[i + 1, : i + 1] = self.steps[i] @ full[i, : i + 1]
        full.flags.writeable = False
        return full

    @property
    def stores_full(self) -> bool:
        return self._full is not None

    def full_table(self) -> np.ndarray:
        """The (N+1, N+1, n, n) array of all propagators (built if needed)."""
        if self._full is None:
            return self._build_full()
        return self._full

    def matrix(self, i: int, j: int) -> np.ndarray:
        """Phi(t_i, t_j) for j <= i."""
        if not (0 <= j <= i <= self.grid.N):
            raise TilqError(f"propagator indices must satisfy 0 <= {j} <= {i} <= N")
        if self._full is not None:
            return self._full[i, j]
        out = np.eye(self.dim)
        for k in range(j, i):
            out = self.steps[k] @ out
        return out


def _eval_dynamics(fn, times: np.ndarray, shape: tuple) -> np.ndarray:
    out = np.empty((len(times),) + shape)
    for i, t in enumerate(times):
        out[i] = np.asarray(fn(float(t)), dtype=float).reshape(shape)
    return out


def open_loop_transition(dynamics, grid: TimeGrid,
                         store_full: bool | None = None) -> TransitionTable:
    """Fundamental-solution table of x' = A(t) x."""
    n = np.asarray(dynamics.A(0.0), dtype=float).shape[0]
    A_nodes = _eval_dynamics(dynamics.A, grid.nodes, (n, n))
    A_half = _eval_dynamics(dynamics.A, grid.half_nodes, (n, n))
    steps = _rk4_linear_steps(A_nodes, A_half, grid.h)
    return TransitionTable(grid, steps, flavor="open_loop", store_full=store_full)


def closed_loop_transition(dynamics, gain: np.ndarray, grid: TimeGrid,
                           store_full: bool | None = None) -> TransitionTable:
    """Fundamental-solution table of x' = (A(t) - B(t) Gain(t)) x.

    ``gain`` is tabulated on the nodes, shape (N+1, m, n); its half-step
    values are linear interpolants (means of adjacent nodes).
    """
    gain = np.asarray(gain, dtype=float)
    A0 = np.asarray(dynamics.A(0.0), dtype=float)
    B0 = np.asarray(dynamics.B(0.0), dtype=float)
    n, m = B0.shape
    if gain.shape != (grid.N + 1, m, n):
        raise TilqError(
            f"gain table has shape {gain.shape}, expected {(grid.N + 1, m, n)}")
    if A0.shape != (n, n):
        raise TilqError(f"A(t) has shape {A0.shape}, expected {(n, n)}")
    A_nodes = _eval_dynamics(dynamics.A, grid.nodes, (n, n))
    A_half = _eval_dynamics(dynamics.A, grid.half_nodes, (n, n))
    B_nodes = _eval_dynamics(dynamics.B, grid.nodes, (n, m))
    B_half = _eval_dynamics(dynamics.B, grid.half_nodes, (n, m))
    gain_half = 0.5 * (gain[:-1] + gain[1:])
    eff_nodes = A_nodes - B_nodes @ gain
    eff_half = A_half - B_half @ gain_half
    steps = _rk4_linear_steps(eff_nodes, eff_half, grid.h)
    return TransitionTable(grid, steps, flavor="closed_loop", store_full=store_full)
