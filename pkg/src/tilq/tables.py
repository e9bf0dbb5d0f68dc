"""Per-solve tabulation of a problem's coefficients on a time grid.

Everything the solvers touch repeatedly is evaluated once here: dynamics at
nodes and half nodes, diagonal kernel values K(t_i, t_i), terminal weights,
and the O(N^2) triangles K_t(t_i, t_j) of the first-argument derivatives.
Triangles use a single broadcast call when the field supports it, otherwise
an explicit loop over the t <= s pairs.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .grid import TimeGrid, _eval_dynamics
from .problem import ProblemSpec


def kernel_triangle(field, grid: TimeGrid, derivative: bool = True) -> np.ndarray:
    """Array [i, j] = field(t_i, t_j) for j >= i; strict lower part zeroed.

    Zeroing matters: vectorized kernels may misbehave on the unused t > s
    region (divisions by zero and the like) and a stray inf would poison the
    weighted sums downstream even under zero weights.
    """
    nodes = grid.nodes
    N = grid.N
    fn = field.dvalue_dt if derivative else field.value
    shape = tuple(field.shape)
    if field.vectorized:
        with np.errstate(all="ignore"):
            arr = np.asarray(fn(nodes[:, None], nodes[None, :]), dtype=float)
        arr = np.broadcast_to(arr, (N + 1, N + 1) + shape).copy()
    else:
        arr = np.zeros((N + 1, N + 1) + shape)
        for i in range(N + 1):
            for j in range(i, N + 1):
                arr[i, j] = np.asarray(fn(float(nodes[i]), float(nodes[j])),
                                       dtype=float).reshape(shape)
    il, jl = np.tril_indices(N + 1, k=-1)
    arr[il, jl] = 0.0
    return arr


def suffix_weights(grid: TimeGrid) -> np.ndarray:
    """W[i, j]: trapezoid weight of node j in the integral over [t_i, T]."""
    N = grid.N
    h = grid.h
    W = np.triu(np.full((N + 1, N + 1), h))
    idx = np.arange(N + 1)
    W[idx, idx] = 0.5 * h
    W[:N, N] = 0.5 * h
    W[N, N] = 0.0
    return W


def cumulative_trapezoid(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Running integral from the first node along ``axis``; C[..., 0] = 0."""
    values = np.moveaxis(values, axis, 0)
    mids = 0.5 * h * (values[:-1] + values[1:])
    out = np.zeros_like(values)
    np.cumsum(mids, axis=0, out=out[1:])
    return np.moveaxis(out, 0, axis)


class SpecTables:
    """Grid evaluations of one problem, built lazily and cached.

    Instances are read-only after each property materializes; they may be
    shared by every solver stage working on the same (spec, grid) pair.
    """

    def __init__(self, spec: ProblemSpec, grid: TimeGrid):
        self.spec = spec
        self.grid = grid
        self.n = spec.dims.n
        self.m = spec.dims.m

    # -- dynamics ----------------------------------------------------------

    @cached_property
    def A(self) -> np.ndarray:
        return _eval_dynamics(self.spec.dynamics.A, self.grid.nodes, (self.n, self.n))

    @cached_property
    def A_half(self) -> np.ndarray:
        return _eval_dynamics(self.spec.dynamics.A, self.grid.half_nodes,
                              (self.n, self.n))

    @cached_property
    def B(self) -> np.ndarray:
        return _eval_dynamics(self.spec.dynamics.B, self.grid.nodes, (self.n, self.m))

    @cached_property
    def B_half(self) -> np.ndarray:
        return _eval_dynamics(self.spec.dynamics.B, self.grid.half_nodes,
                              (self.n, self.m))

    @cached_property
    def b(self) -> np.ndarray:
        return _eval_dynamics(self.spec.dynamics.b, self.grid.nodes, (self.n,))

    @cached_property
    def b_half(self) -> np.ndarray:
        return _eval_dynamics(self.spec.dynamics.b, self.grid.half_nodes, (self.n,))

    # -- diagonal kernel values K(t, t) -------------------------------------

    def _diag(self, field) -> np.ndarray:
        nodes = self.grid.nodes
        return np.ascontiguousarray(
            np.asarray([field(float(t), float(t)) for t in nodes], dtype=float))

    def _diag_half(self, field) -> np.ndarray:
        return np.asarray([field(float(t), float(t)) for t in self.grid.half_nodes],
                          dtype=float)

    @cached_property
    def Qd(self) -> np.ndarray:
        return self._diag(self.spec.Q)

    @cached_property
    def Sd(self) -> np.ndarray:
        return self._diag(self.spec.S)

    @cached_property
    def Md(self) -> np.ndarray:
        return self._diag(self.spec.M)

    @cached_property
    def qd(self) -> np.ndarray:
        return self._diag(self.spec.q)

    @cached_property
    def rhod(self) -> np.ndarray:
        return self._diag(self.spec.rho)

    @cached_property
    def Md_chol(self) -> np.ndarray:
        """Stacked Cholesky factors of M(t_i, t_i); fails fast on non-PD data."""
        sym = 0.5 * (self.Md + np.swapaxes(self.Md, -1, -2))
        return np.linalg.cholesky(sym)

    @cached_property
    def qd_half(self) -> np.ndarray:
        return self._diag_half(self.spec.q)

    @cached_property
    def rhod_half(self) -> np.ndarray:
        return self._diag_half(self.spec.rho)

    # -- terminal weights ----------------------------------------------------

    @cached_property
    def G_T(self) -> np.ndarray:
        G = np.asarray(self.spec.terminal.G(self.grid.T), dtype=float)
        return 0.5 * (G + G.T)

    @cached_property
    def g_T(self) -> np.ndarray:
        return np.asarray(self.spec.terminal.g(self.grid.T), dtype=float).reshape(self.n)

    @cached_property
    def Gdot(self) -> np.ndarray:
        return np.asarray([self.spec.terminal.dG_dt(float(t)) for t in self.grid.nodes],
                          dtype=float)

    @cached_property
    def gdot(self) -> np.ndarray:
        return np.asarray([self.spec.terminal.dg_dt(float(t)) for t in self.grid.nodes],
                          dtype=float).reshape(-1, self.n)

    # -- derivative triangles and quadrature weights -------------------------

    @cached_property
    def Qt(self) -> np.ndarray:
        return kernel_triangle(self.spec.Q, self.grid)

    @cached_property
    def St(self) -> np.ndarray:
        return kernel_triangle(self.spec.S, self.grid)

    @cached_property
    def Mt(self) -> np.ndarray:
        return kernel_triangle(self.spec.M, self.grid)

    @cached_property
    def qt(self) -> np.ndarray:
        return kernel_triangle(self.spec.q, self.grid)

    @cached_property
    def rhot(self) -> np.ndarray:
        return kernel_triangle(self.spec.rho, self.grid)

    @cached_property
    def W(self) -> np.ndarray:
        return suffix_weights(self.grid)

    # -- linear solves against the diagonal M --------------------------------

    def solve_md(self, rhs: np.ndarray) -> np.ndarray:
        """Solve M(t_i, t_i) X_i = rhs_i for every node via the Cholesky factors."""
        L = self.Md_chol
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 2
        if vec:
            rhs = rhs[..., None]
        y = np.linalg.solve(L, rhs)
        x = np.linalg.solve(np.swapaxes(L, -1, -2), y)
        return x[..., 0] if vec else x

    def max_derivative_scale(self, samples: int = 64) -> float:
        """Sup of the t-derivative fields on a coarse probe; 0 means consistent."""
        nodes = self.grid.nodes
        step = max(1, len(nodes) // samples)
        idx = np.arange(0, len(nodes), step)
        sup = 0.0
        for f in (self.spec.Q, self.spec.S, self.spec.M, self.spec.q, self.spec.rho):
            for i in idx:
                for j in idx[idx >= i]:
                    sup = max(sup, float(np.max(np.abs(f.dt(float(nodes[i]),
                                                            float(nodes[j]))))))
        for t in nodes[idx]:
            sup = max(sup, float(np.max(np.abs(self.spec.terminal.dG_dt(float(t))))))
            sup = max(sup, float(np.max(np.abs(self.spec.terminal.dg_dt(float(t))))))
        return sup
