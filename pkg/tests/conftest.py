"""Shared problem builders and session-cached solves."""

import numpy as np
import pytest

from tilq import (BaseCosts, Dimensions, DynamicsField, build_grid,
                  exponential_kernel, hyperbolic_kernel, make_discounted,
                  solve_equilibrium)


def classical_scalar_spec():
    """A = 0, B = 1, M = 1, G = 1, everything else zero: P(t) = 1/(2 - t)."""
    return make_discounted(
        Dimensions(1, 1), 1.0,
        DynamicsField.constant([[0.0]], [[1.0]], [0.0]),
        BaseCosts(Q=[[0.0]], S=[[0.0]], M=[[1.0]], q=[0.0], rho=[0.0],
                  G=[[1.0]], g=[0.0]),
        exponential_kernel(0.0), name="classical_scalar")


def hyperbolic_scalar_spec(k=1.0):
    return make_discounted(
        Dimensions(1, 1), 1.0,
        DynamicsField.constant([[-0.2]], [[1.0]], [0.1]),
        BaseCosts(Q=[[1.0]], S=[[0.1]], M=[[1.0]], q=[0.05], rho=[0.02],
                  G=[[1.0]], g=[0.1]),
        hyperbolic_kernel(k), name=f"hyperbolic_scalar_k{k}")


def twostate_spec(kernel=None):
    return make_discounted(
        Dimensions(2, 1), 1.0,
        DynamicsField.constant([[0.0, 1.0], [-0.5, -0.3]], [[0.0], [1.0]],
                               [0.05, 0.0]),
        BaseCosts(Q=[[1.0, 0.1], [0.1, 0.5]], S=[[0.1, 0.0]], M=[[1.0]],
                  q=[0.02, 0.0], rho=[0.01], G=[[0.5, 0.0], [0.0, 0.5]],
                  g=[0.05, 0.0]),
        kernel or hyperbolic_kernel(1.0), name="twostate")


def zero_cost_spec():
    return make_discounted(
        Dimensions(1, 1), 1.0,
        DynamicsField.constant([[0.3]], [[1.0]], [0.0]),
        BaseCosts(Q=[[0.0]], S=[[0.0]], M=[[1.0]], q=[0.0], rho=[0.0],
                  G=[[0.0]], g=[0.0]),
        hyperbolic_kernel(1.0), name="zero_cost")


@pytest.fixture(scope="session")
def hyperbolic_solution():
    """Solved scalar hyperbolic demo at N = 1000, reused across test modules."""
    spec = hyperbolic_scalar_spec(1.0)
    grid = build_grid(1.0, 1000)
    return solve_equilibrium(spec, grid)


@pytest.fixture(scope="session")
def classical_solution():
    spec = classical_scalar_spec()
    grid = build_grid(1.0, 1000)
    return solve_equilibrium(spec, grid)


@pytest.fixture(scope="session")
def twostate_solution():
    spec = twostate_spec()
    grid = build_grid(1.0, 300)
    return solve_equilibrium(spec, grid)


def classical_exact_p(nodes: np.ndarray) -> np.ndarray:
    return 1.0 / (2.0 - nodes)
