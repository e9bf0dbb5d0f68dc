import numpy as np
import pytest

from tilq import (DynamicsField, TilqError, build_grid, closed_loop_transition,
                  open_loop_transition, quadrature)


class TestBuildGrid:
    def test_nodes_quarter(self):
        grid = build_grid(1.0, 4)
        np.testing.assert_array_equal(grid.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_nodes_coarse(self):
        grid = build_grid(2.0, 2)
        np.testing.assert_array_equal(grid.nodes, [0.0, 1.0, 2.0])

    def test_single_interval_rejected(self):
        with pytest.raises(TilqError):
            build_grid(1.0, 1)

    def test_negative_horizon_rejected(self):
        with pytest.raises(TilqError):
            build_grid(-1.0, 10)


class TestQuadrature:
    def test_constant_exact(self):
        # bit-exact when h is a dyadic rational, machine precision otherwise
        grid = build_grid(1.0, 4)
        assert float(quadrature(np.ones(5), grid)) == 1.0
        for N in (7, 100):
            grid = build_grid(1.0, N)
            assert quadrature(np.ones(N + 1), grid) == pytest.approx(1.0, rel=1e-14)

    def test_affine_exact(self):
        grid = build_grid(1.0, 10)
        assert quadrature(grid.nodes, grid) == pytest.approx(0.5, abs=1e-15)

    def test_quadratic_second_order(self):
        grid = build_grid(1.0, 1000)
        got = quadrature(grid.nodes ** 2, grid)
        assert abs(got - 1.0 / 3.0) < 1e-6

    def test_subrange(self):
        grid = build_grid(1.0, 10)
        # integral of 1 over [0.2, 0.7]
        assert quadrature(np.ones(6), grid, 2, 7) == pytest.approx(0.5)

    def test_empty_range_rejected(self):
        grid = build_grid(1.0, 10)
        with pytest.raises(TilqError):
            quadrature(np.ones(0), grid, 5, 4)

    def test_matrix_valued(self):
        grid = build_grid(1.0, 50)
        samples = np.repeat(np.eye(2)[None], 51, axis=0)
        np.testing.assert_allclose(quadrature(samples, grid), np.eye(2))


class TestOpenLoopTransition:
    def test_zero_dynamics_identity(self):
        dyn = DynamicsField.constant([[0.0, 0.0], [0.0, 0.0]],
                                     [[1.0], [0.0]], [0.0, 0.0])
        table = open_loop_transition(dyn, build_grid(1.0, 8))
        for i in range(9):
            for j in range(i + 1):
                np.testing.assert_array_equal(table.matrix(i, j), np.eye(2))

    def test_scalar_exponential(self):
        dyn = DynamicsField.constant([[1.0]], [[1.0]], [0.0])
        table = open_loop_transition(dyn, build_grid(1.0, 100))
        assert abs(table.matrix(100, 0)[0, 0] - np.e) < 1e-8

    def test_noncommuting_matches_fine_grid(self):
        # A(t) = [[0, 1], [-t, 0]] does not commute with itself across times
        dyn = DynamicsField(A=lambda t: np.array([[0.0, 1.0], [-t, 0.0]]),
                            B=lambda t: np.array([[0.0], [1.0]]),
                            b=lambda t: np.zeros(2))
        coarse = open_loop_transition(dyn, build_grid(1.0, 200))
        fine = open_loop_transition(dyn, build_grid(1.0, 2000))
        err = np.max(np.abs(coarse.matrix(200, 0) - fine.matrix(2000, 0)))
        assert err < 1e-6

    def test_rk4_refinement_order(self):
        dyn = DynamicsField(A=lambda t: np.array([[np.sin(t), 1.0],
                                                  [-1.0, np.cos(t)]]),
                            B=lambda t: np.zeros((2, 1)),
                            b=lambda t: np.zeros(2))
        ref = open_loop_transition(dyn, build_grid(1.0, 1600)).matrix(1600, 0)
        e1 = np.max(np.abs(open_loop_transition(dyn, build_grid(1.0, 100))
                           .matrix(100, 0) - ref))
        e2 = np.max(np.abs(open_loop_transition(dyn, build_grid(1.0, 200))
                           .matrix(200, 0) - ref))
        assert e1 / e2 >= 8.0

    def test_determinism(self):
        dyn = DynamicsField(A=lambda t: np.array([[np.sin(3 * t)]]),
                            B=lambda t: np.ones((1, 1)),
                            b=lambda t: np.zeros(1))
        t1 = open_loop_transition(dyn, build_grid(1.0, 64))
        t2 = open_loop_transition(dyn, build_grid(1.0, 64))
        np.testing.assert_array_equal(t1.full_table(), t2.full_table())


class TestClosedLoopTransition:
    def test_zero_gain_equals_open_loop(self):
        dyn = DynamicsField(A=lambda t: np.array([[np.cos(t)]]),
                            B=lambda t: np.ones((1, 1)),
                            b=lambda t: np.zeros(1))
        grid = build_grid(1.0, 50)
        open_t = open_loop_transition(dyn, grid)
        closed_t = closed_loop_transition(dyn, np.zeros((51, 1, 1)), grid)
        np.testing.assert_array_equal(open_t.full_table(),
                                      closed_t.full_table())

    def test_constant_gain_exponential(self):
        dyn = DynamicsField.constant([[0.0]], [[1.0]], [0.0])
        grid = build_grid(1.0, 100)
        table = closed_loop_transition(dyn, np.ones((101, 1, 1)), grid)
        assert abs(table.matrix(100, 0)[0, 0] - np.exp(-1.0)) < 1e-8

    def test_gain_shape_mismatch_rejected(self):
        dyn = DynamicsField.constant([[0.0]], [[1.0]], [0.0])
        with pytest.raises(TilqError):
            closed_loop_transition(dyn, np.zeros((5, 2, 1)), build_grid(1.0, 10))

    def test_volterra_integral_form(self):
        # Phi(i,j) - E(i,j) + int E(i,tau) B Gamma(tau) Phi(tau,j) dtau = 0
        rng = np.random.default_rng(7)
        a, bb = -0.6, 0.8
        gain_profile = rng.uniform(0.2, 1.0, size=3)

        def gain_fn(t):
            return gain_profile[0] + gain_profile[1] * t + gain_profile[2] * t * t

        dyn = DynamicsField.constant([[a]], [[bb]], [0.0])
        grid = build_grid(1.0, 200)
        gain = np.array([[[gain_fn(t)]] for t in grid.nodes])
        E = open_loop_transition(dyn, grid)
        Phi = closed_loop_transition(dyn, gain, grid)
        h = grid.h
        for (i, j) in [(200, 0), (150, 30), (70, 70)]:
            vals = np.array([
                E.matrix(i, k)[0, 0] * bb * gain[k, 0, 0] * Phi.matrix(k, j)[0, 0]
                for k in range(j, i + 1)])
            integral = quadrature(vals, grid, j, i)
            residual = Phi.matrix(i, j)[0, 0] - E.matrix(i, j)[0, 0] + integral
            assert abs(residual) <= 5 * h * h

    def test_semigroup_property(self):
        dyn = DynamicsField(A=lambda t: np.array([[np.sin(t), 0.2],
                                                  [0.0, -0.5 * t]]),
                            B=lambda t: np.array([[0.0], [1.0]]),
                            b=lambda t: np.zeros(2))
        grid = build_grid(1.0, 60)
        gain = 0.3 * np.ones((61, 1, 2))
        for table in (open_loop_transition(dyn, grid),
                      closed_loop_transition(dyn, gain, grid)):
            full = table.full_table()
            scale = np.max(np.abs(full))
            for (i, k, j) in [(60, 30, 0), (50, 45, 10), (33, 20, 20)]:
                err = np.max(np.abs(full[i, j] - full[i, k] @ full[k, j]))
                assert err <= 1e-8 * scale


class TestStorageBudget:
    def test_on_demand_matches_full(self):
        dyn = DynamicsField(A=lambda t: np.array([[np.cos(2 * t)]]),
                            B=lambda t: np.ones((1, 1)),
                            b=lambda t: np.zeros(1))
        grid = build_grid(1.0, 40)
        stored = open_loop_transition(dyn, grid, store_full=True)
        lazy = open_loop_transition(dyn, grid, store_full=False)
        assert not lazy.stores_full
        for (i, j) in [(40, 0), (25, 13), (7, 7)]:
            np.testing.assert_allclose(lazy.matrix(i, j), stored.matrix(i, j),
                                       rtol=0, atol=1e-13)
