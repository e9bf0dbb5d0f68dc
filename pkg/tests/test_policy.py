import numpy as np
import pytest

from tilq import (BaseCosts, Dimensions, DynamicsField, TilqError, build_grid,
                  cost, error_function_closed, error_function_direct,
                  exponential_kernel, feedback, grad_value, make_discounted,
                  simulate_control, simulate_equilibrium, solve_equilibrium,
                  value)
from conftest import classical_scalar_spec, zero_cost_spec


class TestValueFunction:
    def test_zero_problem_zero_value(self):
        sol = solve_equilibrium(zero_cost_spec(), build_grid(1.0, 100))
        for (t, x) in [(0.0, 1.3), (0.5, -2.0), (1.0, 0.1)]:
            assert value(sol, t, [x]) == pytest.approx(0.0, abs=1e-12)

    def test_classical_value(self, classical_solution):
        # V(0, 2) = P(0) * 4 = 2
        assert value(classical_solution, 0.0, [2.0]) == pytest.approx(2.0,
                                                                      abs=4e-4)

    def test_value_at_origin_is_psi(self, hyperbolic_solution):
        sol = hyperbolic_solution
        for i in (0, 400, 1000):
            t = float(sol.grid.nodes[i])
            assert value(sol, t, np.zeros(1)) == pytest.approx(
                float(sol.auxiliary.psi[i]), abs=1e-14)

    def test_outside_horizon_rejected(self, hyperbolic_solution):
        with pytest.raises(TilqError):
            value(hyperbolic_solution, 1.5, [0.0])
        with pytest.raises(TilqError):
            value(hyperbolic_solution, -0.1, [0.0])


class TestGradient:
    def test_classical_gradient(self, classical_solution):
        got = grad_value(classical_solution, 0.0, [1.0])
        assert got[0] == pytest.approx(1.0, abs=2e-4)

    def test_gradient_at_origin(self, hyperbolic_solution):
        sol = hyperbolic_solution
        got = grad_value(sol, float(sol.grid.nodes[300]), np.zeros(1))
        assert got[0] == pytest.approx(2.0 * sol.auxiliary.phi[300, 0],
                                       abs=1e-14)

    def test_matches_central_differences(self, hyperbolic_solution):
        sol = hyperbolic_solution
        rng = np.random.default_rng(3)
        for _ in range(25):
            t = float(rng.uniform(0, 1))
            x = rng.uniform(-2, 2, size=1)
            g = grad_value(sol, t, x)
            h = 1e-5
            fd = (value(sol, t, x + h) - value(sol, t, x - h)) / (2 * h)
            assert abs(fd - g[0]) <= 1e-6 * (1 + abs(g[0]))

    def test_matches_central_differences_twostate(self, twostate_solution):
        sol = twostate_solution
        rng = np.random.default_rng(4)
        for _ in range(10):
            t = float(rng.uniform(0, 1))
            x = rng.uniform(-2, 2, size=2)
            g = grad_value(sol, t, x)
            h = 1e-5
            for a in range(2):
                e = np.zeros(2)
                e[a] = h
                fd = (value(sol, t, x + e) - value(sol, t, x - e)) / (2 * h)
                assert abs(fd - g[a]) <= 1e-6 * (1 + abs(g[a]))


class TestFeedback:
    def test_zero_problem(self):
        sol = solve_equilibrium(zero_cost_spec(), build_grid(1.0, 80))
        assert feedback(sol, 0.3, [1.0])[0] == pytest.approx(0.0, abs=1e-12)

    def test_classical_gain(self, classical_solution):
        assert feedback(classical_solution, 0.0, [1.0])[0] == pytest.approx(
            -0.5, abs=2e-4)

    def test_origin_gives_affine_part(self, hyperbolic_solution):
        sol = hyperbolic_solution
        for i in (0, 500, 1000):
            t = float(sol.grid.nodes[i])
            got = feedback(sol, t, np.zeros(1))
            assert got[0] == pytest.approx(-float(sol.auxiliary.upsilon[i, 0]),
                                           abs=1e-12)

    def test_two_formulas_agree_at_nodes(self, hyperbolic_solution):
        sol = hyperbolic_solution
        rng = np.random.default_rng(5)
        for _ in range(100):
            i = int(rng.integers(0, sol.grid.N + 1))
            x = rng.uniform(-3, 3, size=1)
            u = feedback(sol, float(sol.grid.nodes[i]), x)
            via_gain = -(sol.riccati.gain[i] @ x) - sol.auxiliary.upsilon[i]
            assert np.max(np.abs(u - via_gain)) <= 1e-10 * (1 + np.max(np.abs(u)))


class TestSimulation:
    def test_unforced_rest_state(self):
        spec = zero_cost_spec()
        grid = build_grid(1.0, 60)
        sol = solve_equilibrium(spec, grid)
        traj = simulate_equilibrium(sol, 0, [0.0])
        np.testing.assert_array_equal(traj.states, np.zeros_like(traj.states))

    def test_pure_drift(self):
        # A = B = 0, b = 1 from x = 0: y(s) = s
        spec = make_discounted(
            Dimensions(1, 1), 1.0,
            DynamicsField.constant([[0.0]], [[0.0]], [1.0]),
            BaseCosts(Q=[[0.0]], S=[[0.0]], M=[[1.0]], q=[0.0], rho=[0.0],
                      G=[[0.0]], g=[0.0]),
            exponential_kernel(0.0))
        grid = build_grid(1.0, 50)
        sol = solve_equilibrium(spec, grid)
        traj = simulate_equilibrium(sol, 0, [0.0])
        np.testing.assert_allclose(traj.states[:, 0], grid.nodes, atol=1e-13)

    def test_uncontrolled_exponential_growth(self):
        spec = make_discounted(
            Dimensions(1, 1), 1.0,
            DynamicsField.constant([[1.0]], [[1.0]], [0.0]),
            BaseCosts(Q=[[0.0]], S=[[0.0]], M=[[1.0]], q=[0.0], rho=[0.0],
                      G=[[0.0]], g=[0.0]),
            exponential_kernel(0.0))
        grid = build_grid(1.0, 100)
        traj = simulate_control(spec, grid, np.zeros((101, 1)), 0, [1.0])
        assert abs(traj.states[-1, 0] - np.e) < 1e-8

    def test_classical_trajectory_closed_form(self, classical_solution):
        sol = classical_solution
        traj = simulate_equilibrium(sol, 0, [1.0])
        exact = (2.0 - sol.grid.nodes) / 2.0
        assert np.max(np.abs(traj.states[:, 0] - exact)) < 1e-5

    def test_feedback_rollout_matches_table_path(self, hyperbolic_solution):
        sol = hyperbolic_solution
        a = simulate_equilibrium(sol, 100, [0.5])
        b = simulate_control(sol.spec, sol.grid,
                             lambda t, y: feedback(sol, t, y), 100, [0.5])
        assert np.max(np.abs(a.states - b.states)) < 1e-6

    def test_feedback_rollout_matches_table_path_twostate(self, twostate_solution):
        sol = twostate_solution
        x0 = np.array([0.8, -0.3])
        a = simulate_equilibrium(sol, 30, x0)
        b = simulate_control(sol.spec, sol.grid,
                             lambda t, y: feedback(sol, t, y), 30, x0)
        assert np.max(np.abs(a.states - b.states)) < 1e-6


class TestCost:
    def test_pure_state_cost(self):
        # u = 0, y constant 1, Q = 1, G = 1: J = 1 + 1 = 2
        spec = make_discounted(
            Dimensions(1, 1), 1.0,
            DynamicsField.constant([[0.0]], [[0.0]], [0.0]),
            BaseCosts(Q=[[1.0]], S=[[0.0]], M=[[1.0]], q=[0.0], rho=[0.0],
                      G=[[1.0]], g=[0.0]),
            exponential_kernel(0.0))
        grid = build_grid(1.0, 100)
        traj = simulate_control(spec, grid, np.zeros((101, 1)), 0, [1.0])
        assert cost(spec, grid, traj, 0) == pytest.approx(2.0, abs=1e-12)

    def test_zero_weights_zero_cost(self):
        # cost evaluation does not require a positive definite M, so the
        # all-zero weight bundle is a legal probe of the functional itself
        spec = make_discounted(
            Dimensions(1, 1), 1.0,
            DynamicsField.constant([[0.3]], [[1.0]], [0.0]),
            BaseCosts(Q=[[0.0]], S=[[0.0]], M=[[0.0]], q=[0.0], rho=[0.0],
                      G=[[0.0]], g=[0.0]),
            exponential_kernel(0.0))
        grid = build_grid(1.0, 60)
        traj = simulate_control(spec, grid, np.ones((61, 1)), 0, [1.0])
        assert cost(spec, grid, traj, 0) == pytest.approx(0.0, abs=1e-12)

    def test_classical_cost_equals_value(self, classical_solution):
        sol = classical_solution
        traj = simulate_equilibrium(sol, 0, [1.0])
        J = cost(sol.spec, sol.grid, traj, 0)
        assert abs(J - value(sol, 0.0, [1.0])) < 1e-3
        assert J == pytest.approx(0.5, abs=1e-3)

    def test_frozen_first_argument(self):
        # kernel depends on the evaluation time only: Q(t, s) = 1 + t.
        # Freezing t = 0 gives J = 1 (+ nothing terminal); accidentally using
        # the running time would integrate 1 + s and give 1.5.
        from tilq import TerminalField, TwoTimeField
        spec = classical_scalar_spec()
        qfield = TwoTimeField(value=lambda t, s: np.array([[1.0 + t]]),
                              dvalue_dt=lambda t, s: np.ones((1, 1)),
                              shape=(1, 1), vectorized=False)
        dyn = DynamicsField.constant([[0.0]], [[0.0]], [0.0])
        spec = spec.__class__(dims=spec.dims, horizon=spec.horizon,
                              dynamics=dyn, Q=qfield, S=spec.S, M=spec.M,
                              q=spec.q, rho=spec.rho,
                              terminal=TerminalField.constant([[0.0]], [0.0]))
        grid = build_grid(1.0, 200)
        traj = simulate_control(spec, grid, np.zeros((201, 1)), 0, [1.0])
        assert cost(spec, grid, traj, 0) == pytest.approx(1.0, abs=1e-12)

    def test_start_mismatch_rejected(self, hyperbolic_solution):
        sol = hyperbolic_solution
        traj = simulate_equilibrium(sol, 10, [1.0])
        with pytest.raises(TilqError):
            cost(sol.spec, sol.grid, traj, 0)

    def test_value_equals_cost_along_equilibrium(self, hyperbolic_solution):
        sol = hyperbolic_solution
        rng = np.random.default_rng(11)
        for _ in range(25):
            i = int(rng.integers(0, sol.grid.N + 1))
            x = rng.uniform(-2, 2, size=1)
            V = value(sol, float(sol.grid.nodes[i]), x)
            J = cost(sol.spec, sol.grid, simulate_equilibrium(sol, i, x), i)
            assert abs(V - J) <= 1e-3 * (1 + abs(V))


class TestErrorFunction:
    def test_time_consistent_zero(self, classical_solution):
        sol = classical_solution
        for i in (0, 500):
            assert error_function_direct(sol, i, [1.0]) == 0.0
            assert error_function_closed(sol, i, [1.0]) == 0.0

    def test_terminal_derivative_term(self):
        # only Gdot = -1 acting on a trajectory frozen at 1: R = -1
        from tilq import TerminalField
        spec = classical_scalar_spec()
        terminal = TerminalField(G=lambda t: np.array([[1.0 - t]]),
                                 g=lambda t: np.zeros(1),
                                 dG_dt=lambda t: np.array([[-1.0]]),
                                 dg_dt=lambda t: np.zeros(1))
        dyn = DynamicsField.constant([[0.0]], [[0.0]], [0.0])
        spec = spec.__class__(dims=spec.dims, horizon=spec.horizon,
                              dynamics=dyn, Q=spec.Q, S=spec.S, M=spec.M,
                              q=spec.q, rho=spec.rho, terminal=terminal)
        grid = build_grid(1.0, 80)
        sol = solve_equilibrium(spec, grid)
        assert error_function_direct(sol, 0, [1.0]) == pytest.approx(-1.0,
                                                                     abs=1e-9)

    def test_closed_form_at_origin_is_omega(self, hyperbolic_solution):
        sol = hyperbolic_solution
        for i in (0, 700):
            assert error_function_closed(sol, i, np.zeros(1)) == pytest.approx(
                float(sol.auxiliary.omega[i]), abs=1e-15)

    def test_direct_matches_closed(self, hyperbolic_solution):
        sol = hyperbolic_solution
        rng = np.random.default_rng(12)
        for _ in range(25):
            i = int(rng.integers(0, sol.grid.N + 1))
            x = rng.uniform(-2, 2, size=1)
            rd = error_function_direct(sol, i, x)
            rc = error_function_closed(sol, i, x)
            assert abs(rd - rc) <= 1e-4 * (1 + max(abs(rd), abs(rc)))

    def test_direct_matches_closed_twostate(self, twostate_solution):
        sol = twostate_solution
        rng = np.random.default_rng(13)
        for _ in range(10):
            i = int(rng.integers(0, sol.grid.N + 1))
            x = rng.uniform(-2, 2, size=2)
            rd = error_function_direct(sol, i, x)
            rc = error_function_closed(sol, i, x)
            assert abs(rd - rc) <= 1e-4 * (1 + max(abs(rd), abs(rc)))
