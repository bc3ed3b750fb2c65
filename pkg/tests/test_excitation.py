import numpy as np
import pytest

from thermobench.errors import ValidationError
from thermobench.excitation import (
    EnergySensitivity,
    Experiment,
    SelectorState,
    _choose_targets,
    _separation_lp,
    generate_eigen,
    generate_montecarlo,
    generate_variational,
    select_heuristic,
    select_optimal,
    variational_candidates,
)
from thermobench.mpc import MpcConfig, MpcSolution, build_mpc_problem, horizon_bounds, solve_mpc
from thermobench.network import (
    Edge,
    Node,
    ParameterVector,
    ThermalNetwork,
    continuous_from_network,
    discretize,
    minimal_parameterization,
    two_zone_example,
)
from thermobench.simulator import OccupancySchedule, WeatherModel, weather_forecast


def table1():
    net = two_zone_example()
    return net, minimal_parameterization(net)


class TestGenerateEigen:
    def test_isotropic_covariance_ties_broken_by_index(self):
        net, pv = table1()
        cands = generate_eigen(np.eye(4) * 2.5, pv, net)
        assert len(cands) == 4
        assert all(c.eigenvalue == pytest.approx(2.5) for c in cands)

    def test_variance_on_inter_zone_product(self):
        net, pv = table1()
        P = np.diag([4.0, 0.0, 0.0, 0.0])  # uncertainty only on R12C1
        top = generate_eigen(P, pv, net)[0]
        assert top.eigenvalue == pytest.approx(4.0)
        # weights in parameter-std units: sqrt(4) on the edge's two nodes
        np.testing.assert_allclose(np.abs(top.node_weights), [2.0, 2.0, 0.0], atol=1e-12)
        assert top.node_weights[0] == pytest.approx(-top.node_weights[1])

    def test_variance_on_external_product(self):
        net, pv = table1()
        P = np.diag([0.0, 3.0, 0.0, 0.0])  # uncertainty only on R13C1
        top = generate_eigen(P, pv, net)[0]
        np.testing.assert_allclose(
            top.node_weights, [np.sqrt(3.0), 0.0, np.sqrt(3.0)], atol=1e-12
        )

    def test_zero_matrix_gives_no_targets(self):
        net, pv = table1()
        cands = generate_eigen(np.zeros((4, 4)), pv, net)
        for c in cands:
            np.testing.assert_allclose(c.node_weights, 0.0)
            assert _choose_targets(c, net) is None

    def test_asymmetric_rejected(self):
        net, pv = table1()
        P = np.eye(4)
        P[0, 1] = 0.5
        with pytest.raises(ValidationError):
            generate_eigen(P, pv, net)

    def test_relabeling_invariance(self):
        net, pv = table1()
        rng = np.random.default_rng(3)
        S = rng.normal(size=(4, 4))
        P = S @ S.T
        cands = generate_eigen(P, pv, net)
        perm = [2, 3, 0, 1]
        pv_perm = ParameterVector(
            pv.p[perm], pv.q,
            tuple(pv.edge_map[k] for k in perm), pv.zone_map,
        )
        P_perm = P[np.ix_(perm, perm)]
        cands_perm = generate_eigen(P_perm, pv_perm, net)
        for a, b in zip(cands, cands_perm):
            assert a.eigenvalue == pytest.approx(b.eigenvalue)
            np.testing.assert_allclose(
                np.abs(a.node_weights), np.abs(b.node_weights), atol=1e-9
            )

    def test_symmetric_building_symmetric_weights(self):
        net = ThermalNetwork(
            nodes=(Node(1, capacitance=10.0), Node(2, capacitance=10.0),
                   Node(3, is_external=True)),
            edges=(Edge(1, 2, 100.0), Edge(1, 3, 50.0), Edge(2, 3, 50.0)),
            heat_rates={1: 0.2, 2: 0.2},
        )
        pv = minimal_parameterization(net)
        cands = generate_eigen(np.eye(4), pv, net)
        mags = sorted(tuple(np.round(np.abs(c.node_weights), 9)) for c in cands)
        swapped = sorted(
            tuple(np.round(np.abs(c.node_weights)[[1, 0, 2]], 9)) for c in cands
        )
        assert mags == swapped


class TestGenerateVariational:
    def test_uniform_temperatures_vanish(self):
        net, pv = table1()
        S = generate_variational(pv, net, np.full(3, 70.0))
        np.testing.assert_allclose(S, 0.0)

    def test_matches_finite_differences(self):
        net, pv = table1()
        T = np.array([70.0, 64.0, 22.0])

        def rate(p_vec):
            from thermobench.network import assemble_continuous
            cont = assemble_continuous(pv.with_values(p_vec, pv.q), net)
            return cont.A @ T

        S = generate_variational(pv, net, T)
        for k in range(4):
            h = pv.p[k] * 1e-5
            bump = np.zeros(4)
            bump[k] = h
            fd = (rate(pv.p + bump) - rate(pv.p - bump)) / (2 * h)
            np.testing.assert_allclose(S[:, k], fd, rtol=1e-6, atol=1e-14)

    def test_linear_in_temperature_difference(self):
        net, pv = table1()
        base = np.array([70.0, 64.0, 22.0])
        doubled = np.array([76.0, 64.0, 22.0])  # doubles T1 - T2
        S1 = generate_variational(pv, net, base)
        S2 = generate_variational(pv, net, doubled)
        assert S2[1, 2] == pytest.approx(2.0 * S1[1, 2])

    def test_candidates_ranked_by_column_norm(self):
        net, pv = table1()
        cands = variational_candidates(pv, net, np.array([70.0, 64.0, 22.0]))
        assert len(cands) == 4
        assert cands[0].eigenvalue >= cands[-1].eigenvalue
        assert all(c.source == "variational" for c in cands)


class TestChooseTargets:
    def test_pair_case(self):
        net, _ = table1()
        cand = make_candidate([0.9, 0.8, 0.05])
        assert _choose_targets(cand, net) == ("pair", (1, 2))

    def test_single_case(self):
        net, _ = table1()
        cand = make_candidate([0.9, 0.5, 0.05])
        assert _choose_targets(cand, net) == ("single", (1,))

    def test_external_pair_collapses_to_single(self):
        net, _ = table1()
        cand = make_candidate([0.9, 0.05, 0.8])
        assert _choose_targets(cand, net) == ("single", (1,))

    def test_external_top_defers_to_internal_neighbor(self):
        net, _ = table1()
        cand = make_candidate([0.2, 0.5, 0.9])
        kind, nodes = _choose_targets(cand, net)
        assert nodes[0] == 2


def make_candidate(weights):
    return __import__("thermobench.excitation", fromlist=["ExcitationCandidate"]).ExcitationCandidate(
        1.0, np.array(weights, dtype=float), "test"
    )


def table1_model(dt=15.0):
    return discretize(continuous_from_network(two_zone_example()), dt)


class TestSelectHeuristic:
    def test_emits_experiment_with_headroom(self):
        net, _ = table1()
        model = table1_model()
        cand = make_candidate([0.9, 0.8, 0.05])
        exp = select_heuristic(
            cand, np.array([70.0, 70.0, 20.0]), model, np.full(4, 20.0),
            np.full(2, 60.0), np.full(2, 80.0), net, t=120.0,
        )
        assert exp is not None
        assert exp.target == (1, 2)
        assert exp.h_s == 4
        assert exp.e.shape == (4, 2)
        np.testing.assert_allclose(exp.e[:, 0], 78.0)
        assert np.all(np.isnan(exp.e[:, 1]))

    def test_no_headroom_returns_none(self):
        net, _ = table1()
        model = table1_model()
        cand = make_candidate([0.9, 0.8, 0.05])
        exp = select_heuristic(
            cand, np.array([71.0, 70.0, 20.0]), model, np.full(4, 20.0),
            np.full(2, 68.0), np.full(2, 72.0), net, t=0.0,
        )
        assert exp is None

    def test_weak_heater_returns_none(self):
        net = ThermalNetwork(
            nodes=two_zone_example().nodes,
            edges=two_zone_example().edges,
            heat_rates={1: 0.001, 2: 0.001},
        )
        model = discretize(continuous_from_network(net), 15.0)
        cand = make_candidate([0.9, 0.8, 0.05])
        exp = select_heuristic(
            cand, np.array([70.0, 70.0, 20.0]), model, np.full(4, 20.0),
            np.full(2, 60.0), np.full(2, 80.0), net, t=0.0,
        )
        assert exp is None

    def test_experiment_activity_window(self):
        e = np.full((4, 2), np.nan)
        exp = Experiment((1,), e, 100.0, 4)
        assert exp.active(100.0, 15.0)
        assert exp.active(145.0, 15.0)
        assert not exp.active(160.0, 15.0)
        assert exp.bounds_row(130.0, 15.0) is not None


class TestSelectorState:
    def test_decay_and_reset(self):
        s = SelectorState(threshold=1.0, decay=0.995, initial=1.0)
        for _ in range(10):
            s = s.decayed()
        assert s.threshold == pytest.approx(0.995**10)
        assert s.reset().threshold == 1.0


def single_heater_model():
    net = ThermalNetwork(
        nodes=(Node(1, capacitance=10.0), Node(2, capacitance=8.0),
               Node(3, is_external=True)),
        edges=(Edge(1, 2, 60.0), Edge(1, 3, 70.0), Edge(2, 3, 90.0)),
        heat_rates={1: 0.25},
    )
    return net, discretize(continuous_from_network(net), 15.0)


class TestSelectOptimal:
    def baseline(self, model, T0, forecast, r_min, r_max, h, Q_togo=1.0):
        cfg = MpcConfig(horizon=h, Q_togo=Q_togo)
        prob = build_mpc_problem(model, T0, forecast, r_min, r_max, cfg)
        return solve_mpc(prob)

    def test_split_subproblems_match_grid(self):
        net, model = single_heater_model()
        h, h_s = 4, 1
        T0 = np.array([68.0, 68.0])
        forecast = np.full((4, 1), 30.0)
        r_min = np.full((4, 2), 55.0)
        r_max = np.full((4, 2), 85.0)
        u_budget = 2.5
        case = ("pair", (1, 2))
        best = None
        for direction in (1.0, -1.0):
            res = _separation_lp(
                case, direction, model, T0, forecast, r_min, r_max,
                u_budget, h, h_s, 2.0, [1, 2],
            )
            if res is not None and (best is None or res[0] > best[0]):
                best = res
        assert best is not None
        # brute force over a dense feasible control grid
        levels = np.linspace(0.0, 1.0, 21)
        grids = np.meshgrid(*([levels] * 4), indexing="ij")
        U = np.stack([g.ravel() for g in grids], axis=1)
        U = U[U.sum(axis=1) <= u_budget + 1e-12]
        T = np.broadcast_to(T0, (len(U), 2)).copy()
        sep = np.zeros(len(U))
        feasible = np.ones(len(U), dtype=bool)
        for k in range(4):
            T = T @ model.Phi.T + model.Gamma_ext @ [30.0] + np.outer(U[:, k], model.Gamma_ctrl[:, 0])
            feasible &= np.all((T >= 55.0 - 1e-9) & (T <= 85.0 + 1e-9), axis=1)
            sep += np.abs(T[:, 0] - T[:, 1])
        grid_best = float(np.max(sep[feasible])) / 2
        assert abs(best[0] - grid_best) <= 1e-3
        # the winning subproblem's control effort respects the budget
        assert float(np.sum(best[2])) <= u_budget + 1e-6

    def test_no_budget_headroom_no_selection(self):
        net, _ = table1()
        model = table1_model()
        h, h_s = 32, 8
        sched = OccupancySchedule()
        weather = WeatherModel(mean_temp=20.0, daily_amp=0.0, fast_amp=0.0)
        t = 10 * 60.0
        r_min, r_max = horizon_bounds(sched, t, h, 15.0, 2)
        forecast = weather_forecast(weather, t, h, 15.0)
        T0 = np.array([68.0, 68.0])
        # no midpoint pull: the baseline rides the lower bound exactly, so a
        # same-energy excitation cannot buy separation
        base = self.baseline(model, T0, forecast, r_min, r_max, h, Q_togo=0.0)
        cands = generate_eigen(np.eye(4), minimal_parameterization(net), net)
        exp, state, diag = select_optimal(
            cands, base, model, T0, forecast, r_min, r_max,
            SelectorState(threshold=0.5), net, t,
            h_s=h_s, budget_mult=1.0,
        )
        assert exp is None
        assert state.threshold < 0.5  # decayed

    def test_collapsed_bounds_zero_gain(self):
        net, _ = table1()
        model = table1_model()
        h, h_s = 32, 8
        forecast = np.full(h, 66.0)
        r_min = np.full((h, 2), 66.0)
        r_max = np.full((h, 2), 68.0)  # r_max - 2 == r_min: single feasible e
        T0 = np.array([67.0, 67.0])
        base = self.baseline(model, T0, forecast, r_min, r_max, h)
        cands = generate_eigen(np.eye(4), minimal_parameterization(net), net)
        exp, state, diag = select_optimal(
            cands, base, model, T0, forecast, r_min, r_max,
            SelectorState(threshold=0.25), net, 0.0, h_s=h_s,
        )
        assert exp is None

    def test_slack_budget_selects_and_resets_threshold(self):
        net, _ = table1()
        model = table1_model()
        h, h_s = 48, 8
        sched = OccupancySchedule()
        weather = WeatherModel(mean_temp=25.0, daily_amp=10.0, fast_amp=0.0)
        t = 9 * 60.0
        r_min, r_max = horizon_bounds(sched, t, h, 15.0, 2)
        forecast = weather_forecast(weather, t, h, 15.0)
        T0 = np.array([68.5, 68.5])
        base = self.baseline(model, T0, forecast, r_min, r_max, h)
        cands = generate_eigen(np.diag([9.0, 0.1, 4.0, 0.1]),
                               minimal_parameterization(net), net)
        exp, state, diag = select_optimal(
            cands, base, model, T0, forecast, r_min, r_max,
            SelectorState(threshold=0.3), net, t, h_s=h_s, budget_mult=1.5,
        )
        assert exp is not None
        assert state.threshold == SelectorState().initial
        assert max(diag["gains"]) > 0.3
        # the emitted bounds respect the margin below the upper bound
        assert np.all(exp.e <= r_max[:h_s] - 2.0 + 1e-9)
        assert np.all(exp.e >= r_min[:h_s] - 1e-9)


class TestMonteCarlo:
    def test_zero_covariance_flags_no_information(self):
        net, pv = table1()
        res = generate_montecarlo(
            pv, np.zeros((4, 4)), net, MpcConfig(horizon=8),
            OccupancySchedule(), WeatherModel(mean_temp=25.0),
            np.array([70.0, 70.0]), duration_steps=4, n_samples=4, seed=1,
        )
        assert res.zero_information

    def test_deterministic_given_seed(self):
        net, pv = table1()
        kw = dict(
            topology=net, mpc_config=MpcConfig(horizon=8),
            sched=OccupancySchedule(),
            weather=WeatherModel(mean_temp=25.0, daily_amp=10.0),
            T0=np.array([69.0, 69.0]), duration_steps=4, n_samples=3, seed=11,
        )
        cov = np.diag((0.2 * pv.p) ** 2)
        a = generate_montecarlo(pv, cov, **kw)
        b = generate_montecarlo(pv, cov, **kw)
        np.testing.assert_array_equal(a.slopes, b.slopes)
        np.testing.assert_array_equal(a.tstats, b.tstats)

    def test_inflated_variance_dominates_tstat(self):
        net, pv = table1()
        cov = np.diag([(0.35 * pv.p[0]) ** 2, 1e-8, 1e-8, 1e-8])
        res = generate_montecarlo(
            pv, cov, net, MpcConfig(horizon=16),
            OccupancySchedule(),
            WeatherModel(mean_temp=15.0, daily_amp=20.0),
            np.array([63.0, 63.0]), duration_steps=16, n_samples=8, seed=5,
        )
        assert not res.zero_information
        assert np.argmax(res.tstats) == 0
