import numpy as np
import pytest

from thermobench.analysis import (
    analyze_observability,
    augmented_jacobian,
    compute_metrics,
    coordinate_names,
    measurement_matrix,
    nullspace_trace,
    observability_matrix,
    transition_matrix,
)
from thermobench.network import (
    continuous_from_network,
    minimal_parameterization,
    two_zone_example,
)
from thermobench.simulator import SimulationTrace, TraceRow


def table1():
    net = two_zone_example()
    return net, minimal_parameterization(net)


class TestAugmentedJacobian:
    def test_parameter_rows_zero(self):
        net, pv = table1()
        J = augmented_jacobian(np.array([70.0, 66.0, 20.0]), pv, net)
        np.testing.assert_allclose(J[3:], 0.0)

    def test_temperature_block_is_rate_matrix(self):
        net, pv = table1()
        J = augmented_jacobian(np.array([70.0, 66.0, 20.0]), pv, net)
        np.testing.assert_allclose(J[:3, :3], continuous_from_network(net).A)

    def test_uniform_temperatures_kill_sensitivities(self):
        net, pv = table1()
        J = augmented_jacobian(np.full(3, 68.0), pv, net)
        np.testing.assert_allclose(J[:, 3:], 0.0)

    def test_sensitivity_entries(self):
        net, pv = table1()
        T = np.array([70.0, 66.0, 20.0])
        J = augmented_jacobian(T, pv, net)
        assert J[0, 3] == pytest.approx(-(66.0 - 70.0) / 2550.0**2)
        assert J[1, 5] == pytest.approx(-(70.0 - 66.0) / 1500.0**2)


class TestObservabilityMatrix:
    def test_identity_transition_rank_three(self):
        C = measurement_matrix(3, 4)
        O = observability_matrix(np.eye(7), C)
        assert O.shape == (21, 7)
        snap = analyze_observability(O)
        assert snap.rank == 3
        assert snap.nullspace_dim == 4

    def test_table1_rank_five(self):
        net, pv = table1()
        J = augmented_jacobian(np.array([74.0, 67.0, 22.0]), pv, net)
        F = transition_matrix(J, 15.0)
        O = observability_matrix(F, measurement_matrix(3, 4))
        snap = analyze_observability(O)
        assert snap.rank == 5
        assert snap.nullspace_dim == 2

    def test_rank_threshold_robust(self):
        net, pv = table1()
        J = augmented_jacobian(np.array([74.0, 67.0, 22.0]), pv, net)
        F = transition_matrix(J, 15.0)
        O = observability_matrix(F, measurement_matrix(3, 4))
        a = analyze_observability(O, rank_rtol=1e-10)
        b = analyze_observability(O, rank_rtol=1e-8)
        assert a.rank == b.rank == 5

    def test_nullspace_orthonormal_and_annihilated(self):
        net, pv = table1()
        J = augmented_jacobian(np.array([74.0, 67.0, 22.0]), pv, net)
        F = transition_matrix(J, 15.0)
        O = observability_matrix(F, measurement_matrix(3, 4))
        snap = analyze_observability(O)
        basis = snap.nullspace_basis
        np.testing.assert_allclose(basis.T @ basis, np.eye(2), atol=1e-12)
        assert np.max(np.abs(O @ basis)) < 1e-8

    def test_rank_invariant_under_row_scaling(self):
        net, pv = table1()
        J = augmented_jacobian(np.array([74.0, 67.0, 22.0]), pv, net)
        F = transition_matrix(J, 15.0)
        C = measurement_matrix(3, 4)
        C_scaled = np.diag([3.0, 0.2, 11.0]) @ C
        a = analyze_observability(observability_matrix(F, C))
        b = analyze_observability(observability_matrix(F, C_scaled))
        assert a.rank == b.rank

    def test_condition_number_severely_ill(self):
        net, pv = table1()
        for temps in ([74.0, 67.0, 22.0], [70.0, 70.0, 20.0], [68.0, 71.5, 35.0]):
            J = augmented_jacobian(np.array(temps), pv, net)
            F = transition_matrix(J, 15.0)
            snap = analyze_observability(observability_matrix(F, measurement_matrix(3, 4)))
            assert snap.condition_number >= 1e10

    def test_static_temperatures_static_nullspace(self):
        net, pv = table1()
        temps = np.tile([72.0, 66.0, 25.0], (5, 1))
        snaps = nullspace_trace(temps, np.arange(5) * 15.0, pv, net)
        base = snaps[0].coordinate_magnitudes
        for s in snaps[1:]:
            np.testing.assert_allclose(s.coordinate_magnitudes, base, atol=1e-12)

    def test_coordinate_names(self):
        net, pv = table1()
        names = coordinate_names(pv, net)
        assert names == ("T1", "T2", "T3", "R12C1", "R13C1", "R12C2", "R23C2")


def make_trace(rows):
    trace = SimulationTrace(dt=15.0, node_ids=(1, 2, 3), zone_ids=(1, 2))
    for k, (temps, u, r_min, r_max) in enumerate(rows):
        trace.append(TraceRow(
            step=k, time=k * 15.0,
            true_temps=np.array(temps), measured_temps=np.array(temps),
            t_ext=temps[2], u=np.array(u),
            r_min=np.array(r_min), r_max=np.array(r_max), mode="thermostat",
        ))
    return trace


class TestMetrics:
    def test_inside_bounds_zero_discomfort(self):
        rows = [([70.0, 70.5, 20.0], [0.4, 0.1], [68.0, 68.0], [72.0, 72.0])] * 6
        m = compute_metrics(make_trace(rows))
        assert m.discomfort == 0.0
        assert m.energy == pytest.approx(3.0)

    def test_no_control_zero_energy(self):
        rows = [([66.0, 74.0, 20.0], [0.0, 0.0], [68.0, 68.0], [72.0, 72.0])] * 4
        m = compute_metrics(make_trace(rows))
        assert m.energy == 0.0
        # violations: zone 1 is 2 below, zone 2 is 2 above
        assert m.discomfort == pytest.approx(2.0)

    def test_empty_trace(self):
        m = compute_metrics(make_trace([]))
        assert m.discomfort == 0.0 and m.energy == 0.0 and m.steps == 0

    def test_energy_additive_discomfort_rms_composable(self):
        rows_a = [([66.0, 70.0, 20.0], [1.0, 0.0], [68.0, 68.0], [72.0, 72.0])] * 3
        rows_b = [([70.0, 75.0, 20.0], [0.0, 1.0], [68.0, 68.0], [72.0, 72.0])] * 5
        ma = compute_metrics(make_trace(rows_a))
        mb = compute_metrics(make_trace(rows_b))
        mab = compute_metrics(make_trace(rows_a + rows_b))
        assert mab.energy == pytest.approx(ma.energy + mb.energy)
        expected = np.sqrt(
            (ma.discomfort**2 * ma.steps + mb.discomfort**2 * mb.steps)
            / (ma.steps + mb.steps)
        )
        assert mab.discomfort == pytest.approx(expected)
