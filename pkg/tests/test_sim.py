import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadfault.sim.dynamics import (
    HEALTHY,
    FaultConfig,
    QuadParams,
    QuadState,
    SimulationDiverged,
    angular_acceleration,
    rk4_raw,
    rotor_wrench,
    step_dynamics,
    wind_force,
)
from quadfault.sim.flightlog import COLUMNS, load_flight, save_flight
from quadfault.sim.mission import SensorModel, fly_mission, square_pattern
from quadfault.sim.wind import WindField, horizontal_wind

CALM = WindField()


def hover_run(fault, seconds=20.0, params=None):
    params = params or QuadParams()
    return fly_mission([[0.0, 0.0, 2.0]], CALM, fault, seconds, seed=3, params=params)


class TestEquilibrium:
    def test_hover_stays_balanced_for_30s(self):
        p = QuadParams()
        s = QuadState.hover(p)
        cmd = [p.hover_omega] * 4
        worst = 0.0
        for k in range(3000):
            worst = max(worst, float(np.abs(angular_acceleration(s, p)).max()))
            s = step_dynamics(s, cmd, CALM, HEALTHY, k * 0.01, 0.01, p, step=k)
        assert worst < 1e-6
        assert np.allclose(s.velocity, 0.0, atol=1e-9)

    def test_hover_thrust_matches_weight(self):
        p = QuadParams()
        thrust, tx, ty, tz = rotor_wrench([p.hover_omega] * 4, p, (1.0,) * 4)
        assert thrust == pytest.approx(p.mass * 9.81, rel=1e-12)
        assert (tx, ty, tz) == (0.0, 0.0, 0.0)


class TestWind:
    def test_zero_field_gives_exactly_zero_force(self):
        for v in [(0.0, 0.0, 0.0), (1.5, -2.0, 0.3), (10.0, 0.0, -1.0)]:
            assert wind_force(v, CALM.velocity(4.2), QuadParams()) == (0.0, 0.0, 0.0)

    def test_zero_field_velocity_is_exact_zero(self):
        assert all(CALM.velocity(t) == (0.0, 0.0, 0.0) for t in np.linspace(0, 100, 37))

    def test_head_wind_pushes_downwind(self):
        fx, fy, _ = wind_force((0.0, 0.0, 0.0), (5.0, 0.0, 0.0), QuadParams())
        assert fx == pytest.approx(0.03 * 25.0) and fy == 0.0

    def test_gust_sequence_is_seeded(self):
        a = horizontal_wind(3.0, 0.7, 3.0, 3.0, seed=11)
        b = horizontal_wind(3.0, 0.7, 3.0, 3.0, seed=11)
        c = horizontal_wind(3.0, 0.7, 3.0, 3.0, seed=12)
        ts = np.arange(0, 60, 0.37)
        assert [a.velocity(t) for t in ts] == [b.velocity(t) for t in ts]
        assert [a.velocity(t) for t in ts] != [c.velocity(t) for t in ts]

    def test_gust_stays_within_amplitude(self):
        w = WindField(mean=(3.0, 0.0, 0.0), gust_amplitude=3.0, gust_period=3.0, seed=5)
        v = np.array([w.velocity(t) for t in np.arange(0, 300, 0.05)])
        assert np.all(np.abs(v[:, 0] - 3.0) <= 3.0 + 1e-12)
        # a 3 m/s mean with amplitude 3 reaches roughly 6 m/s peaks
        assert v[:, 0].max() > 5.0

    @pytest.mark.parametrize("kw", [{"gust_amplitude": -1.0}, {"gust_period": 0.0}])
    def test_invalid_parameters(self, kw):
        with pytest.raises(ValueError):
            WindField(**kw)


class TestFaultTorque:
    def test_loss_on_propeller_one_matches_geometry(self):
        # independent oracle: rotor 1 sits at (+x,+y) and spins CCW (yaw sign -1)
        p = QuadParams()
        loss = 0.3
        fh = p.k_f * p.hover_omega**2
        a = p.arm / math.sqrt(2.0)
        expect = np.array(
            [-loss * a * fh / p.inertia[0], loss * a * fh / p.inertia[1], loss * p.k_t * p.hover_omega**2 / p.inertia[2]]
        )
        got = angular_acceleration(QuadState.hover(p), p, FaultConfig(2, loss))
        assert np.allclose(got, expect, rtol=1e-12)
        assert got[0] < 0 < got[1]

    @pytest.mark.parametrize("label", [2, 3, 4, 5])
    def test_each_fault_produces_torque(self, label):
        p = QuadParams()
        acc = angular_acceleration(QuadState.hover(p), p, FaultConfig(label, 0.2))
        assert abs(acc[0]) > 1.0 and abs(acc[1]) > 1.0

    def test_label_one_ignores_loss(self):
        assert FaultConfig(1, 0.4).efficiencies() == (1.0, 1.0, 1.0, 1.0)
        assert FaultConfig(4, 0.25).efficiencies() == (1.0, 1.0, 0.75, 1.0)

    @pytest.mark.parametrize("kw", [{"label": 0}, {"label": 6}, {"label": 2, "efficiency_loss": 1.5}])
    def test_invalid_fault(self, kw):
        with pytest.raises(ValueError):
            FaultConfig(**kw)

    def test_fault_monotonicity(self):
        means = [hover_run(FaultConfig(3, loss)).signals[:, 4].mean() for loss in (0.0, 0.1, 0.2, 0.3)]
        assert all(b > a for a, b in zip(means, means[1:]))

    def test_label3_margin_regression(self):
        # baseline from a pilot run: 0.3 loss on propeller 2 lifts mean w2^2 by ~30 %
        healthy = hover_run(HEALTHY).signals[:, 4].mean()
        faulty = hover_run(FaultConfig(3, 0.3)).signals[:, 4].mean()
        assert faulty / healthy > 1.2


class TestIntegration:
    def test_quaternion_drift_per_step_is_tiny(self):
        p = QuadParams()
        y = QuadState.hover(p).to_vector().tolist()
        y[10:13] = [2.0, -1.5, 0.8]
        cmd = [p.hover_omega] * 4  # torque-free tumble at flight-like rates
        for k in range(300):
            raw = rk4_raw(y, cmd, CALM, p, (1.0,) * 4, k * 0.01, 0.01)
            assert abs(math.sqrt(sum(v * v for v in raw[6:10])) - 1.0) < 1e-9
            y = step_dynamics(QuadState.from_vector(y), cmd, CALM, HEALTHY, k * 0.01, 0.01, p).to_vector().tolist()

    def test_non_finite_state_names_step(self):
        p = QuadParams()
        with pytest.raises(SimulationDiverged, match="step 17"):
            step_dynamics(QuadState.hover(p), [float("nan")] * 4, CALM, HEALTHY, 0.0, 0.01, p, step=17)

    def test_dt_must_be_positive(self):
        with pytest.raises(ValueError):
            step_dynamics(QuadState(), [0.0] * 4, CALM, HEALTHY, 0.0, 0.0)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-500.0, 3000.0), min_size=4, max_size=4),
        st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3),
        st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4).filter(lambda q: sum(v * v for v in q) > 0.1),
    )
    def test_state_invariants_after_step(self, cmd, rates, quat):
        p = QuadParams()
        q = np.array(quat) / np.linalg.norm(quat)
        s = QuadState(attitude=q, rates=np.array(rates), rotor_speeds=np.full(4, 500.0))
        out = step_dynamics(s, cmd, horizontal_wind(4.0, 1.0, 2.0, 3.0, seed=1), HEALTHY, 0.0, 0.01, p)
        assert abs(np.linalg.norm(out.attitude) - 1.0) < 1e-9
        assert np.all(out.rotor_speeds >= 0.0) and np.all(out.rotor_speeds <= p.omega_max)


class TestMission:
    def test_structure(self):
        lg = fly_mission(square_pattern(), CALM, HEALTHY, 30.0, seed=1)
        assert len(lg) == 60 and lg.label == 1 and lg.domain == "source"
        assert np.allclose(np.diff(lg.times), 0.5) and np.all(np.diff(lg.times) > 0)
        assert np.all(lg.signals[:, 3:] >= 0.0)
        assert lg.positions.shape == (60, 3)

    def test_bit_identical_reruns(self):
        kw = dict(seed=9, sensor=SensorModel(0.002, 0.01, 0.003))
        wind = horizontal_wind(5.0, 0.4, 1.0, 5.0, seed=2)
        a = fly_mission(square_pattern(), wind, FaultConfig(4, 0.3), 20.0, **kw)
        b = fly_mission(square_pattern(), wind, FaultConfig(4, 0.3), 20.0, **kw)
        assert a.rows.tobytes() == b.rows.tobytes()
        assert a.positions.tobytes() == b.positions.tobytes()

    def test_seed_changes_sensor_noise(self):
        kw = dict(sensor=SensorModel(gyro_noise=0.002))
        a = fly_mission(square_pattern(), CALM, HEALTHY, 10.0, seed=1, **kw)
        b = fly_mission(square_pattern(), CALM, HEALTHY, 10.0, seed=2, **kw)
        assert not np.array_equal(a.rows, b.rows)

    def test_unreachable_waypoint_is_a_warning(self):
        lg = fly_mission([[0, 0, 2], [500, 0, 2]], CALM, HEALTHY, 10.0)
        assert lg.meta["warnings"] and "not reached" in lg.meta["warnings"][0]

    def test_too_short_duration(self):
        with pytest.raises(ValueError, match="rows"):
            fly_mission(square_pattern(), CALM, HEALTHY, 2.0)

    def test_empty_waypoints(self):
        with pytest.raises(ValueError):
            fly_mission([], CALM, HEALTHY, 10.0)

    def test_sensor_bias_cancels_in_differenced_rates(self):
        a = fly_mission([[0, 0, 2]], CALM, HEALTHY, 10.0, sensor=SensorModel(gyro_bias=0.0))
        b = fly_mission([[0, 0, 2]], CALM, HEALTHY, 10.0, sensor=SensorModel(gyro_bias=0.05))
        # the first row differences against the biased reading at t=0 too
        assert np.allclose(a.signals[:, :3], b.signals[:, :3], atol=1e-12)


class TestFlightLogFile:
    def test_round_trip_is_exact(self, tmp_path):
        lg = fly_mission(square_pattern(), horizontal_wind(5.0, 1.0, 1.0, 5.0, 3), FaultConfig(2, 0.15), 12.0, seed=4)
        path = save_flight(lg, tmp_path)
        back = load_flight(path)
        assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
        assert back.rows.tobytes() == lg.rows.tobytes()
        assert back.positions.tobytes() == lg.positions.tobytes()
        assert (back.label, back.domain, back.dt, back.flight_id) == (lg.label, lg.domain, lg.dt, lg.flight_id)
        assert back.meta["wind"] == lg.meta["wind"] and back.meta["seed"] == 4
