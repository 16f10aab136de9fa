import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle_dynamics as oracle
from conftest import random_controls, random_disturbance, random_states, random_tires
from iwdrift import dynamics
from iwdrift.params import Drivetrain, TireParams, VehicleParams

N_CASES = 1000


def test_parameter_defaults(params):
    assert params.m == 4.84
    assert params.wheelbase == pytest.approx(0.35)
    assert params.T == 0.26 and params.R == 0.0565
    assert params.delta_max == 0.46
    # the published steering limit is quoted in degrees
    assert math.degrees(params.delta_max) == pytest.approx(26.35, abs=0.01)


def test_parameter_validation():
    with pytest.raises(ValueError):
        VehicleParams(m=0.0)
    with pytest.raises(ValueError):
        TireParams(D=-0.1)


# --- wheel kinematics -------------------------------------------------------------

def test_kinematics_stationary_zero_slip(params):
    kin = dynamics.wheel_kinematics(np.zeros((1, 6)), np.zeros((1, 5)), params)
    assert np.all(kin.slip_ratio == 0.0) and np.all(kin.slip_angle == 0.0)


def test_kinematics_pure_rolling(params):
    state = np.array([[0, 0, 0, 2.0, 0, 0]])
    control = np.array([[0.0] + [2.0 / params.R] * 4])
    kin = dynamics.wheel_kinematics(state, control, params)
    assert np.allclose(kin.slip_ratio, 0.0, atol=1e-15)
    assert np.allclose(kin.slip_angle, 0.0, atol=1e-15)


def test_kinematics_rear_slip_angle_opposes_lateral_motion(params):
    state = np.array([[0, 0, 0, 2.0, 2.0, 0]])
    kin = dynamics.wheel_kinematics(state, np.zeros((1, 5)), params)
    assert kin.slip_angle[0, 2:] == pytest.approx([-math.pi / 4] * 2, abs=1e-15)


def test_kinematics_heading_independent(params):
    # body-frame slip does not depend on where the car points in the world
    rng = np.random.default_rng(3)
    s = random_states(rng, 50)
    c = random_controls(rng, 50)
    rot = dynamics.rigid_transform(s, 1.234, 0.0, 0.0)
    a = dynamics.wheel_kinematics(s, c, params)
    b = dynamics.wheel_kinematics(rot, c, params)
    assert np.allclose(a.slip_ratio, b.slip_ratio, atol=1e-12)
    assert np.allclose(a.slip_angle, b.slip_angle, atol=1e-12)


def test_slip_guard_finite_at_rest(params):
    kin = dynamics.wheel_kinematics(np.zeros((1, 6)), np.array([[0.3, 20, 20, 20, 20]]), params)
    assert np.all(np.isfinite(kin.slip_ratio))
    assert kin.slip_ratio[0, 0] == pytest.approx(20 * params.R / dynamics.EPS_V)


def test_rwd_front_wheels_free_roll():
    p = VehicleParams(drivetrain=Drivetrain.RWD)
    rng = np.random.default_rng(0)
    kin = dynamics.wheel_kinematics(random_states(rng, 20), random_controls(rng, 20), p)
    assert np.all(kin.slip_ratio[:, :2] == 0.0)


def test_awd_ties_left_and_right():
    p = VehicleParams(drivetrain=Drivetrain.AWD)
    kin = dynamics.wheel_kinematics(np.zeros((1, 6)), np.array([[0, 10, 30, 40, 60]]), p)
    assert kin.omega[0].tolist() == [20, 20, 50, 50]


# --- loads and tires ----------------------------------------------------------------

def test_vertical_loads_static(params):
    fz = dynamics.vertical_loads(np.array([0.0]), params)[0]
    mg = params.m * params.g
    assert fz == pytest.approx([mg / 4] * 4)


def test_vertical_loads_transfer_example(params):
    fz = dynamics.vertical_loads(np.array([2.0]), params)[0]
    assert fz[0] + fz[1] == pytest.approx(22.357342857142857, rel=1e-12)
    assert fz[0] == fz[1] and fz[2] == fz[3]


def test_vertical_loads_floor(params):
    fz = dynamics.vertical_loads(np.array([-500.0]), params)[0]
    assert fz[2] == 0.0 and fz[3] == 0.0
    assert fz[0] + fz[1] == pytest.approx(params.m * params.g)


def test_pacejka_zero_slip():
    fx, fy = dynamics.pacejka_force(np.zeros(3), np.zeros(3), np.full(3, 10.0), TireParams().as_array())
    assert np.all(fx == 0) and np.all(fy == 0)


def test_pacejka_longitudinal_example():
    # direct evaluation of Fz*D*sin(C*atan(B*kappa)); the rounded figure quoted
    # for this case (about 1.616 N) is a coarse hand value, the formula gives 1.6206
    fx, fy = dynamics.pacejka_force(np.array([0.2]), np.array([0.0]), np.array([11.87]), TireParams().as_array())
    expected = 11.87 * 0.35 * math.sin(2.25 * math.atan(0.9 * 0.2))
    assert fx[0] == pytest.approx(expected, rel=1e-14)
    assert fx[0] == pytest.approx(1.620551543423105, rel=1e-12)
    assert fy[0] == 0.0


def test_pacejka_plateau_beyond_phase_limit():
    t = TireParams()
    fz = np.array([10.0, 10.0])
    fx, _ = dynamics.pacejka_force(np.array([5.0, 50.0]), np.zeros(2), fz, t.as_array())
    plateau = 10.0 * t.D * math.sin(dynamics.PHASE_LIMIT)
    assert fx == pytest.approx([plateau, plateau], rel=1e-12)
    assert fx[0] > 0


@settings(max_examples=300, deadline=None)
@given(k=st.floats(-20, 20), a=st.floats(-1.5, 1.5), fz=st.floats(0, 40),
       B=st.floats(0.2, 3), C=st.floats(1.5, 3), D=st.floats(0.2, 0.5))
def test_pacejka_odd(k, a, fz, B, C, D):
    tires = np.array([B, C, D])
    fx, fy = dynamics.pacejka_force(np.array([k]), np.array([a]), np.array([fz]), tires)
    gx, gy = dynamics.pacejka_force(np.array([-k]), np.array([-a]), np.array([fz]), tires)
    assert gx[0] == pytest.approx(-fx[0], abs=1e-12)
    assert gy[0] == pytest.approx(-fy[0], abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(k=st.floats(-20, 20), a=st.floats(-1.5, 1.5), fz=st.floats(0, 40),
       d=st.lists(st.floats(-0.5, 0.5), min_size=8, max_size=8))
def test_pacejka_friction_circle_hypothesis(k, a, fz, d):
    D = 0.35
    fx, fy = dynamics.pacejka_force(np.full(4, k), np.full(4, a), np.full(4, fz), np.array([0.9, 2.25, D]),
                                    np.array([d]))
    assert np.all(np.hypot(fx, fy) <= D * fz * (1 + 1e-9))


# --- equations of motion --------------------------------------------------------------

def test_force_free_derivatives_zero(params):
    # pure rolling straight ahead: no slip, no force
    state = np.array([[1.0, 2.0, 0.3, 2 * math.cos(0.3), 2 * math.sin(0.3), 0.0]])
    control = np.array([[0.0] + [2.0 / params.R] * 4])
    d = dynamics.derivatives(state, control, params, TireParams().as_array())
    assert np.allclose(d[0, 3:], 0.0, atol=1e-12)


def test_rear_differential_yaw_sign(params):
    state = np.array([[0, 0, 0, 2.0, 0, 0]])
    control = np.array([[0.0, 2 / params.R, 2 / params.R, 1.8 / params.R, 2.4 / params.R]])
    d = dynamics.derivatives(state, control, params, TireParams().as_array())
    assert d[0, dynamics.PSIDOT] > 0


def test_matches_scalar_oracle(params):
    rng = np.random.default_rng(11)
    n = 300
    s, c, t, dist = random_states(rng, n), random_controls(rng, n), random_tires(rng, n), random_disturbance(rng, n)
    batched = dynamics.derivatives(s, c, params, t, dist)
    for i in range(n):
        ref = oracle.derivatives(s[i].tolist(), c[i].tolist(), params, tuple(t[i]), tuple(dist[i]))
        assert np.allclose(batched[i], ref, rtol=1e-12, atol=1e-12)


def test_constant_velocity_step(params):
    state = np.array([0.0, 0.0, 0.0, 2.0, 0.0, 0.0])
    control = np.array([0.0] + [2.0 / params.R] * 4)
    nxt, div = dynamics.step(state, control, params)
    assert not div
    assert nxt[0] == pytest.approx(0.02, abs=1e-15)
    assert np.allclose(nxt[3:], state[3:], atol=1e-12)


def test_step_rejects_bad_dt(params):
    with pytest.raises(ValueError):
        dynamics.step_batch(np.zeros((1, 6)), np.zeros((1, 5)), params, TireParams().as_array(), dt=0.0)


def test_divergence_flag(params):
    state = np.array([[0, 0, 0, np.nan, 0, 0], [0, 0, 0, 1.0, 0, 0]])
    control = np.array([[0, 20, 20, 20, 20]] * 2, dtype=float)
    _, div = dynamics.step_batch(state, control, params, TireParams().as_array())
    assert div.tolist() == [True, False]


# --- properties over randomized cases ------------------------------------------------------

def _cases(seed, n=N_CASES):
    rng = np.random.default_rng(seed)
    return random_states(rng, n), random_controls(rng, n), random_tires(rng, n), random_disturbance(rng, n)


def test_mirror_symmetry(params):
    s, c, t, d = _cases(1)
    a = dynamics.derivatives(s, c, params, t, d)
    b = dynamics.derivatives(dynamics.mirror_state(s), dynamics.mirror_control(c), params, t,
                             dynamics.mirror_disturbance(d))
    assert np.max(np.abs(dynamics.mirror_state(a) - b)) < 1e-10


def test_rigid_motion_invariance(params):
    s, c, t, d = _cases(2)
    rng = np.random.default_rng(22)
    worst = 0.0
    for k in range(0, N_CASES, 100):
        ang, tx, ty = rng.uniform(-np.pi, np.pi), *rng.uniform(-10, 10, 2)
        sl = slice(k, k + 100)
        moved, _ = dynamics.step_batch(dynamics.rigid_transform(s[sl], ang, tx, ty), c[sl], params, t[sl], d[sl])
        ref, _ = dynamics.step_batch(s[sl], c[sl], params, t[sl], d[sl])
        worst = max(worst, np.max(np.abs(moved - dynamics.rigid_transform(ref, ang, tx, ty))))
    assert worst < 1e-9


def test_friction_circle(params):
    s, c, t, d = _cases(3)
    f = dynamics.tire_forces(s, c, params, t, d)
    assert np.all(np.hypot(f.fx, f.fy) <= t[:, 2:3] * f.fz * (1 + 1e-9))


def test_load_conservation(params):
    s, c, t, d = _cases(4)
    f = dynamics.tire_forces(s, c, params, t, d)
    mg = params.m * params.g
    assert np.max(np.abs(f.fz.sum(axis=1) - mg)) / mg < 1e-9
    assert np.all(f.fz >= 0)


def test_batch_equals_sequential(params):
    s, c, t, d = _cases(5)
    batch, _ = dynamics.step_batch(s, c, params, t, d)
    for i in range(N_CASES):
        one, _ = dynamics.step(s[i], c[i], params, t[i], d[i])
        assert np.array_equal(one, batch[i])


def test_batch_permutation(params):
    s, c, t, d = _cases(6, 200)
    perm = np.random.default_rng(0).permutation(200)
    a, _ = dynamics.step_batch(s, c, params, t, d)
    b, _ = dynamics.step_batch(s[perm], c[perm], params, t[perm], d[perm])
    assert np.array_equal(a[perm], b)


def test_worker_split_bitwise(params):
    s, c, t, d = _cases(7)
    a, _ = dynamics.step_batch(s, c, params, t, d, workers=1)
    b, _ = dynamics.step_batch(s, c, params, t, d, workers=4)
    assert np.array_equal(a, b)


def integrator_ratios(params, n=N_CASES, seed=8):
    rng = np.random.default_rng(seed)
    s0, c, t = random_states(rng, n, 3.0), random_controls(rng, n), random_tires(rng, n)

    def run(dt):
        s = s0.copy()
        for _ in range(int(round(1.0 / dt))):
            s, _ = dynamics.step_batch(s, c, params, t, dt=dt)
        return s

    ref = run(1e-4)
    e1 = np.abs(run(0.01) - ref).max(axis=1)
    e2 = np.abs(run(0.005) - ref).max(axis=1)
    return e1 / e2


def test_integrator_first_order(params):
    ratios = integrator_ratios(params)
    assert np.median(ratios) == pytest.approx(2.0, rel=0.2)
    assert np.mean(np.abs(ratios / 2.0 - 1.0) <= 0.2) >= 0.99
