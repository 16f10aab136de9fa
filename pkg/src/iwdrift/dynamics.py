"""Planar four-wheel vehicle model with magic-formula tires.

All functions operate on batches. A state batch is an ``(N, 6)`` array with
columns ``x, y, psi, xdot, ydot, psidot`` (global frame); a control batch is
``(N, 5)`` with columns ``delta, omega_fl, omega_fr, omega_rl, omega_rr``.
Per-wheel arrays are ``(N, 4)`` in the order fl, fr, rl, rr. Left is +y in
the body frame.

Tires are ``(N, 3)`` rows of ``(B, C, D)`` or a single ``(3,)`` row shared by
the batch. Disturbances are ``(N, 8)``: the four longitudinal components
followed by the four lateral ones, same wheel order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .params import Drivetrain, TireParams, VehicleParams

X, Y, PSI, XDOT, YDOT, PSIDOT = range(6)
STATE_FIELDS = ("x", "y", "psi", "xdot", "ydot", "psidot")
CONTROL_FIELDS = ("delta", "omega_fl", "omega_fr", "omega_rl", "omega_rr")
WHEELS = ("fl", "fr", "rl", "rr")

EPS_V = 0.1
# The magic-formula phase C*atan(B*s) is capped here. With C > 2 the raw curve
# changes sign at large slip (a spinning wheel would push the car backwards,
# which also makes a launch from rest impossible); past the cap the force
# stays on a plateau of sin(PHASE_LIMIT) = 71% of peak.
PHASE_LIMIT = 0.75 * math.pi
DEFAULT_DT = 0.01

# index permutation that swaps left and right wheels in an (N, 4) or (N, 8) array
MIRROR_WHEELS = np.array([1, 0, 3, 2])
MIRROR_DISTURBANCE = np.array([1, 0, 3, 2, 5, 4, 7, 6])


@dataclass
class WheelKinematics:
    vx: np.ndarray
    vy: np.ndarray
    slip_ratio: np.ndarray
    slip_angle: np.ndarray
    omega: np.ndarray  # wheel speed actually applied (drivetrain coupling resolved)


@dataclass
class TireForces:
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray


def _tire_columns(tires):
    if isinstance(tires, TireParams):
        tires = tires.as_array()
    tires = np.asarray(tires, dtype=np.float64)
    if tires.ndim == 1:
        return tires[0], tires[1], tires[2]
    return tires[:, 0:1], tires[:, 1:2], tires[:, 2:3]


def body_velocity(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Velocity of the centre of mass expressed in the body frame."""
    c = np.cos(state[:, PSI])
    s = np.sin(state[:, PSI])
    vx = c * state[:, XDOT] + s * state[:, YDOT]
    vy = -s * state[:, XDOT] + c * state[:, YDOT]
    return vx, vy


def sideslip(state: np.ndarray) -> np.ndarray:
    """Sideslip angle, wrapped to (-pi, pi]; zero at standstill."""
    vx, vy = body_velocity(state)
    return np.arctan2(vy, vx)


def speed(state: np.ndarray) -> np.ndarray:
    return np.hypot(state[:, XDOT], state[:, YDOT])


def wheel_kinematics(state: np.ndarray, control: np.ndarray, params: VehicleParams) -> WheelKinematics:
    vx, vy = body_velocity(state)
    r = state[:, PSIDOT]
    half_t = 0.5 * params.T
    side = r * half_t
    bx = np.stack([vx - side, vx + side, vx - side, vx + side], axis=1)
    by = np.stack([vy + r * params.lf, vy + r * params.lf, vy - r * params.lr, vy - r * params.lr], axis=1)

    cd = np.cos(control[:, 0])[:, None]
    sd = np.sin(control[:, 0])[:, None]
    wx = bx.copy()
    wy = by.copy()
    wx[:, :2] = cd * bx[:, :2] + sd * by[:, :2]
    wy[:, :2] = -sd * bx[:, :2] + cd * by[:, :2]

    omega = np.array(control[:, 1:5], dtype=np.float64)
    if params.drivetrain is Drivetrain.AWD:
        omega[:, 0:2] = 0.5 * (omega[:, 0:1] + omega[:, 1:2])
        omega[:, 2:4] = 0.5 * (omega[:, 2:3] + omega[:, 3:4])
    elif params.drivetrain is Drivetrain.RWD:
        omega[:, 0:2] = wx[:, 0:2] / params.R

    denom = np.maximum(np.abs(wx), EPS_V)
    slip_ratio = (omega * params.R - wx) / denom
    if params.drivetrain is Drivetrain.RWD:
        slip_ratio[:, 0:2] = 0.0
    slip_angle = -np.arctan2(wy, denom)
    return WheelKinematics(wx, wy, slip_ratio, slip_angle, omega)


def vertical_loads(accel_x, params: VehicleParams) -> np.ndarray:
    """Per-wheel normal loads with longitudinal load transfer.

    Each axle load is split equally between its two wheels. The front load is
    clamped to ``[0, m*g]`` so neither axle goes negative and the total stays
    ``m*g``.
    """
    ax = np.asarray(accel_x, dtype=np.float64)
    mg = params.m * params.g
    front = params.m * (params.g * params.lr - ax * params.h_cg) / params.wheelbase
    front = np.clip(front, 0.0, mg)
    rear = mg - front
    half_f = 0.5 * front
    half_r = 0.5 * rear
    return np.stack([half_f, half_f, half_r, half_r], axis=-1)


def pacejka_force(slip_ratio, slip_angle, fz, tires, disturbance=None) -> tuple[np.ndarray, np.ndarray]:
    """Combined-slip magic formula, decomposed along the slip direction.

    The force magnitude is ``Fz*D*sin(min(C*atan(B*s), PHASE_LIMIT))`` with
    ``s = hypot(slip_ratio, tan(slip_angle))``. Optional multiplicative
    disturbances are applied per component and the result is re-clamped to
    the friction circle ``D*Fz``.
    """
    slip_ratio = np.asarray(slip_ratio, dtype=np.float64)
    tan_a = np.tan(np.asarray(slip_angle, dtype=np.float64))
    fz = np.asarray(fz, dtype=np.float64)
    B, C, D = _tire_columns(tires)

    s = np.hypot(slip_ratio, tan_a)
    total = fz * D * np.sin(np.minimum(C * np.arctan(B * s), PHASE_LIMIT))
    positive = s > 0.0
    scale = np.where(positive, total / np.where(positive, s, 1.0), 0.0)
    fx = scale * slip_ratio
    fy = scale * tan_a

    if disturbance is not None:
        d = np.asarray(disturbance, dtype=np.float64)
        fx = fx * (1.0 + d[..., 0:4])
        fy = fy * (1.0 + d[..., 4:8])
        limit = D * fz
        mag = np.hypot(fx, fy)
        over = mag > limit
        shrink = np.where(over, limit / np.where(over, mag, 1.0), 1.0)
        fx = fx * shrink
        fy = fy * shrink
    return fx, fy


def _body_x_force(fx, fy, delta):
    cd = np.cos(delta)
    sd = np.sin(delta)
    front = cd * (fx[:, 0] + fx[:, 1]) - sd * (fy[:, 0] + fy[:, 1])
    return front + fx[:, 2] + fx[:, 3]


def tire_forces(state, control, params: VehicleParams, tires, disturbance=None,
                kin: WheelKinematics | None = None) -> TireForces:
    """Forces at all four contact patches.

    Load transfer needs the longitudinal acceleration, which in turn depends
    on the forces. One fixed-point pass resolves it: forces at static load
    give the body-x specific force, which sets the loads used for the final
    forces.
    """
    if kin is None:
        kin = wheel_kinematics(state, control, params)
    n = state.shape[0]
    static = vertical_loads(np.zeros(n), params)
    fx0, fy0 = pacejka_force(kin.slip_ratio, kin.slip_angle, static, tires, disturbance)
    ax = _body_x_force(fx0, fy0, control[:, 0]) / params.m
    fz = vertical_loads(ax, params)
    fx, fy = pacejka_force(kin.slip_ratio, kin.slip_angle, fz, tires, disturbance)
    return TireForces(fx, fy, fz)


def derivatives(state, control, params: VehicleParams, tires, disturbance=None) -> np.ndarray:
    """Time derivative of the state under the planar equations of motion."""
    forces = tire_forces(state, control, params, tires, disturbance)
    fx, fy = forces.fx, forces.fy
    psi = state[:, PSI]
    delta = control[:, 0]

    fx_f = fx[:, 0] + fx[:, 1]
    fy_f = fy[:, 0] + fy[:, 1]
    fx_r = fx[:, 2] + fx[:, 3]
    fy_r = fy[:, 2] + fy[:, 3]
    dfx_f = fx[:, 1] - fx[:, 0]
    dfy_f = fy[:, 1] - fy[:, 0]
    dfx_r = fx[:, 3] - fx[:, 2]

    cdp = np.cos(delta + psi)
    sdp = np.sin(delta + psi)
    cp = np.cos(psi)
    sp = np.sin(psi)
    cd = np.cos(delta)
    sd = np.sin(delta)

    xdd = (cdp * fx_f - sdp * fy_f + cp * fx_r - sp * fy_r) / params.m
    ydd = (sdp * fx_f + cdp * fy_f + sp * fx_r + cp * fy_r) / params.m
    moment = ((cd * fy_f + sd * fx_f) * params.lf - fy_r * params.lr
              + (cd * dfx_f - sd * dfy_f + dfx_r) * (0.5 * params.T))
    psidd = moment / params.Iz

    out = np.empty_like(state, dtype=np.float64)
    out[:, X] = state[:, XDOT]
    out[:, Y] = state[:, YDOT]
    out[:, PSI] = state[:, PSIDOT]
    out[:, XDOT] = xdd
    out[:, YDOT] = ydd
    out[:, PSIDOT] = psidd
    return out


def _euler(states, controls, params, tires, disturbance, dt):
    nxt = states + dt * derivatives(states, controls, params, tires, disturbance)
    diverged = ~np.isfinite(nxt).all(axis=1)
    return nxt, diverged


def _slice_rows(value, lo, hi):
    if value is None or isinstance(value, TireParams):
        return value
    value = np.asarray(value)
    return value[lo:hi] if value.ndim == 2 else value


def step_batch(states, controls, params: VehicleParams, tires, disturbance=None,
               dt: float = DEFAULT_DT, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Advance N independent vehicles by one explicit Euler step.

    Returns the new ``(N, 6)`` states and a boolean divergence mask for
    instances whose result is not finite. Work may be split into contiguous
    chunks across ``workers`` threads; the arithmetic is elementwise so the
    result does not depend on the split.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    states = np.asarray(states, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    n = states.shape[0]
    if controls.shape[0] != n:
        raise ValueError("states and controls must have the same length")
    workers = max(1, min(int(workers), n))
    if workers == 1:
        with np.errstate(all="ignore"):
            return _euler(states, controls, params, tires, disturbance, dt)

    bounds = np.linspace(0, n, workers + 1).astype(int)
    out = np.empty_like(states)
    diverged = np.empty(n, dtype=bool)

    def run(k):
        lo, hi = bounds[k], bounds[k + 1]
        with np.errstate(all="ignore"):
            nxt, div = _euler(states[lo:hi], controls[lo:hi], params,
                              _slice_rows(tires, lo, hi), _slice_rows(disturbance, lo, hi), dt)
        out[lo:hi] = nxt
        diverged[lo:hi] = div

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, range(workers)))
    return out, diverged


def step(state, control, params: VehicleParams, tires=TireParams(), disturbance=None,
         dt: float = DEFAULT_DT) -> tuple[np.ndarray, bool]:
    """Single-vehicle step; returns the new state and its divergence flag."""
    state = np.asarray(state, dtype=np.float64)[None, :]
    control = np.asarray(control, dtype=np.float64)[None, :]
    if disturbance is not None:
        disturbance = np.asarray(disturbance, dtype=np.float64).reshape(1, 8)
    tires_arr = tires.as_array() if isinstance(tires, TireParams) else np.asarray(tires, dtype=np.float64)
    if tires_arr.ndim == 1:
        tires_arr = tires_arr[None, :]
    nxt, div = step_batch(state, control, params, tires_arr, disturbance, dt)
    return nxt[0], bool(div[0])


def mirror_state(state: np.ndarray) -> np.ndarray:
    out = np.array(state, dtype=np.float64, copy=True)
    out[..., [Y, PSI, YDOT, PSIDOT]] *= -1.0
    return out


def mirror_control(control: np.ndarray) -> np.ndarray:
    control = np.asarray(control, dtype=np.float64)
    out = np.empty_like(control)
    out[..., 0] = -control[..., 0]
    out[..., 1:5] = control[..., 1:5][..., MIRROR_WHEELS]
    return out


def mirror_disturbance(d: np.ndarray) -> np.ndarray:
    return np.asarray(d, dtype=np.float64)[..., MIRROR_DISTURBANCE]


def rigid_transform(state: np.ndarray, angle: float, tx: float, ty: float) -> np.ndarray:
    """Rotate by ``angle`` about the origin, then translate by (tx, ty)."""
    c, s = math.cos(angle), math.sin(angle)
    out = np.array(state, dtype=np.float64, copy=True)
    out[..., X] = c * state[..., X] - s * state[..., Y] + tx
    out[..., Y] = s * state[..., X] + c * state[..., Y] + ty
    out[..., PSI] = state[..., PSI] + angle
    out[..., XDOT] = c * state[..., XDOT] - s * state[..., YDOT]
    out[..., YDOT] = s * state[..., XDOT] + c * state[..., YDOT]
    return out
