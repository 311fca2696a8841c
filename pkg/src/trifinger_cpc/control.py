"""Cartesian PID position control mapped to joint velocities through damped IK."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from . import kinematics as kin


@dataclass(frozen=True)
class ControllerGains:
    kp: np.ndarray = field(default_factory=lambda: np.full(3, 6.0))
    ki: np.ndarray = field(default_factory=lambda: np.full(3, 0.1))
    kd: np.ndarray = field(default_factory=lambda: np.full(3, 0.2))
    integral_clamp: float = 0.05
    lam: float = kin.DEFAULT_LAMBDA
    max_cart_speed: float = 0.5

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if np.any(v < 0):
                raise ValueError(f"gain {name} must be >= 0, got {v.tolist()}")
            object.__setattr__(self, name, v)
        if self.integral_clamp <= 0:
            raise ValueError("integral_clamp must be > 0")
        if self.max_cart_speed <= 0:
            raise ValueError("max_cart_speed must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass(frozen=True)
class PidState:
    """PID memory; arrays are (3,) for one finger or (3, 3) for all fingers."""

    integral: np.ndarray
    prev_error: np.ndarray
    initialized: bool = False

    @classmethod
    def fresh(cls, shape=(3,)) -> "PidState":
        return cls(np.zeros(shape), np.zeros(shape), False)


@dataclass(frozen=True)
class ControlDiagnostics:
    error_norm: np.ndarray   # (3,) per finger, m
    speed: np.ndarray        # (3,) commanded Cartesian speed, m/s
    error_jump: np.ndarray   # (3,) |e_t - e_{t-1}|, m


def clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    """Scale rows of ``v`` down so their norm does not exceed ``limit``."""
    n = kin.row_norms(v)[..., None]
    scale = np.minimum(1.0, limit / np.maximum(n, 1e-300))
    return v * scale


def pid_step(error, state: PidState, gains: ControllerGains, dt: float):
    """One PID update on a Cartesian position error.

    Returns the desired Cartesian velocity (norm-clipped to
    ``gains.max_cart_speed``) and the new state.  The derivative acts on the
    error and is zero on the first call.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    e = np.asarray(error, dtype=float)
    if not np.isfinite(e).all():
        raise ValueError("PID error contains non-finite values")
    c = gains.integral_clamp
    integral = np.minimum(np.maximum(state.integral + e * dt, -c), c)
    deriv = (e - state.prev_error) / dt if state.initialized else np.zeros_like(e)
    v = gains.kp * e + gains.ki * integral + gains.kd * deriv
    v = clip_norm(v, gains.max_cart_speed)
    return v, PidState(integral, e.copy(), True)


@numba.njit(cache=True)
def _cpc_kernel(e, integral, prev_error, initialized, kp, ki, kd, clamp, vmax, dt,
                joint_axes, joint_pos, tips, lam):
    """Compiled PID, speed clip and damped IK for all fingers; requires lam > 0."""
    nf = e.shape[0]
    qdot = np.empty(nf * 3)
    v = np.empty((nf, 3))
    new_int = np.empty((nf, 3))
    err = np.empty(nf)
    speed = np.empty(nf)
    jump = np.zeros(nf)
    J = np.empty((3, 3))
    A = np.empty((3, 3))
    for f in range(nf):
        e2 = 0.0
        d2 = 0.0
        for r in range(3):
            ii = min(max(integral[f, r] + e[f, r] * dt, -clamp), clamp)
            new_int[f, r] = ii
            de = e[f, r] - prev_error[f, r]
            deriv = de / dt if initialized else 0.0
            v[f, r] = kp[r] * e[f, r] + ki[r] * ii + kd[r] * deriv
            e2 += e[f, r] * e[f, r]
            d2 += de * de
        err[f] = np.sqrt(e2)
        if initialized:
            jump[f] = np.sqrt(d2)
        n = np.sqrt(v[f, 0] * v[f, 0] + v[f, 1] * v[f, 1] + v[f, 2] * v[f, 2])
        scale = min(1.0, vmax / max(n, 1e-300))
        for r in range(3):
            v[f, r] *= scale
        speed[f] = np.sqrt(v[f, 0] * v[f, 0] + v[f, 1] * v[f, 1] + v[f, 2] * v[f, 2])
        for j in range(3):
            a = joint_axes[f, j]
            dx = tips[f, 0] - joint_pos[f, j, 0]
            dy = tips[f, 1] - joint_pos[f, j, 1]
            dz = tips[f, 2] - joint_pos[f, j, 2]
            J[0, j] = a[1] * dz - a[2] * dy
            J[1, j] = a[2] * dx - a[0] * dz
            J[2, j] = a[0] * dy - a[1] * dx
        for r in range(3):
            for k in range(3):
                A[r, k] = J[r, 0] * J[k, 0] + J[r, 1] * J[k, 1] + J[r, 2] * J[k, 2]
            A[r, r] += lam
        # Cholesky of the SPD 3x3 system
        l00 = np.sqrt(A[0, 0])
        l10 = A[1, 0] / l00
        l20 = A[2, 0] / l00
        l11 = np.sqrt(A[1, 1] - l10 * l10)
        l21 = (A[2, 1] - l20 * l10) / l11
        l22 = np.sqrt(A[2, 2] - l20 * l20 - l21 * l21)
        z0 = v[f, 0] / l00
        z1 = (v[f, 1] - l10 * z0) / l11
        z2 = (v[f, 2] - l20 * z0 - l21 * z1) / l22
        y2 = z2 / l22
        y1 = (z1 - l21 * y2) / l11
        y0 = (z0 - l10 * y1 - l20 * y2) / l00
        for j in range(3):
            qdot[3 * f + j] = J[0, j] * y0 + J[1, j] * y1 + J[2, j] * y2
    return qdot, new_int, err, speed, jump


def cpc_command(chain: kin.KinematicChain, q, fingertip_targets, pid_states: PidState,
                gains: ControllerGains, dt: float, frames: kin.LinkFrames | None = None):
    """Joint velocity command driving each fingertip toward its target.

    ``pid_states`` holds (3, 3) arrays, one row per finger.  Returns the
    9-vector command, the new PID state and the step diagnostics.
    """
    targets = np.asarray(fingertip_targets, dtype=float)
    if targets.shape != (kin.N_FINGERS, 3) or not np.isfinite(targets).all():
        raise ValueError("fingertip_targets must be a finite (3, 3) array")
    if frames is None:
        frames = kin.forward_kinematics(chain, q)
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    e = targets - frames.fingertips
    if gains.lam > 0 and pid_states.integral.shape == e.shape:
        qdot, integral, err, speed, jump = _cpc_kernel(
            e, pid_states.integral, pid_states.prev_error, pid_states.initialized, gains.kp, gains.ki, gains.kd,
            gains.integral_clamp, gains.max_cart_speed, dt, frames.joint_axes, frames.joint_positions,
            frames.fingertips, gains.lam)
        return qdot, PidState(integral, e, True), ControlDiagnostics(err, speed, jump)
    jump = (kin.row_norms(e - pid_states.prev_error)
            if pid_states.initialized else np.zeros(kin.N_FINGERS))
    v, new_state = pid_step(e, pid_states, gains, dt)
    J = kin.fingertip_jacobians(chain, q, frames)
    qdot = kin.damped_ik(J, v, gains.lam).reshape(kin.N_DOF)
    diag = ControlDiagnostics(kin.row_norms(e), kin.row_norms(v), jump)
    return qdot, new_state, diag


def gravity_comp_torque(chain: kin.KinematicChain, q) -> np.ndarray:
    """Feedforward joint torques cancelling gravity loading."""
    return -kin.gravity_torques(chain, q)
