"""Geometric model of the three-finger manipulator.

Conventions
-----------
Every finger is a serial chain of three revolute joints hanging from a base
frame (position + yaw about world z).  Walking down a finger, joint ``j``
rotates its frame about ``axis`` (expressed in the parent frame) and the link
vector ``offset`` then carries the origin to the next joint, or to the
fingertip after the last joint.  ``link_com_offset`` is measured from the
joint along the rotated link frame.

All Jacobians are world-frame positional Jacobians of the fingertip with
respect to that finger's three joint angles.  Joint vectors are ordered
finger-major: ``[f0j0, f0j1, f0j2, f1j0, ...]``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

N_FINGERS = 3
N_JOINTS = 3
N_DOF = N_FINGERS * N_JOINTS

DEFAULT_LAMBDA = 0.01
SINGULAR_COND = 1e12
REACH_SAMPLES = 1000
REACH_SEED = 0
REACH_TOL = 1e-4


class SingularityError(np.linalg.LinAlgError):
    """Undamped pseudoinverse requested at a singular configuration."""


@dataclass(frozen=True, eq=False)
class Joint:
    axis: np.ndarray
    offset: np.ndarray
    limit_lo: float
    limit_hi: float
    link_mass: float = 0.0
    link_com_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("axis", "offset", "link_com_offset"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"joint {name} must be a 3-vector, got shape {v.shape}")
            object.__setattr__(self, name, v)
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise ValueError(f"joint axis {self.axis.tolist()} is not unit length")
        if not self.limit_lo < self.limit_hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got [{self.limit_lo}, {self.limit_hi}]")
        if self.link_mass < 0:
            raise ValueError(f"link_mass must be >= 0, got {self.link_mass}")


@dataclass(frozen=True, eq=False)
class Finger:
    base_position: np.ndarray
    base_yaw: float
    joints: tuple[Joint, Joint, Joint]

    def __post_init__(self):
        object.__setattr__(self, "base_position", np.asarray(self.base_position, dtype=float))
        if self.base_position.shape != (3,):
            raise ValueError("finger base_position must be a 3-vector")
        if len(self.joints) != N_JOINTS:
            raise ValueError(f"each finger needs exactly {N_JOINTS} joints, got {len(self.joints)}")
        object.__setattr__(self, "joints", tuple(self.joints))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Three fingers plus the gravity vector; packs parameters into arrays for speed."""

    fingers: tuple[Finger, Finger, Finger]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        if len(self.fingers) != N_FINGERS:
            raise ValueError(f"chain needs exactly {N_FINGERS} fingers, got {len(self.fingers)}")
        object.__setattr__(self, "fingers", tuple(self.fingers))
        g = np.asarray(self.gravity, dtype=float)
        if g.shape != (3,):
            raise ValueError("gravity must be a 3-vector")
        object.__setattr__(self, "gravity", g)

        def stack(attr):
            return np.array([[getattr(j, attr) for j in f.joints] for f in self.fingers], dtype=float)

        packed = {
            "axes": stack("axis"),
            "offsets": stack("offset"),
            "com_offsets": stack("link_com_offset"),
            "masses": stack("link_mass"),
            "limit_lo": stack("limit_lo").reshape(N_DOF),
            "limit_hi": stack("limit_hi").reshape(N_DOF),
            "base_pos": np.array([f.base_position for f in self.fingers]),
            "base_rot": np.array([rot_z(f.base_yaw) for f in self.fingers]),
        }
        K = _skew(packed["axes"])
        packed["K"] = K
        packed["KK"] = K @ K
        packed["axes_col"] = packed["axes"][..., None]
        packed["link_cols"] = np.stack([packed["com_offsets"], packed["offsets"]], axis=-1)
        for arr in packed.values():
            arr.setflags(write=False)
        object.__setattr__(self, "_packed", packed)

    @property
    def limit_lo(self) -> np.ndarray:
        return self._packed["limit_lo"]

    @property
    def limit_hi(self) -> np.ndarray:
        return self._packed["limit_hi"]

    @property
    def base_positions(self) -> np.ndarray:
        return self._packed["base_pos"]

    def link_lengths(self, finger: int) -> np.ndarray:
        return np.linalg.norm(self._packed["offsets"][finger], axis=-1)

    def with_gravity(self, gravity) -> "KinematicChain":
        return KinematicChain(self.fingers, np.asarray(gravity, dtype=float))


@dataclass(frozen=True, eq=False)
class LinkFrames:
    """Result of forward kinematics; leading axis indexes fingers, second joints."""

    fingertips: np.ndarray       # (3, 3)
    joint_positions: np.ndarray  # (3, 3, 3)
    joint_axes: np.ndarray       # (3, 3, 3) world-frame axes
    com_positions: np.ndarray    # (3, 3, 3)
    rotations: np.ndarray        # (3, 3, 3, 3) link frame after each joint


_FK_KEYS = ("base_rot", "base_pos", "K", "KK", "axes_col", "link_cols")


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def row_norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt((v * v).sum(axis=-1))


def _skew(axes: np.ndarray) -> np.ndarray:
    """Cross-product matrices of vectors (..., 3) as (..., 3, 3)."""
    K = np.zeros(axes.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -axes[..., 2], axes[..., 1]
    K[..., 1, 0], K[..., 1, 2] = axes[..., 2], -axes[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -axes[..., 1], axes[..., 0]
    return K


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _rodrigues(K: np.ndarray, KK: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotations about the axes whose skew matrices are ``K`` (with ``KK = K @ K``)."""
    s = np.sin(angles)[..., None, None]
    c = (1.0 - np.cos(angles))[..., None, None]
    return _EYE3 + s * K + c * KK


_EYE3 = np.eye(3)


def _chain_fk(p: dict, q: np.ndarray):
    """Batched serial-chain FK over the packed parameter dict ``p``.

    Leading dims of the packed arrays and of ``q`` (..., 3) broadcast together.
    Returns tips (..., 3) and joint positions, world axes, COM positions
    (..., 3, 3) and link rotations (..., 3, 3, 3).
    """
    local = _rodrigues(p["K"], p["KK"], q)
    batch = np.broadcast_shapes(p["base_pos"].shape[:-1], q.shape[:-1])
    R = p["base_rot"]
    pos = p["base_pos"]
    joint_pos = np.empty(batch + (N_JOINTS, 3))
    joint_axis = np.empty(batch + (N_JOINTS, 3))
    com = np.empty(batch + (N_JOINTS, 3))
    rots = np.empty(batch + (N_JOINTS, 3, 3))
    axes, link = p["axes_col"], p["link_cols"]
    for j in range(N_JOINTS):
        joint_pos[..., j, :] = pos
        joint_axis[..., j, :] = (R @ axes[..., j, :, :])[..., 0]
        R = R @ local[..., j, :, :]
        rots[..., j, :, :] = R
        # columns: [com offset, link offset]
        cols = R @ link[..., j, :, :]
        com[..., j, :] = pos + cols[..., 0]
        pos = pos + cols[..., 1]
    return pos, joint_pos, joint_axis, com, rots


@numba.njit(cache=True)
def _fk_kernel(base_rot, base_pos, axes, offsets, com_offsets, q):
    """Compiled single-configuration FK; same outputs as ``_chain_fk`` for q (3, 3)."""
    nf, nj = q.shape
    tips = np.empty((nf, 3))
    joint_pos = np.empty((nf, nj, 3))
    joint_axis = np.empty((nf, nj, 3))
    com = np.empty((nf, nj, 3))
    rots = np.empty((nf, nj, 3, 3))
    L = np.empty((3, 3))
    for f in range(nf):
        R = base_rot[f].copy()
        p = base_pos[f].copy()
        for j in range(nj):
            x, y, z = axes[f, j, 0], axes[f, j, 1], axes[f, j, 2]
            joint_pos[f, j] = p
            for r in range(3):
                joint_axis[f, j, r] = R[r, 0] * x + R[r, 1] * y + R[r, 2] * z
            s = np.sin(q[f, j])
            c = 1.0 - np.cos(q[f, j])
            L[0, 0] = 1.0 - c * (y * y + z * z)
            L[0, 1] = -s * z + c * x * y
            L[0, 2] = s * y + c * x * z
            L[1, 0] = s * z + c * x * y
            L[1, 1] = 1.0 - c * (x * x + z * z)
            L[1, 2] = -s * x + c * y * z
            L[2, 0] = -s * y + c * x * z
            L[2, 1] = s * x + c * y * z
            L[2, 2] = 1.0 - c * (x * x + y * y)
            Rn = np.empty((3, 3))
            for r in range(3):
                for k in range(3):
                    Rn[r, k] = R[r, 0] * L[0, k] + R[r, 1] * L[1, k] + R[r, 2] * L[2, k]
            R = Rn
            rots[f, j] = R
            pn = np.empty(3)
            for r in range(3):
                com[f, j, r] = p[r] + (R[r, 0] * com_offsets[f, j, 0] + R[r, 1] * com_offsets[f, j, 1]
                                       + R[r, 2] * com_offsets[f, j, 2])
                pn[r] = p[r] + R[r, 0] * offsets[f, j, 0] + R[r, 1] * offsets[f, j, 1] + R[r, 2] * offsets[f, j, 2]
            p = pn
        tips[f] = p
    return tips, joint_pos, joint_axis, com, rots


def _as_joint_vector(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (N_DOF,):
        raise ValueError(f"joint vector must have length {N_DOF}, got shape {q.shape}")
    if not np.isfinite(q).all():
        raise ValueError("joint vector contains non-finite values")
    return q


def forward_kinematics(chain: KinematicChain, q) -> LinkFrames:
    """Fingertip positions and link frames for joint configuration ``q``.

    Joint limits are not enforced here; any finite ``q`` is accepted.
    """
    q = _as_joint_vector(q)
    p = chain._packed
    tips, jp, ja, com, rots = _fk_kernel(p["base_rot"], p["base_pos"], p["axes"], p["offsets"],
                                         p["com_offsets"], q.reshape(N_FINGERS, N_JOINTS))
    return LinkFrames(tips, jp, ja, com, rots)


def fingertip_positions(chain: KinematicChain, q) -> np.ndarray:
    return forward_kinematics(chain, q).fingertips


def _jacobians_from_frames(frames: LinkFrames) -> np.ndarray:
    arms = frames.fingertips[:, None, :] - frames.joint_positions
    # cross gives (finger, joint, xyz); Jacobian wants columns per joint
    return np.swapaxes(_cross(frames.joint_axes, arms), -1, -2)


def fingertip_jacobians(chain: KinematicChain, q, frames: LinkFrames | None = None) -> np.ndarray:
    """All three 3x3 fingertip Jacobians stacked as (finger, row, joint)."""
    if frames is None:
        frames = forward_kinematics(chain, q)
    return _jacobians_from_frames(frames)


def fingertip_jacobian(chain: KinematicChain, q, finger: int) -> np.ndarray:
    if finger not in range(N_FINGERS):
        raise ValueError(f"finger index must be 0, 1 or 2, got {finger}")
    return fingertip_jacobians(chain, q)[finger]


def damped_ik(J, xdot, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Joint velocity ``J^T (J J^T + lam I)^{-1} xdot``.

    ``J`` may carry leading batch dimensions (..., 3, 3) with ``xdot`` (..., 3).
    With ``lam == 0`` the undamped solve is attempted and a singular
    ``J J^T`` raises :class:`SingularityError` rather than being regularised.
    """
    J = np.asarray(J, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    if lam < 0:
        raise ValueError(f"damping must be >= 0, got {lam}")
    if not np.isfinite(xdot).all():
        raise ValueError("xdot contains non-finite values")
    if lam == 0.0:
        # SVD route: forming J J^T would square the conditioning
        s = np.linalg.svd(J, compute_uv=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = (s[..., 0] / s[..., -1]) ** 2 if J.shape[-2] <= J.shape[-1] else np.inf
        if np.any(~np.isfinite(cond)) or np.any(cond > SINGULAR_COND):
            raise SingularityError(f"J J^T is singular (condition {np.max(cond):.3g}) and lambda = 0")
        return (np.linalg.pinv(J) @ xdot[..., None])[..., 0]
    JT = np.swapaxes(J, -1, -2)
    A = J @ JT
    m = A.shape[-1]
    A = A + lam * (_EYE3 if m == 3 else np.eye(m))
    y = np.linalg.solve(A, xdot[..., None])
    return (JT @ y)[..., 0]


def gravity_torques(chain: KinematicChain, q, frames: LinkFrames | None = None) -> np.ndarray:
    """Generalized gravity force on each joint (N*m), length-9 finger-major.

    Positive entries mean gravity pushes that joint toward increasing angle;
    the compensating torque is the negation.
    """
    if frames is None:
        frames = forward_kinematics(chain, q)
    m = chain._packed["masses"]  # (finger, link)
    # distal sums: mass and mass-weighted COM of links k >= j
    m_distal = np.cumsum(m[:, ::-1], axis=1)[:, ::-1]
    mc_distal = np.cumsum((m[..., None] * frames.com_positions)[:, ::-1], axis=1)[:, ::-1]
    arm = mc_distal - m_distal[..., None] * frames.joint_positions
    tau = _cross(frames.joint_axes, arm) @ chain.gravity
    return tau.reshape(N_DOF)


def max_reach(chain: KinematicChain, finger: int) -> float:
    return float(np.sum(chain.link_lengths(finger)))


def finger_fk_batch(chain: KinematicChain, finger: int, qs: np.ndarray):
    """Tips (n, 3) and Jacobians (n, 3, 3) of one finger for n joint triples."""
    p = {k: v[finger] for k, v in chain._packed.items() if k in _FK_KEYS}
    tips, jp, ja, _, _ = _chain_fk(p, qs)
    jac = np.swapaxes(_cross(ja, tips[..., None, :] - jp), -1, -2)
    return tips, jac


@functools.lru_cache(maxsize=64)
def _reach_samples(chain: KinematicChain, finger: int):
    rng = np.random.default_rng(REACH_SEED)
    sl = slice(finger * N_JOINTS, (finger + 1) * N_JOINTS)
    lo, hi = chain.limit_lo[sl], chain.limit_hi[sl]
    qs = lo + (hi - lo) * rng.random((REACH_SAMPLES, N_JOINTS))
    tips, _ = finger_fk_batch(chain, finger, qs)
    return qs, tips


def solve_finger_ik(chain: KinematicChain, finger: int, point, seeds: int = 8,
                    iters: int = 100, lam: float = 1e-4):
    """Joint-limit-respecting position IK for one finger.

    Starts from the ``seeds`` nearest of a fixed seeded sample set and runs
    projected damped Gauss-Newton.  Returns ``(q, residual)`` for the best seed.
    """
    point = np.asarray(point, dtype=float)
    sl = slice(finger * N_JOINTS, (finger + 1) * N_JOINTS)
    lo, hi = chain.limit_lo[sl], chain.limit_hi[sl]
    qs, tips = _reach_samples(chain, finger)
    d = np.linalg.norm(tips - point, axis=1)
    idx = np.argsort(d, kind="stable")[:seeds]
    q = qs[idx].copy()
    for _ in range(iters):
        tip, J = finger_fk_batch(chain, finger, q)
        err = point - tip
        if np.min(np.linalg.norm(err, axis=1)) < REACH_TOL * 1e-2:
            break
        q = np.clip(q + damped_ik(J, err, lam), lo, hi)
    tip, _ = finger_fk_batch(chain, finger, q)
    res = np.linalg.norm(point - tip, axis=1)
    best = int(np.argmin(res))
    return q[best], float(res[best])


def reachable(chain: KinematicChain, finger: int, point) -> bool:
    """Whether ``point`` lies in the joint-limit-feasible workspace of ``finger``."""
    point = np.asarray(point, dtype=float)
    if np.linalg.norm(point - chain.base_positions[finger]) > max_reach(chain, finger):
        return False
    _, res = solve_finger_ik(chain, finger, point)
    return res <= REACH_TOL
