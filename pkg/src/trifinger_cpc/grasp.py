"""Contact planning for the triangle and three-jaw chuck grasps.

Contacts live in the cube frame (origin at the cube center, cube upright, only
yaw matters).  ``finger_assignment[c]`` is the finger that takes contact ``c``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .kinematics import KinematicChain, fingertip_positions, reachable, rot_z

TRIANGLE_BEARINGS_DEG = (90.0, 210.0, 330.0)
CHUCK_AXES = ("+x", "-x", "+y", "-y")
DEFAULT_STANDOFF = 0.04


class GraspKind(str, enum.Enum):
    TRIANGLE = "triangle"
    CHUCK = "chuck"


@dataclass(frozen=True)
class CubeGeom:
    position: np.ndarray
    yaw: float = 0.0
    half_extent: float = 0.0325

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.half_extent <= 0:
            raise ValueError(f"half_extent must be > 0, got {self.half_extent}")

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return self.position + np.asarray(local) @ rot_z(self.yaw).T

    def rotate(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local) @ rot_z(self.yaw).T


@dataclass(frozen=True, eq=False)
class GraspSpec:
    kind: GraspKind
    points: np.ndarray          # (3, 3) cube frame
    normals: np.ndarray         # (3, 3) inward unit normals, cube frame
    finger_assignment: tuple[int, int, int] = (0, 1, 2)

    def __post_init__(self):
        if sorted(self.finger_assignment) != [0, 1, 2]:
            raise ValueError(f"finger_assignment must be a permutation of (0, 1, 2), got {self.finger_assignment}")

    def world_contacts(self, cube: CubeGeom) -> np.ndarray:
        return cube.to_world(self.points)

    def world_normals(self, cube: CubeGeom) -> np.ndarray:
        return cube.rotate(self.normals)

    def by_finger(self, per_contact: np.ndarray) -> np.ndarray:
        """Reorder a per-contact (3, 3) array so row i belongs to finger i."""
        out = np.empty_like(per_contact)
        out[list(self.finger_assignment)] = per_contact
        return out


def _face_contact(direction_xy, half_extent):
    """Intersect a horizontal ray from the cube center with the side faces."""
    dx, dy = direction_xy
    if abs(dx) >= abs(dy):
        sx = 1.0 if dx > 0 else -1.0
        point = np.array([sx * half_extent, half_extent * dy / abs(dx), 0.0])
        normal = np.array([-sx, 0.0, 0.0])
    else:
        sy = 1.0 if dy > 0 else -1.0
        point = np.array([half_extent * dx / abs(dy), sy * half_extent, 0.0])
        normal = np.array([0.0, -sy, 0.0])
    return point, normal


def plan_triangle_grasp(cube: CubeGeom) -> GraspSpec:
    """Contacts where rays at 120-degree bearings leave the cube's side faces."""
    pts, nrm = [], []
    for deg in TRIANGLE_BEARINGS_DEG:
        b = np.deg2rad(deg)
        # snap exact zeros so face-center contacts are exact
        d = np.round((np.cos(b), np.sin(b)), 15)
        p, n = _face_contact(d, cube.half_extent)
        pts.append(p)
        nrm.append(n)
    return GraspSpec(GraspKind.TRIANGLE, np.array(pts), np.array(nrm))


def plan_chuck_grasp(cube: CubeGeom, thumb_axis: str = "+y") -> GraspSpec:
    """Thumb at the center of face ``thumb_axis``; two fingers on the opposite face.

    The opposing contacts sit at +-half_extent/2 along the other horizontal axis.
    ``"x"`` and ``"y"`` are accepted as aliases for ``"+x"`` and ``"+y"``.
    """
    axis = {"x": "+x", "y": "+y"}.get(thumb_axis, thumb_axis)
    if axis not in CHUCK_AXES:
        raise ValueError(f"thumb_axis must be one of {CHUCK_AXES}, got {thumb_axis!r}")
    h = cube.half_extent
    s = 1.0 if axis[0] == "+" else -1.0
    d = h / 2
    if axis[1] == "y":
        pts = [[0.0, s * h, 0.0], [d, -s * h, 0.0], [-d, -s * h, 0.0]]
        nrm = [[0.0, -s, 0.0], [0.0, s, 0.0], [0.0, s, 0.0]]
    else:
        pts = [[s * h, 0.0, 0.0], [-s * h, d, 0.0], [-s * h, -d, 0.0]]
        nrm = [[-s, 0.0, 0.0], [s, 0.0, 0.0], [s, 0.0, 0.0]]
    return GraspSpec(GraspKind.CHUCK, np.array(pts), np.array(nrm))


def default_thumb_axis(cube: CubeGeom, chain: KinematicChain) -> str:
    """Face whose thumb contact lies closest to any finger base."""
    best, best_d = CHUCK_AXES[0], np.inf
    for axis in CHUCK_AXES:
        thumb = plan_chuck_grasp(cube, axis).world_contacts(cube)[0]
        d = np.min(np.linalg.norm(chain.base_positions - thumb, axis=1))
        if d < best_d - 1e-12:
            best, best_d = axis, d
    return best


def assignment_cost(world_contacts: np.ndarray, tips: np.ndarray, perm) -> float:
    return float(sum(np.linalg.norm(tips[f] - world_contacts[c]) for c, f in enumerate(perm)))


def assign_fingers(spec: GraspSpec, cube: CubeGeom, chain: KinematicChain, q) -> GraspSpec:
    """Finger-to-contact permutation minimizing total fingertip travel.

    Ties go to the lexicographically smallest permutation.
    """
    contacts = spec.world_contacts(cube)
    tips = fingertip_positions(chain, q)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(3)):
        cost = assignment_cost(contacts, tips, perm)
        if cost < best_cost - 1e-12:
            best, best_cost = perm, cost
    return replace(spec, finger_assignment=tuple(best))


def plan_grasp(kind: GraspKind | str, cube: CubeGeom, chain: KinematicChain, q,
               thumb_axis: str | None = None) -> GraspSpec:
    """Plan contacts of the requested kind and assign fingers from pose ``q``."""
    kind = GraspKind(kind)
    if kind is GraspKind.TRIANGLE:
        spec = plan_triangle_grasp(cube)
    else:
        spec = plan_chuck_grasp(cube, thumb_axis or default_thumb_axis(cube, chain))
    return assign_fingers(spec, cube, chain, q)


def pregrasp_targets(spec: GraspSpec, cube: CubeGeom, standoff=DEFAULT_STANDOFF) -> np.ndarray:
    """World contact points pushed outward along their face normals (contact order).

    ``standoff`` is a scalar or one value per contact.
    """
    s = np.asarray(standoff, dtype=float)
    if s.ndim:
        s = s[:, None]
    return spec.world_contacts(cube) - s * spec.world_normals(cube)


def reachable_standoffs(spec: GraspSpec, cube: CubeGeom, chain: KinematicChain,
                        standoff: float = DEFAULT_STANDOFF, steps: int = 4) -> np.ndarray:
    """Per-contact standoff, shrunk in ``steps`` equal decrements until the assigned finger reaches it.

    Falls back to 0 (the contact itself) when no positive standoff is reachable.
    """
    out = np.zeros(3)
    contacts, normals = spec.world_contacts(cube), spec.world_normals(cube)
    for c, f in enumerate(spec.finger_assignment):
        for k in range(steps, 0, -1):
            s = standoff * k / steps
            if reachable(chain, f, contacts[c] - s * normals[c]):
                out[c] = s
                break
    return out


def grasp_feasible(spec: GraspSpec, cube: CubeGeom, chain: KinematicChain) -> tuple[bool, list[int]]:
    """Check every assigned finger can reach its contact; returns (ok, unreachable fingers)."""
    contacts = spec.world_contacts(cube)
    bad = [f for c, f in enumerate(spec.finger_assignment) if not reachable(chain, f, contacts[c])]
    return not bad, sorted(bad)
