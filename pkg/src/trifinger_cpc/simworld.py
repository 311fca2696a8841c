"""Deterministic fixed-timestep world: velocity-driven fingers and an attach/slip cube.

The cube never rotates.  While attached it follows the mean of the fingertips
(each minus its stored contact offset); a fingertip drifting more than
``eps_slip`` from its offset breaks the grasp.  A free cube falls under
explicit-Euler gravity until it rests on the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from .grasp import CubeGeom, GraspSpec


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.004
    joint_vel_limit: float = 4.0
    eps_contact: float = 0.008
    eps_slip: float = 0.02
    gravity_z: float = -9.81
    arena_radius: float = 0.195
    floor_z: float = 0.0
    cube_half_extent: float = 0.0325
    gravity_comp_enabled: bool = True
    # joint droop velocity per unit gravity torque when compensation is off
    droop_gain: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if not self.eps_slip > self.eps_contact > 0:
            raise ValueError("need eps_slip > eps_contact > 0")
        if self.joint_vel_limit <= 0 or self.arena_radius <= 0 or self.cube_half_extent <= 0:
            raise ValueError("joint_vel_limit, arena_radius and cube_half_extent must be > 0")

    @property
    def rest_z(self) -> float:
        return self.floor_z + self.cube_half_extent


@dataclass(frozen=True)
class Attachment:
    grasp: GraspSpec
    offsets: np.ndarray  # (3, 3) cube-frame offset per finger


@dataclass(frozen=True)
class SimEvent:
    kind: str  # GraspAcquired | CubeDropped | SubgoalReached | GoalSwitched
    step_index: int
    max_residual: float | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "step": self.step_index}
        if self.max_residual is not None:
            d["max_residual"] = self.max_residual
        return d


GRASP_ACQUIRED = "GraspAcquired"
CUBE_DROPPED = "CubeDropped"
SUBGOAL_REACHED = "SubgoalReached"
GOAL_SWITCHED = "GoalSwitched"


@dataclass(frozen=True)
class WorldState:
    q: np.ndarray
    cube_pos: np.ndarray
    cube_yaw: float = 0.0
    dq: np.ndarray = field(default_factory=lambda: np.zeros(kin.N_DOF))
    attachment: Attachment | None = None
    cube_vz: float = 0.0
    t: float = 0.0
    step_index: int = 0
    last_cmd: np.ndarray = field(default_factory=lambda: np.zeros(kin.N_DOF))
    last_residual: float = 0.0
    # FK of q when already computed by sim_step; not part of the state
    frames: kin.LinkFrames | None = field(default=None, compare=False, repr=False)

    @property
    def attached(self) -> bool:
        return self.attachment is not None

    def cube(self, half_extent: float) -> CubeGeom:
        return CubeGeom(self.cube_pos, self.cube_yaw, half_extent)


def initial_world(chain: kin.KinematicChain, q, cube_pos, cube_yaw: float = 0.0) -> WorldState:
    q = np.clip(np.asarray(q, dtype=float), chain.limit_lo, chain.limit_hi)
    return WorldState(q=q, cube_pos=np.asarray(cube_pos, dtype=float), cube_yaw=float(cube_yaw))


def _clamp_cube(pos: np.ndarray, params: SimParams) -> np.ndarray:
    pos = pos.copy()
    r_max = params.arena_radius - params.cube_half_extent
    r = math.hypot(pos[0], pos[1])
    if r > r_max:
        pos[:2] *= r_max / r
    if pos[2] < params.rest_z:
        pos[2] = params.rest_z
    return pos


def slip_residuals(tips: np.ndarray, cube_pos: np.ndarray, world_offsets: np.ndarray) -> np.ndarray:
    return kin.row_norms(tips - (cube_pos + world_offsets))


def sim_step(chain: kin.KinematicChain, world: WorldState, joint_vel_cmd,
             params: SimParams) -> tuple[WorldState, list[SimEvent]]:
    """Advance the world by one ``params.dt``; never mutates ``world``."""
    cmd = np.asarray(joint_vel_cmd, dtype=float)
    if cmd.shape != (kin.N_DOF,) or not np.isfinite(cmd).all():
        raise ValueError("joint velocity command must be a finite 9-vector")
    dt = params.dt
    lim = params.joint_vel_limit
    vel = np.minimum(np.maximum(cmd, -lim), lim)
    if not params.gravity_comp_enabled:
        vel = vel + params.droop_gain * kin.gravity_torques(chain, world.q)
    q = np.minimum(np.maximum(world.q + vel * dt, chain.limit_lo), chain.limit_hi)
    dq = (q - world.q) / dt
    step = world.step_index + 1
    events: list[SimEvent] = []

    cube_pos, vz, attachment, residual = world.cube_pos, world.cube_vz, world.attachment, 0.0
    frames = None
    if attachment is not None:
        frames = kin.forward_kinematics(chain, q)
        tips = frames.fingertips
        off_w = attachment.offsets @ kin.rot_z(world.cube_yaw).T
        cube_pos = _clamp_cube((tips - off_w).sum(axis=0) / kin.N_FINGERS, params)
        res = slip_residuals(tips, cube_pos, off_w)
        residual = float(np.max(res))
        if residual > params.eps_slip:
            attachment = None
            vz = 0.0
            events.append(SimEvent(CUBE_DROPPED, step, residual))
    else:
        if cube_pos[2] > params.rest_z or vz != 0.0:
            vz = vz + params.gravity_z * dt
            z = cube_pos[2] + vz * dt
            if z <= params.rest_z:
                z, vz = params.rest_z, 0.0
            cube_pos = np.array([cube_pos[0], cube_pos[1], z])

    new = WorldState(q=q, cube_pos=cube_pos, cube_yaw=world.cube_yaw, dq=dq, attachment=attachment,
                     cube_vz=vz, t=step * dt, step_index=step, last_cmd=cmd.copy(),
                     last_residual=residual, frames=frames)
    return new, events


def try_attach(chain: kin.KinematicChain, world: WorldState, spec: GraspSpec,
               params: SimParams) -> tuple[WorldState, SimEvent | None]:
    """Attach the cube if every assigned fingertip is within ``eps_contact`` of its contact."""
    if world.attached:
        return world, None
    cube = world.cube(params.cube_half_extent)
    tips = kin.fingertip_positions(chain, world.q)
    contacts = spec.by_finger(spec.world_contacts(cube))
    gaps = np.linalg.norm(tips - contacts, axis=1)
    if np.any(gaps > params.eps_contact):
        return world, None
    att = Attachment(spec, spec.by_finger(spec.points))
    new = replace(world, attachment=att, cube_vz=0.0, last_residual=float(np.max(gaps)))
    return new, SimEvent(GRASP_ACQUIRED, world.step_index)


def observe(chain: kin.KinematicChain, world: WorldState, diagnostics: bool = False) -> dict:
    """Observation dict; the attachment flag is only included with ``diagnostics``."""
    obs = {
        "q": world.q.copy(),
        "dq": world.dq.copy(),
        "last_cmd": world.last_cmd.copy(),
        "cube_position": world.cube_pos.copy(),
        "cube_yaw": world.cube_yaw,
    }
    if diagnostics:
        obs["attached"] = world.attached
        obs["fingertips"] = kin.fingertip_positions(chain, world.q)
    return obs
