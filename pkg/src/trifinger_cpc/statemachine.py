"""Episode orchestration: approach, grasp, interpolated goal pursuit, hold, recovery.

Transition table (first matching rule wins)::

    any phase, episode over            -> Done
    Done                               -> Done
    MoveToGoal | Hold, CubeDropped     -> Recover
    Recover                            -> MoveToPregrasp
    MoveToPregrasp, at pregrasp        -> CloseGrasp
    CloseGrasp, GraspAcquired          -> MoveToGoal
    MoveToGoal, GoalSwitched           -> MoveToGoal   (runner replans)
    MoveToGoal, goal reached           -> Hold
    Hold, GoalSwitched                 -> MoveToGoal
    otherwise                          -> unchanged
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from .control import ControllerGains, PidState, cpc_command
from .evaluation import (EpisodeLog, RewardRanges, StepRecord, generate_goal_trajectory,
                         reward)
from .grasp import (DEFAULT_STANDOFF, CubeGeom, GraspKind, GraspSpec, grasp_feasible,
                    plan_grasp, pregrasp_targets, reachable_standoffs)
from .simworld import (CUBE_DROPPED, GOAL_SWITCHED, GRASP_ACQUIRED, SUBGOAL_REACHED,
                       SimEvent, SimParams, WorldState, initial_world, sim_step, try_attach)
from .trajectory import (DEFAULT_INTERP_N, DEFAULT_SUBGOAL_TIMEOUT, DEFAULT_SUBGOAL_TOL,
                         GoalTrajectory, WaypointPlan, advance, make_plan)


class Phase(str, enum.Enum):
    MOVE_TO_PREGRASP = "MoveToPregrasp"
    CLOSE_GRASP = "CloseGrasp"
    MOVE_TO_GOAL = "MoveToGoal"
    HOLD = "Hold"
    RECOVER = "Recover"
    DONE = "Done"


GRASPED_PHASES = frozenset({Phase.MOVE_TO_GOAL, Phase.HOLD})

# the episode end may cut the final approach short, hence the optional trailing MoveToPregrasp
PHASE_PATTERN = re.compile(
    r"(MoveToPregrasp CloseGrasp (MoveToGoal (Hold )?)*(Recover )?)*(MoveToPregrasp )?Done"
)


@dataclass(frozen=True)
class Signals:
    """World conditions the transition table reads besides events."""

    at_pregrasp: bool = False
    goal_reached: bool = False
    episode_over: bool = False


def transition(phase: Phase, events, signals: Signals) -> Phase:
    """Next phase given this step's event kinds and signals. Total over all inputs."""
    kinds = {e.kind if isinstance(e, SimEvent) else e for e in events}
    if signals.episode_over or phase is Phase.DONE:
        return Phase.DONE
    if phase in GRASPED_PHASES and CUBE_DROPPED in kinds:
        return Phase.RECOVER
    if phase is Phase.RECOVER:
        return Phase.MOVE_TO_PREGRASP
    if phase is Phase.MOVE_TO_PREGRASP:
        return Phase.CLOSE_GRASP if signals.at_pregrasp else phase
    if phase is Phase.CLOSE_GRASP:
        return Phase.MOVE_TO_GOAL if GRASP_ACQUIRED in kinds else phase
    if phase is Phase.MOVE_TO_GOAL:
        if GOAL_SWITCHED in kinds:
            return phase
        return Phase.HOLD if signals.goal_reached else phase
    if phase is Phase.HOLD:
        return Phase.MOVE_TO_GOAL if GOAL_SWITCHED in kinds else phase
    raise AssertionError(f"unhandled phase {phase!r}")


def phase_string(phases) -> str:
    """Collapse consecutive repeats and join with spaces."""
    out: list[str] = []
    for p in phases:
        p = Phase(p).value
        if not out or out[-1] != p:
            out.append(p)
    return " ".join(out)


def phase_sequence_valid(phases) -> bool:
    return PHASE_PATTERN.fullmatch(phase_string(phases)) is not None


def fingertip_targets_for(phase: Phase, tips: np.ndarray, spec: GraspSpec | None,
                          plan: WaypointPlan | None, cube: CubeGeom,
                          standoff=DEFAULT_STANDOFF) -> np.ndarray:
    """Per-finger world targets for the controller in ``phase``."""
    if phase is Phase.MOVE_TO_PREGRASP:
        return spec.by_finger(pregrasp_targets(spec, cube, standoff))
    if phase is Phase.CLOSE_GRASP:
        return spec.by_finger(spec.world_contacts(cube))
    if phase in GRASPED_PHASES:
        at_subgoal = CubeGeom(plan.active_subgoal, cube.yaw, cube.half_extent)
        return spec.by_finger(spec.world_contacts(at_subgoal))
    return np.array(tips, copy=True)


DEFAULT_INITIAL_Q = (0.0, -0.2, -1.85) * kin.N_FINGERS


@dataclass(frozen=True, eq=False)
class EpisodeConfig:
    chain: kin.KinematicChain
    grasp: GraspKind = GraspKind.TRIANGLE
    interp_n: int = DEFAULT_INTERP_N
    gains: ControllerGains = field(default_factory=ControllerGains)
    sim: SimParams = field(default_factory=SimParams)
    duration: float = 120.0
    seed: int = 0
    trajectory: GoalTrajectory | None = None
    goal_count: int | None = None
    dwell_s: float = 10.0
    goal_z_range: tuple[float, float] = (0.0325, 0.12)
    initial_q: tuple = DEFAULT_INITIAL_Q
    cube_start: tuple | None = None
    cube_start_yaw: float | None = None
    cube_start_radius_fraction: float = 0.3
    standoff: float = DEFAULT_STANDOFF
    subgoal_tol: float = DEFAULT_SUBGOAL_TOL
    subgoal_timeout: int = DEFAULT_SUBGOAL_TIMEOUT
    perimeter_fallback: str | None = None
    reward_ranges: RewardRanges = field(default_factory=RewardRanges)
    thumb_axis: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "grasp", GraspKind(self.grasp))
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.interp_n < 1:
            raise ValueError("interp_n must be >= 1")
        if self.perimeter_fallback not in (None, "triangle"):
            raise ValueError("perimeter_fallback must be None or 'triangle'")

    def goal_trajectory(self) -> GoalTrajectory:
        if self.trajectory is not None:
            return self.trajectory
        count = self.goal_count or max(1, int(np.ceil(self.duration / self.dwell_s)))
        return generate_goal_trajectory(self.seed, count, self.dwell_s,
                                        self.sim.arena_radius, self.goal_z_range)

    def cube_start_pose(self) -> tuple[np.ndarray, float]:
        rng = np.random.default_rng([self.seed, 7])
        r = self.cube_start_radius_fraction * self.sim.arena_radius * np.sqrt(rng.random())
        theta = 2 * np.pi * rng.random()
        yaw = float(rng.uniform(-np.pi / 4, np.pi / 4))
        if self.cube_start is not None:
            pos = np.array(self.cube_start, dtype=float)
        else:
            pos = np.array([r * np.cos(theta), r * np.sin(theta), self.sim.rest_z])
        if self.cube_start_yaw is not None:
            yaw = float(self.cube_start_yaw)
        return pos, yaw

    def describe(self) -> dict:
        """JSON-ready summary used as the log header; chain is identified by hash."""
        traj = self.goal_trajectory()
        g = self.gains
        return {
            "grasp": self.grasp.value,
            "interp_n": self.interp_n,
            "gains": {"kp": g.kp.tolist(), "ki": g.ki.tolist(), "kd": g.kd.tolist(),
                      "integral_clamp": g.integral_clamp, "lambda": g.lam,
                      "max_cart_speed": g.max_cart_speed},
            "sim": {k: getattr(self.sim, k) for k in self.sim.__dataclass_fields__},
            "duration": self.duration,
            "seed": self.seed,
            "trajectory": traj.to_records(),
            "initial_q": list(self.initial_q),
            "cube_start": self.cube_start_pose()[0].tolist(),
            "cube_start_yaw": self.cube_start_pose()[1],
            "standoff": self.standoff,
            "subgoal_tol": self.subgoal_tol,
            "subgoal_timeout": self.subgoal_timeout,
            "perimeter_fallback": self.perimeter_fallback,
            "reward_ranges": [self.reward_ranges.range_xy, self.reward_ranges.range_z],
            "thumb_axis": self.thumb_axis,
            "chain_hash": chain_hash(self.chain),
        }


def chain_hash(chain: kin.KinematicChain) -> str:
    pk = chain._packed
    h = hashlib.sha256()
    for key in sorted(pk):
        h.update(key.encode())
        h.update(np.ascontiguousarray(pk[key]).tobytes())
    h.update(chain.gravity.tobytes())
    return h.hexdigest()[:16]


def config_hash(description: dict) -> str:
    blob = json.dumps(description, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plan_episode_grasp(config: EpisodeConfig, cube: CubeGeom, q) -> tuple[GraspSpec, np.ndarray]:
    """Grasp for ``cube`` plus the per-contact pregrasp standoffs the fingers can reach."""
    spec = plan_grasp(config.grasp, cube, config.chain, q, config.thumb_axis)
    if config.perimeter_fallback == "triangle" and spec.kind is GraspKind.CHUCK:
        if not grasp_feasible(spec, cube, config.chain)[0]:
            spec = plan_grasp(GraspKind.TRIANGLE, cube, config.chain, q)
    return spec, reachable_standoffs(spec, cube, config.chain, config.standoff)


@dataclass
class EpisodeRun:
    """Mutable loop state of one episode; exposed for stepping in tests."""

    config: EpisodeConfig
    world: WorldState
    trajectory: GoalTrajectory
    phase: Phase = Phase.MOVE_TO_PREGRASP
    spec: GraspSpec | None = None
    standoffs: np.ndarray | None = None
    plan: WaypointPlan | None = None
    pid: PidState = field(default_factory=lambda: PidState.fresh((kin.N_FINGERS, 3)))
    goal_index: int = 0
    pending: list = field(default_factory=list)
    max_jump: float = 0.0

    @classmethod
    def start(cls, config: EpisodeConfig) -> "EpisodeRun":
        traj = config.goal_trajectory()
        pos, yaw = config.cube_start_pose()
        world = initial_world(config.chain, config.initial_q, pos, yaw)
        run = cls(config, world, traj)
        run.spec, run.standoffs = _plan_episode_grasp(config, run.cube(), world.q)
        return run

    def cube(self) -> CubeGeom:
        return self.world.cube(self.config.sim.cube_half_extent)

    def landed_cube(self) -> CubeGeom:
        p = self.world.cube_pos
        return CubeGeom(np.array([p[0], p[1], self.config.sim.rest_z]), self.world.cube_yaw,
                        self.config.sim.cube_half_extent)

    def step(self, n_steps: int) -> StepRecord:
        """Run one control step (or the final Done step) and return its record."""
        cfg, chain, sim = self.config, self.config.chain, self.config.sim
        world = self.world
        k = world.step_index
        # sim events from the previous step drive this transition but were logged already
        carried = len(self.pending)
        events: list[SimEvent] = list(self.pending)
        self.pending = []

        gi = self.trajectory.active_index(world.t)
        if gi != self.goal_index:
            self.goal_index = gi
            events.append(SimEvent(GOAL_SWITCHED, k))
        goal = self.trajectory.goals[gi]
        kinds = {e.kind for e in events}

        frames = world.frames if world.frames is not None else kin.forward_kinematics(chain, world.q)
        tips = frames.fingertips
        cube = self.cube()

        if self.phase is Phase.MOVE_TO_GOAL and GOAL_SWITCHED in kinds:
            self.plan = make_plan(world.cube_pos, goal, cfg.interp_n)
        if self.phase is Phase.MOVE_TO_GOAL and self.plan is not None and world.attached:
            self.plan, moved = advance(self.plan, world.cube_pos, cfg.subgoal_tol, cfg.subgoal_timeout)
            if moved:
                events.append(SimEvent(SUBGOAL_REACHED, k))

        at_pregrasp = False
        if self.phase is Phase.MOVE_TO_PREGRASP:
            pre = self.spec.by_finger(pregrasp_targets(self.spec, cube, self.standoffs))
            at_pregrasp = bool(np.all(kin.row_norms(tips - pre) <= 2 * sim.eps_contact))
        goal_reached = (self.plan is not None and self.plan.exhausted
                        and np.linalg.norm(world.cube_pos - goal) <= cfg.subgoal_tol)
        signals = Signals(at_pregrasp, bool(goal_reached), k >= n_steps)

        prev = self.phase
        phase = transition(prev, events, signals)
        if phase is not prev:
            if phase is Phase.MOVE_TO_PREGRASP:
                cube = self.landed_cube()
                self.spec, self.standoffs = _plan_episode_grasp(cfg, cube, world.q)
                self.plan = None
            elif phase is Phase.MOVE_TO_GOAL:
                self.plan = make_plan(world.cube_pos, goal, cfg.interp_n)
            elif phase is Phase.RECOVER:
                self.plan = None
            # anti-windup: approach errors must not bias the next phase
            self.pid = replace(self.pid, integral=np.zeros_like(self.pid.integral))
        self.phase = phase
        if phase is Phase.MOVE_TO_PREGRASP:
            cube = self.landed_cube()

        errs = [0.0, 0.0, 0.0]
        if phase is not Phase.DONE:
            targets = fingertip_targets_for(phase, tips, self.spec, self.plan, cube, self.standoffs)
            cmd, self.pid, diag = cpc_command(chain, world.q, targets, self.pid, cfg.gains, sim.dt, frames)
            world, sim_events = sim_step(chain, world, cmd, sim)
            if phase is Phase.CLOSE_GRASP:
                world, ev = try_attach(chain, world, self.spec, sim)
                if ev is not None:
                    sim_events.append(ev)
            self.pending = sim_events
            self.world = world
            errs = diag.error_norm.tolist()
            if phase in GRASPED_PHASES and prev in GRASPED_PHASES | {Phase.CLOSE_GRASP}:
                self.max_jump = max(self.max_jump, float(np.max(diag.error_jump)))
            record_events = events[carried:] + sim_events
        else:
            record_events = events[carried:]

        subgoal = self.plan.active_subgoal.tolist() if (self.plan is not None and phase in GRASPED_PHASES) else None
        return StepRecord(
            step_index=k,
            t=k * sim.dt,
            phase=phase.value,
            cube_position=world.cube_pos.tolist(),
            active_goal=goal.tolist(),
            active_subgoal=subgoal,
            reward=reward(world.cube_pos, goal, cfg.reward_ranges),
            error_norms=errs,
            slip_residual_max=world.last_residual,
            attached=world.attached,
            events=[e.to_dict() for e in record_events],
        )


def n_control_steps(config: EpisodeConfig) -> int:
    return int(round(config.duration / config.sim.dt))


def run_episode(config: EpisodeConfig) -> EpisodeLog:
    """Simulate one episode and return its full step log (deterministic per config)."""
    desc = config.describe()
    log = EpisodeLog({"seed": config.seed, "config_hash": config_hash(desc), "config": desc})
    run = EpisodeRun.start(config)
    n = n_control_steps(config)
    while True:
        rec = run.step(n)
        log.records.append(rec)
        if run.phase is Phase.DONE:
            break
    log.header["max_error_jump"] = run.max_jump
    return log


def perimeter_recovery_trial(config: EpisodeConfig, seed: int, radius_fraction: float = 0.9,
                             budget_s: float = 4.0) -> bool:
    """Regrasp a cube lying at the arena perimeter, as after a drop there.

    The cube rests at ``radius_fraction * arena_radius`` on a seeded bearing
    with a seeded yaw, and the episode starts in the approach phase exactly as
    recovery does.  Success means the grasp is acquired within ``budget_s``.
    """
    rng = np.random.default_rng([seed, 11])
    bearing = 2 * np.pi * rng.random()
    yaw = float(rng.uniform(-np.pi / 4, np.pi / 4))
    r = radius_fraction * config.sim.arena_radius
    pos = (r * np.cos(bearing), r * np.sin(bearing), config.sim.rest_z)
    trial = replace(config, cube_start=pos, cube_start_yaw=yaw, duration=budget_s, seed=seed,
                    trajectory=GoalTrajectory((0.0,), [(0.0, 0.0, 0.07)]))
    log = run_episode(trial)
    return any(e["kind"] == GRASP_ACQUIRED for r in log.records for e in r.events)
