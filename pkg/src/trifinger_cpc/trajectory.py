"""Goal sequences and linear subgoal interpolation."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

DEFAULT_SUBGOAL_TOL = 0.015
DEFAULT_SUBGOAL_TIMEOUT = 150
DEFAULT_INTERP_N = 20


@dataclass(frozen=True)
class GoalTrajectory:
    """Ordered ``(t_activate, goal)`` pairs; the first activates at t = 0."""

    times: tuple[float, ...]
    goals: np.ndarray  # (k, 3)

    def __post_init__(self):
        goals = np.asarray(self.goals, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if len(self.times) == 0 or len(self.times) != len(goals):
            raise ValueError("trajectory needs one activation time per goal and at least one goal")
        if self.times[0] != 0.0:
            raise ValueError(f"first goal must activate at t = 0, got {self.times[0]}")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("activation times must be strictly increasing")
        if not np.all(np.isfinite(goals)):
            raise ValueError("goals must be finite")

    def __len__(self):
        return len(self.times)

    def active_index(self, t: float) -> int:
        """Index of the entry with the largest activation time <= t."""
        return int(np.searchsorted(self.times, t, side="right") - 1)

    def active_goal(self, t: float) -> np.ndarray:
        return self.goals[self.active_index(t)]

    def check_bounds(self, arena_radius: float, floor_z: float) -> None:
        r = np.linalg.norm(self.goals[:, :2], axis=1)
        if np.any(r > arena_radius) or np.any(self.goals[:, 2] < floor_z):
            raise ValueError("trajectory goal outside the arena cylinder or below the floor")

    def to_records(self) -> list[dict]:
        return [{"t_activate": t, "goal": g.tolist()} for t, g in zip(self.times, self.goals)]

    @classmethod
    def from_records(cls, records) -> "GoalTrajectory":
        try:
            return cls(tuple(r["t_activate"] for r in records), np.array([r["goal"] for r in records], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed trajectory entry: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "GoalTrajectory":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, list):
            raise ValueError(f"{path}: expected a JSON array of {{t_activate, goal}} entries")
        return cls.from_records(data)


@dataclass(frozen=True)
class WaypointPlan:
    subgoals: np.ndarray      # (n, 3); last row is the source goal
    source_goal: np.ndarray
    cursor: int = 0
    steps_on_subgoal: int = 0

    @property
    def n(self) -> int:
        return len(self.subgoals)

    @property
    def exhausted(self) -> bool:
        return self.cursor >= self.n

    @property
    def active_subgoal(self) -> np.ndarray:
        return self.subgoals[min(self.cursor, self.n - 1)]


def interpolate_linear(start, end, n: int) -> np.ndarray:
    """``n`` equidistant points from ``start`` (excluded) to ``end`` (included)."""
    if n < 1:
        raise ValueError(f"interpolation count must be >= 1, got {n}")
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    frac = np.arange(1, n + 1, dtype=float) / n
    pts = start + frac[:, None] * (end - start)
    # start + 1.0 * (end - start) can miss end by an ulp
    pts[-1] = end
    return pts


def make_plan(cube_pos, goal, n: int) -> WaypointPlan:
    goal = np.asarray(goal, dtype=float)
    return WaypointPlan(interpolate_linear(cube_pos, goal, n), goal.copy())


def advance(plan: WaypointPlan, cube_pos, tol: float = DEFAULT_SUBGOAL_TOL,
            timeout_steps: int = DEFAULT_SUBGOAL_TIMEOUT) -> tuple[WaypointPlan, bool]:
    """Count one control step against the current subgoal and move the cursor on.

    The cursor moves when the cube is within ``tol`` of the current subgoal or
    after ``timeout_steps`` steps spent on it.  Returns the new plan and
    whether the cursor moved.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if plan.exhausted:
        return plan, False
    steps = plan.steps_on_subgoal + 1
    close = np.linalg.norm(np.asarray(cube_pos) - plan.subgoals[plan.cursor]) <= tol
    if close or steps >= timeout_steps:
        return replace(plan, cursor=plan.cursor + 1, steps_on_subgoal=0), True
    return replace(plan, steps_on_subgoal=steps), False


# large switches across the arena so that un-interpolated goal changes load the grasp
CANONICAL_GOALS = ((0.0, 0.0, 0.1), (0.13, 0.0, 0.04), (-0.13, 0.0, 0.04), (0.0, 0.12, 0.1))
CANONICAL_DWELL_S = 5.0
# episodes on the canonical trajectories start with the cube here, yaw 0
CANONICAL_CUBE_START = (0.0, 0.0, 0.0325)


def canonical_trajectory(goal_count: int = 4, dwell_s: float = CANONICAL_DWELL_S) -> GoalTrajectory:
    """The first ``goal_count`` canonical goals, switching every ``dwell_s`` seconds."""
    if not 1 <= goal_count <= len(CANONICAL_GOALS):
        raise ValueError(f"goal_count must be in 1..{len(CANONICAL_GOALS)}")
    return GoalTrajectory(tuple(k * dwell_s for k in range(goal_count)), CANONICAL_GOALS[:goal_count])


def canonical_two_goal_trajectory() -> GoalTrajectory:
    """One goal switch at ``CANONICAL_DWELL_S`` from a lift to a far low goal."""
    return canonical_trajectory(2)
