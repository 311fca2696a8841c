"""Reward, episode logs and batch statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import GoalTrajectory

DEFAULT_RANGE_XY = 0.39
DEFAULT_RANGE_Z = 0.27
GOAL_DISC_FRACTION = 0.8


@dataclass(frozen=True)
class RewardRanges:
    range_xy: float = DEFAULT_RANGE_XY
    range_z: float = DEFAULT_RANGE_Z

    def __post_init__(self):
        if self.range_xy <= 0 or self.range_z <= 0:
            raise ValueError("reward ranges must be > 0")


def reward(cube_pos, goal, ranges: RewardRanges = RewardRanges()) -> float:
    """Negative range-scaled distance: horizontal Euclidean plus absolute vertical."""
    dx = cube_pos[0] - goal[0]
    dy = cube_pos[1] - goal[1]
    dz = cube_pos[2] - goal[2]
    return -(math.hypot(dx, dy) / ranges.range_xy) - (abs(dz) / ranges.range_z)


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    median: float
    stddev: float
    drops: int
    episodes: int


def summarize(cumulative_rewards, drops: int = 0) -> SummaryStats:
    """Mean, median and population standard deviation (divisor n)."""
    x = np.asarray(list(cumulative_rewards), dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty list of rewards")
    return SummaryStats(float(np.mean(x)), float(np.median(x)), float(np.std(x)), int(drops), int(x.size))


def generate_goal_trajectory(seed: int, goal_count: int, dwell_s: float,
                             arena_radius: float = 0.195,
                             z_range: tuple[float, float] = (0.0325, 0.12)) -> GoalTrajectory:
    """Seeded goals uniform on the disc of radius 0.8 * arena_radius and uniform in z."""
    if goal_count < 1:
        raise ValueError(f"goal_count must be >= 1, got {goal_count}")
    if dwell_s <= 0:
        raise ValueError("dwell_s must be > 0")
    rng = np.random.default_rng(seed)
    r = GOAL_DISC_FRACTION * arena_radius * np.sqrt(rng.random(goal_count))
    theta = 2 * np.pi * rng.random(goal_count)
    z = rng.uniform(z_range[0], z_range[1], goal_count)
    goals = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    return GoalTrajectory(tuple(k * dwell_s for k in range(goal_count)), goals)


@dataclass
class StepRecord:
    step_index: int
    t: float
    phase: str
    cube_position: list
    active_goal: list
    active_subgoal: list | None
    reward: float
    error_norms: list
    slip_residual_max: float
    attached: bool
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "type": "step",
            "step": self.step_index,
            "t": self.t,
            "phase": self.phase,
            "cube": self.cube_position,
            "goal": self.active_goal,
            "subgoal": self.active_subgoal,
            "reward": self.reward,
            "err": self.error_norms,
            "slip": self.slip_residual_max,
            "attached": self.attached,
            "events": self.events,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(d["step"], d["t"], d["phase"], d["cube"], d["goal"], d["subgoal"], d["reward"],
                   d["err"], d["slip"], d["attached"], d["events"])


@dataclass
class EpisodeLog:
    header: dict
    records: list[StepRecord] = field(default_factory=list)

    @property
    def seed(self):
        return self.header.get("seed")

    def drop_count(self) -> int:
        return sum(1 for r in self.records for e in r.events if e["kind"] == "CubeDropped")

    def phase_sequence(self) -> list[str]:
        seq: list[str] = []
        for r in self.records:
            if not seq or seq[-1] != r.phase:
                seq.append(r.phase)
        return seq

    def dumps(self) -> str:
        lines = [_dump({"type": "header", **self.header})]
        lines.extend(_dump(r.to_dict()) for r in self.records)
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        header, records = None, []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"log line {lineno}: {exc.msg}") from exc
            kind = d.pop("type", None)
            if kind == "header":
                header = d
            elif kind == "step":
                records.append(StepRecord.from_dict(d))
            else:
                raise ValueError(f"log line {lineno}: unknown record type {kind!r}")
        if header is None:
            raise ValueError("log has no header record")
        return cls(header, records)

    @classmethod
    def read(cls, path) -> "EpisodeLog":
        return cls.loads(Path(path).read_text())


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def cumulative_reward(log: EpisodeLog) -> float:
    return float(math.fsum(r.reward for r in log.records))
