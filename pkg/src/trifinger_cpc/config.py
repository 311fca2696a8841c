"""Run configuration files (JSON) for the chain, gains, sim and episode settings.

A user file only needs the keys it overrides; it is deep-merged over the
packaged ``data/default_config.json``.  Finger joint lists may name an entry of
``chain.finger_templates`` instead of spelling the joints out.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .control import ControllerGains
from .evaluation import RewardRanges
from .kinematics import Finger, Joint, KinematicChain
from .simworld import SimParams


class ConfigError(ValueError):
    pass


def default_config_dict() -> dict:
    text = resources.files("trifinger_cpc").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config_dict(path=None) -> dict:
    cfg = default_config_dict()
    if path is None:
        return cfg
    text = Path(path).read_text()
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _merge(cfg, user)


def _field(d: dict, key: str, where: str):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise ConfigError(f"missing field {where}.{key}") from None


def chain_from_dict(d: dict) -> KinematicChain:
    templates = d.get("finger_templates", {})
    fingers = []
    for i, fd in enumerate(_field(d, "fingers", "chain")):
        where = f"chain.fingers[{i}]"
        joints_raw = _field(fd, "joints", where)
        if isinstance(joints_raw, str):
            if joints_raw not in templates:
                raise ConfigError(f"{where}.joints: unknown template {joints_raw!r}")
            joints_raw = templates[joints_raw]
        joints = []
        for j, jd in enumerate(joints_raw):
            jw = f"{where}.joints[{j}]"
            try:
                joints.append(Joint(
                    axis=np.array(_field(jd, "axis", jw), dtype=float),
                    offset=np.array(_field(jd, "offset", jw), dtype=float),
                    limit_lo=float(_field(jd, "limit_lo", jw)),
                    limit_hi=float(_field(jd, "limit_hi", jw)),
                    link_mass=float(jd.get("link_mass", 0.0)),
                    link_com_offset=np.array(jd.get("link_com_offset", [0.0, 0.0, 0.0]), dtype=float),
                ))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{jw}: {exc}") from exc
        if "base_yaw_deg" in fd:
            yaw = np.deg2rad(float(fd["base_yaw_deg"]))
        else:
            yaw = float(_field(fd, "base_yaw", where))
        try:
            fingers.append(Finger(np.array(_field(fd, "base_position", where), dtype=float), yaw, tuple(joints)))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    try:
        return KinematicChain(tuple(fingers), np.array(d.get("gravity", [0.0, 0.0, -9.81]), dtype=float))
    except ValueError as exc:
        raise ConfigError(f"chain: {exc}") from exc


def default_chain() -> KinematicChain:
    return chain_from_dict(default_config_dict()["chain"])


def gains_from_dict(d: dict) -> ControllerGains:
    try:
        return ControllerGains(
            kp=d.get("kp", 6.0), ki=d.get("ki", 0.1), kd=d.get("kd", 0.2),
            integral_clamp=d.get("integral_clamp", 0.05), lam=d.get("lambda", 0.01),
            max_cart_speed=d.get("max_cart_speed", 0.5),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"gains: {exc}") from exc


def sim_from_dict(d: dict) -> SimParams:
    known = SimParams.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"sim: unknown field(s) {sorted(unknown)}")
    try:
        return SimParams(**d)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"sim: {exc}") from exc


def reward_from_dict(d: dict) -> RewardRanges:
    try:
        return RewardRanges(float(d["range_xy"]), float(d["range_z"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"reward: {exc}") from exc


def episode_config_from_dict(cfg: dict, **overrides):
    """Build an :class:`EpisodeConfig`; keyword overrides win over file values."""
    from .statemachine import EpisodeConfig

    ep = dict(cfg.get("episode", {}))
    ep.update({k: v for k, v in overrides.items() if v is not None})
    allowed = set(EpisodeConfig.__dataclass_fields__) - {"chain", "gains", "sim", "reward_ranges"}
    unknown = set(ep) - allowed
    if unknown:
        raise ConfigError(f"episode: unknown field(s) {sorted(unknown)}")
    if "goal_z_range" in ep:
        ep["goal_z_range"] = tuple(ep["goal_z_range"])
    if "initial_q" in cfg and "initial_q" not in ep:
        ep["initial_q"] = tuple(cfg["initial_q"])
    try:
        return EpisodeConfig(
            chain=chain_from_dict(_field(cfg, "chain", "config")),
            gains=gains_from_dict(cfg.get("gains", {})),
            sim=sim_from_dict(cfg.get("sim", {})),
            reward_ranges=reward_from_dict(cfg.get("reward", {"range_xy": 0.39, "range_z": 0.27})),
            **ep,
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"episode: {exc}") from exc
