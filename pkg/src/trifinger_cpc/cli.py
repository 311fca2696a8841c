"""Command-line entry points: ``run``, ``batch`` and ``compare``.

Every episode log is a JSON-lines file under ``--out``.  Batch and compare
results are merged in seed order, so output files do not depend on
``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, episode_config_from_dict, load_config_dict
from .evaluation import EpisodeLog, cumulative_reward, summarize
from .statemachine import run_episode
from .trajectory import GoalTrajectory

SUMMARY_COLUMNS = ["config", "mean", "median", "stddev", "drops"]

# flags that compare accepts twice (first value for config A, last for config B)
PAIRED = ("grasp", "interp_n", "config", "perimeter_fallback", "standoff")


def _set_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trifinger-cpc",
        description="Simulated three-finger cube manipulation with Cartesian position control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, paired: bool) -> None:
        many = {"nargs": "+"} if paired else {}
        p.add_argument("--grasp", choices=["triangle", "chuck"], **many)
        p.add_argument("--interp-n", type=int, **many, help="subgoals per goal segment (1 = no interpolation)")
        p.add_argument("--config", type=Path, **many, help="JSON run config merged over the defaults")
        p.add_argument("--perimeter-fallback", choices=["triangle", "none"], **many,
                       help="switch a chuck grasp to triangle when the chuck is infeasible")
        p.add_argument("--standoff", type=float, **many, help="pregrasp distance from the faces (m)")
        p.add_argument("--seed", type=int, default=0, help="seed (first seed for batch/compare)")
        p.add_argument("--duration", type=float, help="episode length in simulated seconds")
        p.add_argument("--trajectory", type=Path, help="goal trajectory JSON file")
        p.add_argument("--goal-count", type=int, help="auto-generated goals per episode")
        p.add_argument("--dwell", type=float, help="seconds between auto-generated goals")
        p.add_argument("--subgoal-tol", type=float)
        p.add_argument("--subgoal-timeout", type=int)
        p.add_argument("--thumb-axis", choices=["+x", "-x", "+y", "-y", "x", "y"])
        p.add_argument("--set", dest="sets", type=_set_override, action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry, e.g. sim.eps_slip=0.03")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    p_run = sub.add_parser("run", help="run one episode and write its log")
    common(p_run, paired=False)

    p_batch = sub.add_parser("batch", help="run seeded episodes and write logs plus summary.csv")
    common(p_batch, paired=False)
    p_batch.add_argument("--episodes", type=int, default=10)
    p_batch.add_argument("--workers", type=int, default=1)

    p_cmp = sub.add_parser("compare", help="run two configurations on identical seeds")
    common(p_cmp, paired=True)
    p_cmp.add_argument("--episodes", type=int, default=10)
    p_cmp.add_argument("--workers", type=int, default=1)
    return parser


def _variant(args: argparse.Namespace, which: int | None) -> dict:
    """Flag values for one configuration; ``which`` picks A (0) or B (1) in compare."""
    out = {}
    for name in PAIRED:
        v = getattr(args, name)
        if which is not None and v is not None:
            if len(v) > 2:
                raise ConfigError(f"--{name.replace('_', '-')} takes one or two values")
            v = v[min(which, len(v) - 1)]
        out[name] = v
    return out


def _label(cfg) -> str:
    label = f"{cfg.grasp.value}_n{cfg.interp_n}"
    if cfg.perimeter_fallback:
        label += f"_fb{cfg.perimeter_fallback}"
    return label


def _episode_spec(args: argparse.Namespace, variant: dict) -> dict:
    """Picklable description of one configuration, rebuilt inside worker processes."""
    cfg = load_config_dict(variant["config"])
    for path, value in args.sets:
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {'.'.join(path)}: {key} is not a section")
        node[path[-1]] = value
    fallback = variant["perimeter_fallback"]
    overrides = {
        "grasp": variant["grasp"],
        "interp_n": variant["interp_n"],
        "standoff": variant["standoff"],
        "perimeter_fallback": None if fallback in (None, "none") else fallback,
        "duration": args.duration,
        "goal_count": args.goal_count,
        "dwell_s": args.dwell,
        "subgoal_tol": args.subgoal_tol,
        "subgoal_timeout": args.subgoal_timeout,
        "thumb_axis": args.thumb_axis,
    }
    if fallback == "none":
        cfg.setdefault("episode", {})["perimeter_fallback"] = None
    traj = None
    if args.trajectory is not None:
        traj = GoalTrajectory.load(args.trajectory).to_records()
    return {"cfg": cfg, "overrides": overrides, "trajectory": traj}


def _make_config(spec: dict, seed: int):
    traj = spec["trajectory"]
    overrides = dict(spec["overrides"], seed=seed)
    if traj is not None:
        overrides["trajectory"] = GoalTrajectory.from_records(traj)
    return episode_config_from_dict(spec["cfg"], **overrides)


def _log_path(out: Path, label: str, seed: int) -> Path:
    return out / label / f"seed_{seed:04d}.jsonl"


def _run_one(job: tuple) -> tuple[int, float, int]:
    spec, seed, path = job
    log = run_episode(_make_config(spec, seed))
    log.write(path)
    return seed, cumulative_reward(log), log.drop_count()


def _run_seeds(spec: dict, label: str, seeds: list[int], out: Path, workers: int):
    (out / label).mkdir(parents=True, exist_ok=True)
    jobs = [(spec, s, _log_path(out, label, s)) for s in seeds]
    if workers <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    return sorted(results)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_summary(path: Path, rows: list[dict], extra: list[str] = ()) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS + list(extra), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _summary_row(label: str, results) -> dict:
    stats = summarize([r for _, r, _ in results], drops=sum(d for _, _, d in results))
    return {"config": label, "mean": _fmt(stats.mean), "median": _fmt(stats.median),
            "stddev": _fmt(stats.stddev), "drops": stats.drops}


def cmd_run(args) -> int:
    spec = _episode_spec(args, _variant(args, None))
    config = _make_config(spec, args.seed)
    label = _label(config)
    path = _log_path(args.out, label, args.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    log = run_episode(config)
    log.write(path)
    print(f"{path}: reward {cumulative_reward(log):.3f}, drops {log.drop_count()}")
    return 0


def cmd_batch(args) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    spec = _episode_spec(args, _variant(args, None))
    label = _label(_make_config(spec, args.seed))
    seeds = list(range(args.seed, args.seed + args.episodes))
    results = _run_seeds(spec, label, seeds, args.out, args.workers)
    row = _summary_row(label, results)
    _write_summary(args.out / "summary.csv", [row])
    print(f"{label}: mean {float(row['mean']):.3f} median {float(row['median']):.3f} "
          f"stddev {float(row['stddev']):.3f} drops {row['drops']}")
    return 0


def cmd_compare(args) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    specs = [_episode_spec(args, _variant(args, i)) for i in (0, 1)]
    labels = [_label(_make_config(s, args.seed)) for s in specs]
    if labels[0] == labels[1]:
        labels = [labels[0] + "_a", labels[1] + "_b"]
    seeds = list(range(args.seed, args.seed + args.episodes))
    res = [_run_seeds(s, lab, seeds, args.out, args.workers) for s, lab in zip(specs, labels)]

    rows = []
    for i, (lab, results) in enumerate(zip(labels, res)):
        other = res[1 - i]
        wins = sum(1 for (_, r, _), (_, ro, _) in zip(results, other) if r > ro)
        rows.append(dict(_summary_row(lab, results), win_rate=_fmt(wins / len(seeds))))
    _write_summary(args.out / "summary.csv", rows, extra=["win_rate"])

    with (args.out / "paired.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", f"reward_{labels[0]}", f"reward_{labels[1]}",
                    f"drops_{labels[0]}", f"drops_{labels[1]}"])
        for (s, ra, da), (_, rb, db) in zip(*res):
            w.writerow([s, _fmt(ra), _fmt(rb), da, db])
    for row in rows:
        print(f"{row['config']}: mean {float(row['mean']):.3f} drops {row['drops']} "
              f"win rate {float(row['win_rate']):.2f}")
    return 0


COMMANDS = {"run": cmd_run, "batch": cmd_batch, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
