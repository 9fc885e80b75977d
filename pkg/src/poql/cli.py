"""Command-line front end: run, persist, and compare experiments.

Subcommands:
  train <config.json>          run one experiment, write artifacts
  eval <checkpoint-dir>        evaluate a saved agent
  export-dot <checkpoint-dir>  re-emit the learned model as DOT
  compare <run-dirs...>        summarize finished runs as a table and CSV
  sweep <config-glob...>       run many configs as separate processes

The POQL_OUTPUT_ROOT environment variable prefixes relative output dirs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import subprocess
import sys
import time
from pathlib import Path

from .agent import AgentConfig, RandomAgent, baseline_obs_q, evaluate, train
from .checkpoint import config_hash, load_checkpoint, model_from_dict, save_checkpoint
from .envs import ENVIRONMENT_NAMES, make_environment
from .models import dlmdp_to_dot

SCHEMA_VERSION = 1
AGENT_KINDS = ("poql", "obs_baseline", "random")
RUN_RECORD_COLUMNS = (
    "episode",
    "goal_rate",
    "mean_steps",
    "mean_return",
    "model_state_count",
    "q_rows",
    "config_hash",
)


class ConfigError(ValueError):
    pass


def load_experiment_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_experiment_config(raw)


def validate_experiment_config(raw: dict) -> dict:
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}"
        )
    required = {"schema_version", "seed", "agent", "environment", "output_dir"}
    missing = required - raw.keys()
    if missing:
        raise ConfigError(f"config missing keys: {sorted(missing)}")
    if raw["agent"] not in AGENT_KINDS:
        raise ConfigError(f"agent must be one of {AGENT_KINDS}, got {raw['agent']!r}")
    env = raw["environment"]
    if not isinstance(env, dict) or "name" not in env:
        raise ConfigError("environment must be an object with a 'name'")
    if env["name"] not in ENVIRONMENT_NAMES:
        raise ConfigError(
            f"unknown environment {env['name']!r}; expected one of {ENVIRONMENT_NAMES}"
        )
    try:
        make_environment(env["name"], seed=0,
                         **{k: v for k, v in env.items() if k != "name"})
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid environment parameters: {exc}") from exc
    if not isinstance(raw["seed"], int):
        raise ConfigError("seed must be an explicit integer")
    known_fields = {f.name for f in dataclasses.fields(AgentConfig)}
    unknown = set(raw.get("agent_config", {})) - known_fields
    if unknown:
        raise ConfigError(f"unknown agent_config fields: {sorted(unknown)}")
    try:
        AgentConfig(**raw.get("agent_config", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid agent_config: {exc}") from exc
    return raw


def resolve_output_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    if not out.is_absolute():
        root = os.environ.get("POQL_OUTPUT_ROOT", "")
        if root:
            out = Path(root) / out
    return out


def _write_run_record(path: Path, rows: list[dict], digest: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RUN_RECORD_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["config_hash"] = digest
            if out.get("mean_steps") is None:
                out["mean_steps"] = ""
            writer.writerow(out)


def cmd_train(args) -> int:
    try:
        config = load_experiment_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = resolve_output_dir(config)
    if (out / "run.json").exists() and not args.force:
        print(f"error: {out} already holds a run (use --force)", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(config)

    env = make_environment(config["environment"]["name"], seed=config["seed"],
                           **{k: v for k, v in config["environment"].items() if k != "name"})
    agent_config = AgentConfig(**config.get("agent_config", {}))
    run_meta = {
        "status": "incomplete",
        "environment": config["environment"]["name"],
        "agent": config["agent"],
        "seed": config["seed"],
    }
    (out / "run.json").write_text(json.dumps(run_meta, indent=2, sort_keys=True))

    started = time.perf_counter()
    log = print if not args.quiet else None
    if config["agent"] == "poql":
        agent = train(env, agent_config, seed=config["seed"], log=log)
    elif config["agent"] == "obs_baseline":
        agent = baseline_obs_q(env, agent_config, seed=config["seed"], log=log)
    else:
        agent = RandomAgent(env.actions, gamma=agent_config.gamma)
        stats = evaluate(agent, env, agent_config.eval_episodes, f"{config['seed']}|eval")
        agent.eval_rows = [{
            "episode": 0,
            "goal_rate": stats.goal_rate,
            "mean_steps": stats.mean_steps,
            "mean_return": stats.mean_return,
            "model_state_count": 0,
            "q_rows": 0,
        }]
        agent.stop_episode = 0
        agent.history = []
    wall_time = time.perf_counter() - started

    if config["agent"] != "random":
        save_checkpoint(out, agent, config)
    _write_run_record(out / "run_record.csv", agent.eval_rows, digest)
    final = agent.eval_rows[-1] if agent.eval_rows else {}
    run_meta.update(
        status="complete",
        config_hash=digest,
        stop_episode=agent.stop_episode,
        wall_time_s=wall_time,
        final={
            "goal_rate": final.get("goal_rate"),
            "mean_steps": final.get("mean_steps"),
            "mean_return": final.get("mean_return"),
        },
    )
    (out / "run.json").write_text(json.dumps(run_meta, indent=2, sort_keys=True))
    if not args.quiet:
        print(f"run complete: {out} (wall time {wall_time:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    try:
        agent, config = load_checkpoint(args.checkpoint)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    env_cfg = config["environment"]
    env = make_environment(env_cfg["name"], seed=args.seed,
                           **{k: v for k, v in env_cfg.items() if k != "name"})
    stats = evaluate(agent, env, args.episodes, args.seed)
    print(json.dumps({
        "environment": env_cfg["name"],
        "agent": config["agent"],
        "episodes": args.episodes,
        "goal_rate": stats.goal_rate,
        "mean_steps": stats.mean_steps,
        "mean_return": stats.mean_return,
    }, sort_keys=True))
    return 0


def cmd_export_dot(args) -> int:
    model_path = Path(args.checkpoint) / "model.json"
    try:
        data = json.loads(model_path.read_text())
        model = model_from_dict(data)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: cannot load model from {args.checkpoint}: {exc}", file=sys.stderr)
        return 2
    dot = dlmdp_to_dot(model, comment=f"config_hash={data.get('config_hash', '')}")
    if args.out:
        Path(args.out).write_text(dot)
    else:
        sys.stdout.write(dot)
    return 0


def _compare_rows(run_dirs) -> list[dict]:
    rows = []
    for d in run_dirs:
        path = Path(d)
        meta_path = path / "run.json"
        row = {"run": str(d), "environment": "?", "agent": "?",
               "steps_to_goal": "", "episodes_to_stop": "", "status": "incomplete"}
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            row["environment"] = meta.get("environment", "?")
            row["agent"] = meta.get("agent", "?")
            if meta.get("status") == "complete" and (path / "run_record.csv").exists():
                final = meta.get("final", {})
                steps = final.get("mean_steps")
                row["steps_to_goal"] = "x" if steps is None else str(steps)
                row["episodes_to_stop"] = str(meta.get("stop_episode", ""))
                row["status"] = "complete"
        rows.append(row)
    rows.sort(key=lambda r: (r["environment"], r["agent"], r["run"]))
    return rows


def cmd_compare(args) -> int:
    rows = _compare_rows(args.run_dirs)
    columns = ("environment", "agent", "steps_to_goal", "episodes_to_stop", "status", "run")
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) if rows else len(c) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(r[c].ljust(widths[c]) for c in columns))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows({c: r[c] for c in columns} for r in rows)
    return 0


def cmd_sweep(args) -> int:
    configs = sorted(p for pattern in args.patterns for p in glob.glob(pattern))
    if not configs:
        print("error: no configs matched", file=sys.stderr)
        return 2
    failures = 0
    for cfg in configs:
        print(f"== {cfg}")
        proc = subprocess.run([sys.executable, "-m", "poql", "train", cfg])
        if proc.returncode != 0:
            failures += 1
    print(f"sweep finished: {len(configs) - failures}/{len(configs)} runs succeeded")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poql")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one experiment from a JSON config")
    p_train.add_argument("config")
    p_train.add_argument("--force", action="store_true",
                         help="overwrite an existing run directory")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_dot = sub.add_parser("export-dot", help="emit the learned model as DOT")
    p_dot.add_argument("checkpoint")
    p_dot.add_argument("--out")
    p_dot.set_defaults(func=cmd_export_dot)

    p_cmp = sub.add_parser("compare", help="summarize finished runs")
    p_cmp.add_argument("run_dirs", nargs="+")
    p_cmp.add_argument("--csv", help="also write the table as CSV")
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="run every matching config")
    p_sweep.add_argument("patterns", nargs="+")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
