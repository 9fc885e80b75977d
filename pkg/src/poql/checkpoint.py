"""Checkpoint persistence: learned model, Q-table, config echo, and traces.

A checkpoint directory holds:
  config.json   experiment config echo with its hash
  model.json    exact learned model (integer edge counts), when one exists
  model.dot     rendered model, sorted for byte-stable re-export
  qtable.txt    sorted `obs,state,flag,action,value` records
  traces.txt    full episode history in the trace file format

Everything reloads losslessly; eval runs on reloaded checkpoints match the
original agent.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from pathlib import Path

from .agent import AgentConfig, BaselineAgent, ExtendedState, PoqlAgent, QTable
from .models import (
    DeterministicLabeledMdp,
    dlmdp_to_dot,
    read_trace_file,
    write_trace_file,
)

_FLAG = {True: "T", False: "U"}
_FLAG_BACK = {"T": True, "U": False}


def config_hash(config: dict) -> str:
    """Digest of the result-affecting part of an experiment config.

    The output location does not influence results, so two runs of the same
    experiment share a hash (and, given the same seed, identical artifacts).
    """
    semantic = {k: v for k, v in config.items() if k not in ("output_dir", "actions")}
    canonical = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def model_to_dict(model: DeterministicLabeledMdp) -> dict:
    transitions = []
    for (s, a), dist in sorted(model.trans.items()):
        counts = model.counts.get((s, a)) if model.counts else None
        for succ in sorted(dist):
            entry = {"src": s, "action": a, "dst": succ}
            if counts is not None:
                entry["count"] = counts[succ]
                entry["total"] = sum(counts.values())
            else:
                p = dist[succ]
                if isinstance(p, Fraction):
                    entry["num"] = p.numerator
                    entry["den"] = p.denominator
                else:
                    entry["prob"] = float(p)
            transitions.append(entry)
    return {
        "initial": model.initial,
        "actions": list(model.actions),
        "states": [{"id": s, "label": model.label[s]} for s in sorted(model.states)],
        "transitions": transitions,
    }


def model_from_dict(data: dict) -> DeterministicLabeledMdp:
    states = tuple(entry["id"] for entry in data["states"])
    if not states:
        raise ValueError("model has no states")
    label = {entry["id"]: entry["label"] for entry in data["states"]}
    trans: dict[tuple[int, str], dict[int, Fraction | float]] = {}
    counts: dict[tuple[int, str], dict[int, int]] = {}
    exact = True
    for entry in data["transitions"]:
        key = (entry["src"], entry["action"])
        if "count" in entry:
            counts.setdefault(key, {})[entry["dst"]] = entry["count"]
            trans.setdefault(key, {})[entry["dst"]] = Fraction(
                entry["count"], entry["total"]
            )
        elif "num" in entry:
            exact = False
            trans.setdefault(key, {})[entry["dst"]] = Fraction(
                entry["num"], entry["den"]
            )
        else:
            exact = False
            trans.setdefault(key, {})[entry["dst"]] = entry["prob"]
    return DeterministicLabeledMdp(
        states=states,
        initial=data["initial"],
        actions=tuple(data["actions"]),
        label=label,
        trans=trans,
        counts=counts if exact and counts else None,
    )


def qtable_rows(q: QTable) -> list[str]:
    rows = []
    for state in q.states():
        row = q.row(state)
        if isinstance(state, ExtendedState):
            prefix = (state.obs, str(state.state), _FLAG[state.defined])
        else:
            prefix = (str(state), "-", "-")
        for action, value in zip(q.actions, row):
            rows.append(",".join((*prefix, action, repr(value))))
    return sorted(rows)


def qtable_from_rows(lines: list[str], actions: tuple[str, ...]) -> QTable:
    q = QTable(actions)
    for line in lines:
        obs, state, flag, action, value = line.strip().split(",")
        if state == "-":
            key: object = obs
        else:
            key = ExtendedState(obs, int(state), _FLAG_BACK[flag])
        row = q._rows.setdefault(key, [0.0] * len(actions))
        row[q._index[action]] = float(value)
    return q


def save_checkpoint(path, agent, exp_config: dict) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(exp_config)
    # The action tuple rides along for reload; it is derived state, so it
    # stays outside the hash.
    exp_config = {**exp_config, "actions": list(agent.actions)}
    (out / "config.json").write_text(
        json.dumps({"config_hash": digest, **exp_config}, indent=2, sort_keys=True)
    )
    if agent.model is not None:
        (out / "model.json").write_text(
            json.dumps(
                {"config_hash": digest, **model_to_dict(agent.model)},
                indent=2,
                sort_keys=True,
            )
        )
        (out / "model.dot").write_text(
            dlmdp_to_dot(agent.model, comment=f"config_hash={digest}")
        )
    header = f"# config_hash={digest}\n"
    (out / "qtable.txt").write_text(header + "\n".join(qtable_rows(agent.q)) + "\n")
    write_trace_file(agent.history, out / "traces.txt")


def load_checkpoint(path):
    """Reload (agent, exp_config) from a checkpoint directory."""
    out = Path(path)
    try:
        exp_config = json.loads((out / "config.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt or missing checkpoint config: {exc}") from exc
    agent_config = AgentConfig(**exp_config.get("agent_config", {}))
    kind = exp_config["agent"]
    qlines = [
        line
        for line in (out / "qtable.txt").read_text().splitlines()
        if line and not line.startswith("#")
    ]
    if kind == "poql":
        try:
            model = model_from_dict(json.loads((out / "model.json").read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"corrupt checkpoint model: {exc}") from exc
        actions = tuple(exp_config.get("actions") or model.actions)
        agent = PoqlAgent(model, qtable_from_rows(qlines, actions), agent_config)
    elif kind == "obs_baseline":
        actions = tuple(exp_config["actions"])
        agent = BaselineAgent(qtable_from_rows(qlines, actions), agent_config)
    else:
        raise ValueError(f"cannot reload agent kind {kind!r}")
    traces_path = out / "traces.txt"
    if traces_path.exists():
        agent.history = read_trace_file(traces_path)
    return agent, exp_config
