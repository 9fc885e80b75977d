import json

import pytest

from poql.checkpoint import load_checkpoint, model_from_dict
from poql.cli import main
from poql.agent import evaluate
from poql.envs import make_environment


def _config(outdir, agent="poql", env_name="hot_beverage", seed=7, **agent_overrides):
    agent_config = dict(
        max_episodes=400,
        bootstrap_episodes=40,
        update_interval=200,
        eval_every=200,
        epsilon_decay_episodes=200,
    )
    agent_config.update(agent_overrides)
    return {
        "schema_version": 1,
        "seed": seed,
        "agent": agent,
        "environment": {"name": env_name},
        "agent_config": agent_config,
        "output_dir": str(outdir),
    }


def _write_config(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def beverage_run(tmp_path_factory):
    """One completed poql run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("runs")
    outdir = root / "bev-poql"
    cfg = _config(outdir)
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", str(cfg_path), "--quiet"]) == 0
    return outdir, cfg


def test_train_writes_all_artifacts(beverage_run):
    outdir, _ = beverage_run
    for artifact in ("run.json", "run_record.csv", "config.json",
                     "model.json", "model.dot", "qtable.txt", "traces.txt"):
        assert (outdir / artifact).exists(), artifact
    meta = json.loads((outdir / "run.json").read_text())
    assert meta["status"] == "complete"
    assert meta["final"]["goal_rate"] == 1.0
    header = (outdir / "run_record.csv").read_text().splitlines()[0]
    assert header == "episode,goal_rate,mean_steps,mean_return,model_state_count,q_rows,config_hash"


def test_artifacts_reference_config_hash(beverage_run):
    outdir, _ = beverage_run
    digest = json.loads((outdir / "config.json").read_text())["config_hash"]
    assert digest in (outdir / "model.dot").read_text()
    assert digest in (outdir / "qtable.txt").read_text()
    assert digest in (outdir / "run_record.csv").read_text()
    assert digest == json.loads((outdir / "run.json").read_text())["config_hash"]


def test_invalid_environment_rejected_without_artifacts(tmp_path, capsys):
    cfg = _config(tmp_path / "nope", env_name="labyrinth")
    path = _write_config(tmp_path, "bad.json", cfg)
    assert main(["train", str(path)]) == 2
    assert "unknown environment" in capsys.readouterr().err
    assert not (tmp_path / "nope").exists()


def test_invalid_agent_config_rejected(tmp_path, capsys):
    cfg = _config(tmp_path / "nope", alpha=0.0)
    path = _write_config(tmp_path, "bad2.json", cfg)
    assert main(["train", str(path)]) == 2
    assert "agent_config" in capsys.readouterr().err


def test_unknown_agent_config_key_rejected(tmp_path, capsys):
    cfg = _config(tmp_path / "nope")
    cfg["agent_config"]["learning_rate"] = 0.5
    path = _write_config(tmp_path, "bad3.json", cfg)
    assert main(["train", str(path)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_existing_run_needs_force(beverage_run, tmp_path, capsys):
    outdir, cfg = beverage_run
    path = _write_config(tmp_path, "again.json", cfg)
    assert main(["train", str(path)]) == 2
    assert "--force" in capsys.readouterr().err


def test_reproducible_runs_are_byte_identical(tmp_path):
    cfg_a = _config(tmp_path / "a", max_episodes=200)
    cfg_b = {**_config(tmp_path / "b", max_episodes=200)}
    path_a = _write_config(tmp_path, "a.json", cfg_a)
    path_b = _write_config(tmp_path, "b.json", cfg_b)
    assert main(["train", str(path_a), "--quiet"]) == 0
    assert main(["train", str(path_b), "--quiet"]) == 0
    traces_a = (tmp_path / "a" / "traces.txt").read_bytes()
    traces_b = (tmp_path / "b" / "traces.txt").read_bytes()
    assert traces_a == traces_b
    rr_a = (tmp_path / "a" / "run_record.csv").read_bytes()
    rr_b = (tmp_path / "b" / "run_record.csv").read_bytes()
    assert rr_a == rr_b


def test_eval_on_reloaded_checkpoint_matches_in_process(beverage_run, capsys):
    outdir, cfg = beverage_run
    assert main(["eval", str(outdir), "--episodes", "50", "--seed", "9"]) == 0
    printed = json.loads(capsys.readouterr().out.strip())

    agent, config = load_checkpoint(outdir)
    env = make_environment(config["environment"]["name"], seed=9)
    stats = evaluate(agent, env, 50, seed=9)
    assert printed["goal_rate"] == stats.goal_rate
    assert printed["mean_steps"] == stats.mean_steps
    assert printed["mean_return"] == pytest.approx(stats.mean_return)


def test_export_dot_roundtrip_is_byte_identical(beverage_run, tmp_path, capsys):
    outdir, _ = beverage_run
    assert main(["export-dot", str(outdir)]) == 0
    first = capsys.readouterr().out
    assert first == (outdir / "model.dot").read_text()
    assert main(["export-dot", str(outdir)]) == 0
    assert capsys.readouterr().out == first


def test_export_dot_beverage_model_shape(beverage_run, capsys):
    outdir, _ = beverage_run
    assert main(["export-dot", str(outdir)]) == 0
    dot = capsys.readouterr().out
    labels = sorted(line.split("|")[1].split('"')[0]
                    for line in dot.splitlines() if "label=\"" in line and "|" in line)
    assert labels == ["beep", "beep", "coffee", "init", "tea"]


def test_export_dot_rejects_empty_model(tmp_path, capsys):
    (tmp_path / "model.json").write_text(json.dumps(
        {"initial": 0, "actions": [], "states": [], "transitions": []}
    ))
    assert main(["export-dot", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_model_from_dict_rejects_empty():
    with pytest.raises(ValueError):
        model_from_dict({"initial": 0, "actions": [], "states": [], "transitions": []})


def test_compare_groups_and_flags_incomplete(beverage_run, tmp_path, capsys):
    outdir, _ = beverage_run
    empty = tmp_path / "unfinished"
    empty.mkdir()
    csv_path = tmp_path / "compare.csv"
    assert main(["compare", str(outdir), str(empty), "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "hot_beverage" in out
    assert "incomplete" in out
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "environment,agent,steps_to_goal,episodes_to_stop,status,run"
    assert len(lines) == 3


def test_compare_single_run(beverage_run, capsys):
    outdir, _ = beverage_run
    assert main(["compare", str(outdir)]) == 0
    body = [l for l in capsys.readouterr().out.splitlines() if "hot_beverage" in l]
    assert len(body) == 1


def test_random_agent_run(tmp_path):
    cfg = _config(tmp_path / "rand", agent="random")
    path = _write_config(tmp_path, "rand.json", cfg)
    assert main(["train", str(path), "--quiet"]) == 0
    meta = json.loads((tmp_path / "rand" / "run.json").read_text())
    assert meta["status"] == "complete"
    assert 0.0 <= meta["final"]["goal_rate"] <= 1.0
    assert not (tmp_path / "rand" / "model.json").exists()


def test_officeworld_poql_run_hits_the_oracle(tmp_path):
    cfg = {
        "schema_version": 1,
        "seed": 2024,
        "agent": "poql",
        "environment": {"name": "officeworld"},
        "agent_config": {"oracle_steps": 8 + 2 * 10 / 9},
        "output_dir": str(tmp_path / "office"),
    }
    path = _write_config(tmp_path, "office.json", cfg)
    assert main(["train", str(path), "--quiet"]) == 0
    meta = json.loads((tmp_path / "office" / "run.json").read_text())
    assert meta["final"]["goal_rate"] == 1.0
    assert meta["final"]["mean_steps"] == 10
    assert meta["stop_episode"] < 30_000


def test_compare_marks_runs_that_never_reach_the_goal(tmp_path, capsys):
    cfg = _config(tmp_path / "lost", agent="random", env_name="gravity", seed=7)
    path = _write_config(tmp_path, "lost.json", cfg)
    assert main(["train", str(path), "--quiet"]) == 0
    assert main(["compare", str(tmp_path / "lost")]) == 0
    row = [l for l in capsys.readouterr().out.splitlines() if "gravity" in l][0]
    assert " x " in row


def test_sweep_runs_matching_configs(tmp_path):
    for i in range(2):
        cfg = _config(tmp_path / f"sweep{i}", max_episodes=200, seed=i)
        _write_config(tmp_path, f"sweep{i}.json", cfg)
    assert main(["sweep", str(tmp_path / "sweep*.json")]) == 0
    for i in range(2):
        assert json.loads((tmp_path / f"sweep{i}" / "run.json").read_text())["status"] == "complete"


def test_sweep_without_matches_fails(tmp_path, capsys):
    assert main(["sweep", str(tmp_path / "missing*.json")]) == 2


def test_interrupted_run_leaves_incomplete_flag(tmp_path, monkeypatch):
    import poql.cli as cli_mod

    def explode(*args, **kwargs):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli_mod, "train", explode)
    cfg = _config(tmp_path / "broken")
    path = _write_config(tmp_path, "broken.json", cfg)
    with pytest.raises(KeyboardInterrupt):
        main(["train", str(path), "--quiet"])
    meta = json.loads((tmp_path / "broken" / "run.json").read_text())
    assert meta["status"] == "incomplete"


def test_relative_output_dir_uses_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("POQL_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = _config("nested/run", agent="random")
    path = _write_config(tmp_path, "rooted.json", cfg)
    assert main(["train", str(path), "--quiet"]) == 0
    assert (tmp_path / "root" / "nested" / "run" / "run.json").exists()


def test_unused_environment_parameters_rejected(tmp_path, capsys):
    cfg = _config(tmp_path / "nope")
    cfg["environment"]["warp_speed"] = True
    path = _write_config(tmp_path, "warp.json", cfg)
    assert main(["train", str(path)]) == 2
    assert "environment parameters" in capsys.readouterr().err
    assert not (tmp_path / "nope").exists()
