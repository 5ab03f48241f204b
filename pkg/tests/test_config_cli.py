import json
import subprocess
import sys

import pytest

from jsslab import engine
from jsslab.cli import main
from jsslab.config import ConfigError, RunConfig, config_from_dict, config_hash, load_config
from jsslab.instance import Instance


def test_defaults():
    c = RunConfig()
    assert (c.train.gamma, c.train.K, c.train.lr, c.train.entropy_coef) == (1.0, 8, 3e-4, 0.01)
    assert (c.evaluate.runs, c.evaluate.alpha) == (50, 0.2)


def test_unknown_and_mistyped_fields_are_named():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"train": {"foo": 1, "K": "eight"}, "bar": 2})
    msg = str(e.value)
    assert "train.foo" in msg and "bar" in msg and "train.K" in msg


def test_config_roundtrip_and_hash(tmp_path):
    c = config_from_dict({"seed": 3, "train": {"K": 4}})
    assert c.train.seed == 3
    p = tmp_path / "c.json"
    p.write_text(json.dumps(c.to_dict()))
    assert config_hash(load_config(p)) == config_hash(c)


def test_generate_writes_files_and_roundtrips(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--seed", "1", "--out", str(out), "--jobs", "3", "--machines", "4"]) == 0
    files = sorted(out.glob("inst_*.json"))
    assert len(files) == 50
    text = files[0].read_text()
    assert Instance.from_json(text).to_json() == text
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "generate"


def test_solve_t1_prints_seven(fixtures, capsys):
    assert main(["solve", "--scenario", str(fixtures / "t1.json")]) == 0
    assert capsys.readouterr().out.strip() == "7"


def test_solve_branching_instance_needs_scenario(tmp_path, capsys):
    main(["generate", "--out", str(tmp_path), "--jobs", "2", "--machines", "3", "--count", "1"])
    f = next(tmp_path.glob("inst_*.json"))
    assert main(["solve", "--scenario", str(f)]) == 1
    assert main(["solve", "--scenario", str(f), "--expected"]) == 0


def test_evaluate_rerun_from_manifest_is_byte_identical(tmp_path):
    gen = tmp_path / "g"
    main(["generate", "--out", str(gen), "--jobs", "3", "--machines", "3", "--count", "3"])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["evaluate", "--instances", str(gen), "--policy", "ALL", "--runs", "5", "--out", str(a)]) == 0
    assert main(["evaluate", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert len((a / "results.csv").read_text().splitlines()) == 1 + 3 * 8 + 8


def test_rollout_and_replay(tmp_path, fixtures):
    trace = tmp_path / "t.jsonl"
    inst = fixtures / "t1.json"
    assert main(["rollout", "--instance", str(inst), "--policy", "SPT", "--trace", str(trace)]) == 0
    assert main(["replay", "--trace", str(trace), "--instance", str(inst), "--out", str(tmp_path / "r")]) == 0
    dump = json.loads((tmp_path / "r" / "hindsight.json").read_text())
    assert dump["final_makespan"] == engine.read_trace(trace)[-1]["clb"] == 7


def test_train_and_ablate_and_variance(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"K": 2, "iterations": 1, "eval_every": 1, "n_jobs": 3, "n_machines": 3,
                                         "eval_instances": 1, "eval_runs": 1, "hidden": 8, "layers": 1,
                                         "n_scenarios": 4}}))
    cks = []
    for mode in ("UP-AAC", "standard-AC", "no-AAC", "no-UPM"):
        out = tmp_path / mode
        assert main(["train", "--config", str(cfg), "--mode", mode, "--out", str(out), "--quiet"]) == 0
        cks.append(f"{mode}={out / 'best.ckpt'}")
    gen = tmp_path / "set1"
    main(["generate", "--out", str(gen), "--jobs", "3", "--machines", "3", "--count", "2"])
    capsys.readouterr()
    assert main(["ablate", "--checkpoint", *cks, "--instances", str(gen), "--runs", "2",
                 "--out", str(tmp_path / "ab")]) == 0
    rows = (tmp_path / "ab" / "ablation.csv").read_text().splitlines()
    assert rows[0] == "mode,set1_avg,set1_cvar" and len(rows) == 5
    assert main(["ablate", "--checkpoint", cks[0], "--instances", str(gen)]) == 1
    capsys.readouterr()
    assert main(["variance", "--checkpoint", str(tmp_path / "UP-AAC" / "best.ckpt"), "--instances", str(gen),
                 "--K", "2"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert {"hindsight_critic_variance", "stochastic_critic_variance"} <= set(res)


def test_exit_codes(tmp_path):
    assert main(["bogus"]) == 2
    assert main(["evaluate", "--policy", "SPT"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"gama": 1.0}}))
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["evaluate", "--instances", str(tmp_path / "missing")]) == 1


def test_console_entry_point_runs(fixtures):
    out = subprocess.run([sys.executable, "-m", "jsslab.cli", "solve", "--scenario", str(fixtures / "t1.json")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "7"
