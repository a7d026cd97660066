"""End-to-end command-line flows driven through parlab.cli.main."""

import json

import numpy as np
import pytest

from parlab import DecMdp, load_dataset, load_train_log, task_mdp
from parlab.cli import main


def run_cli(args):
    return main(list(args))


# ---------------------------------------------------------------------------
# gen-mdp


def test_gen_mdp_builtin_to_file(tmp_path, capsys):
    out = tmp_path / "meet.json"
    assert run_cli(["gen-mdp", "--task", "meet", "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert "mdp hash:" in captured.err
    doc = json.loads(out.read_text())
    mdp = DecMdp.from_json(doc)
    assert mdp.content_hash() == task_mdp("meet").content_hash()
    assert mdp.content_hash() in captured.err


def test_gen_mdp_random_to_stdout(capsys):
    assert run_cli(["gen-mdp", "--random", "--states", "3",
                    "--actions", "2", "3", "--seed", "7"]) == 0
    captured = capsys.readouterr()
    mdp = DecMdp.from_json(json.loads(captured.out))
    assert mdp.n_states == 3
    assert mdp.action_counts == (2, 3)


def test_gen_mdp_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run_cli(["gen-mdp", "--random", "--seed", "3", "--out", str(a)])
    run_cli(["gen-mdp", "--random", "--seed", "3", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_gen_mdp_requires_source():
    with pytest.raises(SystemExit):
        run_cli(["gen-mdp"])


# ---------------------------------------------------------------------------
# gen-dataset


def test_gen_dataset_from_builtin(tmp_path, capsys):
    out = tmp_path / "data.jsonl"
    assert run_cli(["gen-dataset", "--task", "meet", "--regime", "medium_replay",
                    "--size", "60", "--seed", "1", "--out", str(out)]) == 0
    assert "wrote 60 records" in capsys.readouterr().err
    ds = load_dataset(out, task_mdp("meet"))
    assert ds.size == 60
    assert ds.behavior["regime"] == "medium_replay"
    assert ds.mode == "trajectory"


def test_gen_dataset_from_mdp_file(tmp_path):
    mdp_path = tmp_path / "world.json"
    run_cli(["gen-mdp", "--random", "--seed", "2", "--out", str(mdp_path)])
    out = tmp_path / "data.jsonl"
    assert run_cli(["gen-dataset", "--mdp", str(mdp_path), "--regime", "correlated",
                    "--rho", "0.8", "--mode", "iid_occupancy",
                    "--size", "40", "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.size == 40
    assert ds.mode == "iid_occupancy"
    assert ds.behavior["rho"] == 0.8


# ---------------------------------------------------------------------------
# train


@pytest.fixture()
def meet_dataset(tmp_path):
    out = tmp_path / "meet_data.jsonl"
    run_cli(["gen-dataset", "--task", "meet", "--size", "80",
             "--seed", "0", "--out", str(out)])
    return out


def test_train_prints_final_summary(meet_dataset, capsys):
    assert run_cli(["train", "--data", str(meet_dataset), "--algo", "spacql",
                    "--task", "meet", "--steps", "20", "--eval-every", "5",
                    "--seed", "1"]) == 0
    out = capsys.readouterr().out
    last = json.loads(out.strip().splitlines()[-1])
    assert last["algo"] == "spacql"
    assert last["steps"] == 20
    assert 1.0 <= last["final_k_eff"] <= 2.0
    assert "value" in last and "score" in last


def test_train_without_mdp_skips_evaluation(meet_dataset, capsys):
    assert run_cli(["train", "--data", str(meet_dataset), "--algo", "icql-qs",
                    "--steps", "10"]) == 0
    last = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "value" not in last and "score" not in last


def test_train_writes_log(meet_dataset, tmp_path, capsys):
    log_path = tmp_path / "run.jsonl"
    assert run_cli(["train", "--data", str(meet_dataset), "--algo", "jointcql",
                    "--task", "meet", "--steps", "15",
                    "--log-out", str(log_path)]) == 0
    assert "wrote training log" in capsys.readouterr().err
    log = load_train_log(log_path)
    assert log.steps == 15
    assert np.allclose(log.w[:, -1], 1.0)   # jointcql pins full replacement


def test_train_overrides_reach_learner(meet_dataset, tmp_path):
    log_path = tmp_path / "short.jsonl"
    run_cli(["train", "--data", str(meet_dataset), "--algo", "spacql",
             "--steps", "4", "--ensemble-size", "3", "--temperature", "2.5",
             "--log-out", str(log_path)])
    assert load_train_log(log_path).steps == 4


def test_train_rejects_unknown_algo(meet_dataset):
    with pytest.raises(SystemExit):
        run_cli(["train", "--data", str(meet_dataset), "--algo", "sarsa"])


def test_train_rejects_mismatched_mdp(meet_dataset):
    from parlab import ValidationError
    with pytest.raises(ValidationError):
        run_cli(["train", "--data", str(meet_dataset), "--algo", "spacql",
                 "--task", "switch", "--steps", "1"])


# ---------------------------------------------------------------------------
# verify-theory


def test_verify_theory_cli(tmp_path, capsys):
    out = tmp_path / "report.jsonl"
    code = run_cli(["verify-theory", "--suite", "lemmas", "--instances", "4",
                    "--seed", "0", "--out", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["ok"] is True and summary["suite"] == "lemmas"
    assert out.is_file()
    last_line = json.loads(out.read_text().splitlines()[-1])
    assert last_line == summary


def test_verify_theory_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        run_cli(["verify-theory", "--suite", "conjectures"])


# ---------------------------------------------------------------------------
# run


def test_run_sweep_from_config_file(tmp_path, capsys):
    cfg = {
        "tasks": ["meet"],
        "regimes": ["random"],
        "algorithms": {"spacql": {"steps": 12, "eval_every": 4}},
        "seeds": [0],
        "sizes": {"meet": 60},
        "out_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "sweep.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run_cli(["run", "--config", str(cfg_path)]) == 0
    md = capsys.readouterr().out
    assert "| meet | random | spacql |" in md
    assert (tmp_path / "out" / "results.csv").is_file()


def test_run_out_dir_flag_overrides_config(tmp_path):
    cfg = {
        "tasks": ["meet"],
        "regimes": ["random"],
        "algorithms": {"spacql": {"steps": 5}},
        "seeds": [0],
        "sizes": {"meet": 40},
        "out_dir": str(tmp_path / "from_config"),
    }
    cfg_path = tmp_path / "sweep.json"
    cfg_path.write_text(json.dumps(cfg))
    run_cli(["run", "--config", str(cfg_path), "--out-dir",
             str(tmp_path / "from_flag")])
    assert (tmp_path / "from_flag" / "results.csv").is_file()
    assert not (tmp_path / "from_config").exists()


def test_run_requires_config_or_benchmark():
    with pytest.raises(SystemExit):
        run_cli(["run"])


# ---------------------------------------------------------------------------
# report


@pytest.fixture()
def two_logs(meet_dataset, tmp_path):
    paths = {}
    for algo in ("spacql", "jointcql"):
        p = tmp_path / f"{algo}.jsonl"
        run_cli(["train", "--data", str(meet_dataset), "--algo", algo,
                 "--steps", "12", "--log-out", str(p)])
        paths[algo] = p
    return paths


def test_report_weights_csv(two_logs, tmp_path, capsys):
    capsys.readouterr()
    out = tmp_path / "weights.csv"
    assert run_cli(["report", "--kind", "weights",
                    "--logs", str(two_logs["spacql"]), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,w_1,w_2"
    assert len(lines) == 13
    values = [float(x) for x in lines[1].split(",")[1:]]
    assert all(0.0 <= v <= 1.0 for v in values)


def test_report_weights_stdout(two_logs, capsys):
    capsys.readouterr()
    assert run_cli(["report", "--kind", "weights",
                    "--logs", str(two_logs["spacql"])]) == 0
    assert capsys.readouterr().out.startswith("step,w_1,w_2")


def test_report_weights_needs_exactly_one_log(two_logs):
    with pytest.raises(SystemExit, match="exactly one log"):
        run_cli(["report", "--kind", "weights",
                 "--logs", str(two_logs["spacql"]), str(two_logs["jointcql"])])


def test_report_uncertainty_csv(two_logs, capsys):
    capsys.readouterr()
    assert run_cli(["report", "--kind", "uncertainty",
                    "--logs", str(two_logs["spacql"]),
                    str(two_logs["jointcql"])]) == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0] == "step,jointcql,spacql"
    assert len(lines) == 13
    assert "resampled" not in captured.err


def test_report_unknown_kind(two_logs):
    with pytest.raises(SystemExit):
        run_cli(["report", "--kind", "qvalues",
                 "--logs", str(two_logs["spacql"])])
