import csv

import pytest

from diffirl.cli import run

SMALL = """\
[mdp]
strategy = renoise

[schedule]
N = 4

[learner]
n_epoch = 2
K = 1
n_traj = 64
minibatch = 128
chunk_size = 16

[discriminator]
hidden = [8]
iters = 10
dre_init_iters = 10
n_expert = 128
batch_size = 64

[policy]
family = state_dependent
hidden = [8]

[run]
n_eval = 200
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    assert run(["train", "--config", str(cfg), "--out", str(root / "a"), "--eval"]) == 0
    return root, cfg


def test_train_outputs(trained):
    root, _ = trained
    names = {p.name for p in (root / "a").iterdir()}
    assert {"config.ini", "metrics.csv", "policy.json", "policy_ema.json", "discriminator.json", "report.txt"} <= names
    header = (root / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,divergence_estimate,surrogate_loss,mean_nfe,w_theta_terminal,policy_entropy,energy_distance,wall_time_s"


def test_train_twice_identical(trained):
    root, cfg = trained
    assert run(["train", "--config", str(cfg), "--out", str(root / "b"), "--workers", "3"]) == 0
    for name in ("metrics.csv", "policy.json", "policy_ema.json", "discriminator.json"):
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()


def test_seed_override_changes_run(trained):
    root, cfg = trained
    assert run(["train", "--config", str(cfg), "--out", str(root / "c"), "--seed", "7"]) == 0
    assert (root / "a" / "metrics.csv").read_bytes() != (root / "c" / "metrics.csv").read_bytes()


def test_sample_csv(trained, capsys):
    root, _ = trained
    out = root / "samples.csv"
    assert run(["sample", "--policy", str(root / "a" / "policy_ema.json"), "--n", "50", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["x0", "x1"] + [f"p_class{k}" for k in range(8)]
    assert len(rows) == 51
    assert abs(sum(float(v) for v in rows[1][2:]) - 1) < 1e-9
    assert "mean_nfe" in capsys.readouterr().out


def test_eval_and_sweep(trained, capsys):
    root, cfg = trained
    pol = str(root / "a" / "policy_ema.json")
    assert run(["eval", "--policy", pol, "--config", str(cfg), "--n", "100"]) == 0
    assert "energy_distance" in capsys.readouterr().out
    out = root / "sweep.csv"
    assert run(["sweep-temp", "--policy", pol, "--betas", "0.5,1,2", "--n", "100", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["beta"] for r in rows] == ["0.5", "1.0", "2.0"]


def test_mismatched_config_rejected(trained, tmp_path):
    root, _ = trained
    other = tmp_path / "o.ini"
    other.write_text(SMALL.replace("N = 4", "N = 5"))
    assert run(["eval", "--policy", str(root / "a" / "policy.json"), "--config", str(other)]) == 1


def test_bad_config_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[learner]\nn_epoch = 2\nwhat = 3\n")
    assert run(["train", "--config", str(p), "--out", str(tmp_path / "x")]) == 1
    assert f"{p}:3:" in capsys.readouterr().err


def test_usage_errors_exit_1():
    assert run([]) == 1
    assert run(["sweep-temp", "--policy", "x", "--betas", "a,b"]) == 1
    assert run(["sample", "--policy", "/nonexistent.json", "--n", "5"]) == 1


def test_gradcheck_exit_codes(capsys):
    assert run(["gradcheck", "--cases", "3"]) == 0
    assert "6/6 checks passed" in capsys.readouterr().out
    assert run(["gradcheck", "--cases", "2", "--tol", "0"]) == 2


def test_oracle_check_without_ratio(capsys):
    assert run(["oracle-check", "--skip-ratio"]) == 0
    assert "FAIL" not in capsys.readouterr().out
