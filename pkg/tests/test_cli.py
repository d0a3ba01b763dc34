import csv
import json

import numpy as np
import pytest
import yaml

from dectdc.cli import main
from dectdc.env import load_bundle
from dectdc.network import save_topology, CommMatrix

from test_harness import CONFIGS


def test_gen(tmp_path, capsys):
    out = tmp_path / "env.json"
    fp = tmp_path / "fp.json"
    assert main(["gen", "--seed", "4", "--n-agents", "3", "-o", str(out),
                 "--fixed-point", str(fp)]) == 0
    env = load_bundle(out)
    assert env.mdp.n_agents == 3 and fp.exists()


def test_run_flags_to_stdout(capsys):
    code = main(["run", "--n-agents", "3", "--n-states", "4", "--dim", "2",
                 "--iterations", "5", "--repetitions", "2"])
    assert code == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][0] == "runLabel" and len(rows) == 1 + 2 * 5


def test_run_with_bundle(tmp_path, capsys):
    env = tmp_path / "env.json"
    main(["gen", "--n-agents", "3", "--n-states", "4", "--dim", "2", "-o", str(env)])
    out = tmp_path / "r.csv"
    assert main(["run", "--env", str(env), "--iterations", "4", "--algorithm", "alg2",
                 "--gossip-rounds", "2", "-o", str(out)]) == 0
    assert "final median convErr" in capsys.readouterr().out
    assert out.exists()


def test_run_spec_override(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", str(CONFIGS / "minimal.yaml"), "--iterations", "3",
                 "--override-repetitions", "2", "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 2 * 3


def test_sweep_dry_run(capsys):
    assert main(["sweep", str(CONFIGS / "minimal.yaml"), "--batch-size", "10", "50",
                 "--gossip-rounds", "1", "3", "--alpha-per-sample", "0.01", "--dry-run"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    labels = [r["label"] for r in doc["runs"]]
    assert labels == ["alg1_b10_g1", "alg1_b10_g3", "alg1_b50_g1", "alg1_b50_g3"]
    assert doc["runs"][2]["alpha"] == pytest.approx(0.5)


def test_verify_identity_exit_2(tmp_path, capsys):
    p = tmp_path / "id.yaml"
    w = np.eye(10)
    save_topology(CommMatrix(w, w > 0, 1.0), p)
    assert main(["verify", "--topology", str(p)]) == 2
    assert "σ₂=1" in capsys.readouterr().out


def test_verify_json(capsys):
    assert main(["verify", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_plotdata(tmp_path, capsys):
    out = tmp_path / "r.csv"
    main(["run", "--n-agents", "3", "--n-states", "4", "--dim", "2", "--iterations", "5",
          "--repetitions", "2", "-o", str(out)])
    assert main(["plotdata", str(out), "--group-by", "paramComm", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "alg1.paramComm.csv").exists()
    assert main(["plotdata", str(out), "--group-by", "bogus"]) == 1
    assert "unknown group key" in capsys.readouterr().err


def test_bad_spec_exit_1(tmp_path, capsys):
    p = tmp_path / "s.yaml"
    p.write_text("runs:\n  - {label: a, batchsize: 3}\n")
    assert main(["run", str(p)]) == 1
    assert "s.yaml:2: unknown key 'batchsize'" in capsys.readouterr().err


def test_missing_file_exit_1(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 1


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
