import csv
import json
from pathlib import Path

import numpy as np
import pytest

from dectdc.errors import SpecError
from dectdc.harness import (CSV_COLUMNS, RunError, emit_plotdata, expand_sweep, load_spec,
                            nearest_rank, plot_series, rounds_to_threshold, run_experiment,
                            spec_from_dict)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_ENV = {"n_states": 5, "n_agents": 4, "actions_per_agent": 2, "dim": 3}


def _write(tmp_path, text, name="spec.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _small_spec(**over):
    doc = {"name": "t", "seed": 3, "env": SMALL_ENV, "repetitions": 3,
           "runs": [{"label": "a", "iterations": 50, "batch_size": 2, "alpha": 0.2, "beta": 0.02},
                    {"label": "b", "algorithm": "alg2", "iterations": 50, "batch_size": 2,
                     "alpha": 0.2, "beta": 0.02, "gossip_rounds": 2}]}
    doc.update(over)
    return spec_from_dict(doc)


class TestLoadSpec:
    def test_minimal(self):
        spec = load_spec(CONFIGS / "minimal.yaml")
        assert spec.runs[0].algorithm == "alg1" and spec.repetitions == 1

    def test_zero_repetitions(self, tmp_path):
        p = _write(tmp_path, "name: x\nrepetitions: 0\nruns:\n  - {label: a}\n")
        with pytest.raises(SpecError, match="repetitions"):
            load_spec(p)

    def test_unknown_key_with_line(self, tmp_path):
        p = _write(tmp_path, "name: x\nruns:\n  - {label: a}\n  - {label: b, alpah: 2}\n")
        with pytest.raises(SpecError, match=r"spec.yaml:4: unknown key 'alpah'"):
            load_spec(p)

    def test_unknown_top_level(self, tmp_path):
        p = _write(tmp_path, "name: x\nrunz: []\n")
        with pytest.raises(SpecError, match=":2: unknown key 'runz'"):
            load_spec(p)

    def test_parse_error(self, tmp_path):
        p = _write(tmp_path, "name: [unclosed\n")
        with pytest.raises(SpecError):
            load_spec(p)

    def test_bad_field_value(self, tmp_path):
        p = _write(tmp_path, "name: x\nruns:\n  - {label: a, batch_size: 0}\n")
        with pytest.raises(SpecError, match="batch_size"):
            load_spec(p)

    def test_duplicate_labels(self):
        with pytest.raises(SpecError, match="duplicate"):
            spec_from_dict({"runs": [{"label": "a"}, {"label": "a"}]})

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
    def test_shipped_configs_valid(self, name):
        spec = load_spec(CONFIGS / name)
        env = spec.build_env()
        v = spec.build_topology(env.mdp.n_agents)
        assert v.m == env.mdp.n_agents

    def test_full_sweep_contents(self):
        spec = load_spec(CONFIGS / "fig1_fc_full.yaml")
        got = {r.label: (r.batch_size, r.alpha, r.beta, r.iterations) for r in spec.runs}
        assert got["td0"] == (1, 0.01, 0.02, 10000)
        for n in (10, 20, 50, 100):
            b, a, be, it = got[f"tdc_n{n}"]
            assert (b, it) == (n, 10000 // n)
            assert a == pytest.approx(0.01 * n) and be == pytest.approx(1e-4 * n)
        assert spec.repetitions == 100 and spec.env["n_agents"] == 10

    def test_full_specs_runnable(self, tmp_path):
        # shortened copy of the full-scale spec: same runs, fewer samples and repetitions
        for name in ("fig1_fc_full.yaml", "inexact_ring_full.yaml"):
            spec = load_spec(CONFIGS / name)
            doc = spec.to_dict()
            for r in doc["runs"]:
                r["iterations"] = 3
            doc["repetitions"] = 1
            doc.pop("output")
            res = run_experiment(spec_from_dict(doc))
            assert set(res.traces) == {r.label for r in spec.runs}


class TestSweep:
    def test_product_and_scaling(self):
        items = expand_sweep({"label": "n{batch_size}_l{gossip_rounds}", "algorithm": "alg2",
                              "batch_size": [10, 100], "gossip_rounds": [1, 3],
                              "alpha_per_sample": 0.01, "beta_per_sample": 1e-4})
        assert [i["label"] for i in items] == ["n10_l1", "n10_l3", "n100_l1", "n100_l3"]
        assert items[2]["alpha"] == pytest.approx(1.0) and items[2]["beta"] == pytest.approx(0.01)

    def test_iterations_from_samples(self):
        spec = spec_from_dict({"samples": 1000, "sweep": [{"label": "n{batch_size}",
                                                           "batch_size": [10, 50]}]})
        assert [r.iterations for r in spec.runs] == [100, 20]


class TestRunExperiment:
    def test_row_count(self, tmp_path):
        out = tmp_path / "r.csv"
        spec = _small_spec(runs=[{"label": "a", "iterations": 100, "metrics_every": 2},
                                 {"label": "b", "iterations": 50}])
        run_experiment(spec, out)
        rows = list(csv.reader(out.open()))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) - 1 == 2 * 3 * 50
        summary = json.loads(out.with_suffix(".summary.json").read_text())
        assert set(summary) == {"a", "b"} and len(summary["a"]["median"]) == 50

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_experiment(_small_spec(), a)
        run_experiment(_small_spec(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_experiment(_small_spec(), a, workers=1)
        run_experiment(_small_spec(), b, workers=2)
        assert a.read_bytes() == b.read_bytes()

    def test_float_format(self, tmp_path):
        out = tmp_path / "r.csv"
        res = run_experiment(_small_spec(repetitions=1), out)
        row = next(r for r in csv.DictReader(out.open()))
        assert row["convErr"] == format(res.traces["a"][0].records[0].conv_err, ".17g")

    def test_runs_share_trajectories(self):
        # same algorithm under two labels sees the same samples per repetition
        doc = {"seed": 2, "env": SMALL_ENV, "repetitions": 2,
               "runs": [{"label": "x", "iterations": 20}, {"label": "y", "iterations": 20}]}
        res = run_experiment(spec_from_dict(doc))
        for r in range(2):
            assert res.traces["x"][r].records == res.traces["y"][r].records
        assert res.traces["x"][0].records != res.traces["x"][1].records

    def test_error_names_run_and_repetition(self, tmp_path):
        doc = {"seed": 1, "env": SMALL_ENV, "repetitions": 1,
               "topology": {"kind": "file", "path": str(tmp_path / "missing.yaml")},
               "runs": [{"label": "a"}]}
        with pytest.raises(OSError):
            run_experiment(spec_from_dict(doc))
        import dectdc.harness as h
        orig = h.run

        def boom(cfg, *a, **k):
            raise FloatingPointError("overflow")
        h.run = boom
        try:
            with pytest.raises(RunError, match="run 'a', repetition 0"):
                run_experiment(_small_spec(runs=[{"label": "a", "iterations": 2}]))
        finally:
            h.run = orig

    def test_summary_percentiles(self):
        res = run_experiment(_small_spec(repetitions=5))
        s = res.summary()["a"]
        errs = np.array([tr.column("conv_err") for tr in res.traces["a"]])
        assert s["p5"] == np.sort(errs, axis=0)[0].tolist()
        assert s["p95"] == np.sort(errs, axis=0)[4].tolist()
        assert s["median"] == np.median(errs, axis=0).tolist()


class TestPercentiles:
    def test_nearest_rank_100(self):
        x = np.arange(1, 101)[::-1].astype(float)
        assert nearest_rank(x, 5) == 5.0 and nearest_rank(x, 95) == 95.0

    def test_nearest_rank_small(self):
        assert nearest_rank(np.array([3.0, 1.0, 2.0]), 5) == 1.0
        assert nearest_rank(np.array([3.0, 1.0, 2.0]), 95) == 3.0
        assert nearest_rank(np.array([7.0]), 50) == 7.0


class TestPlotData:
    def test_samples_strictly_increasing(self, tmp_path):
        out = tmp_path / "r.csv"
        spec = _small_spec(runs=[{"label": "a", "iterations": 20, "post_averaging": 5}])
        run_experiment(spec, out)
        series = plot_series(out, "samples")
        x = series["a"][:, 0]
        assert np.all(np.diff(x) > 0) and len(x) == 20
        comm = plot_series(out, "paramComm")["a"]
        assert len(comm) == 25

    def test_single_repetition_envelope(self, tmp_path):
        out = tmp_path / "r.csv"
        run_experiment(_small_spec(repetitions=1), out)
        paths = emit_plotdata(out, "paramComm", tmp_path / "pd")
        assert sorted(p.name for p in paths) == ["a.paramComm.csv", "b.paramComm.csv"]
        rows = list(csv.DictReader(paths[0].open()))
        assert all(r["y"] == r["yLo"] == r["yHi"] for r in rows)

    def test_unknown_group(self, tmp_path):
        out = tmp_path / "r.csv"
        run_experiment(_small_spec(repetitions=1), out)
        with pytest.raises(ValueError, match="unknown group key"):
            emit_plotdata(out, "wallclock")

    def test_threshold(self):
        assert rounds_to_threshold(np.array([1, 2, 3.0]), np.array([5, 1, 0.5]), 1.0) == 2.0
        assert rounds_to_threshold(np.array([1.0]), np.array([5.0]), 1.0) is None
