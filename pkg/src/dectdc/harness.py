"""Experiment specs, sweeps, CSV export and plot series.

A spec is a YAML file::

    name: fig1-desk
    seed: 1
    env: {n_states: 10, n_agents: 10, actions_per_agent: 2, dim: 5}
    topology: {kind: fully_connected, diag: 0.8}
    samples: 5000
    repetitions: 20
    output: results/fig1.csv
    runs:
      - {label: td0, algorithm: td0, batch_size: 1, alpha: 0.01}
    sweep:
      - {label: "tdc_n{batch_size}", algorithm: alg1, batch_size: [10, 100],
         alpha_per_sample: 0.01, beta_per_sample: 0.0001}

Each repetition draws one behavior trajectory that every run of the spec
consumes from its start, so runs are compared on matched samples.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .decentral import RunConfig, Trace, draw_trajectory, run
from .env import EnvBundle, load_bundle, make_env
from .errors import DecTdcError, SpecError
from .network import CommMatrix, build_fully_connected, build_ring, load_topology
from .tdc import FixedPoint, fixed_point_for

CSV_COLUMNS = ("runLabel", "repetition", "iter", "samples", "paramComm", "ratioComm",
               "convErr", "consErr", "wErr")
WORKERS_ENV = "DECTDC_WORKERS"

ENV_KEYS = {"n_states", "n_agents", "actions_per_agent", "r_max", "gamma", "dim",
            "noise_std", "floor_prob", "seed"}
TOPOLOGY_KEYS = {"kind", "diag", "neighbor", "path"}
RUN_KEYS = {f.name for f in fields(RunConfig)} - {"seed"}
SWEEP_KEYS = RUN_KEYS | {"alpha_per_sample", "beta_per_sample"}
TOP_KEYS = {"name", "seed", "env", "env_path", "topology", "samples", "repetitions",
            "output", "runs", "sweep"}


class RunError(DecTdcError, RuntimeError):
    """A run failed; the message names the run label and repetition."""


@dataclass
class ExperimentSpec:
    name: str
    seed: int
    env: dict = field(default_factory=dict)
    env_path: str | None = None
    topology: dict = field(default_factory=lambda: {"kind": "fully_connected", "diag": 0.8})
    runs: list[RunConfig] = field(default_factory=list)
    repetitions: int = 1
    samples: int | None = None
    output: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.repetitions < 1:
            raise SpecError("repetitions must be at least 1")
        if not self.runs:
            raise SpecError("spec defines no runs")
        labels = [r.label for r in self.runs]
        if len(set(labels)) != len(labels):
            raise SpecError(f"duplicate run labels in {labels}")

    @property
    def trajectory_length(self) -> int:
        need = max(r.samples_needed for r in self.runs)
        return max(need, self.samples or 0)

    def build_env(self) -> EnvBundle:
        if self.env_path:
            return load_bundle(self._resolve(self.env_path))
        params = dict(self.env)
        return make_env(params.pop("seed", self.seed), **params)

    def build_topology(self, m: int) -> CommMatrix:
        topo = self.topology
        kind = topo.get("kind", "fully_connected")
        if kind == "fully_connected":
            return build_fully_connected(m, topo.get("diag", 0.8))
        if kind == "ring":
            return build_ring(m, topo.get("diag", 0.8), topo.get("neighbor", 0.1))
        if kind == "file":
            v = load_topology(self._resolve(topo["path"]))
            if v.m != m:
                raise SpecError(f"topology file has {v.m} agents, environment has {m}")
            return v
        raise SpecError(f"unknown topology kind {kind!r}")

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"name": self.name, "seed": self.seed}
        if self.env_path:
            doc["env_path"] = self.env_path
        else:
            doc["env"] = dict(self.env)
        doc["topology"] = dict(self.topology)
        if self.samples is not None:
            doc["samples"] = self.samples
        doc["repetitions"] = self.repetitions
        if self.output:
            doc["output"] = self.output
        doc["runs"] = [_run_to_dict(r) for r in self.runs]
        return doc


def _run_to_dict(cfg: RunConfig) -> dict:
    default = RunConfig()
    out = {"label": cfg.label, "algorithm": cfg.algorithm}
    for f in fields(RunConfig):
        if f.name in ("label", "algorithm", "seed"):
            continue
        val = getattr(cfg, f.name)
        if val != getattr(default, f.name) or f.name in ("batch_size", "iterations", "alpha"):
            out[f.name] = val
    return out


# --------------------------------------------------------------------------
# loading


def _where(node: yaml.Node, path: Path | str) -> str:
    return f"{path}:{node.start_mark.line + 1}"


def _check_mapping(node: yaml.Node, allowed: set[str], what: str, path) -> None:
    if not isinstance(node, yaml.MappingNode):
        raise SpecError(f"{_where(node, path)}: {what} must be a mapping")
    for key_node, _ in node.value:
        if key_node.value not in allowed:
            raise SpecError(f"{_where(key_node, path)}: unknown key {key_node.value!r} in {what}")


def _child(node: yaml.MappingNode, key: str):
    for k, v in node.value:
        if k.value == key:
            return v
    return None


def _strict_check(root: yaml.Node, path) -> None:
    _check_mapping(root, TOP_KEYS, "spec", path)
    for key, allowed in (("env", ENV_KEYS), ("topology", TOPOLOGY_KEYS)):
        sub = _child(root, key)
        if sub is not None:
            _check_mapping(sub, allowed, key, path)
    for key, allowed in (("runs", RUN_KEYS), ("sweep", SWEEP_KEYS)):
        sub = _child(root, key)
        if sub is None:
            continue
        if not isinstance(sub, yaml.SequenceNode):
            raise SpecError(f"{_where(sub, path)}: {key} must be a list")
        for item in sub.value:
            _check_mapping(item, allowed, f"{key} entry", path)


def expand_sweep(entry: dict) -> list[dict]:
    """Expand list-valued fields of a sweep entry into their Cartesian product.

    ``alpha_per_sample`` / ``beta_per_sample`` set ``alpha = value * batch_size``
    (likewise ``beta``); ``label`` is formatted with the expanded fields.
    """
    grid = {k: v for k, v in entry.items() if isinstance(v, list)}
    fixed = {k: v for k, v in entry.items() if not isinstance(v, list)}
    keys = sorted(grid)
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        item = dict(fixed, **dict(zip(keys, combo)))
        n = item.get("batch_size", RunConfig.batch_size)
        if "alpha_per_sample" in item:
            item["alpha"] = item.pop("alpha_per_sample") * n
        if "beta_per_sample" in item:
            item["beta"] = item.pop("beta_per_sample") * n
        item["label"] = str(item.get("label", "run")).format(**item)
        out.append(item)
    return out


def _make_run(item: dict, seed: int, samples: int | None, where: str) -> RunConfig:
    item = dict(item)
    if "iterations" not in item and samples is not None:
        item["iterations"] = samples // item.get("batch_size", RunConfig.batch_size)
    try:
        return RunConfig(seed=seed, **item)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{where}: run {item.get('label')!r}: {exc}") from exc


def spec_from_dict(doc: dict, base_dir: Path | None = None, where: str = "<spec>") -> ExperimentSpec:
    seed = int(doc.get("seed", 0))
    samples = doc.get("samples")
    items = list(doc.get("runs") or [])
    for entry in doc.get("sweep") or []:
        items.extend(expand_sweep(entry))
    runs = [_make_run(it, seed, samples, where) for it in items]
    if "env" in doc and "env_path" in doc:
        raise SpecError(f"{where}: give either env or env_path, not both")
    try:
        return ExperimentSpec(
            name=str(doc.get("name", "experiment")), seed=seed, env=dict(doc.get("env") or {}),
            env_path=doc.get("env_path"),
            topology=dict(doc.get("topology") or {"kind": "fully_connected", "diag": 0.8}),
            runs=runs, repetitions=int(doc.get("repetitions", 1)), samples=samples,
            output=doc.get("output"), base_dir=base_dir or Path.cwd())
    except SpecError as exc:
        raise SpecError(f"{where}: {exc}") from None


def load_spec(path: str | Path) -> ExperimentSpec:
    """Parse and validate a spec file; unknown keys are rejected."""
    path = Path(path)
    text = path.read_text()
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError(f"{path}: {exc}") from exc
    if root is None:
        raise SpecError(f"{path}: empty spec")
    _strict_check(root, path)
    return spec_from_dict(doc, path.parent, str(path))


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


# --------------------------------------------------------------------------
# running


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_repetition(args) -> list[Trace]:
    spec, env, fp, v, rep = args
    traj = draw_trajectory(env, spec.seed, spec.trajectory_length, rep)
    out = []
    for cfg in spec.runs:
        try:
            out.append(run(cfg, env, fp, v, traj, repetition=rep))
        except Exception as exc:  # annotate and re-raise
            raise RunError(f"run {cfg.label!r}, repetition {rep}: {exc}") from exc
    return out


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    traces: dict[str, list[Trace]]
    fixed_point: FixedPoint
    topology: CommMatrix

    def csv_text(self) -> str:
        return traces_to_csv(self.traces)

    def summary(self) -> dict:
        return summarize(self.traces)


def run_experiment(spec: ExperimentSpec, out_path: str | Path | None = None,
                   workers: int | None = None) -> ExperimentResult:
    """Run every (run, repetition) pair; write CSV and a JSON summary if a path is given."""
    env = spec.build_env()
    fp = fixed_point_for(env)
    v = spec.build_topology(env.mdp.n_agents)
    jobs = [(spec, env, fp, v, rep) for rep in range(spec.repetitions)]
    workers = workers or _workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_run_repetition, jobs))
    else:
        per_rep = [_run_repetition(j) for j in jobs]
    traces = {cfg.label: [per_rep[r][i] for r in range(spec.repetitions)]
              for i, cfg in enumerate(spec.runs)}
    result = ExperimentResult(spec, traces, fp, v)
    out_path = out_path or (spec._resolve(spec.output) if spec.output else None)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(result.csv_text())
        out_path.with_suffix(".summary.json").write_text(json.dumps(result.summary(), indent=1))
    return result


def _fmt(x: float) -> str:
    return format(x, ".17g")


def traces_to_csv(traces: dict[str, list[Trace]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for label, reps in traces.items():
        for rep, tr in enumerate(reps):
            for r in tr.records:
                w.writerow([label, rep, r.iter, r.samples, r.param_comm, r.ratio_comm,
                            _fmt(r.conv_err), _fmt(r.cons_err), _fmt(r.w_err)])
    return buf.getvalue()


def nearest_rank(values: np.ndarray, pct: float, axis: int = 0) -> np.ndarray:
    """Nearest-rank percentile: the ``ceil(pct/100 * n)``-th order statistic."""
    v = np.sort(np.asarray(values, dtype=float), axis=axis)
    n = v.shape[axis]
    k = min(max(math.ceil(pct / 100.0 * n), 1), n)
    return np.take(v, k - 1, axis=axis)


def envelope(errs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Median and 5%/95% nearest-rank envelopes across repetitions (axis 0)."""
    return np.median(errs, axis=0), nearest_rank(errs, 5), nearest_rank(errs, 95)


def summarize(traces: dict[str, list[Trace]], metric: str = "conv_err") -> dict:
    out = {}
    for label, reps in traces.items():
        errs = np.array([tr.column(metric) for tr in reps])
        first = reps[0]
        med, lo, hi = envelope(errs) if errs.size else (np.array([]),) * 3
        out[label] = {
            "iter": first.column("iter").tolist(),
            "samples": first.column("samples").tolist(),
            "paramComm": first.column("param_comm").tolist(),
            "ratioComm": first.column("ratio_comm").tolist(),
            "median": med.tolist(), "p5": lo.tolist(), "p95": hi.tolist(),
            "repetitions": len(reps),
            "flags": sorted({f for tr in reps for f in tr.flags}),
        }
    return out


# --------------------------------------------------------------------------
# plot series

GROUP_KEYS = {"samples": "samples", "paramComm": "paramComm", "ratioComm": "ratioComm",
              "iter": "iter"}


def read_csv(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """Load an experiment CSV into ``{label: {column: (reps, records) array}}``."""
    rows: dict[str, dict[int, list[list[str]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            rows.setdefault(row[0], {}).setdefault(int(row[1]), []).append(row)
    out = {}
    for label, reps in rows.items():
        cols = {}
        for j, name in enumerate(CSV_COLUMNS[2:], start=2):
            cols[name] = np.array([[float(r[j]) for r in reps[k]] for k in sorted(reps)])
        out[label] = cols
    return out


def plot_series(csv_path: str | Path, group_by: str = "samples",
                metric: str = "convErr") -> dict[str, np.ndarray]:
    """Per-run ``(x, y, yLo, yHi)`` arrays with y the median over repetitions.

    Records that do not advance ``x`` (for example the averaging tail when
    grouping by samples) are dropped so every series is strictly increasing.
    """
    if group_by not in GROUP_KEYS:
        raise ValueError(f"unknown group key {group_by!r}; choose from {sorted(GROUP_KEYS)}")
    data = read_csv(csv_path)
    out = {}
    for label, cols in data.items():
        x = cols[GROUP_KEYS[group_by]][0]
        med, lo, hi = envelope(cols[metric])
        keep = np.concatenate([[True], np.diff(x) > 0]) if x.size else np.zeros(0, bool)
        out[label] = np.column_stack([x[keep], med[keep], lo[keep], hi[keep]])
    return out


def emit_plotdata(csv_path: str | Path, group_by: str = "samples",
                  out_dir: str | Path | None = None) -> list[Path]:
    """Write one ``<label>.<group_by>.csv`` file per run with columns x, y, yLo, yHi."""
    series = plot_series(csv_path, group_by)
    out_dir = Path(out_dir) if out_dir else Path(csv_path).with_suffix("")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for label, arr in series.items():
        p = out_dir / f"{label}.{group_by}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "yLo", "yHi"])
            for row in arr:
                w.writerow([_fmt(row[0]), _fmt(row[1]), _fmt(row[2]), _fmt(row[3])])
        paths.append(p)
    return paths


def rounds_to_threshold(x: np.ndarray, y: np.ndarray, threshold: float) -> float | None:
    """First ``x`` at which the series ``y`` drops to ``threshold`` or below."""
    hit = np.nonzero(y <= threshold)[0]
    return float(x[hit[0]]) if hit.size else None


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
