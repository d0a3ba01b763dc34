"""Communication topologies and gossip averaging."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import SpecError

STOCH_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CommMatrix:
    """Doubly stochastic mixing matrix with its adjacency and ``sigma2``."""

    weights: np.ndarray
    adjacency: np.ndarray
    sigma2: float

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_weights(cls, weights, check: bool = True) -> "CommMatrix":
        w = np.array(weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be square")
        cm = cls(w, w > 0, second_singular_value(w))
        if check:
            problem = validate(cm)
            if problem is not None:
                raise ValueError(problem)
        return cm


def second_singular_value(weights: np.ndarray) -> float:
    """Second-largest singular value; defined as 0 for a 1x1 matrix."""
    w = np.asarray(weights, dtype=float)
    if w.shape[0] == 1:
        return 0.0
    sv = np.linalg.svd(w, compute_uv=False)
    return float(sv[1])


def validate(v: CommMatrix) -> str | None:
    """Return ``None`` when ``v`` is a valid mixing matrix, else the first violation."""
    w = v.weights
    if np.any(w < 0):
        return "negative weights"
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > STOCH_TOL:
        return "row sums differ from 1"
    if np.max(np.abs(w.sum(axis=0) - 1.0)) > STOCH_TOL:
        return "column sums differ from 1"
    if not np.array_equal(w > 0, np.asarray(v.adjacency, dtype=bool)):
        return "adjacency does not match positive weights"
    if v.m > 1 and v.sigma2 >= 1.0 - STOCH_TOL:
        return f"σ₂={v.sigma2:.12g} >= 1 (network not connected)"
    return None


def build_fully_connected(m: int, diag: float = 0.8) -> CommMatrix:
    """``diag`` on the diagonal, ``(1 - diag)/(m - 1)`` elsewhere."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0.0 < diag <= 1.0:
        raise ValueError("diag must lie in (0, 1]")
    if m == 1:
        if diag != 1.0:
            raise ValueError("a single agent needs diag = 1")
        return CommMatrix(np.ones((1, 1)), np.ones((1, 1), dtype=bool), 0.0)
    off = (1.0 - diag) / (m - 1)
    w = np.full((m, m), off)
    np.fill_diagonal(w, diag)
    return CommMatrix.from_weights(w)


def build_ring(m: int, diag: float = 0.8, neighbor: float = 0.1) -> CommMatrix:
    """Circulant ring: self-weight ``diag``, each of the two neighbors ``neighbor``."""
    if m < 3:
        raise ValueError("a ring needs at least 3 agents")
    if abs(diag + 2 * neighbor - 1.0) > STOCH_TOL:
        raise ValueError("diag + 2*neighbor must equal 1")
    w = diag * np.eye(m)
    idx = np.arange(m)
    w[idx, (idx + 1) % m] += neighbor
    w[idx, (idx - 1) % m] += neighbor
    return CommMatrix.from_weights(w)


def gossip_round(x: np.ndarray, v: CommMatrix) -> np.ndarray:
    """One synchronous neighbor-averaging round, ``V @ x``."""
    if x.shape[0] != v.m:
        raise ValueError(f"expected {v.m} rows, got {x.shape[0]}")
    return v.weights @ x


def difference(x: np.ndarray) -> np.ndarray:
    """Apply ``I - (1/M) 1 1^T`` along the agent axis."""
    return x - x.mean(axis=0, keepdims=True)


def consensus_error(x: np.ndarray) -> tuple[float, float]:
    """Frobenius norm of the disagreement and the largest per-agent deviation."""
    dx = difference(np.asarray(x, dtype=float).reshape(x.shape[0], -1))
    return float(np.linalg.norm(dx)), float(np.linalg.norm(dx, axis=1).max())


def load_topology(path: str | Path, check: bool = True) -> CommMatrix:
    """Read a topology file (``m``, row-major ``weights``, optional ``sigma2``).

    ``check=False`` skips matrix validation so invalid topologies can be fed
    to the verification suite.
    """
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SpecError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "m" not in doc or "weights" not in doc:
        raise SpecError(f"{path}: topology needs keys 'm' and 'weights'")
    extra = set(doc) - {"m", "weights", "sigma2"}
    if extra:
        raise SpecError(f"{path}: unknown keys {sorted(extra)}")
    m = int(doc["m"])
    flat = np.asarray(doc["weights"], dtype=float).ravel()
    if flat.size != m * m:
        raise SpecError(f"{path}: expected {m * m} weights, got {flat.size}")
    w = flat.reshape(m, m)
    cm = CommMatrix(w, w > 0, second_singular_value(w))
    problem = validate(cm) if check else None
    if problem is not None:
        raise SpecError(f"{path}: {problem}")
    if doc.get("sigma2") is not None and abs(float(doc["sigma2"]) - cm.sigma2) > 1e-9:
        raise SpecError(f"{path}: stated sigma2 {doc['sigma2']} != computed {cm.sigma2:.12g}")
    return cm


def save_topology(v: CommMatrix, path: str | Path) -> None:
    doc = {"m": v.m, "weights": v.weights.ravel().tolist(), "sigma2": v.sigma2}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
