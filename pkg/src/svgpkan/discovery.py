"""Post-hoc structural discovery on a trained model.

Feature relevance is measured by permutation importance: shuffle one input
column of the held-out set, re-predict, and record the increase in MSE.
Features whose importance is a negligible fraction of the largest one are
treated as noise. Functional form per input edge is read off the learned
lengthscale: a lengthscale much larger than the input range means the RBF
kernel has linearized, a much smaller one means high-frequency behavior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Model, predict

DEFAULT_REPEATS = 10
DEFAULT_TAU = 0.05

# Lengthscale / input-range thresholds for functional-form labels. On a
# standardized range of ~2 the linear threshold corresponds to a learned
# lengthscale above ~3.
LINEAR_RATIO = 1.5
HIGH_FREQ_RATIO = 0.25

LABEL_LINEAR = "linear"
LABEL_SMOOTH = "smooth-nonlinear"
LABEL_HIGH_FREQ = "high-frequency"


@dataclass
class ImportanceReport:
    feature_names: list[str]
    baseline_mse: float
    delta_mse_mean: np.ndarray        # (D,)
    delta_mse_sd: np.ndarray          # (D,)
    repeats: int
    tau: float
    selected: list[int] = field(default_factory=list)
    edge_labels: dict = field(default_factory=dict)  # "j,i" -> label (input layer)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "baseline_mse": self.baseline_mse,
            "delta_mse_mean": self.delta_mse_mean.tolist(),
            "delta_mse_sd": self.delta_mse_sd.tolist(),
            "repeats": self.repeats,
            "tau": self.tau,
            "selected": list(self.selected),
            "edge_labels": dict(self.edge_labels),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceReport":
        return cls(
            feature_names=list(d["feature_names"]),
            baseline_mse=float(d["baseline_mse"]),
            delta_mse_mean=np.asarray(d["delta_mse_mean"], dtype=np.float64),
            delta_mse_sd=np.asarray(d["delta_mse_sd"], dtype=np.float64),
            repeats=int(d["repeats"]),
            tau=float(d["tau"]),
            selected=list(d["selected"]),
            edge_labels=dict(d["edge_labels"]),
        )


def permutation_importance(
    model: Model,
    X_test: np.ndarray,
    y_test: np.ndarray,
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
    _identity_permutations: bool = False,
):
    """Per-feature (mean, sd) of the MSE increase under column shuffles.

    Each (feature, repeat) pair gets its own PCG64 stream spawned from `seed`,
    so importances do not depend on the order features are examined and
    repeats could run in parallel without changing the result.
    """
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    y_test = np.asarray(y_test, dtype=np.float64)
    if X_test.shape[0] < 2:
        raise ValueError("permutation importance needs at least 2 test samples")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n, d = X_test.shape
    mean_pred, _, _ = predict(model, X_test)
    baseline = float(np.mean((mean_pred - y_test) ** 2))
    streams = np.random.SeedSequence(seed).spawn(d * repeats)
    deltas = np.zeros((d, repeats))
    for i in range(d):
        for r in range(repeats):
            if _identity_permutations:
                perm = np.arange(n)
            else:
                rng = np.random.Generator(np.random.PCG64(streams[i * repeats + r]))
                perm = rng.permutation(n)
            x_perm = X_test.copy()
            x_perm[:, i] = X_test[perm, i]
            mean_perm, _, _ = predict(model, x_perm)
            deltas[i, r] = float(np.mean((mean_perm - y_test) ** 2)) - baseline
    return baseline, deltas.mean(axis=1), deltas.std(axis=1, ddof=0)


def select_features(delta_mse_mean: np.ndarray, tau: float = DEFAULT_TAU) -> list[int]:
    """Indices whose importance exceeds tau times the largest importance."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    imp = np.asarray(delta_mse_mean, dtype=np.float64)
    peak = np.max(imp) if imp.size else 0.0
    if peak <= 0.0:
        return []
    return [int(i) for i in np.flatnonzero(imp > tau * peak)]


def selection_stability(reports: list[ImportanceReport]) -> np.ndarray:
    """Per-feature selection rate across independent trials."""
    if not reports:
        raise ValueError("need at least one report")
    d = len(reports[0].feature_names)
    counts = np.zeros(d)
    for rep in reports:
        for i in rep.selected:
            counts[i] += 1
    return counts / len(reports)


def classify_edge_lengthscale(lengthscale: float, input_range: float) -> str:
    if input_range <= 0:
        raise ValueError("input range must be positive")
    ratio = lengthscale / input_range
    if ratio > LINEAR_RATIO:
        return LABEL_LINEAR
    if ratio < HIGH_FREQ_RATIO:
        return LABEL_HIGH_FREQ
    return LABEL_SMOOTH


def classify_edges(model: Model, input_range_per_feature) -> dict:
    """Label every input-layer edge by its learned lengthscale.

    `input_range_per_feature` holds the standardized range (max - min) of
    each raw input feature. Returns {"j,i": label} for the first layer; hidden
    layers see mixed activations, so per-edge attribution stops at the inputs.
    """
    ranges = np.asarray(input_range_per_feature, dtype=np.float64)
    first = model.layers[0]
    if ranges.shape[0] != first.d_in:
        raise ValueError(f"expected {first.d_in} input ranges, got {ranges.shape[0]}")
    lengthscales = np.exp(np.asarray(first.params["log_ls"]))
    labels = {}
    for j in range(first.d_out):
        for i in range(first.d_in):
            ls = float(lengthscales[j * first.d_in + i])
            labels[f"{j},{i}"] = classify_edge_lengthscale(ls, float(ranges[i]))
    return labels


def run_importance(
    model: Model,
    X_test: np.ndarray,
    y_test: np.ndarray,
    feature_names: list[str],
    repeats: int = DEFAULT_REPEATS,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
    input_ranges: np.ndarray | None = None,
) -> ImportanceReport:
    """Full discovery pass: importance, selection, and edge labels."""
    baseline, mean, sd = permutation_importance(model, X_test, y_test, repeats=repeats, seed=seed)
    if input_ranges is None:
        xs = model.standardizer.apply(X_test)
        input_ranges = xs.max(axis=0) - xs.min(axis=0)
    return ImportanceReport(
        feature_names=list(feature_names),
        baseline_mse=baseline,
        delta_mse_mean=mean,
        delta_mse_sd=sd,
        repeats=repeats,
        tau=tau,
        selected=select_features(mean, tau),
        edge_labels=classify_edges(model, input_ranges),
    )
