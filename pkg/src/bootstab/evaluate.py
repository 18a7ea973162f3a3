"""Stability and discrimination metrics.

MAD measures how far a model's test predictions sit from the per-row median
of the bootstrap members' predictions. Deviation p-values are the fraction of
members deviating from that median at least as much as the model does. AUC is
the Mann-Whitney pair statistic (ties count one half); spearman uses midranks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CLAMP_EPS, clamp_probs


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionPanel:
    """Model predictions next to the bootstrap members' predictions.

    target_preds: (N,) clamped probabilities of the model under evaluation.
    boot_preds: (N, M) clamped member probabilities on the same rows.
    boot_median: (N,) midpoint median over members.
    """

    target_preds: np.ndarray
    boot_preds: np.ndarray
    boot_median: np.ndarray

    @classmethod
    def build(cls, target_preds, boot_preds, eps: float = CLAMP_EPS) -> "PredictionPanel":
        target = clamp_probs(np.asarray(target_preds, dtype=np.float64).ravel(), eps)
        boot = clamp_probs(np.asarray(boot_preds, dtype=np.float64), eps)
        if boot.ndim != 2 or boot.shape[0] != target.shape[0]:
            raise EvaluationError(
                f"boot_preds must be (N, M) aligned with target, got {boot.shape}"
            )
        if target.shape[0] == 0:
            raise EvaluationError("empty panel")
        return cls(
            target_preds=target,
            boot_preds=boot,
            boot_median=np.median(boot, axis=1),
        )

    def with_target(self, target_preds, eps: float = CLAMP_EPS) -> "PredictionPanel":
        """Same bootstrap reference, different model under evaluation."""
        target = clamp_probs(np.asarray(target_preds, dtype=np.float64).ravel(), eps)
        if target.shape != self.boot_median.shape:
            raise EvaluationError("target length mismatch with panel")
        return PredictionPanel(
            target_preds=target, boot_preds=self.boot_preds, boot_median=self.boot_median
        )

    @property
    def n(self) -> int:
        return self.target_preds.shape[0]

    @property
    def m(self) -> int:
        return self.boot_preds.shape[1]

    def degenerate_rows(self) -> np.ndarray:
        """Rows where every bootstrap member predicts the same value."""
        return (self.boot_preds == self.boot_preds[:, :1]).all(axis=1)


@dataclass
class EvalReport:
    mad: float
    auc: float
    pvalues: np.ndarray
    sig_fraction: float
    closer_fraction: float
    n_closer_ties: int
    n_degenerate: int
    threshold: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mad": self.mad,
            "auc": self.auc,
            "sig_fraction": self.sig_fraction,
            "closer_fraction": self.closer_fraction,
            "n_closer_ties": self.n_closer_ties,
            "n_degenerate": self.n_degenerate,
            "threshold": self.threshold,
            "n_rows": int(len(self.pvalues)),
            "pvalues": [float(v) for v in self.pvalues],
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            mad=d["mad"],
            auc=d["auc"],
            pvalues=np.asarray(d["pvalues"], dtype=np.float64),
            sig_fraction=d["sig_fraction"],
            closer_fraction=d["closer_fraction"],
            n_closer_ties=d["n_closer_ties"],
            n_degenerate=d["n_degenerate"],
            threshold=d["threshold"],
            metadata=d.get("metadata", {}),
        )


def mad(panel: PredictionPanel) -> float:
    """Mean absolute difference between target predictions and boot medians."""
    return float(np.mean(np.abs(panel.target_preds - panel.boot_median)))


def deviation_pvalues(panel: PredictionPanel) -> np.ndarray:
    """Per row: fraction of members deviating from the median at least as much
    as the target does (inclusive comparison, no smoothing)."""
    if panel.m < 2:
        raise EvaluationError("need at least 2 bootstrap members")
    target_dev = np.abs(panel.target_preds - panel.boot_median)
    boot_dev = np.abs(panel.boot_preds - panel.boot_median[:, None])
    return (boot_dev >= target_dev[:, None]).mean(axis=1)


def _midranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); tied values share the midpoint rank."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(preds, labels) -> float:
    """Mann-Whitney AUC via midranks: P(score_pos > score_neg) + 0.5 P(tie)."""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if preds.shape != labels.shape:
        raise EvaluationError("length mismatch")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("single-class labels")
    ranks = _midranks(preds)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def spearman(a, b) -> float:
    """Pearson correlation of midranked values; NaN when either is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.shape[0] < 2:
        raise EvaluationError("need two equal-length vectors of length >= 2")
    ra, rb = _midranks(a), _midranks(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0.0 or sb == 0.0:
        return float("nan")  # undefined for constant input
    return float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))


def evaluate_model(
    model_preds,
    standard_preds,
    panel: PredictionPanel,
    labels,
    threshold: float = 0.05,
    metadata: dict | None = None,
) -> EvalReport:
    """Assemble MAD, AUC, deviation p-values, and closer-than-standard stats.

    ``closer_fraction`` counts rows where the model sits strictly closer to
    the bootstrap median than the standard model; exact ties are excluded
    from both numerator and denominator and reported separately.
    """
    panel = panel.with_target(model_preds)
    standard = clamp_probs(np.asarray(standard_preds, dtype=np.float64).ravel())
    if standard.shape[0] != panel.n:
        raise EvaluationError("standard_preds length mismatch with panel")

    pvalues = deviation_pvalues(panel)
    model_dev = np.abs(panel.target_preds - panel.boot_median)
    standard_dev = np.abs(standard - panel.boot_median)
    ties = model_dev == standard_dev
    n_ties = int(ties.sum())
    comparable = panel.n - n_ties
    closer = float((model_dev[~ties] < standard_dev[~ties]).mean()) if comparable else 0.0

    return EvalReport(
        mad=mad(panel),
        auc=auc(panel.target_preds, labels),
        pvalues=pvalues,
        sig_fraction=float((pvalues < threshold).mean()),
        closer_fraction=closer,
        n_closer_ties=n_ties,
        n_degenerate=int(panel.degenerate_rows().sum()),
        threshold=threshold,
        metadata=metadata or {},
    )


def export_panel_csv(panel: PredictionPanel, path, row_ids=None, extra_preds: dict | None = None) -> None:
    """Long-format per-row panel: row_id, source, prediction.

    ``extra_preds`` maps a model tag to its (N,) prediction vector; bootstrap
    members are written as member_###. Feeds the per-row violin plots.
    """
    row_ids = np.arange(panel.n) if row_ids is None else np.asarray(row_ids)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "source", "prediction"])
        for i in range(panel.n):
            for m in range(panel.m):
                writer.writerow([int(row_ids[i]), f"member_{m:03d}", repr(float(panel.boot_preds[i, m]))])
            for tag, preds in (extra_preds or {}).items():
                writer.writerow([int(row_ids[i]), tag, repr(float(preds[i]))])


def export_pvalue_hist_csv(pvalues_by_model: dict, path, n_bins: int = 20) -> None:
    """Histogram bins of deviation p-values per model (plot-ready CSV)."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "bin_left", "bin_right", "count"])
        for tag, pv in pvalues_by_model.items():
            counts, _ = np.histogram(np.asarray(pv), bins=edges)
            for k in range(n_bins):
                writer.writerow([tag, repr(float(edges[k])), repr(float(edges[k + 1])), int(counts[k])])
