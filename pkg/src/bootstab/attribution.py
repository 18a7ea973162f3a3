"""Shapley-value feature attributions for any prediction function.

Uses the interventional value convention: the value of a feature coalition at
a point x is the mean prediction over a background sample with the features
outside the coalition replaced by the background rows' values. The exact
estimator enumerates all 2^P coalitions (guarded to P <= 15); the sampling
estimator averages marginal contributions over random feature orderings and
is unbiased for the exact one.

Both satisfy local accuracy: base value plus the attribution sum equals the
prediction at x (exactly for enumeration, to summation order for sampling,
since contributions telescope along each ordering).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluate import spearman
from .rng import child_seed, make_rng

MAX_ENUMERATION_FEATURES = 15


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionMatrix:
    """Per-row, per-feature Shapley contributions in probability units."""

    values: np.ndarray
    base_value: float
    row_ids: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", np.asarray(self.row_ids, dtype=np.int64))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if values.ndim != 2:
            raise AttributionError("values must be (n_rows, n_features)")
        if len(self.row_ids) != values.shape[0] or len(self.feature_names) != values.shape[1]:
            raise AttributionError("row_ids / feature_names shape mismatch")


@dataclass(frozen=True)
class AgreementReport:
    """Spearman agreement between two models' attribution matrices.

    Undefined correlations (constant input) are NaN.
    """

    global_rho: float
    per_participant_rho: np.ndarray
    per_feature_rho: np.ndarray

    def to_dict(self) -> dict:
        def _clean(v):
            return None if math.isnan(v) else float(v)

        return {
            "global_rho": _clean(self.global_rho),
            "per_participant_rho": [_clean(v) for v in self.per_participant_rho],
            "per_feature_rho": [_clean(v) for v in self.per_feature_rho],
        }


@dataclass(frozen=True)
class EnsembleAttributionSpread:
    """Attribution variability across ensemble members.

    ``stds`` is the population standard deviation of Shapley values across
    members, per (row, feature). ``rankings[k]`` is member k's importance
    ranking (1 = most important, by mean |value| across rows).
    """

    stds: np.ndarray
    member_importance: np.ndarray
    rankings: np.ndarray
    feature_names: tuple[str, ...]
    row_ids: np.ndarray
    member_values: np.ndarray

    def rank_ranges(self) -> np.ndarray:
        """Per feature: spread of its rank across members (max - min)."""
        return self.rankings.max(axis=0) - self.rankings.min(axis=0)


def _coalition_values(predict_fn, x, background, masks, chunk_rows: int = 200_000):
    """Mean prediction over the background for each coalition mask row.

    ``masks`` is (n_masks, P) boolean: True -> feature taken from x,
    False -> from the background row.
    """
    bg = np.asarray(background, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).ravel()
    n_bg, p = bg.shape
    n_masks = masks.shape[0]
    chunk = max(1, chunk_rows // n_bg)
    values = np.empty(n_masks)
    for start in range(0, n_masks, chunk):
        part = masks[start : start + chunk]
        hybrid = np.where(part[:, None, :], x[None, None, :], bg[None, :, :])
        preds = np.asarray(predict_fn(hybrid.reshape(-1, p)), dtype=np.float64)
        values[start : start + chunk] = preds.reshape(len(part), n_bg).mean(axis=1)
    return values


def shapley_exact(predict_fn, x, background) -> np.ndarray:
    """Exact interventional Shapley values by coalition enumeration."""
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or bg.shape[0] < 1:
        raise AttributionError("background must be a non-empty matrix")
    p = x.shape[0]
    if p > MAX_ENUMERATION_FEATURES:
        raise AttributionError(
            f"enumeration over 2^{p} coalitions refused (limit {MAX_ENUMERATION_FEATURES})"
        )

    n_masks = 1 << p
    mask_ids = np.arange(n_masks, dtype=np.uint32)
    bits = (mask_ids[:, None] >> np.arange(p)[None, :]) & 1
    values = _coalition_values(predict_fn, x, bg, bits.astype(bool))

    sizes = bits.sum(axis=1)
    fact = np.array([math.factorial(k) for k in range(p + 1)], dtype=np.float64)
    weights = fact[sizes] * fact[p - 1 - sizes.clip(max=p - 1)] / fact[p]

    phi = np.empty(p)
    for j in range(p):
        without = (bits[:, j] == 0).nonzero()[0]
        phi[j] = (weights[without] * (values[without | (1 << j)] - values[without])).sum()
    return phi


def shapley_sample(predict_fn, x, background, n_permutations: int, seed: int) -> np.ndarray:
    """Permutation-sampling Shapley estimate; deterministic per seed."""
    if n_permutations < 1:
        raise AttributionError("n_permutations must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or bg.shape[0] < 1:
        raise AttributionError("background must be a non-empty matrix")
    p = x.shape[0]
    rng = make_rng(seed)

    base = float(np.mean(predict_fn(bg)))
    fx = float(np.mean(predict_fn(x.reshape(1, -1))))
    if p == 1:
        return np.array([fx - base])

    # pos[i, f]: position of feature f in ordering i; prefix t holds f iff pos < t
    order = np.argsort(rng.random((n_permutations, p)), axis=1)
    pos = np.argsort(order, axis=1)

    phi = np.zeros(p)
    chunk = max(1, 200_000 // (bg.shape[0] * (p - 1)))
    for start in range(0, n_permutations, chunk):
        pos_c = pos[start : start + chunk]
        n_c = pos_c.shape[0]
        # interior prefix masks for t = 1..p-1; v(empty)=base and v(full)=fx are known
        masks = pos_c[:, None, :] < np.arange(1, p)[None, :, None]
        values = _coalition_values(
            predict_fn, x, bg, masks.reshape(n_c * (p - 1), p)
        ).reshape(n_c, p - 1)
        table = np.concatenate(
            [np.full((n_c, 1), base), values, np.full((n_c, 1), fx)], axis=1
        )
        rows = np.arange(n_c)[:, None]
        phi += (table[rows, pos_c + 1] - table[rows, pos_c]).sum(axis=0)
    return phi / n_permutations


def explain_rows(
    predict_fn,
    X,
    background,
    feature_names,
    n_permutations: int = 128,
    seed: int = 0,
    row_ids=None,
    exact: bool = False,
) -> AttributionMatrix:
    """Attribution matrix for several rows; one child seed per row."""
    X = np.asarray(X, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    row_ids = np.arange(X.shape[0]) if row_ids is None else np.asarray(row_ids)
    values = np.empty((X.shape[0], X.shape[1]))
    for i in range(X.shape[0]):
        if exact:
            values[i] = shapley_exact(predict_fn, X[i], bg)
        else:
            values[i] = shapley_sample(
                predict_fn, X[i], bg, n_permutations, child_seed(seed, "row", i)
            )
    return AttributionMatrix(
        values=values,
        base_value=float(np.mean(predict_fn(bg))),
        row_ids=row_ids,
        feature_names=tuple(feature_names),
    )


def agreement(attr_a: AttributionMatrix, attr_b: AttributionMatrix) -> AgreementReport:
    """Spearman agreement: global (flattened), per participant, per feature."""
    a, b = attr_a.values, attr_b.values
    if a.shape != b.shape:
        raise AttributionError(f"shape mismatch: {a.shape} vs {b.shape}")
    per_row = np.array([spearman(a[i], b[i]) if a.shape[1] >= 2 else np.nan for i in range(a.shape[0])])
    per_feature = np.array(
        [spearman(a[:, j], b[:, j]) if a.shape[0] >= 2 else np.nan for j in range(a.shape[1])]
    )
    return AgreementReport(
        global_rho=spearman(a.ravel(), b.ravel()),
        per_participant_rho=per_row,
        per_feature_rho=per_feature,
    )


def ensemble_spread(
    predict_fns,
    X_explain,
    background,
    feature_names,
    n_permutations: int = 32,
    seed: int = 0,
    row_ids=None,
) -> EnsembleAttributionSpread:
    """Attribution variability across K ensemble members (K >= 2).

    Every member shares the same per-row permutation stream (common random
    numbers), so the reported spread reflects differences between the models
    rather than estimator noise; identical members give exactly zero spread.
    Each (member, row) computation is pure and schedule-independent.
    """
    predict_fns = list(predict_fns)
    if len(predict_fns) < 2:
        raise AttributionError("need at least 2 members")
    X = np.asarray(X_explain, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    row_ids = np.arange(X.shape[0]) if row_ids is None else np.asarray(row_ids)

    k = len(predict_fns)
    values = np.empty((k, X.shape[0], X.shape[1]))
    for ki, fn in enumerate(predict_fns):
        for i in range(X.shape[0]):
            values[ki, i] = shapley_sample(
                fn, X[i], bg, n_permutations, child_seed(seed, "row", i)
            )

    importance = np.abs(values).mean(axis=1)  # (K, P)
    rankings = np.empty_like(importance, dtype=np.int64)
    for ki in range(k):
        order = np.argsort(-importance[ki], kind="stable")
        rankings[ki, order] = np.arange(1, X.shape[1] + 1)

    return EnsembleAttributionSpread(
        stds=values.std(axis=0),
        member_importance=importance,
        rankings=rankings,
        feature_names=tuple(feature_names),
        row_ids=row_ids,
        member_values=values,
    )


def export_attributions_csv(attr: AttributionMatrix, path) -> None:
    """Long format: row_id, feature, value."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "feature", "value"])
        for i, rid in enumerate(attr.row_ids):
            for j, name in enumerate(attr.feature_names):
                writer.writerow([int(rid), name, repr(float(attr.values[i, j]))])


def export_spread_csv(spread: EnsembleAttributionSpread, values_path, rankings_path) -> None:
    """Violin-ready member values plus the per-member ranking table."""
    with open(Path(values_path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["member_id", "row_id", "feature", "value", "std"])
        k, n, p = spread.member_values.shape
        for ki in range(k):
            for i in range(n):
                for j in range(p):
                    writer.writerow(
                        [
                            ki,
                            int(spread.row_ids[i]),
                            spread.feature_names[j],
                            repr(float(spread.member_values[ki, i, j])),
                            repr(float(spread.stds[i, j])),
                        ]
                    )
    with open(Path(rankings_path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["member_id"] + list(spread.feature_names))
        for ki in range(spread.rankings.shape[0]):
            writer.writerow([ki] + [int(r) for r in spread.rankings[ki]])


def save_agreement(report: AgreementReport, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
