"""Out-of-sample evaluation: weighted quartile summaries by group, consumption
deciles, inclusion/exclusion error curves, weighted AUC, and the comparison
against a no-selection full model.

All quantities are survey-weighted. Quantiles interpolate linearly on the
weighted empirical CDF with plotting positions that reduce to numpy's default
(type 7) under equal weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import derive_seed
from .crossval import cv_lambda
from .data import SurveyDataset, encode_design
from .errors import ValidationError
from .scorecard import Scorecard, lookup_probability, score_household
from .solver import (
    ElasticNetFit,
    fit,
    predict_probability,
    weighted_deviance,
)

POOR = "poor"
NON_POOR = "non-poor"

GROUPINGS = ("national", "urban", "region", "decile")


@dataclass(frozen=True)
class PredictionSet:
    """Per-household predictions on a held-out set.

    scores and prob_lookup are absent for fits without a scorecard (the
    full-model comparison produces probability-only sets).
    """

    ids: tuple[str, ...]
    weights: np.ndarray
    regions: tuple[str, ...]
    labels: np.ndarray
    urban: tuple
    consumption: np.ndarray  # nan where missing
    prob_exact: np.ndarray
    scores: np.ndarray | None = None
    prob_lookup: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.ids)
        arrays = [self.weights, self.labels, self.consumption, self.prob_exact]
        if self.scores is not None:
            arrays.append(self.scores)
        if self.prob_lookup is not None:
            arrays.append(self.prob_lookup)
        if any(len(a) != n for a in arrays) or len(self.regions) != n or len(self.urban) != n:
            raise ValidationError("prediction arrays have mismatched lengths")
        if n == 0:
            raise ValidationError("empty prediction set")
        for probs in (self.prob_exact, self.prob_lookup):
            if probs is not None and not (np.all(probs > 0) and np.all(probs < 1)):
                raise ValidationError("probabilities must lie in (0, 1)")
        if self.scores is not None and not (
            np.all(self.scores >= 0) and np.all(self.scores <= 100)
        ):
            raise ValidationError("scores must lie in [0, 100]")

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class GroupSummary:
    grouping: str
    group: str
    status: str
    q25: float
    q50: float
    q75: float
    weighted_count: float
    n: int

    def __post_init__(self) -> None:
        if not self.q25 <= self.q50 <= self.q75:
            raise ValidationError("quartiles out of order")


@dataclass(frozen=True)
class ThresholdReport:
    thresholds: tuple[float, ...]
    exclusion: tuple[float, ...]  # share of poor with p <= t
    inclusion: tuple[float, ...]  # share of non-poor with p > t

    def __post_init__(self) -> None:
        if not (len(self.thresholds) == len(self.exclusion) == len(self.inclusion)):
            raise ValidationError("threshold arrays have mismatched lengths")
        if np.any(np.diff(self.exclusion) < 0):
            raise ValidationError("exclusion error must be non-decreasing in t")
        if np.any(np.diff(self.inclusion) > 0):
            raise ValidationError("inclusion error must be non-increasing in t")


def weighted_quantile(
    values: np.ndarray, weights: np.ndarray, q: float | np.ndarray
) -> float | np.ndarray:
    """Weighted quantile with linear interpolation on the weighted CDF.

    Plotting position of the k-th sorted value is C_{k-1} / (W - w_k) with
    C_{k-1} the weight accumulated strictly below it; under equal weights this
    is (k-1)/(n-1), numpy's default. Positions are strictly increasing for
    positive weights.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
        raise ValidationError("values and weights must be matching nonempty vectors")
    if np.any(weights <= 0):
        raise ValidationError("weights must be positive")
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    if v.size == 1:
        return np.full_like(np.asarray(q, dtype=np.float64), v[0]) if np.ndim(q) else float(v[0])
    total = float(w.sum())
    below = np.cumsum(w) - w
    pos = below / (total - w)
    out = np.interp(q, pos, v)
    return out if np.ndim(q) else float(out)


def _summarize(
    preds: PredictionSet, mask: np.ndarray, grouping: str, group: str, status: str
) -> GroupSummary:
    p = preds.prob_exact[mask]
    w = preds.weights[mask]
    q25, q50, q75 = weighted_quantile(p, w, np.array([0.25, 0.5, 0.75]))
    return GroupSummary(
        grouping=grouping,
        group=group,
        status=status,
        q25=float(q25),
        q50=float(q50),
        q75=float(q75),
        weighted_count=float(w.sum()),
        n=int(mask.sum()),
    )


def group_quartiles(
    preds: PredictionSet, grouping: str
) -> tuple[list[GroupSummary], list[str]]:
    """Survey-weighted quartiles of predicted probability per group and
    poverty status. Empty (group, status) cells are omitted with a note."""
    if grouping not in GROUPINGS:
        raise ValidationError(
            f"unknown grouping {grouping!r}; expected one of {GROUPINGS}"
        )
    if grouping == "national":
        groups = {"national": np.ones(preds.n, dtype=bool)}
    elif grouping == "urban":
        if any(u is None for u in preds.urban):
            raise ValidationError("urban flag missing on some records")
        flags = np.array([bool(u) for u in preds.urban])
        groups = {"urban": flags, "rural": ~flags}
    elif grouping == "region":
        regions = np.array(preds.regions)
        groups = {r: regions == r for r in dict.fromkeys(preds.regions)}
    else:
        deciles, _ = consumption_deciles(preds)
        groups = {str(d): deciles == d for d in range(1, 11)}
    summaries: list[GroupSummary] = []
    notes: list[str] = []
    poor = preds.labels == 1
    for group, gmask in groups.items():
        for status, smask in ((NON_POOR, ~poor), (POOR, poor)):
            mask = gmask & smask
            if not mask.any():
                notes.append(f"{grouping}={group}: no {status} households; omitted")
                continue
            summaries.append(_summarize(preds, mask, grouping, group, status))
    return summaries, notes


def consumption_deciles(preds: PredictionSet) -> tuple[np.ndarray, list[str]]:
    """Weighted decile index (1..10) per household, by consumption.

    Each household lands in the decile containing the start of its weight
    mass, so a household spanning a boundary is assigned the lower index.
    """
    c = preds.consumption
    if np.isnan(c).any():
        raise ValidationError("consumption missing on some records")
    w = preds.weights
    order = np.argsort(c, kind="stable")
    total = float(w[order].sum())
    below = np.cumsum(w[order]) - w[order]
    dec_sorted = np.floor(10.0 * below / total).astype(int) + 1
    deciles = np.empty(preds.n, dtype=int)
    deciles[order] = dec_sorted
    notes = []
    for pos, i in enumerate(order):
        share = w[i] / total
        if share >= 0.1:
            start = int(np.floor(10.0 * below[pos] / total)) + 1
            end = int(np.floor(10.0 * min(below[pos] + w[i], total * (1 - 1e-12)) / total)) + 1
            if end > start:
                notes.append(
                    f"household {preds.ids[i]} holds {share:.1%} of total weight "
                    f"and spans deciles {start}..{end}; assigned decile {start}"
                )
    return deciles, notes


def threshold_errors(preds: PredictionSet) -> ThresholdReport:
    """Weighted inclusion/exclusion errors over thresholds 0.00..1.00."""
    y = preds.labels
    if y.min() == y.max():
        raise ValidationError("threshold errors need both classes present")
    w = preds.weights
    p = preds.prob_exact
    poor = y == 1
    w_poor = float(w[poor].sum())
    w_rich = float(w[~poor].sum())
    thresholds = np.round(np.linspace(0.0, 1.0, 101), 2)
    exclusion = []
    inclusion = []
    for t in thresholds:
        exclusion.append(float(w[poor & (p <= t)].sum()) / w_poor)
        inclusion.append(float(w[~poor & (p > t)].sum()) / w_rich)
    return ThresholdReport(
        thresholds=tuple(float(t) for t in thresholds),
        exclusion=tuple(exclusion),
        inclusion=tuple(inclusion),
    )


def weighted_auc_rank(
    probs: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> float:
    """Exact weighted Mann-Whitney AUC with midrank tie handling."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if labels.min() == labels.max():
        raise ValidationError("AUC needs both classes present")
    order = np.argsort(probs, kind="stable")
    p = probs[order]
    y = labels[order]
    w = weights[order]
    w_pos = np.where(y == 1, w, 0.0)
    w_neg = np.where(y == 0, w, 0.0)
    total = 0.0
    cum_neg = 0.0
    i = 0
    n = len(p)
    while i < n:
        j = i
        tie_pos = 0.0
        tie_neg = 0.0
        while j < n and p[j] == p[i]:
            tie_pos += w_pos[j]
            tie_neg += w_neg[j]
            j += 1
        total += tie_pos * (cum_neg + 0.5 * tie_neg)
        cum_neg += tie_neg
        i = j
    denom = float(w_pos.sum()) * float(w_neg.sum())
    return float(total / denom)


def weighted_auc_grid(
    probs: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> float:
    """Trapezoid AUC over the ROC traced on the 101-threshold grid."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.min() == labels.max():
        raise ValidationError("AUC needs both classes present")
    weights = np.asarray(weights, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    poor = labels == 1
    w_poor = float(weights[poor].sum())
    w_rich = float(weights[~poor].sum())
    thresholds = np.linspace(0.0, 1.0, 101)
    tpr = [float(weights[poor & (probs > t)].sum()) / w_poor for t in thresholds]
    fpr = [float(weights[~poor & (probs > t)].sum()) / w_rich for t in thresholds]
    # thresholds ascending means the curve runs from (1,1) down to (0,0)
    fpr = np.array([1.0] + fpr + [0.0])
    tpr = np.array([1.0] + tpr + [0.0])
    return float(-np.trapezoid(tpr, fpr))


def predict_test(
    fit_: ElasticNetFit,
    card: Scorecard | None,
    test: SurveyDataset,
    train_ids: Sequence[str] | None = None,
) -> PredictionSet:
    """Exact and (when a scorecard is given) lookup predictions per household.

    train_ids, when provided, enforces train/test disjointness by id.
    """
    if train_ids is not None:
        overlap = set(test.ids) & set(train_ids)
        if overlap:
            sample = sorted(overlap)[:5]
            raise ValidationError(
                f"{len(overlap)} test ids overlap the training set "
                f"(first few: {sample})"
            )
    prob_exact = np.array(
        [predict_probability(fit_, rec) for rec in test.records], dtype=np.float64
    )
    scores = None
    prob_lookup = None
    if card is not None:
        scores = np.array(
            [score_household(card, rec.responses) for rec in test.records], dtype=int
        )
        prob_lookup = np.array(
            [
                lookup_probability(card, rec.region, int(s))
                for rec, s in zip(test.records, scores)
            ],
            dtype=np.float64,
        )
    consumption = np.array(
        [np.nan if rec.consumption is None else rec.consumption for rec in test.records]
    )
    w = test.raw_weights
    return PredictionSet(
        ids=test.ids,
        weights=w * (test.n / float(w.sum())),
        regions=tuple(rec.region for rec in test.records),
        labels=test.labels.copy(),
        urban=tuple(rec.urban for rec in test.records),
        consumption=consumption,
        prob_exact=prob_exact,
        scores=scores,
        prob_lookup=prob_lookup,
    )


def _model_report(preds: PredictionSet) -> dict:
    eta = np.log(preds.prob_exact / (1.0 - preds.prob_exact))
    summaries, _ = group_quartiles(preds, "national")
    return {
        "deviance": weighted_deviance(eta, preds.labels, preds.weights),
        "auc": weighted_auc_rank(preds.prob_exact, preds.labels, preds.weights),
        "national_quartiles": {
            s.status: [s.q25, s.q50, s.q75] for s in summaries
        },
    }


def compare_full_model(
    train: SurveyDataset,
    test: SurveyDataset,
    alpha: float,
    *,
    ten_fit: ElasticNetFit | None = None,
    selection_config=None,
    seed: int = 0,
    inner_cv_k: int = 10,
    n_lambda: int = 100,
    lambda_min_ratio: float | None = None,
    n_jobs: int = 1,
) -> dict:
    """Side-by-side test metrics for the 10-question model and the
    all-questions model fitted with the same solver at its own lambda_min.

    When ten_fit is omitted the full selection pipeline runs here with
    selection_config (falling back to defaults).
    """
    if ten_fit is None:
        from .selection import (
            SelectionConfig,
            select_top_questions,
            selection_frequencies,
        )

        config = selection_config or SelectionConfig(seed=seed)
        table = selection_frequencies(train, alpha, config, n_jobs=n_jobs)
        chosen = select_top_questions(table, config.k_questions)
        enc_ten = encode_design(train, chosen.questions)
        curve_ten = cv_lambda(
            enc_ten, alpha, k=config.inner_cv_k, seed=derive_seed(seed, 1),
            n_lambda=n_lambda, lambda_min_ratio=lambda_min_ratio, n_jobs=n_jobs,
        )
        ten_fit = fit(enc_ten, curve_ten.lambda_min, alpha)

    enc_full = encode_design(train)
    curve_full = cv_lambda(
        enc_full, alpha, k=inner_cv_k, seed=derive_seed(seed, 2),
        n_lambda=n_lambda, lambda_min_ratio=lambda_min_ratio, n_jobs=n_jobs,
    )
    full_fit = fit(enc_full, curve_full.lambda_min, alpha)

    preds_ten = predict_test(ten_fit, None, test, train_ids=train.ids)
    preds_full = predict_test(full_fit, None, test, train_ids=train.ids)

    w = preds_ten.weights
    y = preds_ten.labels
    rate = float(np.sum(w * y) / np.sum(w))
    eta_null = np.full(len(y), np.log(rate / (1.0 - rate)))
    return {
        "ten_question": _model_report(preds_ten),
        "full_model": {
            **_model_report(preds_full),
            "lambda": curve_full.lambda_min,
            "n_questions": len(full_fit.questions),
        },
        "null_deviance": weighted_deviance(eta_null, y, w),
        "alpha": float(alpha),
    }
