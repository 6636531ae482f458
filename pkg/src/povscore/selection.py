"""Bootstrap variable selection: m-out-of-n resampling, per-replicate
elastic-net active sets, frequency aggregation at the question level, and
top-k question choice.

A question counts as selected in a replicate when any of its level
coefficients is nonzero in that replicate's chosen fit. Replicates derive
their randomness from (seed, replicate_index) only, so results do not depend
on execution order or on the row order of the input dataset.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ._util import derive_seed
from .crossval import cv_lambda
from .data import SurveyDataset, encode_design
from .errors import NumericalError, PovscoreError, ValidationError
from .solver import fit, fit_path, weighted_column_scales

_MAX_DRAW_ATTEMPTS = 10
_MIN_SUBSAMPLE = 30


@dataclass(frozen=True)
class SelectionConfig:
    n_bootstrap: int = 100
    subsample_fraction: float = 0.5
    with_replacement: bool = False
    k_questions: int = 10
    inner_cv_k: int = 10
    lambda_rule: str = "1se"
    seed: int = 0
    n_lambda: int = 100
    lambda_min_ratio: float | None = None

    def __post_init__(self) -> None:
        if self.n_bootstrap < 1:
            raise ValidationError("n_bootstrap must be at least 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValidationError("subsample_fraction must lie in (0, 1]")
        if self.k_questions < 1:
            raise ValidationError("k_questions must be at least 1")
        if self.inner_cv_k < 2:
            raise ValidationError("inner_cv_k must be at least 2")
        if self.lambda_rule not in ("min", "1se"):
            raise ValidationError(
                f"lambda_rule must be 'min' or '1se', got {self.lambda_rule!r}"
            )

    def subsample_size(self, n: int) -> int:
        return math.ceil(self.subsample_fraction * n)

    def to_dict(self) -> dict:
        return {
            "n_bootstrap": self.n_bootstrap,
            "subsample_fraction": self.subsample_fraction,
            "with_replacement": self.with_replacement,
            "k_questions": self.k_questions,
            "inner_cv_k": self.inner_cv_k,
            "lambda_rule": self.lambda_rule,
            "seed": self.seed,
            "n_lambda": self.n_lambda,
            "lambda_min_ratio": self.lambda_min_ratio,
        }


@dataclass(frozen=True)
class SelectionFrequencyTable:
    """Per-question selection counts over B successful replicates."""

    counts: dict[str, int]
    B: int
    n_failed: int
    active_sets: tuple[frozenset, ...]
    strengths: tuple[dict, ...]  # per replicate: qid -> mean |coef|*scale
    candidates: tuple[str, ...]

    def __post_init__(self) -> None:
        for qid, c in self.counts.items():
            if not 0 <= c <= self.B:
                raise ValidationError(
                    f"count for {qid!r} outside [0, B={self.B}]: {c}"
                )
        if len(self.active_sets) != self.B or len(self.strengths) != self.B:
            raise ValidationError("per-replicate records must match B")

    def frequency(self, qid: str) -> float:
        return self.counts[qid] / self.B if self.B else 0.0

    def mean_strength(self, qid: str) -> float:
        vals = [s[qid] for s in self.strengths if qid in s]
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "B": self.B,
            "n_failed": self.n_failed,
            "active_sets": [sorted(s) for s in self.active_sets],
            "mean_strengths": {q: self.mean_strength(q) for q in self.candidates},
            "candidates": list(self.candidates),
        }


@dataclass(frozen=True)
class SelectedQuestionSet:
    questions: tuple[str, ...]
    tie_note: str | None = None

    def __post_init__(self) -> None:
        if len(set(self.questions)) != len(self.questions):
            raise ValidationError("selected questions must be distinct")


def draw_subsample(
    dataset: SurveyDataset, config: SelectionConfig, replicate_index: int
) -> SurveyDataset:
    """m records drawn uniformly, keyed by record id so that permuting the
    input rows leaves the draw unchanged. Redraws when single-class."""
    n = dataset.n
    m = config.subsample_size(n)
    if m < _MIN_SUBSAMPLE:
        raise ValidationError(
            f"subsample size {m} is below the minimum of {_MIN_SUBSAMPLE}"
        )
    by_id = np.argsort(np.asarray(dataset.ids))
    for attempt in range(_MAX_DRAW_ATTEMPTS):
        rng = np.random.default_rng(
            derive_seed(config.seed, replicate_index, attempt)
        )
        pick = rng.choice(n, size=m, replace=config.with_replacement)
        idx = by_id[pick]
        sub = dataset.subset(idx)
        labels = sub.labels
        if labels.min() != labels.max():
            return sub
    raise NumericalError(
        f"replicate {replicate_index}: drew a single-class subsample "
        f"{_MAX_DRAW_ATTEMPTS} times in a row"
    )


def _replicate_detail(
    subsample: SurveyDataset,
    alpha: float,
    config: SelectionConfig,
    cv_seed: int,
    lambda_override: float | None,
) -> tuple[set, dict]:
    """Active question set plus per-question standardized strength."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # single-level drops are routine here
        enc = encode_design(subsample)
    if lambda_override is not None:
        chosen = fit(enc, float(lambda_override), alpha)
    else:
        curve = cv_lambda(
            enc,
            alpha,
            k=config.inner_cv_k,
            seed=cv_seed,
            n_lambda=config.n_lambda,
            lambda_min_ratio=config.lambda_min_ratio,
        )
        lam = curve.lambda_1se if config.lambda_rule == "1se" else curve.lambda_min
        # refit on the full subsample, warm-started down the shared grid
        grid = np.asarray(curve.lambdas[: curve.index_of(lam) + 1])
        chosen = fit_path(enc, alpha, lambdas=grid).fits[-1]
    scales = weighted_column_scales(enc)
    col_scale = {
        (c.question, c.level): scales[j]
        for j, c in enumerate(enc.columns)
        if c.kind == "question"
    }
    active: set = set()
    strength: dict = {}
    for qid, per_level in chosen.question_coefs.items():
        if any(c != 0.0 for c in per_level.values()):
            active.add(qid)
            vals = [
                abs(c) * col_scale[(qid, lv)] for lv, c in per_level.items()
            ]
            strength[qid] = float(np.mean(vals))
    return active, strength


def replicate_active_set(
    subsample: SurveyDataset,
    alpha: float,
    config: SelectionConfig,
    *,
    lambda_override: float | None = None,
    cv_seed: int | None = None,
) -> set:
    """Questions with any nonzero level coefficient at the replicate's chosen
    lambda. lambda_override bypasses CV (test hook)."""
    if cv_seed is None:
        cv_seed = derive_seed(config.seed, 0, _MAX_DRAW_ATTEMPTS)
    active, _ = _replicate_detail(subsample, alpha, config, cv_seed, lambda_override)
    return active


def _run_replicate(
    dataset: SurveyDataset, alpha: float, config: SelectionConfig, index: int
) -> tuple[int, set | None, dict | None, str | None]:
    try:
        sub = draw_subsample(dataset, config, index)
        cv_seed = derive_seed(config.seed, index, _MAX_DRAW_ATTEMPTS)
        active, strength = _replicate_detail(sub, alpha, config, cv_seed, None)
        return index, active, strength, None
    except PovscoreError as exc:
        return index, None, None, f"replicate {index}: {exc}"


def selection_frequencies(
    dataset: SurveyDataset,
    alpha: float,
    config: SelectionConfig,
    n_jobs: int = 1,
) -> SelectionFrequencyTable:
    """B independent replicates of draw -> select, reduced to counts."""
    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_replicate)(dataset, alpha, config, i)
        for i in range(config.n_bootstrap)
    )
    failures = [msg for _, _, _, msg in results if msg is not None]
    if len(failures) > 0.2 * config.n_bootstrap:
        detail = "; ".join(failures[:5])
        raise NumericalError(
            f"{len(failures)} of {config.n_bootstrap} selection replicates "
            f"failed: {detail}"
        )
    if failures:
        warnings.warn(
            f"{len(failures)} of {config.n_bootstrap} selection replicates failed "
            "and were dropped",
            stacklevel=2,
        )
    ok = [(a, s) for _, a, s, msg in results if msg is None]
    candidates = tuple(q.id for q in dataset.questions)
    counts = {qid: 0 for qid in candidates}
    for active, _ in ok:
        for qid in active:
            counts[qid] += 1
    return SelectionFrequencyTable(
        counts=counts,
        B=len(ok),
        n_failed=len(failures),
        active_sets=tuple(frozenset(a) for a, _ in ok),
        strengths=tuple(s for _, s in ok),
        candidates=candidates,
    )


def select_top_questions(table: SelectionFrequencyTable, k: int) -> SelectedQuestionSet:
    """Top-k questions by selection count.

    Boundary ties break by higher mean absolute standardized coefficient,
    then by question id; any tie at the cut is recorded. When fewer than k
    questions were ever selected, the remainder is filled by the same
    tie-break rules over zero-count questions and flagged.
    """
    if not table.candidates:
        raise ValidationError("frequency table has no candidate questions")
    if k > len(table.candidates):
        raise ValidationError(
            f"cannot select {k} of {len(table.candidates)} questions"
        )
    ranked = sorted(
        table.candidates,
        key=lambda q: (-table.counts[q], -table.mean_strength(q), q),
    )
    chosen = tuple(ranked[:k])
    notes: list[str] = []
    if k < len(ranked) and table.counts[ranked[k - 1]] == table.counts[ranked[k]]:
        cut = table.counts[ranked[k - 1]]
        tied = [q for q in ranked if table.counts[q] == cut]
        notes.append(
            f"count tie at rank {k} (count={cut}) among {tied}; broke by mean "
            "absolute standardized coefficient, then question id"
        )
    zero_picked = [q for q in chosen if table.counts[q] == 0]
    if zero_picked:
        msg = (
            f"only {k - len(zero_picked)} questions were ever selected; "
            f"filled with zero-count questions {zero_picked}"
        )
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    return SelectedQuestionSet(
        questions=chosen, tie_note="; ".join(notes) if notes else None
    )
