"""Fold construction, inner cross-validation for lambda, and the outer
cross-validation loop over alpha that re-runs the whole selection pipeline
per fold.

Deviance is the weighted out-of-fold binomial deviance
    -2 * sum(w_i * l(eta_i, y_i)) / sum(w_i)
computed with the same loglikelihood used in fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from ._util import derive_seed
from .data import DesignMatrix, SurveyDataset, encode_design
from .errors import ValidationError
from .solver import (
    ElasticNetFit,
    _coef_vector,
    fit,
    fit_path,
    lambda_grid,
    loglik_eta,
    predict_probability,
    weighted_deviance,
)

if TYPE_CHECKING:  # circular at runtime: selection imports cv_lambda
    from .selection import SelectionConfig

_MAX_FOLD_REDRAWS = 10


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    k: int
    assignment: np.ndarray

    def __post_init__(self) -> None:
        if len(self.assignment) != self.n:
            raise ValidationError("assignment length does not match n")
        counts = np.bincount(self.assignment, minlength=self.k)
        if len(counts) != self.k or counts.max() - counts.min() > 1:
            raise ValidationError("fold sizes must differ by at most 1")

    def heldout_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


@dataclass(frozen=True)
class CvCurve:
    lambdas: tuple[float, ...]
    mean_deviance: np.ndarray
    se_deviance: np.ndarray
    fold_deviance: np.ndarray  # shape (k, n_lambda), kept for audit output
    lambda_min: float
    lambda_1se: float
    alpha: float

    def __post_init__(self) -> None:
        if self.lambda_1se < self.lambda_min:
            raise ValidationError("lambda_1se must be at least lambda_min")
        for v in (self.lambda_min, self.lambda_1se):
            if v not in self.lambdas:
                raise ValidationError("chosen lambdas must be grid members")

    def index_of(self, lam: float) -> int:
        return self.lambdas.index(lam)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambdas": list(self.lambdas),
            "mean_deviance": self.mean_deviance.tolist(),
            "se_deviance": self.se_deviance.tolist(),
            "fold_deviance": self.fold_deviance.tolist(),
            "lambda_min": self.lambda_min,
            "lambda_1se": self.lambda_1se,
        }


def make_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Uniformly random balanced partition of n rows into k folds."""
    if k > n:
        raise ValidationError(f"cannot make {k} folds from {n} rows")
    if k < 2:
        raise ValidationError(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.intp)
    assignment[perm] = np.arange(n) % k
    return FoldAssignment(n=n, k=k, assignment=assignment)


def _folds_with_both_classes(
    labels: np.ndarray, k: int, seed: int
) -> FoldAssignment:
    """Fold assignment whose every training portion has both classes.

    Redraws with derived seeds up to a fixed cap; the first attempt uses the
    caller's seed unchanged.
    """
    n = len(labels)
    for attempt in range(_MAX_FOLD_REDRAWS):
        fa = make_folds(n, k, seed if attempt == 0 else derive_seed(seed, attempt))
        ok = True
        for f in range(k):
            train_labels = labels[fa.train_indices(f)]
            if train_labels.size == 0 or train_labels.min() == train_labels.max():
                ok = False
                break
        if ok:
            return fa
    raise ValidationError(
        f"could not build {k} folds with both classes in every training part"
    )


def _path_heldout_deviance(
    design: DesignMatrix,
    fa: FoldAssignment,
    fold: int,
    alpha: float,
    grid: np.ndarray,
    tol: float,
    kkt_target: float,
) -> np.ndarray:
    train = design.subset_rows(fa.train_indices(fold))
    path = fit_path(train, alpha, lambdas=grid, tol=tol, kkt_target=kkt_target)
    held = fa.heldout_indices(fold)
    X_h = design.X[held, :]
    y_h = design.labels[held]
    w_h = design.weights[held]
    out = np.empty(len(grid))
    for i, f in enumerate(path.fits):
        eta = X_h @ _coef_vector(f, design) + f.intercept
        out[i] = weighted_deviance(eta, y_h, w_h)
    return out


def cv_lambda(
    design: DesignMatrix,
    alpha: float,
    k: int,
    seed: int,
    n_lambda: int = 100,
    lambda_min_ratio: float | None = None,
    n_jobs: int = 1,
    *,
    lambdas: Sequence[float] | None = None,
    tol: float = 1e-7,
    kkt_target: float = 1e-6,
) -> CvCurve:
    """K-fold cross-validation of lambda at a fixed alpha.

    The grid is computed once from the full design (or taken verbatim from
    `lambdas`) and shared by every fold, so fold curves are comparable
    pointwise.
    """
    if lambdas is None:
        grid = lambda_grid(design, alpha, n_lambda, lambda_min_ratio)
    else:
        grid = np.asarray([float(v) for v in lambdas], dtype=np.float64)
        if grid.size == 0:
            raise ValidationError("explicit lambda grid is empty")
        if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
            raise ValidationError("explicit lambda grid must be positive and finite")
        if np.any(np.diff(grid) >= 0):
            if grid.size > 1:
                raise ValidationError("explicit lambda grid must be strictly decreasing")
    fa = _folds_with_both_classes(design.labels, k, seed)
    tasks = (
        delayed(_path_heldout_deviance)(design, fa, f, alpha, grid, tol, kkt_target)
        for f in range(k)
    )
    fold_dev = np.asarray(Parallel(n_jobs=n_jobs)(tasks))
    mean = fold_dev.mean(axis=0)
    se = fold_dev.std(axis=0, ddof=1) / np.sqrt(k)
    i_min = int(np.argmin(mean))  # first occurrence = largest lambda on ties
    i_1se = int(np.argmax(mean <= mean[i_min] + se[i_min]))
    return CvCurve(
        lambdas=tuple(float(v) for v in grid),
        mean_deviance=mean,
        se_deviance=se,
        fold_deviance=fold_dev,
        lambda_min=float(grid[i_min]),
        lambda_1se=float(grid[i_1se]),
        alpha=float(alpha),
    )


@dataclass(frozen=True)
class OuterCvResult:
    alpha: float
    report: dict
    fold_assignment: FoldAssignment


def _eta_for_records(fit_: ElasticNetFit, dataset: SurveyDataset) -> np.ndarray:
    """Linear predictor on raw records (robust to per-subset encoding drops)."""
    probs = np.array(
        [predict_probability(fit_, rec) for rec in dataset.records], dtype=np.float64
    )
    probs = np.clip(probs, 1e-15, 1 - 1e-15)
    return np.log(probs / (1.0 - probs))


def _outer_cell(
    train: SurveyDataset,
    alpha: float,
    config: "SelectionConfig",
    seed: int,
    fa: FoldAssignment,
    fold: int,
    alpha_index: int,
    n_jobs: int,
) -> dict:
    """Selection + final fit on one outer-training part, scored on the held-out part."""
    from .selection import select_top_questions, selection_frequencies

    sub = train.subset(fa.train_indices(fold))
    # nonzero stream tags: SeedSequence treats a trailing zero part as absent
    cfg = replace(config, seed=derive_seed(seed, fold, alpha_index, 1))
    table = selection_frequencies(sub, alpha, cfg, n_jobs=n_jobs)
    chosen = select_top_questions(table, cfg.k_questions)
    enc = encode_design(sub, chosen.questions)
    curve = cv_lambda(
        enc,
        alpha,
        k=cfg.inner_cv_k,
        seed=derive_seed(seed, fold, alpha_index, 2),
        n_lambda=cfg.n_lambda,
        lambda_min_ratio=cfg.lambda_min_ratio,
        n_jobs=n_jobs,
    )
    final = fit(enc, curve.lambda_min, alpha)
    held = train.subset(fa.heldout_indices(fold))
    eta = _eta_for_records(final, held)
    dev = weighted_deviance(eta, held.labels, held.raw_weights)
    return {
        "fold": fold,
        "deviance": dev,
        "lambda": curve.lambda_min,
        "questions": list(chosen.questions),
    }


def choose_alpha(means: Mapping[float, float], tol: float = 1e-12) -> float:
    """Largest alpha whose mean deviance ties the best within tol."""
    best = min(means.values())
    return max(a for a, m in means.items() if m <= best + tol)


def outer_cv_alpha(
    train: SurveyDataset,
    alpha_grid: Sequence[float],
    config: "SelectionConfig",
    seed: int,
    k_outer: int = 5,
    n_jobs: int = 1,
) -> OuterCvResult:
    """Outer cross-validation over alpha.

    Each (alpha, outer fold) cell reruns bootstrap selection and the final
    10-question fit on the outer-training portion and scores weighted deviance
    on the held-out portion. Ties in mean deviance (within 1e-12) go to the
    larger alpha, preferring sparser fits.
    """
    if not alpha_grid:
        raise ValidationError("alpha_grid is empty")
    alphas = [float(a) for a in alpha_grid]
    for a in alphas:
        if not 0.05 <= a <= 1.0:
            raise ValidationError(f"alpha {a} outside [0.05, 1]")
    if len(set(alphas)) != len(alphas):
        raise ValidationError("alpha_grid has duplicates")
    fa = _folds_with_both_classes(train.labels, k_outer, seed)
    report: dict = {"alphas": {}, "k_outer": k_outer}
    means: dict[float, float] = {}
    for ia, alpha in enumerate(alphas):
        cells = [
            _outer_cell(train, alpha, config, seed, fa, f, ia, n_jobs)
            for f in range(k_outer)
        ]
        devs = [c["deviance"] for c in cells]
        means[alpha] = float(np.mean(devs))
        report["alphas"][str(alpha)] = {
            "mean_deviance": means[alpha],
            "folds": cells,
        }
    chosen = choose_alpha(means)
    report["chosen_alpha"] = chosen
    return OuterCvResult(alpha=chosen, report=report, fold_assignment=fa)
