"""Survey-weighted elastic-net logistic regression.

Minimizes, over (beta0, beta_r, beta_z),

    -(1/n) sum_i w_i * [y_i eta_i - log(1 + e^{eta_i})]
        + lam * [(1-alpha) ||beta_z||_2^2 + alpha ||beta_z||_1]

where the penalty covers only question-level coefficients; region dummies and
the intercept are unpenalized. Note the ridge term carries no factor 1/2, so
coordinate updates divide by (a_jj + 2*lam*(1-alpha)).

When a design contains region columns the full one-hot block spans the
intercept, so the intercept is pinned at 0 and the region coefficients act as
per-region intercepts. Designs without region columns get a free intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import _kernels
from .data import DesignMatrix, HouseholdRecord, QuestionSpec
from .errors import NumericalError, ValidationError

#: probabilities are clamped away from {0,1} when inverting the logit
_P_CLIP = 1e-12

#: padding applied to lambda_max so fitting at the returned value keeps the
#: penalized block at exactly zero despite rounding in the null fit
_LAMBDA_MAX_PAD = 1.0 + 1e-9

DEFAULT_TOL = 1e-7
DEFAULT_MAX_IRLS = 100
DEFAULT_MAX_SWEEPS = 10_000
DEFAULT_KKT_TARGET = 1e-6
WEIGHT_FLOOR = 1e-5


@dataclass(frozen=True)
class ElasticNetFit:
    """Fitted coefficients at one (lambda, alpha).

    question_coefs holds every encoded non-reference level explicitly (zeros
    included); reference levels are implicitly 0. regions and questions carry
    enough metadata to validate and predict on raw records.
    """

    intercept: float
    region_coefs: dict[str, float]
    question_coefs: dict[str, dict[str, float]]
    lam: float
    alpha: float
    converged: bool
    iterations: int
    regions: tuple[str, ...]
    questions: tuple[QuestionSpec, ...]

    def __post_init__(self) -> None:
        values = [self.intercept, *self.region_coefs.values()]
        for per_level in self.question_coefs.values():
            values.extend(per_level.values())
        if not np.all(np.isfinite(values)):
            raise ValidationError("fit has non-finite coefficients")

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "region_coefs": dict(self.region_coefs),
            "question_coefs": {q: dict(v) for q, v in self.question_coefs.items()},
            "lambda": self.lam,
            "alpha": self.alpha,
            "converged": self.converged,
            "iterations": self.iterations,
            "regions": list(self.regions),
            "questions": [
                {"id": q.id, "prompt": q.prompt, "levels": list(q.levels)}
                for q in self.questions
            ],
        }

    @staticmethod
    def from_dict(d: Mapping) -> "ElasticNetFit":
        return ElasticNetFit(
            intercept=float(d["intercept"]),
            region_coefs={k: float(v) for k, v in d["region_coefs"].items()},
            question_coefs={
                q: {lv: float(c) for lv, c in per.items()}
                for q, per in d["question_coefs"].items()
            },
            lam=float(d["lambda"]),
            alpha=float(d["alpha"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            regions=tuple(d["regions"]),
            questions=tuple(
                QuestionSpec(q["id"], q["prompt"], tuple(q["levels"]))
                for q in d["questions"]
            ),
        )


@dataclass(frozen=True)
class LambdaPath:
    """Warm-started sequence of fits over a strictly decreasing lambda grid."""

    lambdas: tuple[float, ...]
    fits: tuple[ElasticNetFit, ...]
    alpha: float

    def __post_init__(self) -> None:
        if len(self.lambdas) != len(self.fits):
            raise ValidationError("lambda grid and fits differ in length")
        diffs = np.diff(self.lambdas)
        if len(self.lambdas) > 1 and not np.all(diffs < 0):
            raise ValidationError("lambda grid must be strictly decreasing")


def loglik_eta(eta: np.ndarray | float, label: np.ndarray | float):
    """Per-record loglikelihood y*eta - log(1+e^eta), overflow-safe.

    Shared by fitting, cross-validation deviance, and evaluation.
    """
    return np.asarray(label) * np.asarray(eta) - np.logaddexp(0.0, eta)


def loglik_contribution(
    intercept: float, coefs: np.ndarray, record_row: np.ndarray, label: float
) -> float:
    eta = float(intercept + np.dot(np.asarray(coefs), np.asarray(record_row)))
    return float(loglik_eta(eta, float(label)))


def weighted_deviance(eta: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """-2 * sum(w * loglik) / sum(w); the out-of-fold CV criterion."""
    w = np.asarray(weights, dtype=np.float64)
    return float(-2.0 * np.sum(w * loglik_eta(eta, labels)) / np.sum(w))


def _coef_vector(fit: ElasticNetFit, design: DesignMatrix) -> np.ndarray:
    beta = np.zeros(design.p)
    for j, col in enumerate(design.columns):
        if col.kind == "region":
            if col.region not in fit.region_coefs:
                raise ValidationError(f"fit has no coefficient for region {col.region!r}")
            beta[j] = fit.region_coefs[col.region]
        else:
            per_level = fit.question_coefs.get(col.question)
            if per_level is None or col.level not in per_level:
                raise ValidationError(
                    f"fit has no coefficient for column {col.label()!r}"
                )
            beta[j] = per_level[col.level]
    return beta


def _vector_to_fit(
    design: DesignMatrix,
    b0: float,
    beta: np.ndarray,
    lam: float,
    alpha: float,
    converged: bool,
    iterations: int,
) -> ElasticNetFit:
    region_coefs: dict[str, float] = {}
    question_coefs: dict[str, dict[str, float]] = {q.id: {} for q in design.questions}
    for j, col in enumerate(design.columns):
        if col.kind == "region":
            region_coefs[col.region] = float(beta[j])
        else:
            question_coefs[col.question][col.level] = float(beta[j])
    return ElasticNetFit(
        intercept=float(b0),
        region_coefs=region_coefs,
        question_coefs=question_coefs,
        lam=float(lam),
        alpha=float(alpha),
        converged=bool(converged),
        iterations=int(iterations),
        regions=design.regions,
        questions=design.questions,
    )


def linear_predictor(fit: ElasticNetFit, design: DesignMatrix) -> np.ndarray:
    beta = _coef_vector(fit, design)
    return design.X @ beta + fit.intercept


#: linear predictors are clamped here before the logistic transform so the
#: returned probabilities stay strictly inside (0, 1) in float64
_ETA_CLAMP = 35.0


def predict_probabilities(fit: ElasticNetFit, design: DesignMatrix) -> np.ndarray:
    eta = linear_predictor(fit, design)
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLAMP, _ETA_CLAMP)))


def predict_probability(
    fit: ElasticNetFit,
    record: HouseholdRecord | np.ndarray,
    design: DesignMatrix | None = None,
) -> float:
    """Probability of poverty for one household or one design row."""
    if isinstance(record, HouseholdRecord):
        if record.region not in fit.region_coefs:
            if record.region not in fit.regions:
                raise ValidationError(f"unknown region {record.region!r}")
            raise ValidationError(f"fit has no coefficient for region {record.region!r}")
        eta = fit.intercept + fit.region_coefs[record.region]
        for q in fit.questions:
            level = record.responses.get(q.id)
            if level is None:
                raise ValidationError(f"record has no response for question {q.id!r}")
            if level not in q.levels:
                raise ValidationError(
                    f"level {level!r} is not declared for question {q.id!r}"
                )
            eta += fit.question_coefs[q.id].get(level, 0.0)
    else:
        if design is None:
            raise ValidationError("predicting from a raw design row requires the design")
        row = np.asarray(record, dtype=np.float64)
        if row.shape != (design.p,):
            raise ValidationError("design row has the wrong width")
        eta = float(fit.intercept + row @ _coef_vector(fit, design))
    return float(1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLAMP, _ETA_CLAMP))))


def objective(fit: ElasticNetFit, design: DesignMatrix) -> float:
    """Penalized pseudo-loglikelihood objective at the fit's (lambda, alpha)."""
    beta = _coef_vector(fit, design)
    eta = design.X @ beta + fit.intercept
    w = design.weights
    loss = -float(np.sum(w * loglik_eta(eta, design.labels))) / design.n
    pf = design.penalty_factors
    pen = float(
        fit.lam
        * np.sum(pf * (fit.alpha * np.abs(beta) + (1.0 - fit.alpha) * beta**2))
    )
    return loss + pen


def _null_probabilities(design: DesignMatrix) -> tuple[float, np.ndarray, np.ndarray]:
    """Closed-form intercept+region-only fit.

    With a one-hot unpenalized region block the per-region weighted poverty
    rate is the exact MLE; without regions it is the overall weighted rate.
    Returns (b0, beta_unpenalized_part, fitted probabilities).
    """
    w, y = design.weights, design.labels
    beta = np.zeros(design.p)
    nr = design.n_region_cols
    if nr == 0:
        rate = float(np.sum(w * y) / np.sum(w))
        rate = min(max(rate, _P_CLIP), 1.0 - _P_CLIP)
        b0 = float(np.log(rate / (1.0 - rate)))
        return b0, beta, np.full(design.n, rate)
    probs = np.empty(design.n)
    for j in range(nr):
        mask = design.X[:, j] == 1.0
        wsum = float(np.sum(w[mask]))
        rate = float(np.sum(w[mask] * y[mask]) / wsum) if wsum > 0 else 0.5
        rate = min(max(rate, _P_CLIP), 1.0 - _P_CLIP)
        beta[j] = float(np.log(rate / (1.0 - rate)))
        probs[mask] = rate
    return 0.0, beta, probs


def lambda_max(design: DesignMatrix, alpha: float) -> float:
    """Smallest penalty at which every penalized coefficient is zero.

    Gradient of the unpenalized loss at the intercept+region-only fit,
    maximized over penalized columns and divided by alpha.
    """
    if alpha < 0.05:
        raise ValidationError(f"alpha must be at least 0.05, got {alpha}")
    pen = design.penalty_factors > 0
    if not pen.any():
        raise ValidationError("design has no penalized columns")
    _, _, probs = _null_probabilities(design)
    g = design.X.T @ (design.weights * (design.labels - probs)) / design.n
    gmax = float(np.max(np.abs(g[pen]) / design.penalty_factors[pen]))
    if gmax == 0.0:
        return 0.0
    return gmax / alpha * _LAMBDA_MAX_PAD


def weighted_column_scales(design: DesignMatrix) -> np.ndarray:
    """Weighted standard deviation of penalized columns, 1.0 elsewhere.

    The solver uses this only to express convergence tolerances on a
    standardized scale; all fitting happens on the original 0/1 columns.
    Selection reuses it to standardize coefficient magnitudes for tie-breaks.
    """
    w = design.weights / float(np.sum(design.weights))
    scale = np.ones(design.p)
    for j in range(design.p):
        if design.penalty_factors[j] > 0:
            m = float(w @ design.X[:, j])
            var = float(w @ design.X[:, j] ** 2) - m * m
            scale[j] = np.sqrt(var) if var > 0 else 1.0
    return scale


def lambda_grid(
    design: DesignMatrix,
    alpha: float,
    n_lambda: int = 100,
    lambda_min_ratio: float | None = None,
) -> np.ndarray:
    """Log-spaced grid from lambda_max down to lambda_min_ratio*lambda_max."""
    if n_lambda < 2:
        raise ValidationError(f"n_lambda must be at least 2, got {n_lambda}")
    lmax = lambda_max(design, alpha)
    if lmax <= 0:
        raise NumericalError(
            "lambda_max is 0; penalized columns are orthogonal to the "
            "null-model residuals and the path is degenerate"
        )
    if lambda_min_ratio is None:
        lambda_min_ratio = 1e-4 if design.n > design.p else 1e-3
    grid = np.exp(np.linspace(np.log(lmax), np.log(lmax * lambda_min_ratio), n_lambda))
    grid[0] = lmax
    return grid


def fit(
    design: DesignMatrix,
    lam: float,
    alpha: float,
    warm_start: ElasticNetFit | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_irls: int = DEFAULT_MAX_IRLS,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    kkt_target: float = DEFAULT_KKT_TARGET,
) -> ElasticNetFit:
    """Fit at one (lambda, alpha) by coordinate descent inside IRLS.

    Unpenalized coordinates get exact weighted least-squares updates each
    sweep; penalized ones get soft-thresholding. The KKT residual of the
    returned fit is re-checked and, when above kkt_target, the solve is
    repeated at tighter tolerance before the fit is declared converged.
    """
    if not (np.isfinite(lam) and lam >= 0):
        raise ValidationError(f"lambda must be finite and nonnegative, got {lam}")
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    y = design.labels
    if y.min() == y.max():
        raise ValidationError("labels are single-class; cannot fit")

    X = np.asfortranarray(design.X)
    w = design.weights
    pf = design.penalty_factors
    scale = weighted_column_scales(design)
    fit_intercept = design.n_region_cols == 0

    if warm_start is not None:
        b0 = float(warm_start.intercept)
        beta = _coef_vector(warm_start, design)
    else:
        b0, beta, _ = _null_probabilities(design)

    iterations = 0
    cur_tol = tol
    for attempt in range(4):
        b0, beta, n_irls, _sweeps, converged, _obj = _kernels.enet_fit_kernel(
            X, y, w, pf, scale, float(lam), float(alpha), b0, beta,
            fit_intercept, cur_tol, max_irls, max_sweeps, WEIGHT_FLOOR,
        )
        iterations += n_irls
        result = _vector_to_fit(design, b0, beta, lam, alpha, converged, iterations)
        if not converged or kkt_residual(result, design) <= kkt_target:
            break
        cur_tol *= 0.01
    else:
        result = replace(result, converged=False)
    if result.converged and kkt_residual(result, design) > kkt_target:
        result = replace(result, converged=False)
    return result


def kkt_residual(fit: ElasticNetFit, design: DesignMatrix) -> float:
    """Max stationarity violation of the penalized objective at the fit.

    Active penalized j: |g_j - lam*alpha*sign(b_j) - 2*lam*(1-alpha)*b_j|;
    inactive penalized j: max(0, |g_j| - lam*alpha); unpenalized columns and
    the intercept: |g_j|, where g_j = (1/n) sum_i w_i x_ij (y_i - p_i).
    """
    beta = _coef_vector(fit, design)
    eta = design.X @ beta + fit.intercept
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
    resid = design.weights * (design.labels - p)
    g = design.X.T @ resid / design.n
    g0 = float(np.sum(resid)) / design.n
    lam, alpha = fit.lam, fit.alpha
    pf = design.penalty_factors
    worst = abs(g0)
    for j in range(design.p):
        if pf[j] > 0:
            l1 = lam * alpha * pf[j]
            l2 = 2.0 * lam * (1.0 - alpha) * pf[j]
            if beta[j] != 0.0:
                comp = abs(g[j] - l1 * np.sign(beta[j]) - l2 * beta[j])
            else:
                comp = max(0.0, abs(g[j]) - l1)
        else:
            comp = abs(g[j])
        if comp > worst:
            worst = comp
    return float(worst)


def fit_path(
    design: DesignMatrix,
    alpha: float,
    n_lambda: int = 100,
    lambda_min_ratio: float | None = None,
    lambdas: np.ndarray | None = None,
    *,
    tol: float = DEFAULT_TOL,
    kkt_target: float = DEFAULT_KKT_TARGET,
) -> LambdaPath:
    """Warm-started fits over a log-spaced lambda grid.

    With the default grid the path starts at lambda_max, so the first fit is
    the null question model. An explicit `lambdas` grid (used to share one
    grid across CV folds) skips grid construction and carries no such
    guarantee.
    """
    if lambdas is None:
        grid = lambda_grid(design, alpha, n_lambda, lambda_min_ratio)
    else:
        grid = np.asarray(lambdas, dtype=np.float64)
        if grid.ndim != 1 or len(grid) < 1:
            raise ValidationError("explicit lambda grid must be a nonempty vector")
        if len(grid) > 1 and not np.all(np.diff(grid) < 0):
            raise ValidationError("explicit lambda grid must be strictly decreasing")
        if not np.all(grid > 0):
            raise ValidationError("explicit lambda grid must be positive")

    fits: list[ElasticNetFit] = []
    warm: ElasticNetFit | None = None
    for lam in grid:
        warm = fit(design, float(lam), alpha, warm_start=warm,
                   tol=tol, kkt_target=kkt_target)
        fits.append(warm)
    return LambdaPath(lambdas=tuple(float(v) for v in grid), fits=tuple(fits),
                      alpha=float(alpha))
