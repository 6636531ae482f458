"""Acceptance gate: one test per release criterion.

Each test registers its verdict with the record_criterion fixture before
asserting, so the end-of-run summary prints one PASS/FAIL line per criterion
even when a criterion fails. The planted-support and full-model-proximity
studies dominate the runtime (tens of minutes on one core); the stated budget
for the recovery study is fifteen minutes of four-way parallel replicates,
which this suite accounts as 3600 core-seconds of wall time on one core.
"""

from __future__ import annotations

import json
import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from helpers import coef_vector_from_fit, newton_logistic, random_instance
from povscore._util import derive_seed
from povscore.data import encode_design, split_train_test
from povscore.evaluation import group_quartiles, predict_test, weighted_auc_rank
from povscore.crossval import cv_lambda
from povscore.pipeline import parse_run_config, run
from povscore.scorecard import build_scorecard, compute_smax, rebase
from povscore.selection import (
    SelectionConfig,
    select_top_questions,
    selection_frequencies,
)
from povscore.solver import fit, fit_path, kkt_residual, lambda_max, predict_probability
from povscore.synthetic import default_scenario, generate, oracle_rate
from povscore.evaluation import compare_full_model

pytestmark = pytest.mark.filterwarnings(
    "ignore:only .* questions were ever selected"
)

#: recovery/selection knobs calibrated for the desk-scale scenario: a 30-point
#: lasso path down to lambda_max/100 with 4-fold inner CV keeps each replicate
#: cheap while the 1se rule still picks up every planted question
SELECTION_KNOBS = dict(n_bootstrap=50, inner_cv_k=4, n_lambda=30, lambda_min_ratio=1e-2)


def test_criterion_01_solver_matches_newton_oracle(record_criterion):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        _, enc = random_instance(seed, n=200, n_questions=11)
        # the 1e-6 coefficient bar needs a kkt certificate well below the
        # curvature floor of the worst instances, hence the tight knobs
        fitted = fit(enc, lam=0.0, alpha=1.0, tol=1e-11, max_irls=300,
                     max_sweeps=200_000, kkt_target=1e-9)
        ours = coef_vector_from_fit(fitted, enc)
        oracle = newton_logistic(enc.X, enc.labels, enc.weights)
        worst = max(worst, float(np.max(np.abs(ours - oracle))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10.0
    record_criterion(
        1, "solver matches Newton oracle at lambda 0", ok,
        f"max coef gap {worst:.2e}; {elapsed:.1f}s",
    )
    assert worst <= 1e-6
    assert elapsed < 10.0


def test_criterion_02_kkt_certificate_along_path(record_criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        _, enc = random_instance(100 + i, n=200, n_questions=11)
        for _ in range(5):
            alpha = float(rng.uniform(0.05, 1.0))
            lmax = lambda_max(enc, alpha)
            lam = lmax * 10.0 ** (-3.0 * rng.random())
            fitted = fit(enc, lam, alpha)
            worst = max(worst, kkt_residual(fitted, enc))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 30.0
    record_criterion(
        2, "KKT residual at most 1e-6 over 100 fits", ok,
        f"max residual {worst:.2e}; {elapsed:.1f}s",
    )
    assert worst <= 1e-6
    assert elapsed < 30.0


def test_criterion_03_null_path_exact_zeros(record_criterion):
    violations = 0
    for i in range(20):
        _, enc = random_instance(200 + i, n=200, n_questions=11)
        alpha = 1.0 if i % 2 == 0 else 0.5
        lmax = lambda_max(enc, alpha)
        for lam in (lmax, 2.0 * lmax):
            fitted = fit(enc, lam, alpha)
            flat = [
                c for per in fitted.question_coefs.values() for c in per.values()
            ]
            if any(c != 0.0 for c in flat):
                violations += 1
    record_criterion(
        3, "penalized block exactly zero at lambda_max", violations == 0,
        f"{violations} of 40 fits violated",
    )
    assert violations == 0


@pytest.mark.slow
def test_criterion_04_planted_support_recovery(record_criterion):
    start = time.perf_counter()
    hits = 0
    for seed in range(20):
        ds, truth = generate(default_scenario(seed=seed))
        config = SelectionConfig(seed=seed, **SELECTION_KNOBS)
        table = selection_frequencies(ds, 1.0, config)
        chosen = select_top_questions(table, config.k_questions)
        if set(truth.informative_questions) <= set(chosen.questions):
            hits += 1
    elapsed = time.perf_counter() - start
    ok = hits >= 19 and elapsed < 3600.0
    record_criterion(
        4, "planted support in top-10 for 19 of 20 runs", ok,
        f"hits {hits}/20; {elapsed:.0f}s of 3600 core-seconds",
    )
    assert hits >= 19
    assert elapsed < 3600.0


@pytest.fixture(scope="module")
def fitted_default():
    """One pipeline pass over the benchmark scenario, shared by the
    scorecard, fidelity, and separation criteria."""
    ds, truth = generate(default_scenario(seed=0))
    train, test = split_train_test(ds, seed=1)
    config = SelectionConfig(
        seed=0, n_bootstrap=20, inner_cv_k=4, n_lambda=30, lambda_min_ratio=1e-2
    )
    table = selection_frequencies(train, 1.0, config)
    chosen = select_top_questions(table, config.k_questions)
    enc_ten = encode_design(train, chosen.questions)
    curve = cv_lambda(
        enc_ten, 1.0, k=10, seed=derive_seed(0, 99), n_lambda=30,
        lambda_min_ratio=1e-3,
    )
    final = fit(enc_ten, curve.lambda_min, 1.0)
    card = build_scorecard(final)
    preds = predict_test(final, card, test, train_ids=train.ids)
    return SimpleNamespace(
        truth=truth, train=train, test=test, chosen=chosen,
        final=final, card=card, preds=preds,
    )


def test_criterion_05_scorecard_integrality_and_bounds(
    fitted_default, record_criterion
):
    card = fitted_default.card
    integral = all(
        w == int(w) and w >= 0 for q in card.questions for w in q.weights
    )
    # every achievable total, computed exactly by accumulating per-question
    # weight sets; equivalent to enumerating all response combinations
    reachable = {0}
    for q in card.questions:
        reachable = {s + w for s in reachable for w in set(q.weights)}
    n_combos = math.prod(len(q.levels) for q in card.questions)
    in_bounds = min(reachable) >= 0 and max(reachable) <= 100
    rebased = rebase(fitted_default.final)
    s_max = compute_smax(rebased)
    unrounded_max = sum(
        max(per.values()) for per in rebased.offsets.values()
    ) * (100.0 / s_max)
    scaled_ok = abs(unrounded_max - 100.0) <= 1e-9
    ok = integral and in_bounds and scaled_ok
    record_criterion(
        5, "scorecard integral weights, combos in [0,100]", ok,
        f"{len(reachable)} totals over {n_combos} combos; "
        f"unrounded max {unrounded_max:.12f}",
    )
    assert integral
    assert in_bounds
    assert scaled_ok
    assert card.s_max == s_max


def test_criterion_06_lookup_fidelity(fitted_default, record_criterion):
    preds = fitted_default.preds
    card = fitted_default.card
    gap = float(np.max(np.abs(preds.prob_lookup - preds.prob_exact)))
    bound = 0.25 * (card.s_max / 100.0) * 0.5 * 10
    decreasing = all(
        np.all(np.diff(table.probabilities) < 0)
        for table in card.region_tables.values()
    )
    ok = gap <= bound and decreasing
    record_criterion(
        6, "lookup within quantization bound, tables decreasing", ok,
        f"gap {gap:.4f} <= {bound:.4f}",
    )
    assert gap <= bound
    assert decreasing


def test_criterion_07_separation_nationally_and_per_region(
    fitted_default, record_criterion
):
    preds = fitted_default.preds
    national, _ = group_quartiles(preds, "national")
    med = {s.status: s.q50 for s in national}
    margin = med["poor"] - med["non-poor"]
    regional, notes = group_quartiles(preds, "region")
    by_region: dict[str, dict[str, float]] = {}
    for s in regional:
        by_region.setdefault(s.group, {})[s.status] = s.q50
    regions_ok = not notes and all(
        cell["poor"] > cell["non-poor"] for cell in by_region.values()
    )
    n_regions = len(by_region)
    ok = margin >= 0.3 and regions_ok and n_regions == 10
    record_criterion(
        7, "median separation 0.3 nationally, all regions ordered", ok,
        f"national margin {margin:.3f}; {n_regions} regions",
    )
    assert margin >= 0.3
    assert regions_ok


@pytest.mark.slow
def test_criterion_08_ten_question_auc_near_full_model(record_criterion):
    start = time.perf_counter()
    margins = []
    for seed in range(10):
        ds, _ = generate(default_scenario(seed=seed))
        train, test = split_train_test(ds, seed=seed)
        config = SelectionConfig(
            seed=seed, n_bootstrap=20, inner_cv_k=4, n_lambda=30,
            lambda_min_ratio=1e-2,
        )
        report = compare_full_model(
            train, test, 1.0, selection_config=config, seed=seed,
            inner_cv_k=4, n_lambda=30, lambda_min_ratio=1e-2,
        )
        margins.append(
            report["ten_question"]["auc"] - report["full_model"]["auc"]
        )
    elapsed = time.perf_counter() - start
    worst = min(margins)
    ok = worst >= -0.05
    record_criterion(
        8, "ten-question AUC within 0.05 of full model", ok,
        f"worst margin {worst:+.4f} over 10 seeds; {elapsed:.0f}s",
    )
    assert worst >= -0.05


@pytest.mark.slow
def test_criterion_09_calibration_against_oracle(record_criterion):
    ds, truth = generate(default_scenario(seed=7, n=20000))
    train, test = split_train_test(ds, seed=3)
    enc = encode_design(train)
    path = fit_path(enc, alpha=1.0, n_lambda=8, lambda_min_ratio=1e-3)
    final = path.fits[-1]
    profiles = test.subset(range(1000))
    fitted_p = np.array(
        [predict_probability(final, rec) for rec in profiles.records]
    )
    oracle_p = np.array(
        [oracle_rate(truth, rec.responses, rec.region) for rec in profiles.records]
    )
    w = profiles.raw_weights
    rmse = float(np.sqrt(np.sum(w * (fitted_p - oracle_p) ** 2) / np.sum(w)))
    ok = rmse <= 0.05
    record_criterion(
        9, "weighted RMSE to generative oracle at n=20000", ok,
        f"rmse {rmse:.4f} over 1000 held-out profiles",
    )
    assert rmse <= 0.05


def test_criterion_10_byte_identical_reruns(record_criterion, tmp_path):
    raw = {
        "synthetic": {
            "default_scenario": {
                "seed": 3, "n": 200, "n_regions": 3, "n_questions": 6,
                "n_informative": 2,
            }
        },
        "split_seed": 21,
        "cv_seed": 22,
        "selection": {
            "seed": 23, "n_bootstrap": 6, "k_questions": 4, "inner_cv_k": 3,
            "n_lambda": 10, "lambda_min_ratio": 0.05,
        },
        "alpha_fixed": 1.0,
        "final_cv_k": 3,
        "n_lambda": 12,
        "lambda_min_ratio": 0.05,
        "compare_full": False,
    }
    outputs = {}
    for run_dir in ("run1", "run2"):
        config = parse_run_config(
            dict(raw, out_dir=run_dir), base_dir=tmp_path
        )
        run(config)
        outputs[run_dir] = {
            name: (tmp_path / run_dir / name).read_bytes()
            for name in ("scorecard.json", "evaluation.json")
        }
    identical = outputs["run1"] == outputs["run2"]
    record_criterion(
        10, "identical config reproduces identical artifacts", identical,
        "scorecard.json and evaluation.json compared byte for byte",
    )
    assert identical
    # same scorecard parses back and covers every region
    card = json.loads(outputs["run1"]["scorecard.json"])
    assert set(card["region_tables"]) == {"r01", "r02", "r03"}


def test_criterion_11_split_sizes_exact(record_criterion):
    datasets = {
        n: generate(default_scenario(seed=n, n=n, n_questions=4, n_informative=1))[0]
        for n in (30, 100, 301, 1000)
    }
    sizes = list(datasets)
    worst = 0.0
    for seed in range(100):
        ds = datasets[sizes[seed % len(sizes)]]
        train, test = split_train_test(ds, seed)
        assert train.n + test.n == ds.n
        assert not set(train.ids) & set(test.ids)
        worst = max(worst, abs(train.n - 2.0 * ds.n / 3.0))
    ok = worst <= 1.0
    record_criterion(
        11, "train/test split 2:1 within one household", ok,
        f"max deviation {worst:.2f} over 100 seeds",
    )
    assert worst <= 1.0
