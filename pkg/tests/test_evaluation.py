"""Held-out evaluation: weighted quantiles, group quartiles, consumption
deciles, threshold error curves, weighted AUC, and prediction sets."""

from __future__ import annotations

import numpy as np
import pytest

from helpers import (
    brute_weighted_quantile,
    build_dataset,
    pair_auc,
    planted_instance,
    region_rates,
)
from povscore.data import HouseholdRecord, split_train_test
from povscore.errors import ValidationError
from povscore.evaluation import (
    GROUPINGS,
    PredictionSet,
    ThresholdReport,
    compare_full_model,
    consumption_deciles,
    group_quartiles,
    predict_test,
    threshold_errors,
    weighted_auc_grid,
    weighted_auc_rank,
    weighted_quantile,
)
from povscore.scorecard import build_scorecard
from povscore.selection import SelectionConfig
from povscore.solver import ElasticNetFit, fit


def make_preds(
    probs,
    labels,
    weights=None,
    regions=None,
    urban=None,
    consumption=None,
    scores=None,
    prob_lookup=None,
):
    n = len(probs)
    return PredictionSet(
        ids=tuple(f"h{i:04d}" for i in range(n)),
        weights=np.asarray(
            np.ones(n) if weights is None else weights, dtype=np.float64
        ),
        regions=tuple(regions) if regions is not None else ("r1",) * n,
        labels=np.asarray(labels, dtype=int),
        urban=tuple(urban) if urban is not None else (None,) * n,
        consumption=(
            np.asarray(consumption, dtype=np.float64)
            if consumption is not None
            else np.full(n, np.nan)
        ),
        prob_exact=np.asarray(probs, dtype=np.float64),
        scores=scores,
        prob_lookup=prob_lookup,
    )


def null_fit_for(ds):
    """All-zero coefficients over the dataset's regions and questions."""
    return ElasticNetFit(
        intercept=0.0,
        region_coefs={r: 0.0 for r in ds.regions},
        question_coefs={
            q.id: {lv: 0.0 for lv in q.levels[1:]} for q in ds.questions
        },
        lam=1.0,
        alpha=1.0,
        converged=True,
        iterations=0,
        regions=ds.regions,
        questions=ds.questions,
    )


# ---------------------------------------------------------------- quantiles


def test_weighted_quantile_single_value():
    assert weighted_quantile(np.array([0.37]), np.array([2.5]), 0.25) == 0.37
    out = weighted_quantile(np.array([0.37]), np.array([2.5]), np.array([0.1, 0.9]))
    assert np.all(out == 0.37)


def test_weighted_quantile_two_point_midpoint():
    # equal weights on {0.2, 0.8} put the median exactly halfway
    med = weighted_quantile(np.array([0.2, 0.8]), np.array([1.0, 1.0]), 0.5)
    assert med == pytest.approx(0.5, abs=1e-15)


def test_weighted_quantile_equal_weights_match_numpy():
    rng = np.random.default_rng(3)
    v = rng.normal(size=31)
    w = np.full(31, 2.0)
    qs = np.linspace(0.0, 1.0, 11)
    got = weighted_quantile(v, w, qs)
    np.testing.assert_allclose(got, np.quantile(v, qs), atol=1e-12)


def test_weighted_quantile_matches_brute_oracle():
    rng = np.random.default_rng(17)
    v = rng.normal(size=57)
    w = rng.lognormal(0.0, 0.6, size=57)
    for q in (0.0, 0.03, 0.25, 0.5, 0.77, 1.0):
        got = weighted_quantile(v, w, q)
        assert got == pytest.approx(brute_weighted_quantile(v, w, q), abs=1e-12)
    perm = rng.permutation(57)
    assert weighted_quantile(v[perm], w[perm], 0.5) == pytest.approx(
        weighted_quantile(v, w, 0.5), abs=1e-14
    )


def test_weighted_quantile_validation():
    with pytest.raises(ValidationError, match="matching nonempty"):
        weighted_quantile(np.array([1.0, 2.0]), np.array([1.0]), 0.5)
    with pytest.raises(ValidationError, match="matching nonempty"):
        weighted_quantile(np.array([]), np.array([]), 0.5)
    with pytest.raises(ValidationError, match="positive"):
        weighted_quantile(np.array([1.0, 2.0]), np.array([1.0, 0.0]), 0.5)


# ---------------------------------------------------------- group quartiles


def test_group_quartiles_single_record_group():
    preds = make_preds(
        probs=[0.3, 0.6, 0.2, 0.7, 0.5, 0.42],
        labels=[0, 1, 0, 1, 0, 1],
        regions=["r1", "r1", "r1", "r1", "r1", "r2"],
    )
    summaries, notes = group_quartiles(preds, "region")
    lone = [s for s in summaries if s.group == "r2"]
    assert len(lone) == 1 and lone[0].status == "poor"
    assert lone[0].q25 == lone[0].q50 == lone[0].q75 == 0.42
    assert lone[0].n == 1
    assert notes == ["region=r2: no non-poor households; omitted"]


def test_group_quartiles_national_median_midpoint():
    preds = make_preds(probs=[0.2, 0.8, 0.3, 0.9], labels=[1, 1, 0, 0])
    summaries, notes = group_quartiles(preds, "national")
    assert notes == []
    by_status = {s.status: s for s in summaries}
    assert by_status["poor"].q50 == pytest.approx(0.5, abs=1e-15)
    assert by_status["non-poor"].q50 == pytest.approx(0.6, abs=1e-15)
    assert by_status["poor"].weighted_count == 2.0


def test_group_quartiles_all_groupings_order_invariant():
    rng = np.random.default_rng(29)
    n = 200
    preds = make_preds(
        probs=rng.uniform(0.05, 0.95, size=n),
        labels=rng.integers(0, 2, size=n),
        weights=rng.lognormal(0.0, 0.5, size=n),
        regions=rng.choice(["a", "b", "c"], size=n).tolist(),
        urban=[bool(u) for u in rng.integers(0, 2, size=n)],
        consumption=rng.permutation(np.linspace(100.0, 900.0, n)),
    )
    perm = rng.permutation(n)
    shuffled = make_preds(
        probs=preds.prob_exact[perm],
        labels=preds.labels[perm],
        weights=preds.weights[perm],
        regions=[preds.regions[i] for i in perm],
        urban=[preds.urban[i] for i in perm],
        consumption=preds.consumption[perm],
    )
    for grouping in GROUPINGS:
        first, notes_a = group_quartiles(preds, grouping)
        second, notes_b = group_quartiles(shuffled, grouping)
        assert sorted(notes_a) == sorted(notes_b)
        key = lambda s: (s.group, s.status)
        for s1, s2 in zip(sorted(first, key=key), sorted(second, key=key)):
            assert s1.group == s2.group and s1.status == s2.status
            assert s1.q25 <= s1.q50 <= s1.q75
            assert s1.q25 == pytest.approx(s2.q25, abs=1e-12)
            assert s1.q50 == pytest.approx(s2.q50, abs=1e-12)
            assert s1.q75 == pytest.approx(s2.q75, abs=1e-12)
            assert s1.weighted_count == pytest.approx(s2.weighted_count, rel=1e-12)
            assert s1.n == s2.n


def test_group_quartiles_decile_grouping_counts():
    rng = np.random.default_rng(4)
    preds = make_preds(
        probs=rng.uniform(0.1, 0.9, size=100),
        labels=[i % 2 for i in range(100)],
        consumption=rng.permutation(np.arange(100.0)),
    )
    summaries, _ = group_quartiles(preds, "decile")
    counts = {}
    for s in summaries:
        counts[s.group] = counts.get(s.group, 0.0) + s.weighted_count
    assert set(counts) == {str(d) for d in range(1, 11)}
    assert all(c == pytest.approx(10.0) for c in counts.values())


def test_group_quartiles_validation():
    preds = make_preds(probs=[0.4, 0.6], labels=[0, 1])
    with pytest.raises(ValidationError, match="unknown grouping"):
        group_quartiles(preds, "province")
    with pytest.raises(ValidationError, match="urban flag missing"):
        group_quartiles(preds, "urban")
    with pytest.raises(ValidationError, match="consumption missing"):
        group_quartiles(preds, "decile")


def test_group_quartiles_separation_on_planted_data():
    ds, _ = planted_instance(5, n=1200, n_questions=6, coefs={1: 2.5, 2: -2.0, 3: 1.6})
    train, test = split_train_test(ds, seed=2)
    from povscore.data import encode_design

    fitted = fit(encode_design(train), lam=0.003, alpha=1.0)
    preds = predict_test(fitted, None, test, train_ids=train.ids)
    summaries, _ = group_quartiles(preds, "national")
    med = {s.status: s.q50 for s in summaries}
    assert med["poor"] - med["non-poor"] > 0.3


# -------------------------------------------------------------------- deciles


def test_deciles_equal_weights_exact_tens():
    rng = np.random.default_rng(8)
    preds = make_preds(
        probs=np.full(100, 0.5) + rng.uniform(-0.1, 0.1, 100),
        labels=rng.integers(0, 2, size=100),
        consumption=rng.permutation(np.arange(1.0, 101.0)),
    )
    deciles, notes = consumption_deciles(preds)
    assert notes == []
    assert np.array_equal(np.bincount(deciles, minlength=11)[1:], np.full(10, 10))
    # decile order follows consumption order
    order = np.argsort(preds.consumption)
    assert np.all(np.diff(deciles[order]) >= 0)


def test_deciles_heavy_household_spills_downward():
    # 30 light households, one carrying 15% of the weight, then 55 more
    consumption = np.concatenate(
        [np.arange(1.0, 31.0), [30.5], np.arange(31.0, 86.0)]
    )
    weights = np.ones(86)
    weights[30] = 15.0
    rng = np.random.default_rng(1)
    preds = make_preds(
        probs=rng.uniform(0.2, 0.8, size=86),
        labels=rng.integers(0, 2, size=86),
        weights=weights,
        consumption=consumption,
    )
    deciles, notes = consumption_deciles(preds)
    assert deciles[30] == 4  # mass starts at 30/100, spill lands below
    assert len(notes) == 1
    assert "h0030" in notes[0]
    assert "15.0%" in notes[0]
    assert "spans deciles 4..5" in notes[0]
    assert "assigned decile 4" in notes[0]
    # share per decile stays within one household's weight of 10%
    shares = np.zeros(11)
    np.add.at(shares, deciles, weights / weights.sum())
    assert np.all(np.abs(shares[1:] - 0.1) <= weights.max() / weights.sum() + 1e-12)


def test_deciles_match_sort_and_accumulate_oracle():
    rng = np.random.default_rng(12)
    n = 60
    consumption = rng.permutation(np.linspace(50.0, 950.0, n))
    weights = rng.lognormal(0.0, 0.7, size=n)
    preds = make_preds(
        probs=rng.uniform(0.1, 0.9, size=n),
        labels=rng.integers(0, 2, size=n),
        weights=weights,
        consumption=consumption,
    )
    deciles, _ = consumption_deciles(preds)
    pairs = sorted(range(n), key=lambda i: consumption[i])
    total = sum(weights)
    below = 0.0
    expected = np.empty(n, dtype=int)
    for i in pairs:
        expected[i] = int(10.0 * below / total) + 1
        below += weights[i]
    assert np.array_equal(deciles, expected)


def test_deciles_missing_consumption_error():
    preds = make_preds(probs=[0.4, 0.6], labels=[0, 1])
    with pytest.raises(ValidationError, match="consumption missing"):
        consumption_deciles(preds)


# ------------------------------------------------------------------ thresholds


def test_threshold_perfect_separation_zero_errors_at_half():
    rng = np.random.default_rng(2)
    probs = [0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1]
    labels = [1, 1, 1, 0, 0, 0, 0]
    report = threshold_errors(
        make_preds(probs, labels, weights=rng.uniform(0.5, 2.0, 7))
    )
    i = report.thresholds.index(0.5)
    assert report.exclusion[i] == 0.0
    assert report.inclusion[i] == 0.0


def test_threshold_endpoints():
    report = threshold_errors(make_preds([0.3, 0.7, 0.4, 0.6], [1, 1, 0, 0]))
    assert report.thresholds[0] == 0.0
    assert report.exclusion[0] == 0.0
    assert report.inclusion[0] == 1.0
    assert report.thresholds[-1] == 1.0
    assert report.exclusion[-1] == 1.0
    assert report.inclusion[-1] == 0.0
    assert len(report.thresholds) == 101


def test_threshold_uniform_predictor_tracks_analytic_curves():
    # labels independent of p ~ U(0,1): E[exclusion] = t, E[inclusion] = 1 - t
    rng = np.random.default_rng(23)
    n = 8000
    probs = rng.uniform(1e-9, 1.0 - 1e-9, size=n)
    labels = np.array([1, 0] * (n // 2))
    report = threshold_errors(make_preds(probs, labels))
    for t, ex, inc in zip(report.thresholds, report.exclusion, report.inclusion):
        sigma = np.sqrt(t * (1.0 - t) / (n / 2))
        assert abs(ex - t) <= 3.0 * sigma + 1e-12
        assert abs(inc - (1.0 - t)) <= 3.0 * sigma + 1e-12


def test_threshold_monotone_and_classification_identity():
    # power-of-two class weight totals make the shares exact dyadics, so the
    # exclusion + correctly-classified identity must hold with no tolerance
    rng = np.random.default_rng(31)
    labels = np.array([1] * 16 + [0] * 16)
    weights = np.where(labels == 1, 2.0, 1.0)
    probs = np.round(rng.uniform(0.01, 0.99, size=32), 2)
    preds = make_preds(probs, labels, weights=weights)
    report = threshold_errors(preds)
    assert np.all(np.diff(report.exclusion) >= 0)
    assert np.all(np.diff(report.inclusion) <= 0)
    poor = labels == 1
    w_poor = weights[poor].sum()
    for t, ex in zip(report.thresholds, report.exclusion):
        correct = float(weights[poor & (probs > t)].sum()) / w_poor
        assert ex + correct == 1.0


def test_threshold_single_class_error():
    with pytest.raises(ValidationError, match="both classes"):
        threshold_errors(make_preds([0.4, 0.6], [1, 1]))
    with pytest.raises(ValidationError, match="mismatched lengths"):
        ThresholdReport(thresholds=(0.0, 1.0), exclusion=(0.0,), inclusion=(1.0, 0.0))
    with pytest.raises(ValidationError, match="non-decreasing"):
        ThresholdReport(
            thresholds=(0.0, 0.5, 1.0),
            exclusion=(0.5, 0.0, 1.0),
            inclusion=(1.0, 0.5, 0.0),
        )


# ------------------------------------------------------------------------ AUC


def test_auc_rank_matches_pairwise_oracle():
    rng = np.random.default_rng(41)
    n = 150
    probs = np.round(rng.uniform(0.05, 0.95, size=n), 1)  # force ties
    labels = rng.integers(0, 2, size=n)
    weights = rng.lognormal(0.0, 0.5, size=n)
    assert 0 < labels.sum() < n
    got = weighted_auc_rank(probs, labels, weights)
    assert got == pytest.approx(pair_auc(probs, labels, weights), abs=1e-12)
    perm = rng.permutation(n)
    assert weighted_auc_rank(probs[perm], labels[perm], weights[perm]) == pytest.approx(
        got, abs=1e-12
    )


def test_auc_rank_and_grid_agree_within_grid_error():
    rng = np.random.default_rng(6)
    n = 3000
    probs = np.clip(rng.beta(2.0, 2.0, size=n), 1e-6, 1.0 - 1e-6)
    labels = (rng.random(n) < probs).astype(int)
    weights = rng.lognormal(0.0, 0.4, size=n)
    rank = weighted_auc_rank(probs, labels, weights)
    grid = weighted_auc_grid(probs, labels, weights)
    assert abs(rank - grid) <= 0.01
    assert rank > 0.6  # labels were drawn from the probabilities


def test_auc_extremes_and_full_ties():
    labels = np.array([1, 1, 0, 0, 0])
    w = np.array([1.0, 2.0, 1.0, 0.5, 1.5])
    perfect = np.array([0.9, 0.9, 0.1, 0.1, 0.1])
    assert weighted_auc_rank(perfect, labels, w) == 1.0
    assert weighted_auc_grid(perfect, labels, w) == pytest.approx(1.0, abs=1e-12)
    assert weighted_auc_rank(1.0 - perfect, labels, w) == 0.0
    assert weighted_auc_grid(1.0 - perfect, labels, w) == pytest.approx(0.0, abs=1e-12)
    tied = np.full(5, 0.4)
    assert weighted_auc_rank(tied, labels, w) == 0.5
    assert weighted_auc_grid(tied, labels, w) == pytest.approx(0.5, abs=1e-12)


def test_auc_single_class_error():
    one_class = np.array([1, 1, 1])
    p = np.array([0.2, 0.5, 0.8])
    w = np.ones(3)
    with pytest.raises(ValidationError, match="both classes"):
        weighted_auc_rank(p, one_class, w)
    with pytest.raises(ValidationError, match="both classes"):
        weighted_auc_grid(p, one_class, w)


# ----------------------------------------------------------------- prediction


def test_predict_test_null_fit_gives_half():
    ds, _ = planted_instance(9, n=40, n_questions=3, coefs={1: 1.0})
    preds = predict_test(null_fit_for(ds), None, ds)
    assert np.all(preds.prob_exact == 0.5)
    assert preds.scores is None and preds.prob_lookup is None
    assert preds.ids == ds.ids
    assert preds.weights.sum() == pytest.approx(ds.n, rel=1e-12)


def test_predict_test_region_only_fit_matches_weighted_rates():
    rng = np.random.default_rng(14)
    regions = ("north", "south")
    records = [
        HouseholdRecord(
            id=f"h{i:04d}",
            weight=float(rng.lognormal(0.0, 0.4)),
            region=regions[i % 2],
            poverty=int(rng.random() < (0.3 if i % 2 == 0 else 0.6)),
            responses={"q01": "yes" if rng.random() < 0.5 else "no"},
        )
        for i in range(400)
    ]
    from povscore.data import QuestionSpec, encode_design

    ds = build_dataset(records, regions, [QuestionSpec("q01", "Q?", ("no", "yes"))])
    heavy = fit(encode_design(ds), lam=1e9, alpha=1.0)
    preds = predict_test(heavy, None, ds)
    rates = region_rates(ds)
    for region in regions:
        mask = np.array([r == region for r in preds.regions])
        vals = preds.prob_exact[mask]
        assert np.ptp(vals) <= 1e-12
        assert vals[0] == pytest.approx(rates[region], abs=1e-6)


def test_predict_test_lookup_gap_within_quantization_bound():
    ds, enc = planted_instance(70, n=800, n_questions=4, coefs={1: 1.6, 2: -1.2})
    fitted = fit(enc, lam=0.01, alpha=1.0)
    card = build_scorecard(fitted)
    assert not card.weight_notes  # bound below assumes no cap adjustments
    preds = predict_test(fitted, card, ds)
    assert preds.scores is not None and preds.prob_lookup is not None
    bound = 0.25 * (card.s_max / 100.0) * 0.5 * len(card.questions)
    assert np.max(np.abs(preds.prob_lookup - preds.prob_exact)) <= bound


def test_predict_test_rejects_train_overlap():
    ds, _ = planted_instance(3, n=30, n_questions=2, coefs={1: 0.8})
    train, test = split_train_test(ds, seed=1)
    overlapping = ds.subset(range(ds.n))  # contains every train id
    with pytest.raises(ValidationError, match="overlap the training set"):
        predict_test(null_fit_for(ds), None, overlapping, train_ids=train.ids)
    preds = predict_test(null_fit_for(ds), None, test, train_ids=train.ids)
    assert preds.n == test.n


def test_prediction_set_validation():
    with pytest.raises(ValidationError, match="mismatched lengths"):
        make_preds([0.5, 0.5], [1])
    with pytest.raises(ValidationError, match="empty prediction set"):
        make_preds([], [])
    with pytest.raises(ValidationError, match=r"\(0, 1\)"):
        make_preds([0.5, 1.0], [1, 0])
    with pytest.raises(ValidationError, match=r"\[0, 100\]"):
        make_preds([0.5, 0.5], [1, 0], scores=np.array([5, 101]))


# ----------------------------------------------------------- model comparison


@pytest.mark.filterwarnings("ignore:only .* questions were ever selected")
def test_compare_full_model_deterministic_and_sane():
    ds, _ = planted_instance(21, n=420, n_questions=6, coefs={1: 1.8, 2: -1.5})
    train, test = split_train_test(ds, seed=7)
    config = SelectionConfig(
        n_bootstrap=6,
        subsample_fraction=0.5,
        with_replacement=False,
        k_questions=3,
        inner_cv_k=3,
        seed=11,
        n_lambda=12,
        lambda_min_ratio=0.05,
    )
    kwargs = dict(
        selection_config=config, seed=11, inner_cv_k=3, n_lambda=12,
        lambda_min_ratio=0.05,
    )
    report = compare_full_model(train, test, 1.0, **kwargs)
    again = compare_full_model(train, test, 1.0, **kwargs)
    assert report == again
    assert report["alpha"] == 1.0
    assert report["ten_question"]["deviance"] <= report["null_deviance"] + 1e-9
    assert report["ten_question"]["auc"] > 0.5
    assert report["full_model"]["auc"] > 0.5
    assert report["full_model"]["n_questions"] == 6
    assert report["full_model"]["lambda"] > 0
    for side in ("ten_question", "full_model"):
        quartiles = report[side]["national_quartiles"]
        assert set(quartiles) == {"poor", "non-poor"}
        for triple in quartiles.values():
            assert triple[0] <= triple[1] <= triple[2]


def test_compare_full_model_accepts_prefit_ten_question_model():
    ds, _ = planted_instance(33, n=300, n_questions=5, coefs={1: 1.6, 3: -1.3})
    train, test = split_train_test(ds, seed=3)
    from povscore.data import encode_design

    ten = fit(encode_design(train, ["q01", "q03"]), lam=0.02, alpha=1.0)
    report = compare_full_model(
        train, test, 1.0, ten_fit=ten, inner_cv_k=3, n_lambda=10,
        lambda_min_ratio=0.05,
    )
    assert set(report) == {"ten_question", "full_model", "null_deviance", "alpha"}
    assert report["full_model"]["n_questions"] == 5
    assert report["ten_question"]["deviance"] <= report["null_deviance"] + 1e-9
