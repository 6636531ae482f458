"""Independent reference implementations used as test oracles.

Everything here is deliberately written from scratch against the definitions
(weighted pseudo-loglikelihood, penalized objective, weighted quantiles,
pairwise AUC) rather than by calling package internals, so agreement between
the two is evidence of correctness and not of shared bugs.
"""

from __future__ import annotations

import numpy as np

from povscore.data import (
    HouseholdRecord,
    QuestionSpec,
    SurveyDataset,
    encode_design,
)


def reference_objective(X, y, w, pf, b0, beta, lam, alpha):
    """Penalized objective computed directly from its definition.

    Mean weighted negative loglikelihood plus lam * (alpha * L1 + (1 - alpha)
    * L2) over the penalized coordinates, with the L2 term unhalved.
    """
    X = np.asarray(X, dtype=np.float64)
    eta = b0 + X @ np.asarray(beta, dtype=np.float64)
    ll = y * eta - np.logaddexp(0.0, eta)
    loss = -float(np.sum(w * ll)) / len(y)
    pen_l1 = float(np.sum(pf * np.abs(beta)))
    pen_l2 = float(np.sum(pf * np.asarray(beta) ** 2))
    return loss + lam * (alpha * pen_l1 + (1.0 - alpha) * pen_l2)


def newton_logistic(X, y, w, tol=1e-12, max_iter=200):
    """Survey-weighted logistic regression by Newton-Raphson with halving.

    Minimizes the mean weighted negative loglikelihood over all columns of X
    (no separate intercept; include a constant or one-hot block in X). Returns
    the coefficient vector; raises on breakdown so tests fail loudly instead
    of comparing against garbage.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, p = X.shape
    beta = np.zeros(p)

    def nll(b):
        eta = X @ b
        return -float(np.sum(w * (y * eta - np.logaddexp(0.0, eta)))) / n

    f = nll(beta)
    for _ in range(max_iter):
        eta = X @ beta
        prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
        grad = -(X.T @ (w * (y - prob))) / n
        hess = (X.T * (w * prob * (1.0 - prob))) @ X / n
        step = np.linalg.solve(hess, grad)
        t = 1.0
        for _h in range(60):
            cand = beta - t * step
            f_new = nll(cand)
            if f_new <= f + 1e-14:
                break
            t *= 0.5
        else:
            raise RuntimeError("newton oracle line search failed")
        beta = cand
        f = f_new
        if np.max(np.abs(grad)) < tol:
            return beta
    if np.max(np.abs(grad)) > 1e-8:
        raise RuntimeError("newton oracle did not converge")
    return beta


def soft_threshold_vector(beta, pf, lam, alpha):
    """Elementwise soft-threshold of penalized coordinates at lam*alpha,
    then ridge shrinkage by 1/(1 + 2*lam*(1-alpha)). A feasible competitor
    point for objective comparisons, not an optimum."""
    out = np.asarray(beta, dtype=np.float64).copy()
    thr = lam * alpha
    shrink = 1.0 + 2.0 * lam * (1.0 - alpha)
    for j, factor in enumerate(pf):
        if factor > 0:
            b = out[j]
            out[j] = np.sign(b) * max(abs(b) - thr * factor, 0.0) / shrink
    return out


def coef_vector_from_fit(f, design):
    """Assemble the dense coefficient vector in design column order without
    touching solver internals."""
    beta = np.zeros(design.p)
    for j, col in enumerate(design.columns):
        if col.kind == "region":
            beta[j] = f.region_coefs[col.region]
        else:
            beta[j] = f.question_coefs[col.question][col.level]
    return beta


def brute_weighted_quantile(values, weights, q):
    """Sort-and-accumulate weighted quantile with plotting positions
    below_k / (W - w_k) and linear interpolation, in plain Python."""
    pairs = sorted(zip(values, weights), key=lambda t: t[0])
    v = [p[0] for p in pairs]
    w = [p[1] for p in pairs]
    if len(v) == 1:
        return v[0]
    total = sum(w)
    positions = []
    below = 0.0
    for wk in w:
        positions.append(below / (total - wk))
        below += wk
    if q <= positions[0]:
        return v[0]
    if q >= positions[-1]:
        return v[-1]
    for k in range(1, len(positions)):
        if q <= positions[k]:
            lo, hi = positions[k - 1], positions[k]
            frac = 0.0 if hi == lo else (q - lo) / (hi - lo)
            return v[k - 1] + frac * (v[k] - v[k - 1])
    return v[-1]


def pair_auc(probs, labels, weights):
    """All-pairs weighted AUC with half credit for tied predictions."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    pos = labels == 1
    neg = ~pos
    pp, pw = probs[pos], weights[pos]
    np_, nw = probs[neg], weights[neg]
    gt = (pp[:, None] > np_[None, :]).astype(np.float64)
    eq = (pp[:, None] == np_[None, :]).astype(np.float64)
    score = (pw[:, None] * nw[None, :] * (gt + 0.5 * eq)).sum()
    return float(score / (pw.sum() * nw.sum()))


def occupancy_mean_var(n, m):
    """Mean and variance of the number of distinct values in m uniform
    with-replacement draws from n items."""
    q1 = (1.0 - 1.0 / n) ** m
    q2 = (1.0 - 2.0 / n) ** m
    mean = n * (1.0 - q1)
    var = n * q1 + n * (n - 1) * q2 - n * n * q1 * q1
    return mean, var


def binary_questions(k, prefix="q"):
    return tuple(
        QuestionSpec(f"{prefix}{i:02d}", f"Question {i}?", ("no", "yes"))
        for i in range(1, k + 1)
    )


def build_dataset(records, regions, questions, label="national"):
    return SurveyDataset(
        records=tuple(records),
        regions=tuple(regions),
        questions=tuple(questions),
        poverty_line_label=label,
    )


def random_instance(seed, n=200, n_questions=11, coef_scale=1.0, weight_sigma=0.5):
    """Single-region dataset with binary questions and lognormal weights.

    The lone region column acts as the intercept, so the encoded design has
    n_questions + 1 columns. Labels are drawn from a logistic model with
    moderate coefficients to keep the instance well separated from both
    degeneracy and quasi-separation.
    """
    rng = np.random.default_rng(seed)
    questions = binary_questions(n_questions)
    truth = rng.uniform(-coef_scale, coef_scale, size=n_questions)
    b0 = rng.uniform(-0.5, 0.5)
    responses_yes = rng.random((n, n_questions)) < rng.uniform(
        0.25, 0.75, size=n_questions
    )
    eta = b0 + responses_yes @ truth
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    weights = rng.lognormal(mean=-0.5 * weight_sigma**2, sigma=weight_sigma, size=n)
    records = [
        HouseholdRecord(
            id=f"h{i:05d}",
            weight=float(weights[i]),
            region="r1",
            poverty=int(labels[i]),
            responses={
                q.id: ("yes" if responses_yes[i, j] else "no")
                for j, q in enumerate(questions)
            },
        )
        for i in range(n)
    ]
    ds = build_dataset(records, ["r1"], questions)
    return ds, encode_design(ds)


def region_rates(dataset):
    """Raw-weight weighted poverty rate per region, computed directly."""
    totals: dict[str, float] = {}
    hits: dict[str, float] = {}
    for rec in dataset.records:
        totals[rec.region] = totals.get(rec.region, 0.0) + rec.weight
        hits[rec.region] = hits.get(rec.region, 0.0) + rec.weight * rec.poverty
    return {r: hits[r] / totals[r] for r in totals}


def planted_instance(seed, n, n_questions, coefs, b0=-0.3, region="r1"):
    """Binary-question dataset whose labels follow a known logistic model.

    coefs maps 1-based question index to the coefficient of its "yes" level;
    unlisted questions carry no signal.
    """
    rng = np.random.default_rng(seed)
    questions = binary_questions(n_questions)
    prev = rng.uniform(0.3, 0.7, size=n_questions)
    yes = rng.random((n, n_questions)) < prev
    eta = b0 + sum(c * yes[:, j - 1] for j, c in coefs.items())
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    weights = rng.lognormal(-0.08, 0.4, size=n)
    records = [
        HouseholdRecord(
            id=f"h{i:05d}",
            weight=float(weights[i]),
            region=region,
            poverty=int(labels[i]),
            responses={
                q.id: ("yes" if yes[i, j] else "no")
                for j, q in enumerate(questions)
            },
        )
        for i in range(n)
    ]
    ds = build_dataset(records, [region], questions)
    return ds, encode_design(ds)
