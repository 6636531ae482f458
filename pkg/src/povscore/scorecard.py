"""Translate a fitted model into an integer 0-100 scorecard with per-region
score -> probability lookup tables.

Per question, level coefficients are shifted so the most poverty-associated
level (largest coefficient) becomes the 0-point base:

    c_ql = max_l' beta_ql' - beta_ql  >=  0

The shifted-away mass moves into per-region constants
K_r = beta0 + beta_r + sum_q max_l beta_ql, so eta = K_r - sum_q c_q,l(i)
holds exactly. S_max = sum_q max_l c_ql is the largest raw score any valid
response combination can reach; integer weights are round(100 * c / S_max),
half away from zero. Lookup tables invert the score back to probability via
p_r(S) = logistic(K_r - (S_max/100) * S).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ._util import canonical_json
from .errors import NumericalError, ValidationError
from .solver import ElasticNetFit


@dataclass(frozen=True)
class RebasedModel:
    """Nonnegative per-level offsets plus per-region adjusted intercepts."""

    offsets: dict[str, dict[str, float]]  # qid -> level -> c >= 0
    region_constants: dict[str, float]  # region -> K_r
    rebase_constants: dict[str, float]  # qid -> absorbed max coefficient
    base_levels: dict[str, str]


@dataclass(frozen=True)
class ScorecardQuestion:
    id: str
    prompt: str
    levels: tuple[str, ...]
    weights: tuple[int, ...]
    offsets: tuple[float, ...]
    base_level: str

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.weights) or len(self.levels) != len(self.offsets):
            raise ValidationError(f"question {self.id!r}: ragged level arrays")
        if any(w < 0 or w != int(w) for w in self.weights):
            raise ValidationError(f"question {self.id!r}: weights must be ints >= 0")
        if min(self.weights) != 0:
            raise ValidationError(f"question {self.id!r}: no zero-weight base level")
        if self.base_level not in self.levels:
            raise ValidationError(f"question {self.id!r}: unknown base level")

    def weight_of(self, level: str) -> int:
        try:
            return self.weights[self.levels.index(level)]
        except ValueError:
            raise ValidationError(
                f"level {level!r} is not declared for question {self.id!r}"
            ) from None


@dataclass(frozen=True)
class LookupTable:
    region: str
    probabilities: tuple[float, ...]  # index = integer score 0..100

    def __post_init__(self) -> None:
        if len(self.probabilities) != 101:
            raise ValidationError("lookup table must cover scores 0..100")
        arr = np.asarray(self.probabilities)
        if not (np.all(arr > 0) and np.all(arr < 1)):
            raise ValidationError("lookup probabilities must lie in (0, 1)")
        if not np.all(np.diff(arr) < 0):
            raise ValidationError("lookup probabilities must strictly decrease")


@dataclass(frozen=True)
class Scorecard:
    questions: tuple[ScorecardQuestion, ...]
    s_max: float
    scale: float
    region_tables: dict[str, LookupTable]
    region_constants: dict[str, float]
    rebase_constants: dict[str, float]
    model_ref: dict
    weight_notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.s_max <= 0:
            raise ValidationError("s_max must be positive")
        if abs(self.scale * self.s_max - 100.0) > 1e-9:
            raise ValidationError("scale must equal 100 / s_max")
        total_max = sum(max(q.weights) for q in self.questions)
        if total_max > 100:
            raise ValidationError(
                f"max achievable score {total_max} exceeds 100"
            )
        if set(self.region_tables) != set(self.region_constants):
            raise ValidationError("lookup tables and region constants disagree")

    @property
    def max_score(self) -> int:
        return sum(max(q.weights) for q in self.questions)

    def to_dict(self) -> dict:
        return {
            "questions": [
                {
                    "id": q.id,
                    "prompt": q.prompt,
                    "levels": list(q.levels),
                    "weights": list(q.weights),
                    "offsets": list(q.offsets),
                    "base_level": q.base_level,
                }
                for q in self.questions
            ],
            "s_max": self.s_max,
            "scale": self.scale,
            "region_tables": {
                r: list(t.probabilities) for r, t in self.region_tables.items()
            },
            "region_constants": dict(self.region_constants),
            "rebase_constants": dict(self.rebase_constants),
            "model_ref": self.model_ref,
            "weight_notes": list(self.weight_notes),
        }

    @staticmethod
    def from_dict(d: Mapping) -> "Scorecard":
        return Scorecard(
            questions=tuple(
                ScorecardQuestion(
                    id=q["id"],
                    prompt=q["prompt"],
                    levels=tuple(q["levels"]),
                    weights=tuple(int(w) for w in q["weights"]),
                    offsets=tuple(float(v) for v in q["offsets"]),
                    base_level=q["base_level"],
                )
                for q in d["questions"]
            ),
            s_max=float(d["s_max"]),
            scale=float(d["scale"]),
            region_tables={
                r: LookupTable(region=r, probabilities=tuple(float(p) for p in probs))
                for r, probs in d["region_tables"].items()
            },
            region_constants={k: float(v) for k, v in d["region_constants"].items()},
            rebase_constants={k: float(v) for k, v in d["rebase_constants"].items()},
            model_ref=dict(d["model_ref"]),
            weight_notes=tuple(d.get("weight_notes", ())),
        )


def rebase(fit: ElasticNetFit) -> RebasedModel:
    """Shift each question's coefficients so its largest becomes the 0 base.

    The per-question maxima are absorbed into per-region constants so the
    linear predictor is unchanged: eta = K_r - sum_q c_q,l.
    """
    offsets: dict[str, dict[str, float]] = {}
    rebase_constants: dict[str, float] = {}
    base_levels: dict[str, str] = {}
    for q in fit.questions:
        coefs = {q.levels[0]: 0.0}
        coefs.update(fit.question_coefs.get(q.id, {}))
        mx = max(coefs[lv] for lv in q.levels)
        # first declared level wins ties so the base is deterministic
        base = next(lv for lv in q.levels if coefs[lv] == mx)
        offsets[q.id] = {lv: mx - coefs[lv] for lv in q.levels}
        rebase_constants[q.id] = mx
        base_levels[q.id] = base
    shift = sum(rebase_constants.values())
    region_constants = {
        r: fit.intercept + fit.region_coefs[r] + shift for r in fit.regions
    }
    return RebasedModel(
        offsets=offsets,
        region_constants=region_constants,
        rebase_constants=rebase_constants,
        base_levels=base_levels,
    )


def compute_smax(rebased: RebasedModel) -> float:
    """Largest raw score over all valid response combinations."""
    s_max = sum(max(per.values()) for per in rebased.offsets.values())
    if s_max <= 0:
        raise NumericalError(
            "degenerate scorecard: every question has all-zero offsets"
        )
    return float(s_max)


def _round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


def round_weights(
    rebased: RebasedModel, s_max: float
) -> dict[str, dict[str, int]]:
    """Integer weights round(100 * c / s_max), half away from zero."""
    if s_max <= 0:
        raise ValidationError("s_max must be positive")
    return {
        qid: {lv: _round_half_away(100.0 * c / s_max) for lv, c in per.items()}
        for qid, per in rebased.offsets.items()
    }


def _cap_weights(
    weights: dict[str, dict[str, int]],
    rebased: RebasedModel,
    s_max: float,
) -> tuple[dict[str, dict[str, int]], list[str]]:
    """Trim rounded weights until the best possible score fits in 100.

    Per-level rounding can push sum_q max_l weight past 100 by a few points.
    Repeatedly clip the question whose rounded maximum overshoots its exact
    scaled value the most; clipping to (cap - 1) lowers only that question's
    top levels, so weak ordering of weights within the question is preserved.
    """
    weights = {q: dict(per) for q, per in weights.items()}
    notes: list[str] = []
    while sum(max(per.values()) for per in weights.values()) > 100:
        excess = {
            q: max(per.values()) - 100.0 * max(rebased.offsets[q].values()) / s_max
            for q, per in weights.items()
        }
        target = sorted(excess, key=lambda q: (-excess[q], q))[0]
        cap = max(weights[target].values()) - 1
        weights[target] = {lv: min(w, cap) for lv, w in weights[target].items()}
        notes.append(
            f"clipped question {target!r} to a maximum of {cap} points so the "
            "best possible score stays within 100"
        )
    return weights, notes


def build_lookup(
    region_constants: Mapping[str, float], s_max: float
) -> dict[str, LookupTable]:
    """p_r(S) = logistic(K_r - (s_max/100) * S) over integer scores 0..100."""
    if s_max <= 0:
        raise ValidationError("s_max must be positive")
    scores = np.arange(101, dtype=np.float64)
    tables = {}
    for region, k_r in region_constants.items():
        eta = k_r - (s_max / 100.0) * scores
        probs = 1.0 / (1.0 + np.exp(-eta))
        tables[region] = LookupTable(
            region=region, probabilities=tuple(float(p) for p in probs)
        )
    return tables


def build_scorecard(fit: ElasticNetFit) -> Scorecard:
    """Full translation: rebase, scale to 100, round, cap, tabulate."""
    rebased = rebase(fit)
    s_max = compute_smax(rebased)
    raw_weights = round_weights(rebased, s_max)
    capped, notes = _cap_weights(raw_weights, rebased, s_max)
    questions = []
    for q in fit.questions:
        per_w = capped[q.id]
        per_c = rebased.offsets[q.id]
        questions.append(
            ScorecardQuestion(
                id=q.id,
                prompt=q.prompt,
                levels=q.levels,
                weights=tuple(per_w[lv] for lv in q.levels),
                offsets=tuple(per_c[lv] for lv in q.levels),
                base_level=rebased.base_levels[q.id],
            )
        )
    return Scorecard(
        questions=tuple(questions),
        s_max=s_max,
        scale=100.0 / s_max,
        region_tables=build_lookup(rebased.region_constants, s_max),
        region_constants=rebased.region_constants,
        rebase_constants=rebased.rebase_constants,
        model_ref=fit.to_dict(),
        weight_notes=tuple(notes),
    )


def score_household(card: Scorecard, responses: Mapping[str, str]) -> int:
    """Integer score of one household; extra responses are ignored."""
    total = 0
    for q in card.questions:
        level = responses.get(q.id)
        if level is None:
            raise ValidationError(f"missing response for question {q.id!r}")
        total += q.weight_of(level)
    return total


def lookup_probability(card: Scorecard, region: str, score: int) -> float:
    if region not in card.region_tables:
        raise ValidationError(f"scorecard has no lookup table for region {region!r}")
    if not 0 <= score <= 100:
        raise ValidationError(f"score {score} outside [0, 100]")
    return card.region_tables[region].probabilities[score]


def scorecard_text(card: Scorecard) -> str:
    """Fixed-width printable rendering: question blocks, then lookup tables."""
    out = io.StringIO()
    out.write("POVERTY SCORECARD\n")
    out.write("=" * 64 + "\n")
    out.write(f"Maximum achievable score: {card.max_score}\n\n")
    for i, q in enumerate(card.questions, start=1):
        out.write(f"{i}. {q.prompt}  [{q.id}]\n")
        for level, weight in zip(q.levels, q.weights):
            marker = " (base)" if level == q.base_level else ""
            out.write(f"     {level:<40s} {weight:>3d}{marker}\n")
        out.write("\n")
    for region in sorted(card.region_tables):
        out.write(f"Lookup table, region {region}\n")
        out.write("     score   probability\n")
        for s, p in enumerate(card.region_tables[region].probabilities):
            out.write(f"     {s:>5d}   {p:.3f}\n")
        out.write("\n")
    return out.getvalue()


def lookup_csv_text(card: Scorecard) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["region", "score", "probability"])
    for region in sorted(card.region_tables):
        for s, p in enumerate(card.region_tables[region].probabilities):
            writer.writerow([region, s, repr(p)])
    return buf.getvalue()


def export_scorecard(card: Scorecard, format: str, path: Path | str) -> Path:
    """Write the scorecard as printable text, JSON, or a lookup CSV."""
    path = Path(path)
    if format == "printable-text":
        path.write_text(scorecard_text(card), encoding="utf-8")
    elif format == "json":
        path.write_text(canonical_json(card.to_dict()), encoding="utf-8")
    elif format == "csv":
        path.write_text(lookup_csv_text(card), encoding="utf-8")
    else:
        raise ValidationError(
            f"unknown scorecard format {format!r}; "
            "expected printable-text, json, or csv"
        )
    return path


def import_scorecard(path: Path | str) -> Scorecard:
    import json

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read scorecard {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"scorecard file {path} is not valid JSON: {exc}") from exc
    return Scorecard.from_dict(data)
