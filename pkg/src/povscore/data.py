"""Household survey data: loading, validation, dummy encoding, and splitting.

A dataset holds weighted household records with a region, a 0/1 poverty label,
and one categorical response per survey question. Encoding produces a 0/1
design matrix with the region dummies first (penalty factor 0) and one column
per non-reference question level (penalty factor 1).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SchemaError, ValidationError

_TRUTHY = {"1", "true", "yes", "urban", "t", "y"}
_FALSY = {"0", "false", "no", "rural", "f", "n"}

# schema roles that name a single column
_SCALAR_ROLES = ("weight", "region", "poverty", "consumption", "urban", "id")
_REQUIRED_ROLES = ("weight", "region", "poverty")


@dataclass(frozen=True)
class QuestionSpec:
    """A categorical question; the first declared level is the reference level."""

    id: str
    prompt: str
    levels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("question id must be nonempty")
        if len(self.levels) < 2:
            raise ValidationError(
                f"question {self.id!r} needs at least 2 levels, got {len(self.levels)}"
            )
        if len(set(self.levels)) != len(self.levels):
            raise ValidationError(f"question {self.id!r} has duplicate levels")


@dataclass(frozen=True)
class HouseholdRecord:
    id: str
    weight: float
    region: str
    poverty: int
    responses: Mapping[str, str]
    consumption: float | None = None
    urban: bool | None = None

    def __post_init__(self) -> None:
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise ValidationError(
                f"record {self.id!r}: weight must be positive and finite, got {self.weight}"
            )
        if self.poverty not in (0, 1):
            raise ValidationError(
                f"record {self.id!r}: poverty label must be 0 or 1, got {self.poverty!r}"
            )
        if self.consumption is not None and not (
            np.isfinite(self.consumption) and self.consumption >= 0
        ):
            raise ValidationError(
                f"record {self.id!r}: consumption must be nonnegative, got {self.consumption}"
            )


@dataclass(frozen=True)
class SurveyDataset:
    """Validated, immutable collection of household records.

    Region and question order is fixed at construction and drives the column
    order of every design matrix encoded from this dataset.
    """

    records: tuple[HouseholdRecord, ...]
    regions: tuple[str, ...]
    questions: tuple[QuestionSpec, ...]
    poverty_line_label: str = "national poverty line"

    def __post_init__(self) -> None:
        if not self.records:
            raise ValidationError("dataset has no records")
        if len(set(self.regions)) != len(self.regions):
            raise ValidationError("duplicate region identifiers")
        qids = [q.id for q in self.questions]
        if len(set(qids)) != len(qids):
            raise ValidationError("duplicate question ids")
        region_set = set(self.regions)
        level_sets = {q.id: set(q.levels) for q in self.questions}
        for rec in self.records:
            if rec.region not in region_set:
                raise ValidationError(
                    f"record {rec.id!r}: unknown region {rec.region!r}"
                )
            if set(rec.responses.keys()) != set(level_sets):
                missing = sorted(set(level_sets) - set(rec.responses))
                extra = sorted(set(rec.responses) - set(level_sets))
                raise ValidationError(
                    f"record {rec.id!r}: responses do not match question list "
                    f"(missing {missing}, unexpected {extra})"
                )
            for qid, level in rec.responses.items():
                if level not in level_sets[qid]:
                    raise ValidationError(
                        f"record {rec.id!r}: level {level!r} is not declared "
                        f"for question {qid!r}"
                    )

    @property
    def n(self) -> int:
        return len(self.records)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(rec.id for rec in self.records)

    @cached_property
    def raw_weights(self) -> np.ndarray:
        return np.array([rec.weight for rec in self.records], dtype=np.float64)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([rec.poverty for rec in self.records], dtype=np.float64)

    def question(self, qid: str) -> QuestionSpec:
        for q in self.questions:
            if q.id == qid:
                return q
        raise ValidationError(f"unknown question id {qid!r}")

    def subset(self, indices: Sequence[int]) -> "SurveyDataset":
        """Dataset made of the given record positions, in the given order."""
        recs = tuple(self.records[int(i)] for i in indices)
        return SurveyDataset(recs, self.regions, self.questions, self.poverty_line_label)


@dataclass(frozen=True)
class Column:
    """Descriptor for one design-matrix column."""

    kind: str  # "region" or "question"
    region: str | None = None
    question: str | None = None
    level: str | None = None

    def label(self) -> str:
        if self.kind == "region":
            return f"region:{self.region}"
        return f"question:{self.question}={self.level}"


@dataclass(frozen=True)
class DesignMatrix:
    """0/1 design with region dummies first, then question-level dummies.

    weights are the survey weights rescaled to mean 1; penalty_factors are 0
    exactly on the region columns. X is kept Fortran-ordered because the
    solver sweeps it column by column.
    """

    X: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    penalty_factors: np.ndarray
    columns: tuple[Column, ...]
    regions: tuple[str, ...]
    questions: tuple[QuestionSpec, ...]
    row_ids: tuple[str, ...]
    dropped_questions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n, p = self.X.shape
        if p != len(self.columns):
            raise ValidationError("column descriptors do not match matrix width")
        if not (
            len(self.labels) == len(self.weights) == len(self.row_ids) == n
        ):
            raise ValidationError("row arrays do not match matrix height")
        if self.X.size and not np.isin(self.X, (0.0, 1.0)).all():
            raise ValidationError("design entries must be 0 or 1")
        n_region = sum(1 for c in self.columns if c.kind == "region")
        if n_region:
            row_sums = self.X[:, :n_region].sum(axis=1)
            if not np.all(row_sums == 1.0):
                raise ValidationError("region block must be one-hot in every row")
        for j, col in enumerate(self.columns):
            expect = 0.0 if col.kind == "region" else None
            if expect is not None and self.penalty_factors[j] != expect:
                raise ValidationError("region columns must have penalty factor 0")
            if col.kind != "region" and self.penalty_factors[j] <= 0:
                raise ValidationError("question columns must have penalty factor > 0")
        if abs(float(self.weights.mean()) - 1.0) > 1e-12:
            raise ValidationError("weights must be normalized to mean 1")
        if not np.isin(self.labels, (0.0, 1.0)).all():
            raise ValidationError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_region_cols(self) -> int:
        return sum(1 for c in self.columns if c.kind == "region")

    def column_index(self, column_label: str) -> int:
        for j, col in enumerate(self.columns):
            if col.label() == column_label:
                return j
        raise ValidationError(f"unknown column {column_label!r}")

    def decode_row(self, i: int) -> dict[str, str]:
        """Recover the record's responses from its dummy row."""
        responses: dict[str, str] = {}
        for q in self.questions:
            if q.id in self.dropped_questions:
                continue
            level = q.levels[0]
            for j, col in enumerate(self.columns):
                if col.kind == "question" and col.question == q.id and self.X[i, j] == 1.0:
                    level = col.level  # type: ignore[assignment]
                    break
            responses[q.id] = level
        return responses

    def region_of_row(self, i: int) -> str:
        for j in range(self.n_region_cols):
            if self.X[i, j] == 1.0:
                return self.columns[j].region  # type: ignore[return-value]
        raise ValidationError(f"row {i} has no region dummy set")

    def subset_rows(self, indices: Sequence[int]) -> "DesignMatrix":
        """Row subset with weights renormalized to mean 1. Columns unchanged."""
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size == 0:
            raise ValidationError("empty row subset")
        raw = self.weights[idx]
        return DesignMatrix(
            X=np.asfortranarray(self.X[idx, :]),
            labels=self.labels[idx].copy(),
            weights=raw * (len(raw) / float(raw.sum())),
            penalty_factors=self.penalty_factors,
            columns=self.columns,
            regions=self.regions,
            questions=self.questions,
            row_ids=tuple(self.row_ids[int(i)] for i in idx),
            dropped_questions=self.dropped_questions,
        )


def load_schema(path: Path | str) -> dict:
    import json

    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read schema file {path}: {exc}") from exc
    try:
        schema = json.loads(raw)
    except ValueError as exc:
        raise SchemaError(f"schema file {path} is not valid JSON: {exc}") from exc
    if not isinstance(schema, dict):
        raise SchemaError("schema must be a JSON object")
    return schema


def _check_schema(schema: Mapping) -> dict[str, str]:
    """Validate role keys and return {question id: column name}."""
    questions: dict[str, str] = {}
    for key, value in schema.items():
        if key in _SCALAR_ROLES or key in ("levels", "prompts", "regions", "poverty_line_label"):
            continue
        if key.startswith("question:"):
            qid = key[len("question:"):]
            if not qid:
                raise SchemaError("empty question id in schema key 'question:'")
            if not isinstance(value, str):
                raise SchemaError(f"schema key {key!r} must map to a column name")
            questions[qid] = value
            continue
        raise SchemaError(f"unrecognized schema key {key!r}")
    for role in _REQUIRED_ROLES:
        if role not in schema:
            raise SchemaError(f"schema is missing required role {role!r}")
    if not questions:
        raise SchemaError("schema declares no question:* columns")
    return questions


def _parse_binary(value: str, row_num: int, column: str) -> int:
    v = value.strip()
    if v in ("0", "1"):
        return int(v)
    if v in ("0.0", "1.0"):
        return int(float(v))
    raise ValidationError(
        f"row {row_num}: column {column!r} must be 0 or 1, got {value!r}"
    )


def _parse_bool(value: str, row_num: int, column: str) -> bool:
    v = value.strip().lower()
    if v in _TRUTHY:
        return True
    if v in _FALSY:
        return False
    raise ValidationError(
        f"row {row_num}: column {column!r} must be a boolean flag, got {value!r}"
    )


def load_dataset(path: Path | str, schema: Mapping) -> SurveyDataset:
    """Read a CSV extract under a column-role schema.

    Schema roles: weight, region, poverty (required); consumption, urban, id
    (optional); one "question:<id>" entry per survey question. Optional keys
    "levels" and "prompts" (maps keyed by question id) pin level order and
    wording; otherwise levels are collected in order of first appearance.
    """
    question_cols = _check_schema(schema)
    declared_levels = schema.get("levels", {}) or {}
    prompts = schema.get("prompts", {}) or {}

    path = Path(path)
    if not path.exists():
        raise SchemaError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        named = {schema[r] for r in _SCALAR_ROLES if r in schema}
        named.update(question_cols.values())
        missing = sorted(c for c in named if c not in header)
        if missing:
            raise SchemaError(f"data file is missing columns: {missing}")

        records: list[HouseholdRecord] = []
        seen_levels: dict[str, list[str]] = {qid: [] for qid in question_cols}
        seen_regions: list[str] = []
        seen_ids: set[str] = set()
        for row_num, row in enumerate(reader, start=1):
            weight_s = row[schema["weight"]]
            try:
                weight = float(weight_s)
            except (TypeError, ValueError):
                raise ValidationError(
                    f"row {row_num}: weight {weight_s!r} is not a number"
                ) from None
            if not (np.isfinite(weight) and weight > 0):
                raise ValidationError(
                    f"row {row_num}: weight must be positive, got {weight_s!r}"
                )
            poverty = _parse_binary(row[schema["poverty"]], row_num, schema["poverty"])
            region = (row[schema["region"]] or "").strip()
            if not region:
                raise ValidationError(f"row {row_num}: empty region")
            if region not in seen_regions:
                seen_regions.append(region)

            consumption = None
            if "consumption" in schema:
                raw = (row[schema["consumption"]] or "").strip()
                if raw:
                    try:
                        consumption = float(raw)
                    except ValueError:
                        raise ValidationError(
                            f"row {row_num}: consumption {raw!r} is not a number"
                        ) from None
            urban = None
            if "urban" in schema:
                raw = (row[schema["urban"]] or "").strip()
                if raw:
                    urban = _parse_bool(raw, row_num, schema["urban"])

            responses: dict[str, str] = {}
            for qid, colname in question_cols.items():
                level = (row[colname] or "").strip()
                if not level:
                    raise ValidationError(
                        f"row {row_num}: missing response for question {qid!r}"
                    )
                if qid in declared_levels:
                    if level not in declared_levels[qid]:
                        raise ValidationError(
                            f"row {row_num}: level {level!r} is not declared "
                            f"for question {qid!r}"
                        )
                elif level not in seen_levels[qid]:
                    seen_levels[qid].append(level)
                responses[qid] = level

            if "id" in schema:
                rec_id = (row[schema["id"]] or "").strip()
                if not rec_id:
                    raise ValidationError(f"row {row_num}: empty id")
            else:
                rec_id = f"row{row_num}"
            if rec_id in seen_ids:
                raise ValidationError(f"row {row_num}: duplicate id {rec_id!r}")
            seen_ids.add(rec_id)

            records.append(
                HouseholdRecord(
                    id=rec_id,
                    weight=weight,
                    region=region,
                    poverty=poverty,
                    responses=responses,
                    consumption=consumption,
                    urban=urban,
                )
            )

    if not records:
        raise ValidationError(f"data file {path} has no data rows")

    questions = []
    for qid in question_cols:
        levels = declared_levels.get(qid) or seen_levels[qid]
        if len(levels) < 2:
            raise ValidationError(
                f"question {qid!r} has fewer than 2 levels in the data; "
                "declare its levels in the schema or drop the column"
            )
        questions.append(
            QuestionSpec(id=qid, prompt=prompts.get(qid, qid), levels=tuple(levels))
        )

    regions = tuple(schema.get("regions") or seen_regions)
    missing_regions = {r.region for r in records} - set(regions)
    if missing_regions:
        raise ValidationError(
            f"regions present in data but not declared: {sorted(missing_regions)}"
        )
    return SurveyDataset(
        records=tuple(records),
        regions=regions,
        questions=tuple(questions),
        poverty_line_label=schema.get("poverty_line_label", "national poverty line"),
    )


def encode_design(
    dataset: SurveyDataset, question_subset: Iterable[str] | None = None
) -> DesignMatrix:
    """Dummy-encode a dataset.

    Region dummies come first (full one-hot, penalty factor 0), then one 0/1
    column per non-reference level of each included question. Questions with a
    single observed level carry no information and are dropped with a warning.
    """
    if question_subset is None:
        qids = [q.id for q in dataset.questions]
    else:
        qids = list(question_subset)
        if not qids:
            raise ValidationError("question_subset is empty")
        known = {q.id for q in dataset.questions}
        unknown = [q for q in qids if q not in known]
        if unknown:
            raise ValidationError(f"unknown question ids in subset: {unknown}")
        # keep dataset declaration order regardless of subset order
        order = {q.id: k for k, q in enumerate(dataset.questions)}
        qids = sorted(set(qids), key=order.__getitem__)

    questions = [dataset.question(qid) for qid in qids]
    dropped: list[str] = []
    kept: list[QuestionSpec] = []
    for q in questions:
        observed = {rec.responses[q.id] for rec in dataset.records}
        if len(observed) < 2:
            warnings.warn(
                f"question {q.id!r} has a single observed level and was dropped",
                stacklevel=2,
            )
            dropped.append(q.id)
        else:
            kept.append(q)

    columns: list[Column] = [Column(kind="region", region=r) for r in dataset.regions]
    for q in kept:
        for level in q.levels[1:]:
            columns.append(Column(kind="question", question=q.id, level=level))

    n, p = dataset.n, len(columns)
    X = np.zeros((n, p), dtype=np.float64, order="F")
    region_col = {r: j for j, r in enumerate(dataset.regions)}
    level_col = {
        (c.question, c.level): j
        for j, c in enumerate(columns)
        if c.kind == "question"
    }
    for i, rec in enumerate(dataset.records):
        X[i, region_col[rec.region]] = 1.0
        for q in kept:
            j = level_col.get((q.id, rec.responses[q.id]))
            if j is not None:
                X[i, j] = 1.0

    raw_w = dataset.raw_weights
    weights = raw_w * (n / float(raw_w.sum()))
    penalty = np.array(
        [0.0 if c.kind == "region" else 1.0 for c in columns], dtype=np.float64
    )
    return DesignMatrix(
        X=X,
        labels=dataset.labels.copy(),
        weights=weights,
        penalty_factors=penalty,
        columns=tuple(columns),
        regions=dataset.regions,
        questions=tuple(kept),
        row_ids=dataset.ids,
        dropped_questions=tuple(dropped),
    )


_RESERVED_COLUMNS = {"id", "weight", "region", "poverty", "consumption", "urban"}


def dataset_schema(dataset: SurveyDataset) -> dict:
    """Schema under which write_dataset_csv output round-trips exactly."""
    schema: dict = {
        "id": "id",
        "weight": "weight",
        "region": "region",
        "poverty": "poverty",
        "consumption": "consumption",
        "urban": "urban",
        "regions": list(dataset.regions),
        "levels": {q.id: list(q.levels) for q in dataset.questions},
        "prompts": {q.id: q.prompt for q in dataset.questions},
        "poverty_line_label": dataset.poverty_line_label,
    }
    for q in dataset.questions:
        col = f"q_{q.id}" if q.id in _RESERVED_COLUMNS else q.id
        schema[f"question:{q.id}"] = col
    return schema


def write_dataset_csv(dataset: SurveyDataset, path: Path | str) -> Path:
    """Write the dataset in the CSV layout described by dataset_schema."""
    schema = dataset_schema(dataset)
    qcols = [(q.id, schema[f"question:{q.id}"]) for q in dataset.questions]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["id", "weight", "region", "poverty", "consumption", "urban"]
            + [col for _, col in qcols]
        )
        for rec in dataset.records:
            writer.writerow(
                [
                    rec.id,
                    repr(rec.weight),
                    rec.region,
                    rec.poverty,
                    "" if rec.consumption is None else repr(rec.consumption),
                    "" if rec.urban is None else int(rec.urban),
                    *[rec.responses[qid] for qid, _ in qcols],
                ]
            )
    return path


def split_train_test(
    dataset: SurveyDataset, seed: int
) -> tuple[SurveyDataset, SurveyDataset]:
    """Random 2:1 partition: |train| = round(2n/3), deterministic per seed."""
    n = dataset.n
    if n < 3:
        raise ValidationError(f"need at least 3 records to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = round(2 * n / 3)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx), dataset.subset(test_idx)
