"""End-to-end pipeline: split, outer CV over alpha, bootstrap selection,
final fit, scorecard, evaluation. Every stage writes JSON/CSV artifacts into
the run directory and can be re-run individually against stored artifacts.

All randomness flows from three named seeds in the config (split_seed,
cv_seed, selection.seed); artifacts contain no timestamps, so identical
configs reproduce byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import canonical_json, derive_seed, write_json
from .crossval import cv_lambda, outer_cv_alpha
from .data import (
    SurveyDataset,
    dataset_schema,
    encode_design,
    load_dataset,
    load_schema,
    split_train_test,
    write_dataset_csv,
)
from .errors import ConfigError, MissingArtifactError, PovscoreError
from .evaluation import (
    compare_full_model,
    consumption_deciles,
    group_quartiles,
    predict_test,
    threshold_errors,
    weighted_auc_grid,
    weighted_auc_rank,
)
from .scorecard import Scorecard, build_scorecard, export_scorecard
from .selection import SelectionConfig, select_top_questions, selection_frequencies
from .solver import ElasticNetFit, fit, kkt_residual
from .synthetic import SyntheticConfig, default_scenario, generate

STAGES = ("split", "alpha", "selection", "fit", "scorecard", "evaluation")

DEFAULT_ALPHA_GRID = (0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


@dataclass(frozen=True)
class RunConfig:
    out_dir: Path
    split_seed: int
    cv_seed: int
    selection: SelectionConfig
    data_csv: Path | None = None
    schema_path: Path | None = None
    synthetic: SyntheticConfig | None = None
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    alpha_fixed: float | None = None
    k_outer: int = 5
    final_cv_k: int = 10
    n_lambda: int = 100
    lambda_min_ratio: float | None = None
    compare_full: bool = True
    threads: int = 1
    stages: tuple[str, ...] = STAGES

    def __post_init__(self) -> None:
        if (self.data_csv is None) == (self.synthetic is None):
            raise ConfigError("config must provide exactly one of data or synthetic")
        if self.data_csv is not None and self.schema_path is None:
            raise ConfigError("CSV input requires a schema path")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; valid: {list(STAGES)}")
        for a in self.alpha_grid:
            if not 0.05 <= a <= 1.0:
                raise ConfigError(f"alpha grid value {a} outside [0.05, 1]")
        if self.alpha_fixed is not None and not 0.05 <= self.alpha_fixed <= 1.0:
            raise ConfigError(f"alpha_fixed {self.alpha_fixed} outside [0.05, 1]")

    def normalized(self) -> dict:
        """Config as a plain dict; hashed into the manifest."""
        return {
            "data_csv": None if self.data_csv is None else str(self.data_csv),
            "schema_path": None if self.schema_path is None else str(self.schema_path),
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "split_seed": self.split_seed,
            "cv_seed": self.cv_seed,
            "selection": self.selection.to_dict(),
            "alpha_grid": list(self.alpha_grid),
            "alpha_fixed": self.alpha_fixed,
            "k_outer": self.k_outer,
            "final_cv_k": self.final_cv_k,
            "n_lambda": self.n_lambda,
            "lambda_min_ratio": self.lambda_min_ratio,
            "compare_full": self.compare_full,
            "stages": list(self.stages),
        }


def parse_run_config(
    raw: dict,
    base_dir: Path,
    out_override: Path | None = None,
    seed_override: int | None = None,
    threads_override: int | None = None,
    stage_override: str | None = None,
) -> RunConfig:
    """Build a RunConfig from a parsed JSON config file.

    Seeds must be stated explicitly (there are no entropy defaults); a
    --seed-override replaces all three from one integer.
    """
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    known = {
        "out_dir", "data", "synthetic", "split_seed", "cv_seed", "selection",
        "alpha_grid", "alpha_fixed", "k_outer", "final_cv_k", "n_lambda",
        "lambda_min_ratio", "compare_full", "threads", "stages",
    }
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unrecognized config keys: {unknown}")

    out_dir = out_override or raw.get("out_dir")
    if out_dir is None:
        raise ConfigError("config needs out_dir (or pass --out)")
    out_dir = Path(out_dir)
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    data_csv = schema_path = None
    synthetic = None
    if "data" in raw:
        d = raw["data"]
        if not isinstance(d, dict) or "csv" not in d or "schema" not in d:
            raise ConfigError("config key 'data' must hold {'csv': ..., 'schema': ...}")
        data_csv = Path(d["csv"])
        if not data_csv.is_absolute():
            data_csv = base_dir / data_csv
        schema_path = Path(d["schema"])
        if not schema_path.is_absolute():
            schema_path = base_dir / schema_path
        for p in (data_csv, schema_path):
            if not p.exists():
                raise ConfigError(f"referenced file does not exist: {p}")
    if "synthetic" in raw:
        s = raw["synthetic"]
        if not isinstance(s, dict):
            raise ConfigError("config key 'synthetic' must be an object")
        try:
            if "default_scenario" in s:
                synthetic = default_scenario(**s["default_scenario"])
            else:
                synthetic = SyntheticConfig.from_dict(s)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad synthetic config: {exc}") from exc

    sel_raw = dict(raw.get("selection", {}))
    if seed_override is not None:
        split_seed = derive_seed(seed_override, 1)
        cv_seed = derive_seed(seed_override, 2)
        sel_raw["seed"] = derive_seed(seed_override, 3)
    else:
        if "split_seed" not in raw or "cv_seed" not in raw:
            raise ConfigError("config must state split_seed and cv_seed explicitly")
        if "seed" not in sel_raw:
            raise ConfigError("config must state selection.seed explicitly")
        split_seed = int(raw["split_seed"])
        cv_seed = int(raw["cv_seed"])
    try:
        selection = SelectionConfig(**sel_raw)
    except TypeError as exc:
        raise ConfigError(f"bad selection config: {exc}") from exc

    stages = raw.get("stages", list(STAGES))
    if stage_override is not None:
        alias = {"evaluate": "evaluation", "select": "selection"}
        stages = [alias.get(stage_override, stage_override)]
    try:
        return RunConfig(
            out_dir=out_dir,
            data_csv=data_csv,
            schema_path=schema_path,
            synthetic=synthetic,
            split_seed=split_seed,
            cv_seed=cv_seed,
            selection=selection,
            alpha_grid=tuple(raw.get("alpha_grid", DEFAULT_ALPHA_GRID)),
            alpha_fixed=raw.get("alpha_fixed"),
            k_outer=int(raw.get("k_outer", 5)),
            final_cv_k=int(raw.get("final_cv_k", 10)),
            n_lambda=int(raw.get("n_lambda", 100)),
            lambda_min_ratio=raw.get("lambda_min_ratio"),
            compare_full=bool(raw.get("compare_full", True)),
            threads=threads_override or int(raw.get("threads", 1)),
            stages=tuple(stages),
        )
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from exc


class RunContext:
    """Lazily loads datasets and stage artifacts from the run directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = config.out_dir
        self._dataset: SurveyDataset | None = None
        self._split: tuple[SurveyDataset, SurveyDataset] | None = None

    def _artifact(self, name: str, needed_by: str, produced_by: str) -> dict:
        path = self.out_dir / name
        if not path.exists():
            raise MissingArtifactError(
                f"stage {needed_by!r} requires {name}; run stage {produced_by!r} first"
            )
        return json.loads(path.read_text(encoding="utf-8"))

    def dataset(self) -> SurveyDataset:
        if self._dataset is None:
            if self.config.synthetic is not None:
                self._dataset, _ = generate(self.config.synthetic)
            else:
                schema = load_schema(self.config.schema_path)
                self._dataset = load_dataset(self.config.data_csv, schema)
        return self._dataset

    def split(self, needed_by: str) -> tuple[SurveyDataset, SurveyDataset]:
        if self._split is None:
            info = self._artifact("split.json", needed_by, "split")
            ds = self.dataset()
            pos = {rec_id: i for i, rec_id in enumerate(ds.ids)}
            try:
                train = ds.subset([pos[i] for i in info["train_ids"]])
                test = ds.subset([pos[i] for i in info["test_ids"]])
            except KeyError as exc:
                raise MissingArtifactError(
                    f"split.json references id {exc} not present in the dataset; "
                    "re-run stage 'split'"
                ) from None
            self._split = (train, test)
        return self._split

    def alpha(self, needed_by: str) -> float:
        return float(self._artifact("alpha_cv.json", needed_by, "alpha")["chosen_alpha"])

    def selected_questions(self, needed_by: str) -> list[str]:
        return list(self._artifact("selection.json", needed_by, "selection")["chosen"])

    def final_fit(self, needed_by: str) -> ElasticNetFit:
        return ElasticNetFit.from_dict(
            self._artifact("fit.json", needed_by, "fit")["fit"]
        )

    def scorecard(self, needed_by: str) -> Scorecard:
        return Scorecard.from_dict(
            self._artifact("scorecard.json", needed_by, "scorecard")
        )


def materialize_inputs(config: RunConfig) -> list[str]:
    """Write the synthetic dataset, its schema, and the ground truth under
    inputs/. Only meaningful for synthetic configs."""
    if config.synthetic is None:
        raise ConfigError("generate requires a synthetic config")
    inputs = config.out_dir / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    dataset, truth = generate(config.synthetic)
    write_dataset_csv(dataset, inputs / "data.csv")
    write_json(inputs / "schema.json", dataset_schema(dataset))
    write_json(inputs / "ground_truth.json", truth.to_dict())
    return ["inputs/data.csv", "inputs/schema.json", "inputs/ground_truth.json"]


def _stage_split(ctx: RunContext) -> list[str]:
    ds = ctx.dataset()
    train, test = split_train_test(ds, ctx.config.split_seed)
    write_json(
        ctx.out_dir / "split.json",
        {
            "seed": ctx.config.split_seed,
            "n": ds.n,
            "n_train": train.n,
            "n_test": test.n,
            "train_ids": list(train.ids),
            "test_ids": list(test.ids),
        },
    )
    return ["split.json"]


def _stage_alpha(ctx: RunContext) -> list[str]:
    cfg = ctx.config
    train, _ = ctx.split("alpha")
    if cfg.alpha_fixed is not None:
        payload = {"chosen_alpha": cfg.alpha_fixed, "source": "config", "report": None}
    else:
        result = outer_cv_alpha(
            train,
            cfg.alpha_grid,
            cfg.selection,
            seed=cfg.cv_seed,
            k_outer=cfg.k_outer,
            n_jobs=cfg.threads,
        )
        payload = {
            "chosen_alpha": result.alpha,
            "source": "outer_cv",
            "report": result.report,
        }
    write_json(ctx.out_dir / "alpha_cv.json", payload)
    return ["alpha_cv.json"]


def _stage_selection(ctx: RunContext) -> list[str]:
    cfg = ctx.config
    train, _ = ctx.split("selection")
    alpha = ctx.alpha("selection")
    table = selection_frequencies(train, alpha, cfg.selection, n_jobs=cfg.threads)
    chosen = select_top_questions(table, cfg.selection.k_questions)
    write_json(
        ctx.out_dir / "selection.json",
        {
            "alpha": alpha,
            "config": cfg.selection.to_dict(),
            "table": table.to_dict(),
            "chosen": list(chosen.questions),
            "tie_note": chosen.tie_note,
        },
    )
    return ["selection.json"]


def _stage_fit(ctx: RunContext) -> list[str]:
    cfg = ctx.config
    train, _ = ctx.split("fit")
    alpha = ctx.alpha("fit")
    questions = ctx.selected_questions("fit")
    enc = encode_design(train, questions)
    curve = cv_lambda(
        enc,
        alpha,
        k=cfg.final_cv_k,
        seed=derive_seed(cfg.cv_seed, 99),
        n_lambda=cfg.n_lambda,
        lambda_min_ratio=cfg.lambda_min_ratio,
        n_jobs=cfg.threads,
    )
    final = fit(enc, curve.lambda_min, alpha)
    write_json(
        ctx.out_dir / "fit.json",
        {
            "fit": final.to_dict(),
            "lambda_rule": "min",
            "kkt_residual": kkt_residual(final, enc),
            "cv": curve.to_dict(),
            "questions": questions,
        },
    )
    return ["fit.json"]


def _stage_scorecard(ctx: RunContext) -> list[str]:
    final = ctx.final_fit("scorecard")
    card = build_scorecard(final)
    export_scorecard(card, "json", ctx.out_dir / "scorecard.json")
    export_scorecard(card, "printable-text", ctx.out_dir / "scorecard.txt")
    export_scorecard(card, "csv", ctx.out_dir / "lookup.csv")
    return ["scorecard.json", "scorecard.txt", "lookup.csv"]


def _stage_evaluation(ctx: RunContext) -> list[str]:
    cfg = ctx.config
    train, test = ctx.split("evaluation")
    final = ctx.final_fit("evaluation")
    card = ctx.scorecard("evaluation")
    preds = predict_test(final, card, test, train_ids=train.ids)

    summaries = []
    notes: list[str] = []
    groupings = ["national", "region"]
    if all(u is not None for u in preds.urban):
        groupings.append("urban")
    else:
        notes.append("urban flags missing; urban/rural grouping skipped")
    if not np.isnan(preds.consumption).any():
        groupings.append("decile")
        _, decile_notes = consumption_deciles(preds)
        notes.extend(decile_notes)
    else:
        notes.append("consumption missing; decile grouping skipped")
    for grouping in groupings:
        gs, gnotes = group_quartiles(preds, grouping)
        summaries.extend(gs)
        notes.extend(gnotes)

    report = threshold_errors(preds)
    payload = {
        "n_test": preds.n,
        "groups": [vars(s) for s in summaries],
        "notes": notes,
        "thresholds": {
            "t": list(report.thresholds),
            "exclusion": list(report.exclusion),
            "inclusion": list(report.inclusion),
        },
        "auc": {
            "rank": weighted_auc_rank(preds.prob_exact, preds.labels, preds.weights),
            "grid": weighted_auc_grid(preds.prob_exact, preds.labels, preds.weights),
        },
        "lookup_max_abs_gap": float(np.max(np.abs(preds.prob_lookup - preds.prob_exact))),
    }
    if cfg.compare_full:
        payload["comparison"] = compare_full_model(
            train,
            test,
            ctx.alpha("evaluation"),
            ten_fit=final,
            seed=derive_seed(cfg.cv_seed, 77),
            inner_cv_k=cfg.final_cv_k,
            n_lambda=cfg.n_lambda,
            lambda_min_ratio=cfg.lambda_min_ratio,
            n_jobs=cfg.threads,
        )
    write_json(ctx.out_dir / "evaluation.json", payload)

    with (ctx.out_dir / "group_summaries.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["grouping", "group", "status", "q25", "q50", "q75", "weighted_count", "n"]
        )
        for s in summaries:
            writer.writerow(
                [s.grouping, s.group, s.status, repr(s.q25), repr(s.q50),
                 repr(s.q75), repr(s.weighted_count), s.n]
            )
    with (ctx.out_dir / "thresholds.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "exclusion_error", "inclusion_error"])
        for t, e, i in zip(report.thresholds, report.exclusion, report.inclusion):
            writer.writerow([repr(t), repr(e), repr(i)])
    return ["evaluation.json", "group_summaries.csv", "thresholds.csv"]


_STAGE_FUNCS = {
    "split": _stage_split,
    "alpha": _stage_alpha,
    "selection": _stage_selection,
    "fit": _stage_fit,
    "scorecard": _stage_scorecard,
    "evaluation": _stage_evaluation,
}


def _load_manifest(out_dir: Path) -> dict:
    path = out_dir / "manifest.json"
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"stages": {}}


def _versions() -> dict:
    import numba

    from . import __version__

    return {
        "povscore": __version__,
        "python": ".".join(str(v) for v in sys.version_info[:3]),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def run_stages(config: RunConfig, stages: tuple[str, ...]) -> dict:
    """Run the given stages in pipeline order, updating the manifest as each
    one completes. A failing stage aborts with its name; earlier artifacts
    stay on disk."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(config)
    manifest = _load_manifest(config.out_dir)
    normalized = config.normalized()
    manifest.update(
        {
            "config": normalized,
            "config_hash": hashlib.sha256(
                canonical_json(normalized).encode()
            ).hexdigest(),
            "seeds": {
                "split": config.split_seed,
                "cv": config.cv_seed,
                "selection": config.selection.seed,
            },
            "versions": _versions(),
        }
    )
    ordered = [s for s in STAGES if s in stages]
    for name in ordered:
        try:
            outputs = _STAGE_FUNCS[name](ctx)
        except PovscoreError as exc:
            raise type(exc)(f"stage {name!r} failed: {exc}") from exc
        manifest["stages"][name] = {"status": "done", "outputs": outputs}
        write_json(config.out_dir / "manifest.json", manifest)
    return manifest


def run(config: RunConfig) -> dict:
    """Execute the configured stages end to end; returns the manifest."""
    return run_stages(config, config.stages)
