"""Command-line entry point.

    povscore run --config cfg.json [--out DIR] [--stage NAME]
                 [--seed-override N] [--threads N]
    povscore generate|select|fit|scorecard|evaluate --config cfg.json ...
    povscore score --scorecard card.json --responses resp.csv --out scores.csv

Exit codes: 0 success, 2 validation/schema/config error, 3 numerical failure.
`select` covers the split, alpha, and selection stages (everything needed to
pick the questions); the other stage subcommands map one-to-one.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import NumericalError, PovscoreError, ValidationError
from .pipeline import STAGES, materialize_inputs, parse_run_config, run_stages
from .scorecard import import_scorecard, lookup_probability, score_household

_SUBCOMMAND_STAGES = {
    "run": STAGES,
    "select": ("split", "alpha", "selection"),
    "fit": ("fit",),
    "scorecard": ("scorecard",),
    "evaluate": ("evaluation",),
}


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed-override", type=int, default=None,
                        help="replace every configured seed, derived from one integer")
    parser.add_argument("--threads", type=int, default=None,
                        help="parallel workers for folds and replicates")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povscore",
        description="Poverty-probability scorecards from household surveys",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured stages end to end")
    _add_run_flags(p_run)
    p_run.add_argument("--stage", choices=[*STAGES, "evaluate", "select"],
                       default=None, help="run a single stage instead")

    for name, help_text in (
        ("generate", "materialize the synthetic dataset under inputs/"),
        ("select", "split, choose alpha, and select questions"),
        ("fit", "fit the final model on the selected questions"),
        ("scorecard", "translate the stored fit into a scorecard"),
        ("evaluate", "evaluate the stored fit/scorecard on the test split"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_text))

    p_score = sub.add_parser("score", help="batch-score a responses CSV")
    p_score.add_argument("--scorecard", required=True, help="scorecard JSON path")
    p_score.add_argument("--responses", required=True, help="responses CSV path")
    p_score.add_argument("--out", required=True, help="output CSV path")
    return parser


def _load_config(args: argparse.Namespace):
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_run_config(
        raw,
        base_dir=path.parent,
        out_override=Path(args.out) if args.out else None,
        seed_override=args.seed_override,
        threads_override=args.threads,
        stage_override=getattr(args, "stage", None),
    )


def _cmd_score(args: argparse.Namespace) -> None:
    card = import_scorecard(args.scorecard)
    responses_path = Path(args.responses)
    if not responses_path.exists():
        raise ValidationError(f"responses file not found: {responses_path}")
    with responses_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = ["region"] + [q.id for q in card.questions]
        missing = [c for c in needed if c not in header]
        if missing:
            raise ValidationError(f"responses file is missing columns: {missing}")
        rows = []
        for row_num, row in enumerate(reader, start=1):
            region = (row["region"] or "").strip()
            responses = {q.id: (row[q.id] or "").strip() for q in card.questions}
            try:
                score = score_household(card, responses)
                prob = lookup_probability(card, region, score)
            except PovscoreError as exc:
                raise type(exc)(f"row {row_num}: {exc}") from exc
            rows.append([row.get("id", str(row_num)), region, score, repr(prob)])
    out_path = Path(args.out)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "region", "score", "probability"])
        writer.writerows(rows)
    print(f"scored {len(rows)} households -> {out_path}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "score":
            _cmd_score(args)
            return 0
        config = _load_config(args)
        if args.command == "generate":
            outputs = materialize_inputs(config)
            print(f"wrote {', '.join(outputs)} under {config.out_dir}")
            return 0
        if args.command == "run":
            stages = config.stages
        else:
            stages = _SUBCOMMAND_STAGES[args.command]
        manifest = run_stages(config, tuple(stages))
        done = [s for s in STAGES if s in manifest["stages"]]
        print(f"completed stages: {', '.join(done)} (out: {config.out_dir})")
        return 0
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PovscoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
