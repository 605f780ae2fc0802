"""Command-line interface: validate documents, run scenarios, compare runs.

Exit codes are a stable contract for CI: 0 success, 1 validation failure,
2 runtime or I/O error. All output files are deterministic for a given
(scenario, seed) pair.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import metrics as metrics_mod
from . import scenario as scenario_mod
from .errors import (
    DocumentSyntaxError,
    IncompatibleReports,
    SimError,
    ValidationError,
)
from .policy import KIND_MUTATION, KIND_ROTATION, load_yaml_document, parse_policy

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

FIXTURES_ENV = "ADA_SIM_FIXTURES"


def fixtures_dir() -> Path:
    override = os.environ.get(FIXTURES_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("ada_sim") / "fixtures"))


def resolve_path(raw: str) -> Path:
    """Literal path if it exists, otherwise a name in the fixtures directory."""
    path = Path(raw)
    if path.exists():
        return path
    candidate = fixtures_dir() / raw
    if candidate.exists():
        return candidate
    candidate = fixtures_dir() / f"{raw}.yaml"
    if candidate.exists():
        return candidate
    return path


def cmd_validate(path_arg: str) -> int:
    path = resolve_path(path_arg)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        doc = load_yaml_document(text)
        kind = doc.get("kind")
        if kind in (KIND_ROTATION, KIND_MUTATION):
            parse_policy(text)
        elif kind == scenario_mod.KIND_SCENARIO:
            scenario_mod.load_scenario(text, base_dir=path.parent)
        else:
            print(f"error: kind: unknown document kind {kind!r}", file=sys.stderr)
            return EXIT_VALIDATION
    except (DocumentSyntaxError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("OK")
    return EXIT_OK


def _print_summary(aggregate: dict) -> None:
    kc = aggregate["kill_chain_pooled"]
    avail = aggregate["availability"]
    print(f"scenario:        {aggregate['scenario']}")
    print(f"seed:            {aggregate['seed']}")
    print(f"replications:    {aggregate['replications']}")
    print(f"ada_enabled:     {aggregate['ada_enabled']}")
    tte = aggregate["tte_pooled"]
    if tte["count"]:
        print(
            f"tte:             n={tte['count']} mean={tte['mean_us'] / 1e6:.3f}s "
            f"min={tte['min_us'] / 1e6:.3f}s max={tte['max_us'] / 1e6:.3f}s"
        )
    else:
        print("tte:             no samples")
    dwell = aggregate["dwell_pooled"]
    if dwell["count"]:
        print(
            f"dwell:           n={dwell['count']} mean={dwell['mean_us'] / 1e6:.3f}s "
            f"min={dwell['min_us'] / 1e6:.3f}s max={dwell['max_us'] / 1e6:.3f}s"
        )
    else:
        print("dwell:           no samples")
    rate = kc["completion_rate"]
    rate_str = f"{rate:.4f}" if rate is not None else "n/a"
    print(
        f"kill chain:      attempts={kc['attempts']} disruptions={kc['disruptions']} "
        f"completions={kc['completions']} completion_rate={rate_str}"
    )
    mean_avail = avail["mean"]
    hw = avail["halfwidth95"]
    hw_str = f" +/- {hw:.6f}" if hw is not None else ""
    print(f"availability:    {mean_avail:.6f}{hw_str}")
    churn = aggregate["churn_rate_per_hour"]
    print(f"churn rate:      {churn['mean']:.3f} rotations/h")


def cmd_run(args: argparse.Namespace) -> int:
    path = resolve_path(args.scenario)
    try:
        script = scenario_mod.load_scenario_file(path)
    except (DocumentSyntaxError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.seed is not None:
        script.seed = args.seed
    if args.replications is not None:
        if args.replications < 1:
            print("error: --replications must be >= 1", file=sys.stderr)
            return EXIT_VALIDATION
        script.replications = args.replications
    if args.baseline:
        script.ada_enabled = False
    try:
        results = scenario_mod.run(script)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        reports = [report for _, report in results]
        for r, (records, report) in enumerate(results):
            events_path = out_dir / f"replication_{r:03d}.events.ndjson"
            events_path.write_text(
                "".join(json.dumps(rec) + "\n" for rec in records), encoding="utf-8"
            )
            report_path = out_dir / f"replication_{r:03d}.report.json"
            doc = {"replication": r, "seed": script.seed + r, **report.to_doc()}
            report_path.write_text(metrics_mod.report_to_json(doc), encoding="utf-8")
        aggregate = metrics_mod.aggregate_report(script, reports)
        (out_dir / "aggregate.report.json").write_text(
            metrics_mod.report_to_json(aggregate), encoding="utf-8"
        )
        (out_dir / "replications.csv").write_text(
            metrics_mod.reports_to_csv(script, reports), encoding="utf-8"
        )
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_summary(aggregate)
    return EXIT_OK


def cmd_compare(path_a: str, path_b: str) -> int:
    try:
        doc_a = json.loads(Path(path_a).read_text(encoding="utf-8"))
        doc_b = json.loads(Path(path_b).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except json.JSONDecodeError as exc:
        print(f"error: malformed report: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        comparison = metrics_mod.compare(doc_a, doc_b)
    except IncompatibleReports as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(comparison, indent=2))
    return EXIT_OK


def cmd_list_fixtures() -> int:
    directory = fixtures_dir()
    if not directory.is_dir():
        print(f"error: fixture directory {directory} not found", file=sys.stderr)
        return EXIT_RUNTIME
    for path in sorted(directory.glob("*.yaml")):
        print(path.stem)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ada-sim",
        description=(
            "Deterministic moving-target-defense simulator: scheduled pod "
            "rotation plus telemetry-triggered manifest mutation, measured "
            "against a configurable attacker kill chain."
        ),
        epilog=(
            "Aggregate statistics across replications are reported as "
            "mean +/- a normal-approximation 95%% half-width. The environment "
            f"variable {FIXTURES_ENV} overrides the fixture directory."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate a policy or scenario document")
    p_validate.add_argument("path", help="document path or fixture name")

    p_run = sub.add_parser("run", help="run a scenario and write reports")
    p_run.add_argument("scenario", help="scenario path or fixture name")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument(
        "--replications", type=int, default=None, help="override the replication count"
    )
    p_run.add_argument(
        "--baseline",
        action="store_true",
        help="disable rotation and mutation (ada_enabled=false)",
    )
    p_run.add_argument("--out", default="out", help="output directory (default: ./out)")

    p_compare = sub.add_parser(
        "compare", help="compare two aggregate reports (candidate vs baseline)"
    )
    p_compare.add_argument("report_a", help="aggregate report of the candidate run")
    p_compare.add_argument("report_b", help="aggregate report of the baseline run")

    sub.add_parser("list-fixtures", help="list shipped scenario and policy fixtures")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args.path)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "compare":
        return cmd_compare(args.report_a, args.report_b)
    if args.command == "list-fixtures":
        return cmd_list_fixtures()
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
