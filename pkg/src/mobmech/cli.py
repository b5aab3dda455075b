"""Command-line surface: scenario files in, JSON or table reports out.

Subcommands:
  solve   compute the offline tables (worst case, nominal, reservations)
  price   run the pricing pipeline for one realized scenario
  verify  run every property check; exit status reflects the result
  gen     emit a seeded random scenario file

Exit status: 0 all good, 1 a property check failed, 2 bad input.
Reports are canonical JSON (sorted keys, full-precision numbers) and are
byte-identical across runs for identical inputs; timing metadata is only
included when requested, to keep the determinism contract.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import mechanism, verify
from .model import MarketInstance, ValuationProfile, validate

VERSION = "0.1.0"

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_INPUT_ERROR = 2


class ScenarioError(ValueError):
    """Malformed or invalid scenario file."""


def _number(value, where: str) -> float:
    """Accept JSON numbers or decimal strings (full-precision round trips)."""
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    try:
        return float(value)
    except ValueError:
        raise ScenarioError(f"{where}: cannot parse number {value!r}") from None


def parse_scenario_dict(data: dict, source: str = "<scenario>") -> MarketInstance:
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be an object")
    problems = []
    travelers = data.get("travelers")
    services = data.get("services")
    scenarios = data.get("valuation_scenarios")
    if not isinstance(travelers, list) or not travelers:
        problems.append("travelers: required non-empty list")
    if not isinstance(services, list) or not services:
        problems.append("services: required non-empty list")
    if not isinstance(scenarios, list) or not scenarios:
        problems.append("valuation_scenarios: required non-empty list")
    if problems:
        raise ScenarioError(f"{source}: " + "; ".join(problems))

    budgets, limits = [], []
    for t, entry in enumerate(travelers):
        if not isinstance(entry, dict):
            raise ScenarioError(f"{source}: travelers[{t}] must be an object")
        budgets.append(_number(entry.get("budget", 0), f"travelers[{t}].budget"))
        # one service per traveler unless the file says otherwise
        limits.append(int(_number(entry.get("service_limit", 1),
                                  f"travelers[{t}].service_limit")))
    capacities = []
    for s, entry in enumerate(services):
        if not isinstance(entry, dict):
            raise ScenarioError(f"{source}: services[{s}] must be an object")
        capacities.append(int(_number(entry.get("capacity", 1),
                                      f"services[{s}].capacity")))

    I, J = len(travelers), len(services)
    matrices = []
    for k, mat in enumerate(scenarios):
        if not isinstance(mat, list) or len(mat) != I:
            raise ScenarioError(
                f"{source}: valuation_scenarios[{k}] must have {I} rows"
            )
        rows = []
        for i, row in enumerate(mat):
            if not isinstance(row, list) or len(row) != J:
                raise ScenarioError(
                    f"{source}: valuation_scenarios[{k}][{i}] must have {J} entries"
                )
            rows.append([_number(x, f"valuation_scenarios[{k}][{i}][{j}]")
                         for j, x in enumerate(row)])
        matrices.append(np.array(rows))

    instance = MarketInstance(
        traveler_count=I,
        service_count=J,
        budgets=np.array(budgets),
        service_limits=np.array(limits),
        capacities=np.array(capacities),
        scenario_set=tuple(matrices),
        name=str(data.get("name", "")),
        tolerance=float(data.get("tolerance", mechanism.DEFAULT_TOL)),
    )
    findings = validate(instance)
    errors = [f.message for f in findings if f.is_error]
    if errors:
        raise ScenarioError(f"{source}: " + "; ".join(errors))
    for f in findings:
        if not f.is_error:
            print(f"warning: {source}: {f.message}", file=sys.stderr)
    return instance


def parse_scenario(path) -> MarketInstance:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from exc
    return parse_scenario_dict(data, str(path))


def emit_scenario(instance: MarketInstance) -> str:
    doc = {
        "name": instance.name,
        "tolerance": instance.tolerance,
        "travelers": [
            {"budget": float(b), "service_limit": int(d)}
            for b, d in zip(instance.budgets, instance.service_limits)
        ],
        "services": [{"capacity": int(e)} for e in instance.capacities],
        "valuation_scenarios": [
            [[float(x) for x in row] for row in prof.matrix]
            for prof in instance.scenario_set
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _listify(arr) -> list:
    return np.asarray(arr, dtype=float).tolist()


def _tables_summary(tables: mechanism.MechanismTables) -> dict:
    return {
        "worst_scenario_index": tables.worst_index,
        "worst_case_objective": tables.worst_case_value,
        "nominal_assignment": _listify(tables.nominal.matrix),
        "reservation_payments": _listify(tables.reservations),
        "gamma": _listify(tables.gamma),
        "duals": {
            "xi1": _listify(tables.duals.xi1),
            "xi2": _listify(tables.duals.xi2),
            "xi3": _listify(tables.duals.xi3),
            "xi5": _listify(tables.duals.xi5),
            "xi6": _listify(tables.duals.xi6),
        },
    }


def _outcome_digest(outcome: mechanism.PricingOutcome) -> dict:
    return {
        "adapted": _listify(outcome.adapted.matrix),
        "final": _listify(outcome.final.matrix),
        "payments": _listify(outcome.payments),
        "utilities": _listify(outcome.utilities),
        "revenue": float(np.sum(outcome.payments)),
    }


def _report_skeleton(path: Path, args) -> dict:
    return {
        "artifact_version": VERSION,
        "input": str(path),
        "input_digest": hashlib.sha256(path.read_bytes()).hexdigest(),
        "command": args.command,
    }


def _render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    flat: dict[str, object] = {}

    def walk(prefix: str, value):
        if isinstance(value, dict):
            for k in sorted(value):
                walk(f"{prefix}.{k}" if prefix else str(k), value[k])
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            for n, item in enumerate(value):
                walk(f"{prefix}[{n}]", item)
        else:
            flat[prefix] = value

    walk("", report)
    width = max(len(k) for k in flat) + 2
    return "\n".join(f"{k:<{width}}{v}" for k, v in flat.items()) + "\n"


def _write_output(text: str, out_path) -> None:
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _apply_tolerance(instance: MarketInstance, args) -> MarketInstance:
    if args.tolerance is None:
        return instance
    return MarketInstance(
        traveler_count=instance.traveler_count,
        service_count=instance.service_count,
        budgets=instance.budgets,
        service_limits=instance.service_limits,
        capacities=instance.capacities,
        scenario_set=instance.scenario_set,
        name=instance.name,
        tolerance=args.tolerance,
    )


def cmd_solve(args) -> int:
    path = Path(args.scenario)
    instance = _apply_tolerance(parse_scenario(path), args)
    started = time.monotonic()
    tables = mechanism.build_tables(instance)
    report = _report_skeleton(path, args)
    report["tables"] = _tables_summary(tables)
    if args.timing:
        report["timing_seconds"] = time.monotonic() - started
    _write_output(_render(report, args.format), args.out)
    return EXIT_OK


def cmd_price(args) -> int:
    path = Path(args.scenario)
    instance = _apply_tolerance(parse_scenario(path), args)
    if not 0 <= args.realized < instance.scenario_count:
        print(
            f"error: --realized {args.realized} out of range "
            f"[0, {instance.scenario_count})",
            file=sys.stderr,
        )
        return EXIT_INPUT_ERROR
    started = time.monotonic()
    tables = mechanism.build_tables(instance)
    outcome = mechanism.run_pipeline(instance, instance.scenario(args.realized), tables)
    report = _report_skeleton(path, args)
    report["tables"] = _tables_summary(tables)
    report["realized_scenario_index"] = args.realized
    report["outcome"] = _outcome_digest(outcome)
    if args.timing:
        report["timing_seconds"] = time.monotonic() - started
    _write_output(_render(report, args.format), args.out)
    return EXIT_OK


def run_property_suite(instance: MarketInstance, jobs: int = 1):
    """All property checks for one instance; returns (reports, outcomes)."""
    tol = instance.tolerance * mechanism._scale(instance)
    tables = mechanism.build_tables(instance)
    cache: dict = {}

    def outcome_fn(profile: ValuationProfile) -> mechanism.PricingOutcome:
        return mechanism.run_pipeline(instance, profile, tables, cache)

    indices = range(instance.scenario_count)
    if jobs > 1:
        # outcomes are pure functions of (tables, profile); merge in index order
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(
                pool.map(lambda s: outcome_fn(instance.scenario(s)), indices)
            )
    else:
        outcomes = [outcome_fn(instance.scenario(s)) for s in indices]

    reports = [verify.check_truthfulness(instance, outcome_fn, tol)]
    for s, outcome in enumerate(outcomes):
        reports.append(verify.check_feasibility(outcome, instance, tol))
        reports.append(verify.check_voluntary_participation(outcome, tol))
        reports.append(verify.check_budget_fairness(outcome, instance.budgets, tol))
    reports.append(
        verify.check_sustainability(outcomes, tables.worst_case_value, tol)
    )
    return reports, outcomes, tables


def cmd_verify(args) -> int:
    path = Path(args.scenario)
    instance = _apply_tolerance(parse_scenario(path), args)
    started = time.monotonic()
    reports, outcomes, tables = run_property_suite(instance, jobs=args.jobs)
    report = _report_skeleton(path, args)
    report["tables"] = _tables_summary(tables)
    report["outcomes"] = [_outcome_digest(o) for o in outcomes]
    report["properties"] = [
        {
            "name": r.name,
            "passed": r.passed,
            "worst_violation": r.worst_violation,
            "tolerance": r.tolerance,
            "witness": r.witness,
        }
        for r in reports
    ]
    report["all_passed"] = all(r.passed for r in reports)
    if args.timing:
        report["timing_seconds"] = time.monotonic() - started
    _write_output(_render(report, args.format), args.out)
    if not report["all_passed"]:
        for r in reports:
            if not r.passed:
                print(f"property failed: {r.describe()}", file=sys.stderr)
        return EXIT_PROPERTY_FAILURE
    return EXIT_OK


def generate_instance(
    travelers: int, services: int, scenarios: int, seed: int
) -> MarketInstance:
    """Seeded random instance: integer valuations in [0, 9], budgets in
    [0, 9 J], limits in [1, J], capacities in [1, I]."""
    rng = np.random.default_rng(seed)
    mats = [
        rng.integers(0, 10, size=(travelers, services)).astype(float)
        for _ in range(scenarios)
    ]
    return MarketInstance(
        traveler_count=travelers,
        service_count=services,
        budgets=rng.integers(0, 9 * services + 1, size=travelers).astype(float),
        service_limits=rng.integers(1, services + 1, size=travelers),
        capacities=rng.integers(1, travelers + 1, size=services),
        scenario_set=tuple(mats),
        name=f"generated-seed-{seed}",
    )


def cmd_gen(args) -> int:
    if args.travelers < 2 or args.services < 1 or args.scenarios < 1:
        print("error: need travelers >= 2, services >= 1, scenarios >= 1",
              file=sys.stderr)
        return EXIT_INPUT_ERROR
    instance = generate_instance(args.travelers, args.services,
                                 args.scenarios, args.seed)
    _write_output(emit_scenario(instance), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobmech",
        description="Budget-aware traveler-to-service assignment mechanism",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("json", "table"), default="json")
        p.add_argument("--tolerance", type=float, default=None,
                       help="override the mechanism tolerance")
        p.add_argument("--out", default=None, help="write the report here")
        p.add_argument("--timing", action="store_true",
                       help="include wall-clock timing in the report")

    p = sub.add_parser("solve", help="compute offline mechanism tables")
    p.add_argument("scenario")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("price", help="price one realized scenario")
    p.add_argument("scenario")
    p.add_argument("--realized", type=int, required=True,
                   help="index into valuation_scenarios")
    common(p)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("verify", help="run all property checks")
    p.add_argument("scenario")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="generate a random scenario file")
    p.add_argument("--travelers", type=int, required=True)
    p.add_argument("--services", type=int, required=True)
    p.add_argument("--scenarios", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
