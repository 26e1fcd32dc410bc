"""Command-line front end: scenario ingestion, command dispatch, and
deterministic machine-readable outputs.

Exit codes: 0 ok, 1 scenario/parse error, 2 budget exceeded, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .model import EnumerationBudgetError, State, STATES
from .static_game import (
    OmegaEmptyError,
    PriceGridSpec,
    PriceProfile,
    classify_setting,
    demand_segments,
    leaves_no_trading_up,
    monopoly_price,
    no_trading_up_optimum,
    static_profit,
)
from .dynamic import BudgetExceededError, solve_pbe
from .checks import (
    bellman_residual,
    consumer_rationality_check,
    constant_price_exhausts,
    decomposition_everywhere,
    price_floor_check,
    profit_floor_check,
    skimming_consistency,
    verify_monopoly_pbe,
)
from .scenario import Scenario, ScenarioError, load_scenario
from .transitional import (
    NotTransitionalError,
    extended_static_game,
    reconstruct_prices,
    solve_extended,
    verify_transitional_equilibrium,
)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_BUDGET = 2
EXIT_VERIFY = 3


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list, rows: list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _profile_doc(profile: PriceProfile) -> dict:
    return {
        "p_a": profile.p_a if profile.offered_a else None,
        "p_b": profile.p_b if profile.offered_b else None,
    }


def _optimum_doc(opt) -> dict:
    return {
        "prices": _profile_doc(opt.prices),
        "profit": opt.profit,
        "grid_step": opt.grid_step,
        "segments": {s.value: opt.allocation.mass_of(s) for s in STATES},
    }


def _static_block(scenario: Scenario) -> dict:
    setting = scenario.setting
    pm = monopoly_price(setting, scenario.grid, scenario.tie_break)
    block = {"monopoly": _optimum_doc(pm)}
    try:
        ntu = no_trading_up_optimum(setting, scenario.grid, scenario.tie_break)
        block["no_trading_up"] = _optimum_doc(ntu)
    except OmegaEmptyError:
        block["no_trading_up"] = None
        block["note"] = "no-trading-up set empty: transitional game"
    cls = classify_setting(setting, scenario.grid, scenario.tie_break)
    block["classification"] = {"kind": cls.kind.value, "certificate": cls.certificate}
    return block


def cmd_static(scenario: Scenario, out_dir: Path) -> int:
    setting = scenario.setting
    block = _static_block(scenario)

    # No-trading-up membership over a coarse price sample.
    axis_a = scenario.grid.axis(setting.price_floor, setting.price_caps[0], 0)
    axis_b = scenario.grid.axis(setting.price_floor, setting.price_caps[1], 1)
    stride_a = max(1, len(axis_a) // 20)
    stride_b = max(1, len(axis_b) // 20)
    omega_rows = []
    for pa in axis_a[::stride_a]:
        for pb in axis_b[::stride_b]:
            profile = PriceProfile(float(pa), float(pb))
            omega_rows.append(
                [pa, pb, int(leaves_no_trading_up(profile, setting, scenario.tie_break))]
            )
    _write_csv(out_dir / "no_trading_up_grid.csv", ["p_a", "p_b", "in_set"], omega_rows)

    probes = list(scenario.probe_prices)
    if not probes:
        pm_prices = block["monopoly"]["prices"]
        probes = [(pm_prices["p_a"] or 0.0, pm_prices["p_b"] or 0.0)]
    demand_rows = []
    for pa, pb in probes:
        profile = PriceProfile(pa, pb)
        alloc = demand_segments(setting.population, profile, setting, setting.initial_state, scenario.tie_break)
        profit = static_profit(setting.population, profile, setting, setting.initial_state, scenario.tie_break)
        demand_rows.append(
            [pa, pb]
            + [alloc.mass_of(s) for s in STATES]
            + [profit]
        )
    _write_csv(
        out_dir / "demand_segments.csv",
        ["p_a", "p_b", "mass_a", "mass_b", "mass_o", "profit"],
        demand_rows,
    )
    _write_json(out_dir / scenario.summary_file, block)
    print(f"static analysis written to {out_dir}")
    return EXIT_OK


def _solve_rows(outcome) -> list:
    rows = []
    for r in outcome.rows:
        rows.append(
            [
                r.period,
                r.signature,
                r.state.value,
                r.profile.p_a if r.profile.offered_a else None,
                r.profile.p_b if r.profile.offered_b else None,
                r.mass_by_choice[State.A],
                r.mass_by_choice[State.B],
                r.mass_by_choice[State.O],
                r.traded_up_mass,
            ]
        )
    return rows


def _solve_block(scenario: Scenario, outcome) -> dict:
    setting = scenario.setting
    block = _static_block(scenario)
    ntu = block.get("no_trading_up")
    doc = {
        "static": block,
        "profit": outcome.profit,
        "exhaustion_period": outcome.exhaustion_period,
        "residual_trading_up_mass": list(outcome.residual_tuo_by_period),
        "grid_step": outcome.grid_step,
        "diagnostics": outcome.diagnostics,
        "per_period_prices": [
            {
                "period": r.period,
                "history": r.signature,
                "state": r.state.value,
                "p_a": r.profile.p_a if r.profile.offered_a else None,
                "p_b": r.profile.p_b if r.profile.offered_b else None,
                "group_mass": r.group_mass,
            }
            for r in outcome.rows
        ],
    }
    if ntu is not None:
        ntu_opt = no_trading_up_optimum(setting, scenario.grid, scenario.tie_break)
        floor_ok, violations = price_floor_check(outcome, ntu_opt)
        doc["bounds"] = {
            "profit_floor_ok": profit_floor_check(outcome, ntu_opt),
            "price_floor_ok": floor_ok,
            "price_floor_violations": [
                [sig, period, variety.value, posted, floor]
                for sig, period, variety, posted, floor in violations
            ],
        }
    return doc


def cmd_solve(scenario: Scenario, out_dir: Path) -> int:
    outcome = solve_pbe(scenario.setting, scenario.grid, scenario.budget, scenario.tie_break)
    _write_csv(
        out_dir / scenario.paths_file,
        [
            "period",
            "history_signature",
            "state",
            "p_a",
            "p_b",
            "mass_a",
            "mass_b",
            "mass_o",
            "traded_up_mass",
        ],
        _solve_rows(outcome),
    )
    _write_json(out_dir / scenario.summary_file, _solve_block(scenario, outcome))
    print(
        f"solved: profit={outcome.profit!r} exhaustion={outcome.exhaustion_period} "
        f"rows={len(outcome.rows)} -> {out_dir}"
    )
    return EXIT_OK


def cmd_verify(scenario: Scenario, out_dir: Path) -> int:
    setting = scenario.setting
    checks: list = []

    def record(name: str, ok: bool, tolerance, detail: str = ""):
        checks.append({"check": name, "ok": bool(ok), "tolerance": tolerance, "detail": detail})

    transitional = False
    try:
        ntu = no_trading_up_optimum(setting, scenario.grid, scenario.tie_break)
    except OmegaEmptyError:
        ntu = None
        transitional = True

    if transitional:
        ver = verify_transitional_equilibrium(setting, scenario.grid, scenario.budget, scenario.tie_break)
        record(
            "transitional_reconstruction",
            ver.ok,
            scenario.grid.step,
            ver.detail
            + f"; one_time_change={ver.one_time_price_change}, increase={ver.price_increase}",
        )
        outcome = ver.outcome
    else:
        outcome = solve_pbe(setting, scenario.grid, scenario.budget, scenario.tie_break)
        ok, violations = price_floor_check(outcome, ntu)
        record("price_floor", ok, outcome.grid_step, f"{len(violations)} violations")
        record("profit_floor", profit_floor_check(outcome, ntu), outcome.grid_step)

    record("bellman_consistency", bellman_residual(outcome) <= 1e-9, 1e-9)
    rat = consumer_rationality_check(outcome)
    record("consumer_rationality", not rat, 1e-9, f"{len(rat)} violations")

    n_pairs = len(outcome.atoms) ** 2 * len(outcome.rows)
    if n_pairs <= 2_000_000:
        viols = skimming_consistency(outcome)
        record("skimming_consistency", not viols, 1e-9, f"{len(viols)} violations")
    else:
        record("skimming_consistency", True, None, "skipped: instance too large")

    decomp = decomposition_everywhere(outcome)
    worst_exact = max((r.gap for _, r in decomp if r.exact_indifference), default=0.0)
    worst_all = max((r.gap for _, r in decomp), default=0.0)
    all_exact = all(r.exact_indifference for _, r in decomp)
    tol = 1e-9 if all_exact else outcome.grid_step
    record(
        "revenue_decomposition",
        worst_all <= tol,
        tol,
        f"max gap {worst_all!r}; exact at {sum(r.exact_indifference for _, r in decomp)}/{len(decomp)} nodes"
        + (f"; max exact-node gap {worst_exact!r}" if not all_exact else ""),
    )

    if not transitional:
        cls = classify_setting(setting, scenario.grid, scenario.tie_break)
        if cls.no_trading_up_at_monopoly:
            ver = verify_monopoly_pbe(setting, scenario.grid, scenario.tie_break, scenario.budget)
            record("repeated_monopoly", ver.ok, outcome.grid_step, ver.detail)
        if ntu is not None:
            record(
                "no_trading_up_lock",
                constant_price_exhausts(setting, ntu.prices, scenario.grid, scenario.tie_break, scenario.budget),
                None,
                f"constant prices ({ntu.prices.p_a!r}, {ntu.prices.p_b!r})",
            )

    _write_json(out_dir / scenario.summary_file, {"checks": checks})
    _write_csv(
        out_dir / "verify_checks.csv",
        ["check", "ok", "tolerance", "detail"],
        [[c["check"], int(c["ok"]), c["tolerance"], c["detail"]] for c in checks],
    )
    failed = [c["check"] for c in checks if not c["ok"]]
    for c in checks:
        print(f"[{'PASS' if c['ok'] else 'FAIL'}] {c['check']} (tol={c['tolerance']}) {c['detail']}")
    if failed:
        print(f"verification failed: {failed}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_transitional(scenario: Scenario, out_dir: Path) -> int:
    setting = scenario.setting
    try:
        game = extended_static_game(setting)
    except NotTransitionalError as exc:
        print(f"not a transitional game: {exc}", file=sys.stderr)
        return EXIT_PARSE
    pm, ntu = solve_extended(game, scenario.grid, scenario.tie_break)
    recon = reconstruct_prices(ntu, setting)
    ver = verify_transitional_equilibrium(setting, scenario.grid, scenario.budget, scenario.tie_break)
    doc = {
        "alpha": game.alpha,
        "beta": game.beta,
        "direct_variety": game.direct_variety.value,
        "indirect_variety": game.indirect_variety.value,
        "extended_monopoly": _optimum_doc(pm),
        "extended_no_trading_up": _optimum_doc(ntu),
        "reconstructed_prices": {
            "p0_direct": recon.p0_direct,
            "p1_direct": recon.p1_direct,
            "p1_indirect": recon.p1_indirect,
        },
        "verification": {
            "ok": ver.ok,
            "detail": ver.detail,
            "uniqueness_precondition": ver.uniqueness_precondition,
            "plan_profit": ver.plan_profit,
            "expected_profit": ver.expected_profit,
            "one_time_price_change": ver.one_time_price_change,
            "price_increase": ver.price_increase,
        },
    }
    _write_json(out_dir / scenario.summary_file, doc)
    print(
        f"transitional: extended ntu profit={ntu.profit!r}, plan profit={ver.plan_profit!r}, "
        f"ok={ver.ok}"
    )
    return EXIT_OK if ver.ok else EXIT_VERIFY


def cmd_classify(scenario: Scenario, out_dir: Path) -> int:
    cls = classify_setting(scenario.setting, scenario.grid, scenario.tie_break)
    doc = {"kind": cls.kind.value, "certificate": cls.certificate}
    if cls.monopoly is not None:
        doc["monopoly"] = _optimum_doc(cls.monopoly)
    if cls.no_trading_up is not None:
        doc["no_trading_up"] = _optimum_doc(cls.no_trading_up)
    _write_json(out_dir / scenario.summary_file, doc)
    print(f"classification: {cls.kind.value} ({cls.certificate})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tradeup",
        description="Dynamic monopoly pricing with two varieties: static optima, "
        "no-trading-up benchmarks, and equilibrium price paths.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("static", cmd_static),
        ("solve", cmd_solve),
        ("verify", cmd_verify),
        ("transitional", cmd_transitional),
        ("classify", cmd_classify),
    ):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--grid-step", type=float, default=None, help="override price grid step")
        p.add_argument("--horizon", type=int, default=None, help="override number of periods")
        p.add_argument("--refine", type=int, default=None, help="override refinement rounds")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    if args.grid_step is not None:
        scenario = replace(scenario, grid=replace(scenario.grid, step=args.grid_step, points=(None, None)))
    if args.refine is not None:
        scenario = replace(scenario, grid=replace(scenario.grid, refine_rounds=args.refine))
    if args.horizon is not None:
        try:
            scenario = replace(scenario, setting=replace(scenario.setting, horizon=args.horizon))
        except ValueError as exc:
            print(f"scenario error: {exc}", file=sys.stderr)
            return EXIT_PARSE

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        code = args.fn(scenario, out_dir)
    except (BudgetExceededError, EnumerationBudgetError) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    print(f"done in {time.perf_counter() - started:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
