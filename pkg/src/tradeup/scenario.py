"""Scenario files: strict JSON ingestion of a game description plus solver
configuration, and the inverse emission for round-tripping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .model import (
    SELF_LOOPS,
    Setting,
    SettingKind,
    State,
    TransitionGraph,
    TypeAtom,
    TypePopulation,
    canonical_setting,
    explicit_population,
    linear_band_population,
    uniform_grid_population,
)
from .static_game import PriceGridSpec, TieBreak


class ScenarioError(ValueError):
    """Malformed scenario document; message carries the offending field."""


@dataclass(frozen=True)
class Scenario:
    setting: Setting
    grid: PriceGridSpec
    budget: int = 500_000
    tie_break: TieBreak = TieBreak.DEFAULT
    paths_file: str = "price_paths.csv"
    summary_file: str = "summary.json"
    probe_prices: tuple = ()
    kind: SettingKind | None = None
    population_spec: dict = field(default_factory=dict)


_TOP_KEYS = {
    "setting",
    "population",
    "delta",
    "horizon",
    "price_floor",
    "price_caps",
    "grid",
    "refine",
    "solver",
    "outputs",
    "probe_prices",
}


def _require_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"unknown key(s) {sorted(unknown)} in {where}")


def _as_state(label, where: str) -> State:
    try:
        return State(label)
    except ValueError:
        raise ScenarioError(f"bad state {label!r} in {where}") from None


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be an object")
    _require_keys(doc, _TOP_KEYS, "scenario root")
    for key in ("setting", "population", "delta", "horizon"):
        if key not in doc:
            raise ScenarioError(f"missing required key {key!r}")

    population, pop_spec = _parse_population(doc["population"])

    delta = float(doc["delta"])
    horizon = int(doc["horizon"])
    price_floor = float(doc.get("price_floor", -1.0))
    caps, pinned = _parse_caps(doc.get("price_caps", {}))

    setting_spec = doc["setting"]
    if not isinstance(setting_spec, dict):
        raise ScenarioError("setting must be an object")
    kind = None
    if "kind" in setting_spec:
        _require_keys(setting_spec, {"kind"}, "setting")
        try:
            kind = SettingKind(setting_spec["kind"])
        except ValueError:
            raise ScenarioError(f"unknown setting kind {setting_spec['kind']!r}") from None
        try:
            setting = canonical_setting(
                kind, population, delta, horizon, price_floor=price_floor, price_caps=caps
            )
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
        if pinned != (None, None):
            setting = replace(setting, pinned_prices=pinned)
    else:
        _require_keys(setting_spec, {"graph", "initial_state"}, "setting")
        if "graph" not in setting_spec or "initial_state" not in setting_spec:
            raise ScenarioError("explicit setting needs 'graph' and 'initial_state'")
        pairs = set(SELF_LOOPS)
        for arc in setting_spec["graph"]:
            if isinstance(arc, str) and len(arc) == 2:
                fr, to = arc[0], arc[1]
            elif isinstance(arc, (list, tuple)) and len(arc) == 2:
                fr, to = arc
            else:
                raise ScenarioError(f"bad transition {arc!r}")
            pairs.add((_as_state(fr, "graph"), _as_state(to, "graph")))
        try:
            setting = Setting(
                initial_state=_as_state(setting_spec["initial_state"], "setting"),
                graph=TransitionGraph(pairs),
                population=population,
                delta=delta,
                horizon=horizon,
                price_floor=price_floor,
                price_caps=caps,
                pinned_prices=pinned,
            )
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    grid = _parse_grid(doc.get("grid", {}), int(doc.get("refine", 0)))

    solver_spec = doc.get("solver", {})
    _require_keys(solver_spec, {"budget", "tie_break"}, "solver")
    budget = int(solver_spec.get("budget", 500_000))
    tie = solver_spec.get("tie_break", "default")
    try:
        tie_break = TieBreak(tie)
    except ValueError:
        raise ScenarioError(f"unknown tie_break {tie!r} (use 'default' or 'off')") from None

    outputs = doc.get("outputs", {})
    _require_keys(outputs, {"paths", "summary"}, "outputs")

    probes = []
    for pair in doc.get("probe_prices", []):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ScenarioError(f"bad probe price {pair!r}")
        probes.append((float(pair[0]), float(pair[1])))

    return Scenario(
        setting=setting,
        grid=grid,
        budget=budget,
        tie_break=tie_break,
        paths_file=str(outputs.get("paths", "price_paths.csv")),
        summary_file=str(outputs.get("summary", "summary.json")),
        probe_prices=tuple(probes),
        kind=kind,
        population_spec=pop_spec,
    )


def _parse_population(spec) -> tuple[TypePopulation, dict]:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ScenarioError("population must be an object with a 'type'")
    kind = spec["type"]
    if kind in ("grid", "uniform_full"):
        _require_keys(spec, {"type", "n", "style"}, "population")
        n = int(spec.get("n", 100))
        style = spec.get("style", "centers")
        try:
            return uniform_grid_population(n, style), dict(spec)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
    if kind == "atoms":
        _require_keys(spec, {"type", "atoms"}, "population")
        try:
            return explicit_population(tuple(map(tuple, spec["atoms"]))), dict(spec)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"bad atoms: {exc}") from None
    if kind == "linear_band":
        _require_keys(spec, {"type", "n", "lower_intercept", "slope"}, "population")
        try:
            return (
                linear_band_population(
                    int(spec.get("n", 50)),
                    float(spec.get("lower_intercept", -0.2)),
                    float(spec.get("slope", 1.0)),
                ),
                dict(spec),
            )
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
    raise ScenarioError(f"unknown population type {kind!r}")


def _parse_caps(spec) -> tuple[tuple[float, float], tuple]:
    if not isinstance(spec, dict):
        raise ScenarioError("price_caps must be an object")
    _require_keys(spec, {"a", "b"}, "price_caps")
    caps = [1.0, 1.0]
    pinned: list = [None, None]
    for idx, key in enumerate(("a", "b")):
        if key not in spec:
            continue
        val = spec[key]
        if isinstance(val, dict):
            _require_keys(val, {"fixed"}, f"price_caps.{key}")
            pinned[idx] = float(val["fixed"])
            caps[idx] = float(val["fixed"]) if float(val["fixed"]) > 0 else 1.0
        else:
            caps[idx] = float(val)
    return (caps[0], caps[1]), (pinned[0], pinned[1])


def _parse_grid(spec, refine: int) -> PriceGridSpec:
    if not isinstance(spec, dict):
        raise ScenarioError("grid must be an object")
    _require_keys(spec, {"step", "points", "extra_points"}, "grid")
    extra = tuple(float(x) for x in spec.get("extra_points", ()))
    if "points" in spec:
        pts = spec["points"]
        _require_keys(pts, {"a", "b"}, "grid.points")
        axes = []
        for key in ("a", "b"):
            axes.append(tuple(float(x) for x in pts[key]) if key in pts else None)
        return PriceGridSpec(
            step=float(spec.get("step", 0.05)),
            refine_rounds=refine,
            extra_points=extra,
            points=(axes[0], axes[1]),
        )
    return PriceGridSpec(step=float(spec.get("step", 0.05)), refine_rounds=refine, extra_points=extra)


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(doc)


def emit_scenario(scenario: Scenario) -> dict:
    """Serialize back to the document form; parse(emit(s)) reproduces the
    setting exactly."""
    setting = scenario.setting
    doc: dict = {}
    if scenario.kind is not None:
        doc["setting"] = {"kind": scenario.kind.value}
    else:
        arcs = sorted(
            f"{fr.value}{to.value}"
            for fr, to in setting.graph.admissible
            if fr is not to
        )
        doc["setting"] = {"graph": arcs, "initial_state": setting.initial_state.value}
    if scenario.population_spec:
        doc["population"] = dict(scenario.population_spec)
    else:
        doc["population"] = {
            "type": "atoms",
            "atoms": [[a.v_a, a.v_b, a.mass] for a in setting.population],
        }
    doc["delta"] = setting.delta
    doc["horizon"] = setting.horizon
    doc["price_floor"] = setting.price_floor
    caps: dict = {}
    for idx, key in enumerate(("a", "b")):
        if setting.pinned_prices[idx] is not None:
            caps[key] = {"fixed": setting.pinned_prices[idx]}
        else:
            caps[key] = setting.price_caps[idx]
    doc["price_caps"] = caps
    grid: dict = {"step": scenario.grid.step}
    if scenario.grid.extra_points:
        grid["extra_points"] = list(scenario.grid.extra_points)
    if scenario.grid.points != (None, None):
        pts = {}
        if scenario.grid.points[0] is not None:
            pts["a"] = list(scenario.grid.points[0])
        if scenario.grid.points[1] is not None:
            pts["b"] = list(scenario.grid.points[1])
        grid["points"] = pts
    doc["grid"] = grid
    if scenario.grid.refine_rounds:
        doc["refine"] = scenario.grid.refine_rounds
    doc["solver"] = {"budget": scenario.budget, "tie_break": scenario.tie_break.value}
    doc["outputs"] = {"paths": scenario.paths_file, "summary": scenario.summary_file}
    if scenario.probe_prices:
        doc["probe_prices"] = [list(p) for p in scenario.probe_prices]
    return doc
