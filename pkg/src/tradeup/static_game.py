"""Static (one-shot) game layer: demand segments, profit, monopoly prices, and
the no-trading-up optimum that anchors where pricing dynamics end."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import (
    STATES,
    VARIETIES,
    Setting,
    State,
    TransitionGraph,
    TypeAtom,
    TypePopulation,
)

PROFIT_TOL = 1e-9

_CODE_OF = {State.A: 0, State.B: 1, State.O: 2}
_STATE_OF = {0: State.A, 1: State.B, 2: State.O}


@dataclass(frozen=True)
class PriceProfile:
    """Pair of posted prices with per-variety offer flags.

    A variety is not offered when its state is inaccessible from the current
    state; its price slot is meaningless and kept at 0.0.
    """

    p_a: float = 0.0
    p_b: float = 0.0
    offered_a: bool = True
    offered_b: bool = True

    def price_of(self, state: State) -> float:
        if state is State.A:
            return self.p_a
        if state is State.B:
            return self.p_b
        return 0.0

    def offered(self, state: State) -> bool:
        if state is State.A:
            return self.offered_a
        if state is State.B:
            return self.offered_b
        return True

    def as_pair(self) -> tuple[float, float]:
        return self.p_a, self.p_b


@dataclass(frozen=True)
class Allocation:
    """Per-atom state assignment plus aggregated segment masses."""

    assignment: tuple
    segment_measure: dict

    def mass_of(self, state: State) -> float:
        return self.segment_measure.get(state, 0.0)


@dataclass(frozen=True)
class TradingUpInstance:
    atom_index: int
    atom: TypeAtom
    current_state: State
    target_state: State
    gain: float


@dataclass(frozen=True)
class TradingUpReport:
    exists: bool
    instances: tuple


@dataclass(frozen=True)
class StaticOptimum:
    """An argmax over a finite price grid; ``grid_step`` is the certified
    resolution of the search."""

    prices: PriceProfile
    profit: float
    allocation: Allocation
    grid_step: float


class TieBreak(enum.Enum):
    """Order applied to consumer indifference: seller-favoring puts the
    higher-priced variety first, then a, then b, then the outside option."""

    DEFAULT = "default"
    PLAIN = "off"


def tie_ranks(p_a: float, p_b: float, mode: TieBreak = TieBreak.DEFAULT) -> np.ndarray:
    """Rank per choice code (a, b, o); larger wins ties."""
    if mode is TieBreak.DEFAULT and p_b > p_a:
        return np.array([1.0, 2.0, 0.0])
    return np.array([2.0, 1.0, 0.0])


#: Utilities within this distance of the row maximum count as tied, so that
#: indifference on clean decimal grids is not flipped by float rounding.
TIE_TOL = 1e-12


def pinned_argmax(utils: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    """Row-wise argmax of ``utils`` (N x 3) with ties resolved by ``ranks``.
    Returns choice codes."""
    best = utils.max(axis=1, keepdims=True)
    tied = utils >= best - TIE_TOL
    return np.where(tied, ranks[None, :], -np.inf).argmax(axis=1)


def effective_prices(prices: PriceProfile, current_state: State, graph: TransitionGraph) -> tuple[float, float]:
    """Prices actually charged to a group occupying ``current_state``: a
    variety the group cannot exit back to the outside option charges zero."""
    pa, pb = prices.p_a, prices.p_b
    if current_state is State.A and not graph.can_exit_to_outside(State.A):
        pa = 0.0
    if current_state is State.B and not graph.can_exit_to_outside(State.B):
        pb = 0.0
    return pa, pb


def choice_codes(
    va: np.ndarray,
    vb: np.ndarray,
    prices: PriceProfile,
    setting: Setting,
    current_state: State,
    continuation: np.ndarray | None = None,
    tie_break: TieBreak = TieBreak.DEFAULT,
) -> np.ndarray:
    """Vectorized one-shot choice over the states accessible from
    ``current_state``. ``continuation`` (N x 3), when given, is added to the
    per-period surplus before the argmax."""
    pa, pb = effective_prices(prices, current_state, setting.graph)
    n = len(va)
    utils = np.column_stack([va - pa, vb - pb, np.zeros(n)])
    if continuation is not None:
        utils = utils + continuation
    accessible = setting.graph.accessible_from(current_state)
    for state, code in _CODE_OF.items():
        if state not in accessible:
            utils[:, code] = -np.inf
    return pinned_argmax(utils, tie_ranks(pa, pb, tie_break))


def static_choice(
    atom: TypeAtom,
    prices: PriceProfile,
    setting: Setting,
    current_state: State,
    tie_break: TieBreak = TieBreak.DEFAULT,
) -> State:
    """The accessible state maximizing per-period surplus for one atom."""
    code = choice_codes(
        np.array([atom.v_a]), np.array([atom.v_b]), prices, setting, current_state,
        tie_break=tie_break,
    )[0]
    return _STATE_OF[int(code)]


def demand_segments(
    population: TypePopulation,
    prices: PriceProfile,
    setting: Setting,
    current_state: State,
    tie_break: TieBreak = TieBreak.DEFAULT,
) -> Allocation:
    codes = choice_codes(
        population.va, population.vb, prices, setting, current_state, tie_break=tie_break
    )
    assignment = tuple(_STATE_OF[int(c)] for c in codes)
    measures = {}
    for state, code in _CODE_OF.items():
        measures[state] = float(population.masses[codes == code].sum())
    return Allocation(assignment=assignment, segment_measure=measures)


def static_profit(
    population: TypePopulation,
    prices: PriceProfile,
    setting: Setting,
    current_state: State,
    tie_break: TieBreak = TieBreak.DEFAULT,
) -> float:
    """Revenue at the one-shot allocation, using effective (non-expropriating)
    prices."""
    codes = choice_codes(
        population.va, population.vb, prices, setting, current_state, tie_break=tie_break
    )
    pa, pb = effective_prices(prices, current_state, setting.graph)
    per_choice = np.array([pa, pb, 0.0])
    return float((population.masses * per_choice[codes]).sum())


# ---------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class PriceGridSpec:
    """Finite candidate set for static optimization: a step grid between the
    setting's floor and per-variety caps, optionally augmented with explicit
    points and refined locally around the incumbent optimum."""

    step: float = 0.02
    refine_rounds: int = 0
    extra_points: tuple = ()
    points: tuple = (None, None)  # explicit per-variety candidate tuples

    def axis(self, lo: float, hi: float, variety_index: int) -> np.ndarray:
        explicit = self.points[variety_index]
        if explicit is not None:
            vals = np.array(sorted(set(float(p) for p in explicit)))
        else:
            inv = 1.0 / self.step
            if abs(inv - round(inv)) < 1e-9:
                # Rational step: build grid points by correctly rounded
                # division so clean decimals (0.3, 0.05, ...) land exactly.
                denom = round(inv)
                k0 = int(np.ceil(lo * denom - 1e-9))
                k1 = int(np.floor(hi * denom + 1e-9))
                vals = np.arange(k0, k1 + 1, dtype=float) / denom
            else:
                k = int(np.floor((hi - lo) / self.step + 1e-12))
                vals = lo + self.step * np.arange(k + 1)
            vals = np.append(vals, hi)
            vals = np.concatenate([vals, np.array(self.extra_points, dtype=float)])
            vals = np.unique(vals[(vals >= lo - 1e-12) & (vals <= hi + 1e-12)])
        return vals


def _variety_bounds(setting: Setting, idx: int) -> tuple[float, float]:
    pinned = setting.pinned_prices[idx]
    if pinned is not None:
        return pinned, pinned
    return setting.price_floor, setting.price_caps[idx]


def _candidate_axes(setting: Setting, spec: PriceGridSpec) -> tuple[np.ndarray, np.ndarray, tuple[bool, bool]]:
    accessible = setting.graph.accessible_from(setting.initial_state)
    offered = (State.A in accessible, State.B in accessible)
    axes = []
    for idx in range(2):
        if not offered[idx]:
            axes.append(np.array([0.0]))
            continue
        lo, hi = _variety_bounds(setting, idx)
        axes.append(spec.axis(lo, hi, idx))
    return axes[0], axes[1], offered


def _profits_over_grid(
    setting: Setting,
    pa_vals: np.ndarray,
    pb_vals: np.ndarray,
    offered: tuple[bool, bool],
    tie_break: TieBreak,
    omega_only: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Profit (and no-trading-up feasibility) per candidate profile.

    Returns (profit matrix [na, nb], feasible mask [na, nb]).
    """
    pop = setting.population
    va, vb, masses = pop.va, pop.vb, pop.masses
    graph = setting.graph
    accessible = graph.accessible_from(setting.initial_state)
    acc_mask = np.array([s in accessible for s in STATES])

    # Trading-up gain targets per current state: strictly better admissible states.
    values = np.column_stack([va, vb, np.zeros(len(va))])
    profits = np.zeros((len(pa_vals), len(pb_vals)))
    feasible = np.ones_like(profits, dtype=bool)

    for i, pa in enumerate(pa_vals):
        utils_a = va - pa
        for j, pb in enumerate(pb_vals):
            utils = np.column_stack([utils_a, vb - pb, np.zeros(len(va))])
            utils[:, ~acc_mask] = -np.inf
            codes = pinned_argmax(utils, tie_ranks(pa, pb, tie_break))
            per_choice = np.array([pa if offered[0] else 0.0, pb if offered[1] else 0.0, 0.0])
            profits[i, j] = float((masses * per_choice[codes]).sum())
            if omega_only:
                ok = True
                for code, state in _STATE_OF.items():
                    sel = codes == code
                    if not sel.any():
                        continue
                    for target in STATES:
                        if target is state or not graph.is_admissible(state, target):
                            continue
                        gain = values[sel, _CODE_OF[target]] - values[sel, code]
                        if ((gain > 0) & (masses[sel] > 0)).any():
                            ok = False
                            break
                    if not ok:
                        break
                feasible[i, j] = ok
    return profits, feasible


def _argmax_profile(
    pa_vals: np.ndarray, pb_vals: np.ndarray, profits: np.ndarray, feasible: np.ndarray
) -> tuple[float, float, float] | None:
    """Best feasible candidate; ties broken toward lexicographically larger
    prices. Returns (pa, pb, profit) or None if nothing is feasible."""
    # Scan in descending lexicographic price order, keep the first strict
    # maximum: ties resolve toward higher prices, deterministically.
    best = None
    for i in range(len(pa_vals) - 1, -1, -1):
        for j in range(len(pb_vals) - 1, -1, -1):
            if not feasible[i, j]:
                continue
            if best is None or profits[i, j] > best[2]:
                best = (float(pa_vals[i]), float(pb_vals[j]), float(profits[i, j]))
    return best


def _optimize(
    setting: Setting,
    spec: PriceGridSpec,
    tie_break: TieBreak,
    omega_only: bool,
) -> StaticOptimum | None:
    pa_vals, pb_vals, offered = _candidate_axes(setting, spec)
    profits, feasible = _profits_over_grid(setting, pa_vals, pb_vals, offered, tie_break, omega_only)
    best = _argmax_profile(pa_vals, pb_vals, profits, feasible)
    if best is None:
        return None
    step = spec.step
    for _ in range(spec.refine_rounds):
        step = step / 4.0
        axes = []
        for idx, center in enumerate(best[:2]):
            if not offered[idx] or setting.pinned_prices[idx] is not None:
                axes.append(np.array([center]))
                continue
            lo, hi = _variety_bounds(setting, idx)
            local = center + step * np.arange(-4, 5)
            local = np.unique(np.clip(local, lo, hi))
            axes.append(local)
        profits, feasible = _profits_over_grid(setting, axes[0], axes[1], offered, tie_break, omega_only)
        cand = _argmax_profile(axes[0], axes[1], profits, feasible)
        if cand is not None and cand[2] >= best[2]:
            best = cand
    if omega_only:
        best = _refine_toward_frontier(setting, best, spec.step, tie_break)
    pa, pb, profit = best
    profile = PriceProfile(pa, pb, offered_a=offered[0], offered_b=offered[1])
    alloc = demand_segments(setting.population, profile, setting, setting.initial_state, tie_break)
    return StaticOptimum(prices=profile, profit=profit, allocation=alloc, grid_step=step)


def _refine_toward_frontier(
    setting: Setting, best: tuple[float, float, float], step: float, tie_break: TieBreak
) -> tuple[float, float, float]:
    """Bisect along the diagonal and the two axis directions for the largest
    no-trading-up profile above the incumbent; keep it if profit improves."""
    pa0, pb0, prof0 = best
    out = best
    for d in ((1.0, 1.0), (1.0, 0.0), (0.0, 1.0)):
        lo, hi = 0.0, step
        good = 0.0
        for _ in range(50):
            mid = (lo + hi) / 2.0
            pa, pb = pa0 + d[0] * mid, pb0 + d[1] * mid
            if pa > setting.price_caps[0] + 1e-12 or pb > setting.price_caps[1] + 1e-12:
                hi = mid
                continue
            if setting.pinned_prices[0] is not None and d[0] != 0.0:
                break
            if setting.pinned_prices[1] is not None and d[1] != 0.0:
                break
            profile = PriceProfile(pa, pb)
            if leaves_no_trading_up(profile, setting, tie_break):
                good = mid
                lo = mid
            else:
                hi = mid
        pa, pb = pa0 + d[0] * good, pb0 + d[1] * good
        profile = PriceProfile(pa, pb)
        prof = static_profit(setting.population, profile, setting, setting.initial_state, tie_break)
        if prof > out[2] + PROFIT_TOL:
            out = (pa, pb, prof)
    return out


def monopoly_price(
    setting: Setting, spec: PriceGridSpec | None = None, tie_break: TieBreak = TieBreak.DEFAULT
) -> StaticOptimum:
    """Argmax of one-shot profit over the candidate grid."""
    spec = spec or PriceGridSpec()
    opt = _optimize(setting, spec, tie_break, omega_only=False)
    assert opt is not None  # unconstrained grid is never empty
    return opt


class OmegaEmptyError(RuntimeError):
    """No candidate profile leaves zero trading-up opportunities (possible
    only when a state is reachable but not directly accessible)."""


def no_trading_up_optimum(
    setting: Setting, spec: PriceGridSpec | None = None, tie_break: TieBreak = TieBreak.DEFAULT
) -> StaticOptimum:
    """Best one-shot profile among those whose induced allocation leaves the
    seller no trading-up opportunity."""
    spec = spec or PriceGridSpec()
    opt = _optimize(setting, spec, tie_break, omega_only=True)
    if opt is None:
        raise OmegaEmptyError(
            "no candidate profile clears all trading-up opportunities; "
            "this is a transitional game - use the transitional module"
        )
    return opt


# ---------------------------------------------------------------------------
# Trading-up detection


def detect_trading_up(
    population_by_state: dict, graph: TransitionGraph
) -> TradingUpReport:
    """Scan an occupancy map {state: iterable of TypeAtom} for positive-mass
    atoms with an admissible strictly higher-valued transition. Atom indices
    enumerate the flattened input (canonical state order, list order)."""
    instances = []
    idx = 0
    for state in STATES:
        atoms = population_by_state.get(state, ())
        for atom in atoms:
            if atom.mass > 0:
                for target in STATES:
                    if target is state or not graph.is_admissible(state, target):
                        continue
                    gain = atom.value_of(target) - atom.value_of(state)
                    if gain > 0:
                        instances.append(
                            TradingUpInstance(idx, atom, state, target, gain)
                        )
            idx += 1
    return TradingUpReport(exists=bool(instances), instances=tuple(instances))


def leaves_no_trading_up(
    prices: PriceProfile, setting: Setting, tie_break: TieBreak = TieBreak.DEFAULT
) -> bool:
    """True when the one-shot allocation induced from the initial state leaves
    no trading-up opportunity (exact ties resolved by the choice tie-break and
    then tested strictly)."""
    alloc = demand_segments(setting.population, prices, setting, setting.initial_state, tie_break)
    occupancy: dict = {s: [] for s in STATES}
    for atom, state in zip(setting.population.atoms, alloc.assignment):
        occupancy[state].append(atom)
    return not detect_trading_up(occupancy, setting.graph).exists


# ---------------------------------------------------------------------------
# Setting taxonomy


class SettingClass(enum.Enum):
    ABSORBING_INITIAL = "absorbing_initial"
    POSITIVE_SELECTION = "positive_selection"
    BOARD_LIKE = "board_like"
    TRADING_DOWN = "trading_down"
    NO_TUO_AT_MONOPOLY = "no_tuo_at_monopoly"
    TUO_AT_MONOPOLY = "tuo_at_monopoly"


@dataclass(frozen=True)
class Classification:
    kind: SettingClass
    certificate: str
    monopoly: StaticOptimum | None = None
    no_trading_up: StaticOptimum | None = None

    @property
    def structurally_no_trading_up(self) -> bool:
        return self.kind in (
            SettingClass.ABSORBING_INITIAL,
            SettingClass.POSITIVE_SELECTION,
            SettingClass.BOARD_LIKE,
            SettingClass.TRADING_DOWN,
        )

    @property
    def no_trading_up_at_monopoly(self) -> bool:
        return self.structurally_no_trading_up or self.kind is SettingClass.NO_TUO_AT_MONOPOLY


def classify_setting(
    setting: Setting, spec: PriceGridSpec | None = None, tie_break: TieBreak = TieBreak.DEFAULT
) -> Classification:
    """Structural taxonomy first (graph and population order statistics), then
    the distributional comparison of monopoly vs no-trading-up profits."""
    graph = setting.graph
    x0 = setting.initial_state
    pop = setting.population
    accessible = [s for s in graph.accessible_from(x0) if s is not x0]

    if graph.is_absorbing(x0):
        return Classification(SettingClass.ABSORBING_INITIAL, "no transition leaves the initial state")

    initially_most_preferred = all(
        atom.value_of(x0) >= atom.value_of(s) for atom in pop for s in accessible
    )
    if initially_most_preferred and accessible and all(graph.is_absorbing(s) for s in accessible):
        return Classification(
            SettingClass.POSITIVE_SELECTION,
            "initial state weakly most preferred; every exit is absorbing",
        )

    least_preferred = all(
        atom.value_of(x0) <= atom.value_of(s) for atom in pop for s in accessible
    )
    if least_preferred and accessible and all(graph.is_absorbing(s) for s in accessible):
        for idx, variety in enumerate(VARIETIES):
            pinned = setting.pinned_prices[idx]
            if variety in accessible and pinned is not None:
                vmin = pop.min_value[idx]
                if pinned < vmin:
                    return Classification(
                        SettingClass.BOARD_LIKE,
                        f"variety {variety.value} pinned at {pinned} below min value {vmin}",
                    )

    if _only_trades_down(setting):
        return Classification(
            SettingClass.TRADING_DOWN,
            "every admissible transition runs weakly down a common preference ranking",
        )

    spec = spec or PriceGridSpec()
    pm = monopoly_price(setting, spec, tie_break)
    try:
        ntu = no_trading_up_optimum(setting, spec, tie_break)
    except OmegaEmptyError:
        return Classification(
            SettingClass.TUO_AT_MONOPOLY, "no-trading-up set empty (transitional graph)", pm, None
        )
    if abs(pm.profit - ntu.profit) <= max(spec.step, pm.grid_step) + PROFIT_TOL:
        return Classification(
            SettingClass.NO_TUO_AT_MONOPOLY,
            f"monopoly profit {pm.profit:.6f} equals no-trading-up profit {ntu.profit:.6f} within grid step",
            pm,
            ntu,
        )
    return Classification(
        SettingClass.TUO_AT_MONOPOLY,
        f"monopoly profit {pm.profit:.6f} exceeds no-trading-up profit {ntu.profit:.6f}",
        pm,
        ntu,
    )


def _only_trades_down(setting: Setting) -> bool:
    graph, pop = setting.graph, setting.population
    if graph.is_absorbing(setting.initial_state):
        return False
    reach = graph.reachable_states(setting.initial_state)
    for fr in reach:
        for to in STATES:
            if to is fr or not graph.is_admissible(fr, to):
                continue
            if any(atom.value_of(to) > atom.value_of(fr) for atom in pop):
                return False
    return True
