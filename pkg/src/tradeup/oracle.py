"""Independent validation oracles: exhaustive equilibrium search on tiny
games, closed-form static optima for the uniform families, and exact-area
demand segment measures."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon, box

from .model import EnumerationBudgetError, Setting, State, STATES, VARIETIES, TypeAtom
from .static_game import PriceGridSpec, PriceProfile, TieBreak
from .dynamic import EquilibriumOutcome, SolvedNode, build_outcome, tree_profit

_CODE_OF = {State.A: 0, State.B: 1, State.O: 2}
_STATE_OF = {0: State.A, 1: State.B, 2: State.O}


@dataclass(frozen=True)
class OracleInstance:
    """A game small enough for exhaustive search: at most 4 atoms, 3 periods,
    and 12 candidate prices per variety."""

    setting: Setting
    grid_spec: PriceGridSpec
    enumeration_budget: int = 2_000_000

    def __post_init__(self):
        if len(self.setting.population) > 4:
            raise ValueError("oracle instances allow at most 4 atoms")
        if self.setting.horizon > 3:
            raise ValueError("oracle instances allow at most 3 periods (T <= 2)")


class NoSurvivingProfileError(RuntimeError):
    """Every candidate price at some node lacks a pure consumer fixed point;
    indicates a grid/tie-break interaction on this instance."""


class _Exhaustive:
    """Per-node exhaustive search: every candidate price crossed with every
    consumer assignment, filtered by the best-response definition, seller-best
    fixed point kept. No merging, no shortcuts."""

    def __init__(self, instance: OracleInstance, tie_break: TieBreak = TieBreak.DEFAULT):
        self.setting = instance.setting
        self.spec = instance.grid_spec
        self.budget = instance.enumeration_budget
        self.tie_break = tie_break
        self.atoms = tuple(instance.setting.population.atoms)
        self.delta = instance.setting.delta
        self.last = instance.setting.last_period
        self.memo: dict = {}
        self.evaluations = 0
        self._dev_memo: dict = {}

    def candidate_profiles(self, t: int, s: State) -> list:
        setting = self.setting
        graph = setting.graph
        accessible = graph.accessible_from(s)
        slots = []
        offered = []
        for idx, variety in enumerate(VARIETIES):
            if variety not in accessible:
                slots.append([0.0])
                offered.append(False)
            elif variety is s and not graph.can_exit_to_outside(variety):
                slots.append([0.0])
                offered.append(True)
            else:
                pinned = setting.pinned_prices[idx]
                if pinned is not None:
                    axis = np.array([float(pinned)])
                else:
                    axis = self.spec.axis(setting.price_floor, setting.price_caps[idx], idx)
                if len(axis) > 12:
                    raise ValueError("oracle instances allow at most 12 prices per variety")
                scale = setting.posting_scale(variety, t)
                slots.append([float(p) * scale for p in axis])
                offered.append(True)
        return [
            PriceProfile(pa, pb, offered_a=offered[0], offered_b=offered[1])
            for pa in reversed(slots[0])
            for pb in reversed(slots[1])
        ]

    def dev_value(self, node: SolvedNode, atom: TypeAtom) -> float:
        key = (id(node), atom.v_a, atom.v_b)
        hit = self._dev_memo.get(key)
        if hit is not None:
            return hit
        best = -math.inf
        for x in self.setting.graph.accessible_from(node.state):
            u = atom.value_of(x) - node.profile.price_of(x)
            if node.t < self.last:
                u += self.delta * self.dev_value(node.branch[x], atom)
            best = max(best, u)
        self._dev_memo[key] = best
        return best

    def _pinned_choice(self, utils: dict, pa: float, pb: float) -> State:
        from .static_game import TIE_TOL

        order = [State.A, State.B, State.O]
        if self.tie_break is TieBreak.DEFAULT and pb > pa:
            order = [State.B, State.A, State.O]
        best_u = max(utils.values())
        for s in order:
            if s in utils and utils[s] >= best_u - TIE_TOL:
                return s
        raise AssertionError("unreachable")

    def solve(self, t: int, s: State, atom_ids: tuple) -> SolvedNode:
        key = (t, s, atom_ids)
        hit = self.memo.get(key)
        if hit is not None:
            return hit

        accessible = self.setting.graph.accessible_from(s)
        best = None
        skipped = []
        for profile in self.candidate_profiles(t, s):
            node_best = None
            for combo in itertools.product(accessible, repeat=len(atom_ids)):
                self.evaluations += 1
                if self.evaluations > self.budget:
                    raise EnumerationBudgetError(
                        f"oracle enumeration exceeded {self.budget} evaluations"
                    )
                branch = {}
                if t < self.last:
                    for x in accessible:
                        members = tuple(
                            aid for aid, choice in zip(atom_ids, combo) if choice is x
                        )
                        branch[x] = self.solve(t + 1, x, members if members else atom_ids)
                consistent = True
                for aid, choice in zip(atom_ids, combo):
                    atom = self.atoms[aid]
                    utils = {}
                    for x in accessible:
                        u = atom.value_of(x) - profile.price_of(x)
                        if t < self.last:
                            u += self.delta * self.dev_value(branch[x], atom)
                        utils[x] = u
                    if self._pinned_choice(utils, profile.p_a, profile.p_b) is not choice:
                        consistent = False
                        break
                if not consistent:
                    continue
                value = sum(
                    self.atoms[aid].mass * profile.price_of(choice)
                    for aid, choice in zip(atom_ids, combo)
                )
                if t < self.last:
                    realized = {choice for choice in combo}
                    value += self.delta * sum(branch[x].value for x in realized)
                if node_best is None or value > node_best[2]:
                    node_best = (combo, branch, value)
            if node_best is None:
                skipped.append(profile)
                continue
            if best is None or node_best[2] > best[3]:
                best = (profile, node_best[0], node_best[1], node_best[2])
        if best is None:
            raise NoSurvivingProfileError(
                f"no candidate price admits a consumer fixed point at period {t}, state {s.value}"
            )

        profile, combo, branch, value = best
        codes = np.array([_CODE_OF[c] for c in combo])
        children = {x: branch[x] for x in set(combo) if x in branch}
        dev = np.array([0.0] * len(self.atoms))
        node = SolvedNode(
            t=t,
            state=s,
            atoms=atom_ids,
            profile=profile,
            choice_codes=codes,
            branch=branch,
            children=children,
            value=value,
            dev=dev,
            skipped_prices=tuple(skipped),
        )
        for i, atom in enumerate(self.atoms):
            best_u = -math.inf
            for x in accessible:
                u = atom.value_of(x) - profile.price_of(x)
                if t < self.last:
                    u += self.delta * self.dev_value(branch[x], atom)
                best_u = max(best_u, u)
            dev[i] = best_u
        self.memo[key] = node
        return node


def brute_force_pbe(
    instance: OracleInstance, tie_break: TieBreak = TieBreak.DEFAULT
) -> EquilibriumOutcome:
    """Seller-optimal equilibrium found by exhaustive per-node search over the
    full price grid and every consumer assignment."""
    search = _Exhaustive(instance, tie_break)
    setting = instance.setting
    root = search.solve(0, setting.initial_state, tuple(range(len(search.atoms))))
    return build_outcome(
        setting,
        search.atoms,
        root,
        instance.grid_spec.step,
        {"evaluations": search.evaluations},
    )


# ---------------------------------------------------------------------------
# Closed-form static optima


class StaticFamily(enum.Enum):
    SINGLE_DURABLE_UNIFORM = "single_durable_uniform"
    TWO_RENTALS_UNIFORM = "two_rentals_uniform"
    MIXED_UNIFORM = "mixed_uniform"


def closed_form_static_optimum(family: StaticFamily) -> tuple[tuple[float, float], float]:
    """Analytic maximizer and value for the uniform-square families.

    single durable: max p(1-p); two rentals: max p(1-p^2) at equal prices;
    mixed: max p(1-p)^2/2 for the rental with the durable cleared at zero.
    """
    family = StaticFamily(family)
    if family is StaticFamily.SINGLE_DURABLE_UNIFORM:
        return (0.5, 0.0), 0.25
    if family is StaticFamily.TWO_RENTALS_UNIFORM:
        p = 1.0 / math.sqrt(3.0)
        return (p, p), p * (1.0 - p * p)
    p = 1.0 / 3.0
    return (p, 0.0), p * (1.0 - p) ** 2 / 2.0


# ---------------------------------------------------------------------------
# Exact demand segment measures


@dataclass(frozen=True)
class UniformSquareDensity:
    pass


@dataclass(frozen=True)
class LinearBandDensity:
    lower_intercept: float = -0.2
    slope: float = 1.0


def integrate_segments(density_spec, prices: PriceProfile, setting: Setting) -> dict:
    """Segment measures of the one-shot choice regions under a continuous
    density, computed exactly (indicator regions are polygons or intervals
    for the supported densities). Validates grid-population demand."""
    if isinstance(density_spec, UniformSquareDensity):
        return _square_segments(prices, setting)
    if isinstance(density_spec, LinearBandDensity):
        return _band_segments(density_spec, prices, setting)
    raise ValueError(f"unsupported density: {density_spec!r}")


def _halfplane(a: float, b: float, c: float) -> Polygon:
    """Large polygon covering {(x, y): a x + b y <= c} over the unit square."""
    big = 20.0
    if a == 0.0 and b == 0.0:
        return box(-big, -big, big, big) if c >= 0 else Polygon()
    norm = math.hypot(a, b)
    na, nb = a / norm, b / norm  # outward normal of the allowed side
    px, py = na * c / norm, nb * c / norm  # point on the boundary line
    dx, dy = -nb, na  # direction along the line
    corners = [
        (px + dx * big, py + dy * big),
        (px - dx * big, py - dy * big),
        (px - dx * big - na * big, py - dy * big - nb * big),
        (px + dx * big - na * big, py + dy * big - nb * big),
    ]
    return Polygon(corners)


def _square_segments(prices: PriceProfile, setting: Setting) -> dict:
    accessible = setting.graph.accessible_from(setting.initial_state)
    effective = {
        State.A: prices.p_a,
        State.B: prices.p_b,
        State.O: 0.0,
    }
    # Surplus of x at (va, vb): coeff_a*va + coeff_b*vb - price
    coeff = {State.A: (1.0, 0.0), State.B: (0.0, 1.0), State.O: (0.0, 0.0)}
    out = {}
    unit = box(0.0, 0.0, 1.0, 1.0)
    for x in STATES:
        if x not in accessible:
            out[x] = 0.0
            continue
        region = unit
        ca, cb = coeff[x]
        for y in accessible:
            if y is x:
                continue
            da, db = coeff[y]
            # (ca-da) va + (cb-db) vb >= price_x - price_y  <=>  -(..) <= ..
            a, b = -(ca - da), -(cb - db)
            c = -(effective[x] - effective[y])
            region = region.intersection(_halfplane(a, b, c))
            if region.is_empty:
                break
        out[x] = float(region.area) if not region.is_empty else 0.0
    return out


def _band_segments(density: LinearBandDensity, prices: PriceProfile, setting: Setting) -> dict:
    lo = max(0.0, -density.lower_intercept / density.slope)
    hi = min(1.0, (1.0 - density.lower_intercept) / density.slope)
    accessible = setting.graph.accessible_from(setting.initial_state)
    effective = {State.A: prices.p_a, State.B: prices.p_b, State.O: 0.0}

    def surplus(x: State, va: float) -> float:
        vb = density.slope * va + density.lower_intercept
        xa, xb = x.vec
        return va * xa + vb * xb - effective[x]

    # Winner regions are intervals in va; measure by fine exact interval scan
    # at the breakpoints of the pairwise linear comparisons.
    breaks = {lo, hi}
    for x in accessible:
        for y in accessible:
            if x is y:
                continue
            # surplus_x(va) = surplus_y(va): linear in va
            xa, xb = x.vec
            ya, yb = y.vec
            a = (xa - ya) + density.slope * (xb - yb)
            b = density.lower_intercept * (xb - yb) - (effective[x] - effective[y])
            if a != 0.0:
                root = -b / a
                if lo < root < hi:
                    breaks.add(root)
    from .static_game import tie_ranks

    ranks = tie_ranks(prices.p_a, prices.p_b)
    pts = sorted(breaks)
    out = {s: 0.0 for s in STATES}
    for left, right in zip(pts[:-1], pts[1:]):
        mid = (left + right) / 2.0
        winner = max(
            accessible,
            key=lambda x: (surplus(x, mid), ranks[{State.A: 0, State.B: 1, State.O: 2}[x]]),
        )
        out[winner] += (right - left) / (hi - lo)
    return out
