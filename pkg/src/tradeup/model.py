"""Game primitives: consumption states, admissible transitions, consumer type
populations, and the discounted accounting identities shared by the static and
dynamic layers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

MASS_TOL = 1e-9


class EnumerationBudgetError(RuntimeError):
    """Raised when path or strategy enumeration would exceed its budget."""


class ContractViolationError(ValueError):
    """Raised when a price stream charges a consumer who cannot exit."""


class State(enum.Enum):
    """Consumption state: variety ``a``, variety ``b``, or the outside option."""

    A = "a"
    B = "b"
    O = "o"

    @property
    def vec(self) -> tuple[int, int]:
        return _STATE_VECS[self]

    @property
    def is_variety(self) -> bool:
        return self is not State.O

    def __repr__(self) -> str:
        return f"State.{self.name}"


_STATE_VECS = {State.A: (1, 0), State.B: (0, 1), State.O: (0, 0)}

#: Canonical state order used everywhere a deterministic order is needed.
STATES: tuple[State, State, State] = (State.A, State.B, State.O)
VARIETIES: tuple[State, State] = (State.A, State.B)

SELF_LOOPS = frozenset({(s, s) for s in STATES})


@dataclass(frozen=True)
class TransitionGraph:
    """Set of admissible one-period transitions between states.

    Self-loops are mandatory: a consumer may always repeat the previous
    choice.
    """

    admissible: frozenset

    def __init__(self, admissible: Iterable[tuple[State, State]]):
        pairs = frozenset(admissible)
        for fr, to in pairs:
            if not isinstance(fr, State) or not isinstance(to, State):
                raise ValueError(f"transition endpoints must be States: {(fr, to)}")
        missing = SELF_LOOPS - pairs
        if missing:
            raise ValueError(f"self-loops are mandatory, missing {sorted(p[0].value for p in missing)}")
        object.__setattr__(self, "admissible", pairs)

    def is_admissible(self, fr: State, to: State) -> bool:
        return (fr, to) in self.admissible

    def accessible_from(self, state: State) -> tuple[State, ...]:
        """States reachable from ``state`` in one step, canonical order."""
        return tuple(s for s in STATES if (state, s) in self.admissible)

    def is_absorbing(self, state: State) -> bool:
        return all(not self.is_admissible(state, s) for s in STATES if s is not state)

    def can_exit_to_outside(self, variety: State) -> bool:
        return self.is_admissible(variety, State.O)

    def reachable_states(self, start: State) -> frozenset:
        seen = {start}
        frontier = [start]
        while frontier:
            s = frontier.pop()
            for t in self.accessible_from(s):
                if t not in seen:
                    seen.add(t)
                    frontier.append(t)
        return frozenset(seen)

    def occupiable_varieties(self, start: State) -> tuple[State, ...]:
        """Varieties the consumer can ever occupy when starting from ``start``."""
        reach = self.reachable_states(start)
        return tuple(v for v in VARIETIES if v in reach)


def full_graph() -> TransitionGraph:
    return TransitionGraph((fr, to) for fr in STATES for to in STATES)


@dataclass(frozen=True)
class TypeAtom:
    """One mass point of the consumer type distribution."""

    v_a: float
    v_b: float
    mass: float

    def __post_init__(self):
        if not (0.0 <= self.v_a <= 1.0 and 0.0 <= self.v_b <= 1.0):
            raise ValueError(f"per-period values must lie in [0,1]: ({self.v_a}, {self.v_b})")
        if self.mass < 0.0:
            raise ValueError(f"mass must be nonnegative: {self.mass}")

    def value_of(self, state: State) -> float:
        xa, xb = state.vec
        return self.v_a * xa + self.v_b * xb


@dataclass(frozen=True)
class TypePopulation:
    """Finite list of type atoms with total mass one."""

    atoms: tuple

    def __init__(self, atoms: Iterable[TypeAtom]):
        atoms = tuple(atoms)
        total = sum(a.mass for a in atoms)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass must be 1, got {total!r}")
        if len({(a.v_a, a.v_b) for a in atoms}) != len(atoms):
            raise ValueError("atom value profiles must be distinct")
        object.__setattr__(self, "atoms", atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    @cached_property
    def va(self) -> np.ndarray:
        return np.array([a.v_a for a in self.atoms])

    @cached_property
    def vb(self) -> np.ndarray:
        return np.array([a.v_b for a in self.atoms])

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([a.mass for a in self.atoms])

    @cached_property
    def min_value(self) -> tuple[float, float]:
        return float(self.va.min()), float(self.vb.min())


@dataclass(frozen=True)
class Setting:
    """The game: initial state, transition graph, type population, discounting,
    horizon, and the admissible price range.

    ``horizon`` is the number of periods, i.e. play runs t = 0..horizon-1.
    ``price_caps`` are per-period units; posted prices for varieties that
    cannot be exited back to the outside option are scaled by the remaining
    horizon weight. ``pinned_prices`` fixes a variety's price administratively
    (the seller does not choose it).
    """

    initial_state: State
    graph: TransitionGraph
    population: TypePopulation
    delta: float
    horizon: int
    price_floor: float = -1.0
    price_caps: tuple[float, float] = (1.0, 1.0)
    pinned_prices: tuple = (None, None)

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie strictly inside (0,1): {self.delta}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be a positive number of periods: {self.horizon}")
        if self.price_floor >= 0.0:
            raise ValueError(f"price floor must be negative: {self.price_floor}")
        for cap in self.price_caps:
            if cap <= self.price_floor:
                raise ValueError("price cap must exceed the floor")

    @property
    def last_period(self) -> int:
        return self.horizon - 1

    def weight(self, t: int) -> float:
        """Remaining discounted number of periods from t on."""
        return horizon_weight(self.delta, t, self.last_period)

    def posting_scale(self, variety: State, t: int) -> float:
        """Posted-price scale at period t: remaining horizon weight for
        varieties the buyer cannot exit, 1 for the rest."""
        if not self.graph.can_exit_to_outside(variety):
            return self.weight(t)
        return 1.0


@dataclass(frozen=True)
class ConsumptionPath:
    """A sequence of consumption choices from ``start_period`` to the end."""

    choices: tuple
    start_period: int = 0

    def __init__(self, choices: Iterable[State], start_period: int = 0):
        object.__setattr__(self, "choices", tuple(choices))
        object.__setattr__(self, "start_period", start_period)
        if not self.choices:
            raise ValueError("a consumption path needs at least one choice")

    def __len__(self) -> int:
        return len(self.choices)


def horizon_weight(delta: float, t: int, T: int) -> float:
    """Discounted number of periods from t through T: sum of delta^(tau-t)."""
    if t > T:
        raise ValueError(f"invalid period: t={t} exceeds T={T}")
    n = T - t + 1
    return float((1.0 - delta**n) / (1.0 - delta))


def is_admissible(graph: TransitionGraph, fr: State, to: State) -> bool:
    return graph.is_admissible(fr, to)


def path_is_admissible(graph: TransitionGraph, previous_state: State, path: ConsumptionPath) -> bool:
    prev = previous_state
    for choice in path.choices:
        if not graph.is_admissible(prev, choice):
            return False
        prev = choice
    return True


def enumerate_paths(
    setting: Setting, from_state: State, t: int, budget: int = 200_000
) -> list[ConsumptionPath]:
    """All admissible consumption paths from period ``t`` given the previous
    state ``from_state``. Raises EnumerationBudgetError if the 3^k bound on
    the remaining periods exceeds ``budget``."""
    periods = setting.last_period - t + 1
    if periods < 1:
        raise ValueError(f"invalid period: t={t} beyond horizon")
    if 3**periods > budget:
        raise EnumerationBudgetError(
            f"up to {3**periods} candidate paths exceed budget {budget}"
        )
    out: list[ConsumptionPath] = []

    def extend(prev: State, acc: list):
        if len(acc) == periods:
            out.append(ConsumptionPath(acc, start_period=t))
            return
        for nxt in setting.graph.accessible_from(prev):
            acc.append(nxt)
            extend(nxt, acc)
            acc.pop()

    extend(from_state, [])
    return out


def total_consumption(path: ConsumptionPath, delta: float, T: int) -> tuple[float, float]:
    """Present discounted consumption vector along the path."""
    chi_a = 0.0
    chi_b = 0.0
    for k, choice in enumerate(path.choices):
        w = delta**k
        xa, xb = choice.vec
        chi_a += w * xa
        chi_b += w * xb
    return chi_a, chi_b


def total_payment(
    path: ConsumptionPath,
    prices: Sequence,
    delta: float,
    graph: TransitionGraph | None = None,
) -> float:
    """Present discounted payments along the path.

    ``prices`` holds one (p_a, p_b) pair per period of the path. When
    ``graph`` is given, enforces the no-expropriation rule: a consumer who
    occupies a variety she cannot exit must be charged zero for it after the
    entry period.
    """
    if len(prices) != len(path.choices):
        raise ValueError("need one price profile per period of the path")
    total = 0.0
    prev: State | None = None
    for k, choice in enumerate(path.choices):
        pa, pb = _price_pair(prices[k])
        xa, xb = choice.vec
        charge = pa * xa + pb * xb
        if graph is not None and choice.is_variety and prev is choice:
            if not graph.can_exit_to_outside(choice) and charge != 0.0:
                raise ContractViolationError(
                    f"nonzero price {charge} for captured variety {choice.value} at step {k}"
                )
        total += delta**k * charge
        prev = choice
    return total


def _price_pair(profile) -> tuple[float, float]:
    if isinstance(profile, tuple):
        return profile
    return profile.p_a, profile.p_b


def total_value(atom: TypeAtom, path: ConsumptionPath, delta: float, T: int) -> float:
    chi_a, chi_b = total_consumption(path, delta, T)
    return atom.v_a * chi_a + atom.v_b * chi_b


# ---------------------------------------------------------------------------
# Population samplers


def uniform_grid_population(n: int, style: str = "centers") -> TypePopulation:
    """n-by-n uniform grid on the unit square with equal atom masses.

    ``centers`` places atoms at cell centers (support bounded away from 0 and
    1); ``lattice`` uses the closed lattice including the boundary.
    """
    if style == "centers":
        levels = [(2 * k + 1) / (2 * n) for k in range(n)]
    elif style == "lattice":
        levels = [k / (n - 1) for k in range(n)] if n > 1 else [0.5]
    else:
        raise ValueError(f"unknown grid style: {style!r}")
    mass = 1.0 / (len(levels) ** 2)
    atoms = [TypeAtom(a, b, mass) for a in levels for b in levels]
    return TypePopulation(atoms)


def linear_band_population(n: int, lower_intercept: float = -0.2, slope: float = 1.0) -> TypePopulation:
    """Types on the line v_b = slope * v_a + lower_intercept, clipped to the
    unit square; equal masses. Slope > 0 with a negative intercept yields the
    vertical-differentiation support (every type prefers a to b)."""
    if slope <= 0:
        raise ValueError("slope must be positive")
    lo = max(0.0, -lower_intercept / slope)
    hi = min(1.0, (1.0 - lower_intercept) / slope)
    if not lo < hi:
        raise ValueError("line does not intersect the unit square")
    width = hi - lo
    levels = [lo + (2 * k + 1) / (2 * n) * width for k in range(n)]
    mass = 1.0 / n
    atoms = [TypeAtom(a, slope * a + lower_intercept, mass) for a in levels]
    return TypePopulation(atoms)


def explicit_population(entries: Iterable[tuple[float, float, float]]) -> TypePopulation:
    return TypePopulation(TypeAtom(va, vb, m) for va, vb, m in entries)


def single_atom_population(v_a: float, v_b: float) -> TypePopulation:
    return TypePopulation([TypeAtom(v_a, v_b, 1.0)])


# ---------------------------------------------------------------------------
# Canonical settings


class SettingKind(enum.Enum):
    TWO_RENTALS = "two_rentals"
    TWO_DURABLES = "two_durables"
    MIXED = "mixed"
    SINGLE_DURABLE = "single_durable"
    POSITIVE_SELECTION = "positive_selection"
    BOARD_LIKE = "board_like"
    TRADING_DOWN = "trading_down"
    TRANSITIONAL = "transitional"


_O, _A, _B = State.O, State.A, State.B

_CANONICAL_GRAPHS = {
    SettingKind.TWO_RENTALS: (_O, full_graph()),
    SettingKind.TWO_DURABLES: (
        _O,
        TransitionGraph(list(SELF_LOOPS) + [(_O, _A), (_O, _B)]),
    ),
    SettingKind.MIXED: (
        _O,
        TransitionGraph(list(SELF_LOOPS) + [(_O, _A), (_O, _B), (_A, _O), (_A, _B)]),
    ),
    SettingKind.SINGLE_DURABLE: (
        _O,
        TransitionGraph(list(SELF_LOOPS) + [(_O, _A)]),
    ),
    SettingKind.POSITIVE_SELECTION: (
        _A,
        TransitionGraph(list(SELF_LOOPS) + [(_A, _O)]),
    ),
    SettingKind.BOARD_LIKE: (
        _O,
        TransitionGraph(list(SELF_LOOPS) + [(_O, _A), (_O, _B)]),
    ),
    SettingKind.TRADING_DOWN: (
        _A,
        TransitionGraph(list(SELF_LOOPS) + [(_A, _B), (_A, _O), (_B, _O)]),
    ),
    SettingKind.TRANSITIONAL: (
        _O,
        TransitionGraph(list(SELF_LOOPS) + [(_O, _A), (_A, _O), (_A, _B)]),
    ),
}


def canonical_setting(
    kind: SettingKind | str,
    population: TypePopulation,
    delta: float,
    horizon: int,
    price_floor: float = -1.0,
    price_caps: tuple[float, float] = (1.0, 1.0),
) -> Setting:
    """Build one of the named settings over the given population.

    BOARD_LIKE pins variety b's price at zero (two durables where the second
    variety is guaranteed strictly positive surplus); it requires min v_b > 0.
    TRADING_DOWN requires every atom to weakly prefer a to b so that all
    admissible transitions run down a common preference ranking.
    """
    kind = SettingKind(kind)
    initial, graph = _CANONICAL_GRAPHS[kind]
    pinned: tuple = (None, None)
    if kind is SettingKind.BOARD_LIKE:
        if population.min_value[1] <= 0.0:
            raise ValueError("board-like pinning needs min v_b > 0 in the population")
        pinned = (None, 0.0)
    if kind is SettingKind.TRADING_DOWN:
        if not all(a.v_a >= a.v_b for a in population):
            raise ValueError("trading down needs a common ranking: v_a >= v_b for every atom")
    return Setting(
        initial_state=initial,
        graph=graph,
        population=population,
        delta=delta,
        horizon=horizon,
        price_floor=price_floor,
        price_caps=price_caps,
        pinned_prices=pinned,
    )
