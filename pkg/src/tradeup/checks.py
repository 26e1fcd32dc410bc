"""Equilibrium diagnostics: skimming-order checks, the revenue decomposition,
price-floor and profit bounds, exhaustion timing, and the repeated-monopoly
verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import (
    ConsumptionPath,
    Setting,
    State,
    STATES,
    TypeAtom,
    enumerate_paths,
    horizon_weight,
    total_consumption,
)
from .static_game import (
    PriceGridSpec,
    PriceProfile,
    StaticOptimum,
    TieBreak,
    monopoly_price,
)
from .dynamic import (
    EquilibriumOutcome,
    SolvedNode,
    Solver,
    _CODE_OF,
    _STATE_OF,
    realized_paths,
    simulate_plan,
)

DECOMP_TOL = 1e-9
INDIFFERENCE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Skimming order


def path_preference_transfers(
    v_tilde: TypeAtom,
    v: TypeAtom,
    path_k: ConsumptionPath,
    path_l: ConsumptionPath,
    delta: float,
    T: int,
) -> bool:
    """Whether a preference for path_k over path_l carries from type v to type
    v_tilde: the value-profile difference and the consumption difference must
    not point more than 90 degrees apart."""
    chi_k = total_consumption(path_k, delta, T)
    chi_l = total_consumption(path_l, delta, T)
    da, db = chi_k[0] - chi_l[0], chi_k[1] - chi_l[1]
    if da == 0.0 and db == 0.0:
        raise ValueError("paths have identical total consumption")
    return (v_tilde.v_a - v.v_a) * da + (v_tilde.v_b - v.v_b) * db >= 0.0


def choice_preference_transfers(
    v_tilde: TypeAtom,
    v: TypeAtom,
    x: State,
    x_prime: State,
    admissible_path_sets: dict,
    delta: float,
    t: int,
    T: int,
) -> bool:
    """Whether a preference for period-t choice x over x' carries from v to
    v_tilde, bounding the continuation difference by the best and worst
    admissible continuation paths."""
    da = v_tilde.v_a - v.v_a
    db = v_tilde.v_b - v.v_b
    xa, xb = x.vec
    ya, yb = x_prime.vec
    term = da * (xa - ya) + db * (xb - yb)
    if t < T:
        after_x = admissible_path_sets[x]
        after_y = admissible_path_sets[x_prime]
        if not after_x or not after_y:
            raise ValueError("empty continuation path set")
        lo = min(_dot_chi(da, db, p, delta, T) for p in after_x)
        hi = max(_dot_chi(da, db, p, delta, T) for p in after_y)
        term += delta * lo - delta * hi
    return term >= 0.0


def _dot_chi(da: float, db: float, path: ConsumptionPath, delta: float, T: int) -> float:
    chi = total_consumption(path, delta, T)
    return da * chi[0] + db * chi[1]


def continuation_path_sets(setting: Setting, t: int, budget: int = 200_000) -> dict:
    """{choice: admissible paths from t+1 given that period-t choice}."""
    return {
        x: enumerate_paths(setting, x, t + 1, budget) if t < setting.last_period else []
        for x in STATES
    }


def skimming_consistency(outcome: EquilibriumOutcome, budget: int = 200_000) -> list:
    """Restates the choice-ordering condition on computed utilities: whenever
    the condition says a preference transfers from v to v_tilde and v weakly
    prefers x to x' at a node, v_tilde must too. Returns violations."""
    setting = outcome.setting
    atoms = outcome.atoms
    violations = []

    def visit(node: SolvedNode):
        accessible = setting.graph.accessible_from(node.state)
        if len(node.atoms) >= 2 and len(accessible) >= 2:
            path_sets = (
                continuation_path_sets(setting, node.t, budget)
                if node.t < setting.last_period
                else {s: [] for s in STATES}
            )
            solver_utils = _node_choice_utils(outcome, node)
            for i, idx_i in enumerate(node.atoms):
                for idx_j in node.atoms:
                    if idx_i == idx_j:
                        continue
                    vt, v = atoms[idx_i], atoms[idx_j]
                    for x in accessible:
                        for xp in accessible:
                            if x is xp:
                                continue
                            if not choice_preference_transfers(
                                vt, v, x, xp, path_sets, setting.delta, node.t, setting.last_period
                            ):
                                continue
                            u_v = solver_utils[idx_j]
                            u_vt = solver_utils[idx_i]
                            if u_v[_CODE_OF[x]] >= u_v[_CODE_OF[xp]] - 1e-12:
                                if u_vt[_CODE_OF[x]] < u_vt[_CODE_OF[xp]] - 1e-9:
                                    violations.append((node.t, node.state, idx_i, idx_j, x, xp))
        for child in node.children.values():
            visit(child)

    visit(outcome.root)
    return violations


def _node_choice_utils(outcome: EquilibriumOutcome, node: SolvedNode) -> dict:
    """Per atom at the node: utility of each accessible choice against the
    solved continuation."""
    setting = outcome.setting
    out = {}
    for idx in node.atoms:
        atom = outcome.atoms[idx]
        utils = np.full(3, -np.inf)
        for x in setting.graph.accessible_from(node.state):
            u = atom.value_of(x) - node.profile.price_of(x)
            if node.t < setting.last_period:
                u += setting.delta * node.branch[x].dev[idx]
            utils[_CODE_OF[x]] = u
        out[idx] = utils
    return out


# ---------------------------------------------------------------------------
# Revenue decomposition


@dataclass(frozen=True)
class DecompositionResult:
    direct: float
    decomposed: float
    exact_indifference: bool
    n_paths: int

    @property
    def gap(self) -> float:
        return abs(self.direct - self.decomposed)


def revenue_decomposition_check(
    outcome: EquilibriumOutcome, signature: str | None = None
) -> DecompositionResult:
    """Profit at a node computed directly (mass-weighted payments) and via the
    payment-ordered telescoping over realized paths, where each step uses the
    value difference of the binding atom on the higher-payment path.

    ``exact_indifference`` reports whether every adjacent step had an atom
    exactly indifferent (value difference equal to the payment difference);
    only then do the two sides agree to high precision by construction.
    """
    node = outcome.root if signature is None else outcome.node_by_signature(signature)
    setting = outcome.setting
    delta = setting.delta
    atoms = outcome.atoms

    paths = realized_paths(node)
    by_path: dict = {}
    for idx, steps in paths.items():
        key = tuple(s for s, _ in steps)
        rho = sum(delta**k * price for k, (_, price) in enumerate(steps))
        entry = by_path.setdefault(key, [rho, []])
        entry[1].append(idx)

    direct = 0.0
    for rho, members in by_path.values():
        direct += rho * sum(atoms[i].mass for i in members)

    ordered = sorted(
        by_path.items(), key=lambda kv: (kv[1][0], tuple(s.value for s in kv[0]))
    )
    if not ordered:
        return DecompositionResult(0.0, 0.0, True, 0)

    total_mass = sum(atoms[i].mass for _, (_, members) in ordered for i in members)
    rho0 = ordered[0][1][0]
    decomposed = rho0 * total_mass
    exact = True
    for k in range(1, len(ordered)):
        key_k, (rho_k, members_k) = ordered[k]
        key_prev, (rho_prev, _) = ordered[k - 1]
        dnu = min(
            _path_value(atoms[i], key_k, delta) - _path_value(atoms[i], key_prev, delta)
            for i in members_k
        )
        if abs(dnu - (rho_k - rho_prev)) > INDIFFERENCE_TOL:
            exact = False
        upper_mass = sum(
            atoms[i].mass for _, (_, members) in ordered[k:] for i in members
        )
        decomposed += dnu * upper_mass
    return DecompositionResult(direct, decomposed, exact, len(ordered))


def _path_value(atom: TypeAtom, states: tuple, delta: float) -> float:
    return sum(delta**k * atom.value_of(s) for k, s in enumerate(states))


def decomposition_everywhere(outcome: EquilibriumOutcome) -> list:
    """DecompositionResult for every on-path node, root-first."""
    results = []

    def visit(node: SolvedNode, signature: str):
        res = revenue_decomposition_check(outcome, signature)
        results.append((signature, res))
        for x in STATES:
            if x in node.children:
                visit(node.children[x], signature + x.value)

    visit(outcome.root, outcome.root.state.value)
    return results


# ---------------------------------------------------------------------------
# Bounds and timing


def price_floor_check(
    outcome: EquilibriumOutcome, ntu_optimum: StaticOptimum, grid_step: float | None = None
) -> tuple[bool, list]:
    """No on-path posted price (per-period units) for a variety may undercut
    the no-trading-up optimum's price for it, at nodes where the transition to
    that variety is admissible. Slack: one grid step."""
    step = outcome.grid_step if grid_step is None else grid_step
    setting = outcome.setting
    violations = []
    for row in outcome.rows:
        for idx, variety in enumerate((State.A, State.B)):
            if not setting.graph.is_admissible(row.state, variety):
                continue
            if not row.profile.offered(variety):
                continue
            if not ntu_optimum.prices.offered(variety):
                continue
            if variety is row.state and not setting.graph.can_exit_to_outside(variety):
                continue  # captured occupants pay zero by the expropriation rule
            posted_pp = outcome.per_period_price(row, variety)
            floor = ntu_optimum.prices.price_of(variety)
            if posted_pp < floor - step - 1e-9:
                violations.append((row.signature, row.period, variety, posted_pp, floor))
    return not violations, violations


def profit_floor_check(
    outcome: EquilibriumOutcome, ntu_optimum: StaticOptimum, grid_step: float | None = None
) -> bool:
    step = outcome.grid_step if grid_step is None else grid_step
    setting = outcome.setting
    bound = ntu_optimum.profit * setting.weight(0)
    return outcome.profit >= bound - step * setting.weight(0) - 1e-9


def exhaustion_time(outcome: EquilibriumOutcome) -> int | None:
    """First on-path period whose period-start occupancy leaves no node with a
    trading-up opportunity; None if none within the horizon."""
    return outcome.exhaustion_period


def full_tradeup_threshold(
    v_low_i: float,
    v_low_j: float,
    lam: float,
    phi: float,
    delta: float,
    t: int,
    T: int,
) -> float:
    """Surplus-spread threshold below which trading up all remaining types at
    once dominates continued skimming.

    ``lam`` in (0,1) bounds the share of the top value extractable early;
    ``phi`` in [0,1] is the share optimally traded up to the second variety.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError("lam must lie in (0,1)")
    if not (0.0 <= phi <= 1.0):
        raise ValueError("phi must lie in [0,1]")
    weight = horizon_weight(delta, t, T)
    denom = weight - 1.0 + lam
    if denom <= 0.0:
        raise ValueError("degenerate horizon: weight - 1 + lam must be positive")
    return ((1.0 - lam) * v_low_i + phi * weight * (v_low_j - v_low_i)) / denom


# ---------------------------------------------------------------------------
# Bellman / rationality invariants


def bellman_residual(outcome: EquilibriumOutcome) -> float:
    """Max absolute gap between each node's value and its re-derivation from
    receipts plus discounted child values."""
    setting = outcome.setting
    atoms = outcome.atoms
    worst = 0.0

    def visit(node: SolvedNode):
        nonlocal worst
        receipts = 0.0
        for pos, idx in enumerate(node.atoms):
            choice = _STATE_OF[int(node.choice_codes[pos])]
            receipts += atoms[idx].mass * node.profile.price_of(choice)
        cont = sum(child.value for child in node.children.values())
        worst = max(worst, abs(node.value - (receipts + setting.delta * cont)))
        for child in node.children.values():
            visit(child)

    visit(outcome.root)
    return worst


def consumer_rationality_check(outcome: EquilibriumOutcome, tol: float = 1e-9) -> list:
    """Each atom's realized utility must be nonnegative and match its best
    deviation value against the solved tree."""
    setting = outcome.setting
    atoms = outcome.atoms
    delta = setting.delta
    paths = realized_paths(outcome.root)
    violations = []
    for idx, steps in paths.items():
        u = sum(
            delta**k * (atoms[idx].value_of(s) - price) for k, (s, price) in enumerate(steps)
        )
        if u < -tol:
            violations.append((idx, "negative utility", u))
        best = outcome.root.dev[idx]
        if u < best - tol:
            violations.append((idx, "profitable deviation", best - u))
    return violations


# ---------------------------------------------------------------------------
# Repeated-monopoly verification


@dataclass(frozen=True)
class MonopolyVerification:
    ok: bool
    detail: str
    plan_profit: float
    monopoly: StaticOptimum


def verify_monopoly_pbe(
    setting: Setting,
    grid_spec: PriceGridSpec | None = None,
    tie_break: TieBreak = TieBreak.DEFAULT,
    budget: int = 500_000,
) -> MonopolyVerification:
    """Constructs the repeated-monopoly strategy profile (per-period monopoly
    price for exitable varieties, horizon-weighted at first sale for the
    rest), then checks that myopic consumer play is a best response and that
    no one-shot price deviation on the grid raises the seller's value."""
    spec = grid_spec or PriceGridSpec()
    pm = monopoly_price(setting, spec, tie_break)

    def plan(t, s, atom_indices):
        return pm.prices.p_a, pm.prices.p_b

    outcome, solver = simulate_plan(setting, plan, spec, budget=budget, tie_break=tie_break)

    # (a) realized behavior is the static-monopoly behavior, repeated.
    from .static_game import choice_codes as static_codes

    va = np.array([a.v_a for a in outcome.atoms])
    vb = np.array([a.v_b for a in outcome.atoms])
    myopic = static_codes(va, vb, pm.prices, setting, setting.initial_state, tie_break=tie_break)
    root = outcome.root
    for pos, idx in enumerate(root.atoms):
        if int(root.choice_codes[pos]) != int(myopic[idx]):
            return MonopolyVerification(
                False,
                f"atom {idx} deviates from the static-monopoly choice at the root",
                outcome.profit,
                pm,
            )

    # (b) deviation utilities: each atom's realized value equals its best
    # response against the plan tree.
    for viol in consumer_rationality_check(outcome):
        return MonopolyVerification(False, f"consumer best response fails: {viol}", outcome.profit, pm)

    # (c) no profitable one-shot seller deviation at any on-path node.
    def scan(node) -> str | None:
        aset = solver.sets.intern(np.array(node.atoms, dtype=np.int64))
        for profile in solver.candidate_profiles(node.t, node.state):
            resp = solver._respond(node.t, node.state, aset, profile)
            if resp is None:
                continue
            value = resp[2]
            if value > node.value + 1e-9:
                return (
                    f"one-shot deviation to ({profile.p_a}, {profile.p_b}) at period "
                    f"{node.t} state {node.state.value} gains {value - node.value:.3e}"
                )
        for child in node.children.values():
            found = scan(child)
            if found:
                return found
        return None

    found = scan(outcome.root)
    if found:
        return MonopolyVerification(False, found, outcome.profit, pm)
    return MonopolyVerification(True, "monopoly strategies form an equilibrium on the grid", outcome.profit, pm)


def constant_price_exhausts(
    setting: Setting,
    prices: PriceProfile,
    grid_spec: PriceGridSpec | None = None,
    tie_break: TieBreak = TieBreak.DEFAULT,
    budget: int = 500_000,
) -> bool:
    """Posting a no-trading-up profile at every history must yield a consumer
    best response under which no on-path node ever has a trading-up
    opportunity after the first period."""

    def plan(t, s, atom_indices):
        return prices.p_a, prices.p_b

    outcome, _ = simulate_plan(setting, plan, grid_spec, budget=budget, tie_break=tie_break)
    return all(m <= 0.0 for m in outcome.residual_tuo_by_period[1:])
