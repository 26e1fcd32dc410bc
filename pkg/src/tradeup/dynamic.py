"""Backward-induction solver for the discretized dynamic pricing game.

The payoff-relevant state is a public-history consumer group: the period, the
state the group occupies, and the set of surviving type atoms (the seller's
belief). Groups evolve independently, so the game tree is memoized on that
key. Consumer behavior at a node is a pure best-response fixed point against
the continuation values of the induced child groups; a unilateral deviator is
measure zero, so it faces each child subtree as given.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .model import Setting, State, STATES, TypeAtom, VARIETIES
from .static_game import (
    PriceGridSpec,
    PriceProfile,
    TieBreak,
    pinned_argmax,
    tie_ranks,
)

_CODE_OF = {State.A: 0, State.B: 1, State.O: 2}
_STATE_OF = {0: State.A, 1: State.B, 2: State.O}


class BudgetExceededError(RuntimeError):
    def __init__(self, nodes: int):
        super().__init__(f"solver budget exceeded after {nodes} node solves")
        self.nodes = nodes


class ConsumerFixedPointError(RuntimeError):
    """No candidate price at a node admits a pure consumer fixed point."""

    def __init__(self, t: int, state: State, n_atoms: int):
        super().__init__(
            f"no pure consumer best-response fixed point at period {t}, "
            f"state {state.value}, {n_atoms} atoms"
        )
        self.period = t
        self.state = state


class _AtomSet:
    """Interned, sorted atom-index set; identity-keyed for cheap memoization.
    Caches the per-set value/mass slices used in the response inner loop."""

    __slots__ = ("uid", "arr", "va", "vb", "mass")

    def __init__(self, uid: int, arr: np.ndarray, va: np.ndarray, vb: np.ndarray, mass: np.ndarray):
        self.uid = uid
        self.arr = arr
        self.va = va[arr]
        self.vb = vb[arr]
        self.mass = mass[arr]

    def __len__(self) -> int:
        return len(self.arr)


class _SetTable:
    def __init__(self, va: np.ndarray, vb: np.ndarray, mass: np.ndarray):
        self._by_key: dict = {}
        self._va = va
        self._vb = vb
        self._mass = mass

    def intern(self, arr: np.ndarray) -> _AtomSet:
        key = arr.tobytes()
        hit = self._by_key.get(key)
        if hit is None:
            hit = _AtomSet(len(self._by_key), np.ascontiguousarray(arr), self._va, self._vb, self._mass)
            self._by_key[key] = hit
        return hit


@dataclass
class SolvedNode:
    """One solved consumer-group node of the game tree.

    ``branch`` holds the continuation node for every accessible choice
    (including off-path ones, whose belief is the full pre-deviation group);
    ``children`` restricts to realized choices. ``dev`` is the value a
    measure-zero consumer of each universe type obtains by best-responding
    against this subtree.
    """

    t: int
    state: State
    atoms: tuple
    profile: PriceProfile
    choice_codes: np.ndarray
    branch: dict
    children: dict
    value: float
    dev: np.ndarray
    skipped_prices: tuple = ()

    def choice_of(self, atom_index: int) -> State:
        pos = self.atoms.index(atom_index)
        return _STATE_OF[int(self.choice_codes[pos])]


@dataclass(frozen=True)
class PricePathRow:
    period: int
    signature: str
    state: State
    profile: PriceProfile
    mass_by_choice: dict
    traded_up_mass: float
    tuo_mass: float
    group_mass: float


@dataclass
class EquilibriumOutcome:
    """Solved tree plus the on-path summary used by reports and checks."""

    setting: Setting
    atoms: tuple
    root: SolvedNode
    rows: tuple
    profit: float
    exhaustion_period: int | None
    residual_tuo_by_period: tuple
    grid_step: float
    diagnostics: dict

    def nodes_at(self, period: int):
        return [r for r in self.rows if r.period == period]

    def node_by_signature(self, signature: str) -> SolvedNode:
        node = self.root
        sig = self.root.state.value
        for ch in signature[len(sig):]:
            node = node.children[State(ch)]
        return node

    def per_period_price(self, row: PricePathRow, variety: State) -> float:
        """Posted price expressed in per-period units."""
        return row.profile.price_of(variety) / self.setting.posting_scale(variety, row.period)


def merged_universe(setting: Setting) -> tuple:
    """Atoms projected onto the payoff-relevant value dimensions (a variety
    that can never be occupied contributes nothing) and merged."""
    occupiable = setting.graph.occupiable_varieties(setting.initial_state)
    keep_a = State.A in occupiable
    keep_b = State.B in occupiable
    agg: dict = {}
    for atom in setting.population:
        key = (atom.v_a if keep_a else 0.0, atom.v_b if keep_b else 0.0)
        agg[key] = agg.get(key, 0.0) + atom.mass
    return tuple(TypeAtom(va, vb, m) for (va, vb), m in sorted(agg.items()))


class Solver:
    """Memoized backward induction over (period, state, atom set) nodes.

    ``policy`` pins the seller to a fixed plan: a callable
    (t, state, atom_indices) -> per-period (p_a, p_b); None searches the grid.
    """

    def __init__(
        self,
        setting: Setting,
        grid_spec: PriceGridSpec | None = None,
        budget: int = 500_000,
        tie_break: TieBreak = TieBreak.DEFAULT,
        policy: Callable | None = None,
        exhaustive_limit: int = 81,
        iteration_cap: int = 60,
        multi_start_limit: int = 400,
    ):
        self.setting = setting
        self.spec = grid_spec or PriceGridSpec()
        self.budget = budget
        self.tie_break = tie_break
        self.policy = policy
        self.exhaustive_limit = exhaustive_limit
        self.iteration_cap = iteration_cap
        self.multi_start_limit = multi_start_limit

        self.atoms = merged_universe(setting)
        self.va = np.array([a.v_a for a in self.atoms])
        self.vb = np.array([a.v_b for a in self.atoms])
        self.mass = np.array([a.mass for a in self.atoms])
        self.delta = setting.delta
        self.last = setting.last_period

        self.sets = _SetTable(self.va, self.vb, self.mass)
        self.memo: dict = {}
        self.solve_count = 0
        self.skipped_total = 0
        self._axis_cache: dict = {}
        self._candidate_cache: dict = {}
        self._captured_dev: dict = {}
        self._accessible = {s: setting.graph.accessible_from(s) for s in STATES}
        self._acc_codes = {s: [_CODE_OF[x] for x in self._accessible[s]] for s in STATES}

    # -- candidate prices ---------------------------------------------------

    def _axis_pp(self, idx: int) -> np.ndarray:
        """Per-period candidate prices for one variety, ascending."""
        if idx in self._axis_cache:
            return self._axis_cache[idx]
        pinned = self.setting.pinned_prices[idx]
        if pinned is not None:
            vals = np.array([float(pinned)])
        else:
            vals = self.spec.axis(self.setting.price_floor, self.setting.price_caps[idx], idx)
        self._axis_cache[idx] = vals
        return vals

    def candidate_profiles(self, t: int, s: State) -> list:
        hit = self._candidate_cache.get((t, s))
        if hit is not None:
            return hit
        graph = self.setting.graph
        accessible = self._accessible[s]
        slots = []
        offered = []
        for idx, variety in enumerate(VARIETIES):
            if variety not in accessible:
                slots.append(np.array([0.0]))
                offered.append(False)
            elif variety is s and not graph.can_exit_to_outside(variety):
                slots.append(np.array([0.0]))  # no expropriation of captured buyers
                offered.append(True)
            else:
                scale = self.setting.posting_scale(variety, t)
                slots.append(self._axis_pp(idx) * scale)
                offered.append(True)
        out = []
        for pa in slots[0][::-1]:
            for pb in slots[1][::-1]:
                out.append(
                    PriceProfile(float(pa), float(pb), offered_a=offered[0], offered_b=offered[1])
                )
        self._candidate_cache[(t, s)] = out
        return out

    def _plan_profile(self, t: int, s: State, aset: _AtomSet) -> PriceProfile:
        pa_pp, pb_pp = self.policy(t, s, tuple(int(i) for i in aset.arr))
        graph = self.setting.graph
        accessible = self._accessible[s]
        vals = []
        offered = []
        for idx, (variety, pp) in enumerate(zip(VARIETIES, (pa_pp, pb_pp))):
            if variety not in accessible:
                vals.append(0.0)
                offered.append(False)
            elif variety is s and not graph.can_exit_to_outside(variety):
                vals.append(0.0)
                offered.append(True)
            else:
                vals.append(float(pp) * self.setting.posting_scale(variety, t))
                offered.append(True)
        return PriceProfile(vals[0], vals[1], offered_a=offered[0], offered_b=offered[1])

    # -- consumer response --------------------------------------------------

    def _branch_for(self, t: int, s: State, aset: _AtomSet, assign: np.ndarray) -> dict:
        """Continuation node per accessible choice under a candidate
        assignment; empty choices get the full pre-deviation group."""
        branch = {}
        for x in self._accessible[s]:
            sel = aset.arr[assign == _CODE_OF[x]]
            child = self.sets.intern(sel) if len(sel) else aset
            branch[x] = self.node(t + 1, x, child)
        return branch

    def _utils(self, s: State, aset: _AtomSet, profile: PriceProfile, branch: dict | None) -> np.ndarray:
        utils = np.full((len(aset), 3), -np.inf)
        for x in self._accessible[s]:
            code = _CODE_OF[x]
            if x is State.A:
                base = aset.va - profile.p_a
            elif x is State.B:
                base = aset.vb - profile.p_b
            else:
                base = np.zeros(len(aset))
            if branch is not None:
                base = base + self.delta * branch[x].dev[aset.arr]
            utils[:, code] = base
        return utils

    def _respond(self, t: int, s: State, aset: _AtomSet, profile: PriceProfile):
        """Best-response fixed point for one candidate price profile.

        Returns (choice codes, branch, bellman value) or None when no pure
        fixed point exists.
        """
        ranks = tie_ranks(profile.p_a, profile.p_b, self.tie_break)
        accessible = self._accessible[s]
        acc_codes = self._acc_codes[s]
        n = len(aset)

        if len(accessible) == 1:
            codes = np.full(n, acc_codes[0])
            branch = {} if t == self.last else self._branch_for(t, s, aset, codes)
            return codes, branch, self._node_value(t, aset, profile, codes, branch)

        if t == self.last:
            codes = pinned_argmax(self._utils(s, aset, profile, None), ranks)
            return codes, {}, self._node_value(t, aset, profile, codes, {})

        if len(accessible) ** n <= self.exhaustive_limit:
            return self._respond_exhaustive(t, s, aset, profile, ranks, acc_codes)
        return self._respond_iterative(t, s, aset, profile, ranks, acc_codes)

    def _respond_exhaustive(self, t, s, aset, profile, ranks, acc_codes):
        best = None
        for combo in itertools.product(acc_codes, repeat=len(aset)):
            assign = np.array(combo)
            branch = self._branch_for(t, s, aset, assign)
            utils = self._utils(s, aset, profile, branch)
            if not np.array_equal(pinned_argmax(utils, ranks), assign):
                continue
            value = self._node_value(t, aset, profile, assign, branch)
            if best is None or value > best[2]:
                best = (assign, branch, value)
        return best

    def _respond_iterative(self, t, s, aset, profile, ranks, acc_codes):
        # Myopic start first; the constant-assignment rescues run only when it
        # fails to reach a fixed point.
        starts: list = [None]
        if len(aset) <= self.multi_start_limit:
            starts += [np.full(len(aset), c) for c in acc_codes]
        found: list = []
        seen_fp: set = set()
        for start in starts:
            if found and start is not None:
                break
            if start is None:
                assign = pinned_argmax(self._utils(s, aset, profile, None), ranks)
            else:
                assign = start
            seen_in_chain: set = set()
            for _ in range(self.iteration_cap):
                chain_key = assign.tobytes()
                if chain_key in seen_in_chain:
                    break  # cycle without a fixed point
                seen_in_chain.add(chain_key)
                branch = self._branch_for(t, s, aset, assign)
                utils = self._utils(s, aset, profile, branch)
                response = pinned_argmax(utils, ranks)
                if np.array_equal(response, assign):
                    if chain_key not in seen_fp:
                        seen_fp.add(chain_key)
                        value = self._node_value(t, aset, profile, assign, branch)
                        found.append((assign, branch, value))
                    break
                assign = response
        if not found:
            return None
        best = found[0]
        for cand in found[1:]:
            if cand[2] > best[2]:
                best = cand
        return best

    # -- node values ----------------------------------------------------------

    def _immediate(self, aset: _AtomSet, profile: PriceProfile, codes: np.ndarray) -> float:
        per_choice = np.array([profile.p_a, profile.p_b, 0.0])
        return float((aset.mass * per_choice[codes]).sum())

    def _node_value(self, t, aset, profile, codes, branch) -> float:
        value = self._immediate(aset, profile, codes)
        if t < self.last:
            for x, child in branch.items():
                if (codes == _CODE_OF[x]).any():
                    value += self.delta * child.value
        return value

    # -- solve ----------------------------------------------------------------

    def node(self, t: int, s: State, aset: _AtomSet) -> SolvedNode:
        key = (t, s.value, aset.uid)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.solve_count += 1
        if self.solve_count > self.budget:
            raise BudgetExceededError(self.solve_count)

        if self.policy is not None:
            candidates = [self._plan_profile(t, s, aset)]
        else:
            candidates = self.candidate_profiles(t, s)

        best = None
        skipped = []
        for profile in candidates:
            resp = self._respond(t, s, aset, profile)
            if resp is None:
                skipped.append(profile)
                continue
            codes, branch, value = resp
            if best is None or value > best[3]:
                best = (profile, codes, branch, value)
        if best is None:
            raise ConsumerFixedPointError(t, s, len(aset))
        self.skipped_total += len(skipped)

        profile, codes, branch, value = best
        children = {
            x: child for x, child in branch.items() if (codes == _CODE_OF[x]).any()
        }
        dev = self._dev_array(t, s, profile, branch)
        node = SolvedNode(
            t=t,
            state=s,
            atoms=tuple(int(i) for i in aset.arr),
            profile=profile,
            choice_codes=codes,
            branch=branch,
            children=children,
            value=value,
            dev=dev,
            skipped_prices=tuple(skipped),
        )
        self.memo[key] = node
        return node

    def _dev_array(self, t: int, s: State, profile: PriceProfile, branch: dict) -> np.ndarray:
        accessible = self._accessible[s]
        if len(accessible) == 1:
            # No-choice subtree: the deviation value is belief-independent.
            hit = self._captured_dev.get((t, s))
            if hit is not None:
                return hit
        best = np.full(len(self.atoms), -np.inf)
        for x in accessible:
            xa, xb = x.vec
            u = self.va * xa + self.vb * xb - profile.price_of(x)
            if t < self.last:
                u = u + self.delta * branch[x].dev
            best = np.maximum(best, u)
        if len(accessible) == 1:
            self._captured_dev[(t, s)] = best
        return best

    def solve(self) -> SolvedNode:
        root_set = self.sets.intern(np.arange(len(self.atoms), dtype=np.int64))
        return self.node(0, self.setting.initial_state, root_set)


# ---------------------------------------------------------------------------
# Outcome assembly


def tree_profit(root: SolvedNode, atoms: tuple, delta: float) -> float:
    """Profit re-derived by atom-level path summation (independent of the
    solver's Bellman accumulation)."""
    paths = realized_paths(root)
    total = 0.0
    for idx, steps in sorted(paths.items()):
        rho = sum(delta**k * price for k, (_, price) in enumerate(steps))
        total += atoms[idx].mass * rho
    return total


def realized_paths(node: SolvedNode) -> dict:
    """Per atom index: the realized [(state, paid price per period)] from this
    node onward."""
    out: dict = {idx: [] for idx in node.atoms}

    def walk(n: SolvedNode, members: Iterable[int]):
        members = list(members)
        member_pos = {idx: pos for pos, idx in enumerate(n.atoms)}
        by_choice: dict = {}
        for idx in members:
            choice = _STATE_OF[int(n.choice_codes[member_pos[idx]])]
            out[idx].append((choice, n.profile.price_of(choice)))
            by_choice.setdefault(choice, []).append(idx)
        for x, sub in by_choice.items():
            if x in n.children:
                walk(n.children[x], sub)

    walk(node, node.atoms)
    return out


def _tuo_mass(atoms: tuple, indices: Iterable[int], state: State, setting: Setting) -> float:
    mass = 0.0
    for idx in indices:
        atom = atoms[idx]
        for target in STATES:
            if target is state or not setting.graph.is_admissible(state, target):
                continue
            if atom.value_of(target) > atom.value_of(state):
                mass += atom.mass
                break
    return mass


def build_outcome(
    setting: Setting,
    atoms: tuple,
    root: SolvedNode,
    grid_step: float,
    diagnostics: dict | None = None,
) -> EquilibriumOutcome:
    rows = []
    residual = [0.0] * setting.horizon

    def walk(node: SolvedNode, signature: str):
        mass_by_choice = {s: 0.0 for s in STATES}
        traded_up = 0.0
        for pos, idx in enumerate(node.atoms):
            choice = _STATE_OF[int(node.choice_codes[pos])]
            mass_by_choice[choice] += atoms[idx].mass
            if atoms[idx].value_of(choice) > atoms[idx].value_of(node.state):
                traded_up += atoms[idx].mass
        tuo = _tuo_mass(atoms, node.atoms, node.state, setting)
        residual[node.t] += tuo
        rows.append(
            PricePathRow(
                period=node.t,
                signature=signature,
                state=node.state,
                profile=node.profile,
                mass_by_choice=mass_by_choice,
                traded_up_mass=traded_up,
                tuo_mass=tuo,
                group_mass=float(sum(atoms[i].mass for i in node.atoms)),
            )
        )
        for x in STATES:
            if x in node.children:
                walk(node.children[x], signature + x.value)

    walk(root, root.state.value)
    rows.sort(key=lambda r: (r.period, r.signature))

    exhaustion = None
    for t, m in enumerate(residual):
        if m <= 0.0:
            exhaustion = t
            break

    return EquilibriumOutcome(
        setting=setting,
        atoms=atoms,
        root=root,
        rows=tuple(rows),
        profit=tree_profit(root, atoms, setting.delta),
        exhaustion_period=exhaustion,
        residual_tuo_by_period=tuple(residual),
        grid_step=grid_step,
        diagnostics=diagnostics or {},
    )


def solve_pbe(
    setting: Setting,
    grid_spec: PriceGridSpec | None = None,
    budget: int = 500_000,
    tie_break: TieBreak = TieBreak.DEFAULT,
) -> EquilibriumOutcome:
    """Seller-optimal pure-strategy equilibrium of the discretized game."""
    spec = grid_spec or PriceGridSpec()
    solver = Solver(setting, spec, budget=budget, tie_break=tie_break)
    root = solver.solve()
    return build_outcome(
        setting,
        solver.atoms,
        root,
        spec.step,
        {"node_solves": solver.solve_count, "skipped_prices": solver.skipped_total},
    )


def simulate_plan(
    setting: Setting,
    plan: Callable,
    grid_spec: PriceGridSpec | None = None,
    budget: int = 500_000,
    tie_break: TieBreak = TieBreak.DEFAULT,
) -> tuple[EquilibriumOutcome, Solver]:
    """Consumer best responses against a pinned seller plan.

    ``plan(t, state, atom_indices)`` returns per-period (p_a, p_b); scaling,
    expropriation, and offer rules are applied by the solver.
    """
    spec = grid_spec or PriceGridSpec()
    solver = Solver(setting, spec, budget=budget, tie_break=tie_break, policy=plan)
    root = solver.solve()
    outcome = build_outcome(
        setting,
        solver.atoms,
        root,
        spec.step,
        {"node_solves": solver.solve_count, "skipped_prices": solver.skipped_total},
    )
    return outcome, solver
