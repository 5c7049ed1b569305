"""Generalized joint replenishment: an average-cost semi-MDP solved by cut generation.

Items are consumed at deterministic rates under a shared replenishment
capacity; the state holds inventory levels with at least one item stocked
out, and the time to the next decision is the first future stockout.  The
bias function is approximated by an affine term plus random stump bases, the
resulting linear program is solved by constraint generation, and policies
come from a K-step lookahead searched over enumerated replenishment supports
and action grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from ralp.alp import LpModel, SolverBackend, TAG_SELF_GUIDING, TAG_STANDARD
from ralp.bases import BasisSet, DEFAULT_STUMP_EPS, features
from ralp.mdp import InfeasiblePairError, split_rng

_PAIR_STREAM = 31
_GUIDE_STREAM = 32

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class GjrParams:
    usage_rates: np.ndarray  # per-item consumption per unit time
    s_bar: np.ndarray  # per-item inventory caps
    a_bar: float  # shared replenishment capacity
    fixed_cost: float  # charged at every replenishment epoch
    item_fixed_costs: np.ndarray  # extra fixed cost per replenished item
    holding: np.ndarray  # per-item holding cost rates (zero on catalog instances)

    def __post_init__(self):
        for f in ("usage_rates", "s_bar", "item_fixed_costs", "holding"):
            arr = np.asarray(getattr(self, f), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)
        if self.num_items < 2:
            raise ValueError("need at least two items")
        if np.any(self.usage_rates <= 0) or np.any(self.s_bar <= 0):
            raise ValueError("usage rates and inventory caps must be positive")
        if self.a_bar > self.s_bar.sum() + FEAS_TOL:
            raise ValueError("capacity exceeds total storage")

    @property
    def num_items(self) -> int:
        return len(self.usage_rates)

    def to_json(self) -> str:
        doc = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "GjrParams":
        doc = json.loads(text)
        return GjrParams(
            usage_rates=np.array(doc["usage_rates"]),
            s_bar=np.array(doc["s_bar"]),
            a_bar=float(doc["a_bar"]),
            fixed_cost=float(doc["fixed_cost"]),
            item_fixed_costs=np.array(doc["item_fixed_costs"]),
            holding=np.array(doc["holding"]),
        )


_SCHEMES = ("random", "constant", "discrete")
_Z_CHOICES = (50, 60, 67, 75, 80, 100)


def gjr_instance(
    num_items: int,
    scheme: str,
    z_pct: int,
    rng: np.random.Generator,
    usage_rates=None,
    u=None,
    alpha=None,
    item_fixed_costs=None,
) -> GjrParams:
    """Generate an instance; keyword overrides pin individual random draws.

    Storage caps follow the named scheme from two per-item uniforms u_j in
    [0,1] and alpha_j in {2,4,8}: "random" uses 10*rate_j*u_j + rate_j,
    "constant" gives every item sum_k rate_k (u_k + 1/J), "discrete" scales
    that sum by alpha_j.  Capacity is the sum of the z% smallest caps.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"scheme must be one of {_SCHEMES}, got {scheme!r}")
    if z_pct not in _Z_CHOICES:
        raise ValueError(f"z must be one of {_Z_CHOICES}, got {z_pct}")
    j = num_items
    rates = np.asarray(usage_rates, dtype=float) if usage_rates is not None else rng.uniform(0.0, 10.0, j)
    if usage_rates is None:
        rates = np.maximum(rates, 1e-3)  # rates must stay positive
    u = np.asarray(u, dtype=float) if u is not None else rng.uniform(0.0, 1.0, j)
    alpha = np.asarray(alpha, dtype=float) if alpha is not None else rng.choice([2.0, 4.0, 8.0], j)
    base = float(np.sum(rates * (u + 1.0 / j)))
    if scheme == "random":
        s_bar = 10.0 * rates * u + rates
    elif scheme == "constant":
        s_bar = np.full(j, base)
    else:
        s_bar = alpha * base
    count = int(round(z_pct * j / 100.0))
    a_bar = float(np.sort(s_bar)[:count].sum())
    c2 = (
        np.asarray(item_fixed_costs, dtype=float)
        if item_fixed_costs is not None
        else rng.uniform(0.0, 60.0, j)
    )
    return GjrParams(
        usage_rates=rates,
        s_bar=s_bar,
        a_bar=a_bar,
        fixed_cost=100.0,
        item_fixed_costs=c2,
        holding=np.zeros(j),
    )


def is_feasible_action(p: GjrParams, s, a, require_positive_time: bool = True) -> bool:
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(a < -FEAS_TOL) or np.any(s + a > p.s_bar + FEAS_TOL) or a.sum() > p.a_bar + FEAS_TOL:
        return False
    if not np.any(a > FEAS_TOL):
        return False  # an epoch must replenish something
    if require_positive_time and np.any(s + a <= FEAS_TOL):
        return False  # stocked-out items must be covered or time stalls
    return True


def gjr_step(p: GjrParams, s, a) -> tuple[float, np.ndarray]:
    """Transition time min_j (s_j + a_j) / rate_j and the post-consumption state."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if not is_feasible_action(p, s, a):
        raise InfeasiblePairError(f"action {a} infeasible at state {s}")
    t = float(np.min((s + a) / p.usage_rates))
    nxt = s + a - t * p.usage_rates
    nxt = np.maximum(nxt, 0.0)  # exact zero at the argmin, guard float dust
    return t, nxt


def gjr_cost(p: GjrParams, s, a) -> float:
    """Fixed cost of the replenishment set plus the holding term."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    if not is_feasible_action(p, s, a, require_positive_time=False):
        raise InfeasiblePairError(f"action {a} infeasible at state {s}")
    supp = a > FEAS_TOL
    holding = np.sum((2.0 * s * a + a**2) * p.holding / (2.0 * p.usage_rates))
    return float(p.fixed_cost + p.item_fixed_costs[supp].sum() + holding)


def _cost_batch(p: GjrParams, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    supp = a > FEAS_TOL
    holding = np.sum((2.0 * s * a + a**2) * p.holding / (2.0 * p.usage_rates), axis=-1)
    return p.fixed_cost + supp @ p.item_fixed_costs + holding


def _time_batch(p: GjrParams, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.min((s + a) / p.usage_rates, axis=-1)


@dataclass(frozen=True)
class BiasApprox:
    """Solution of the average-cost model: eta(rates) = eta_hat + beta1 . rates."""

    eta_hat: float
    intercept: float
    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        for f in ("beta1", "beta2"):
            arr = np.asarray(getattr(self, f), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)

    def eta(self, usage_rates: np.ndarray) -> float:
        return float(self.eta_hat + self.beta1 @ usage_rates)

    def bias(self, bases: BasisSet, states: np.ndarray, eps: float = DEFAULT_STUMP_EPS) -> np.ndarray:
        """u(s) = intercept - beta1 . s - beta2 . phi(s)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return self.intercept - states @ self.beta1 - features(bases, states, eps) @ self.beta2


def build_avg_alp(
    p: GjrParams,
    bases: BasisSet,
    constraint_pairs: list[tuple[np.ndarray, np.ndarray]],
    prev: Optional[BiasApprox] = None,
    guide_states: Optional[np.ndarray] = None,
    eps: float = DEFAULT_STUMP_EPS,
) -> LpModel:
    """LP over (eta_hat, intercept, beta1, beta2) maximizing eta_hat + beta1 . rates.

    Standard rows bound eta_hat*T + beta1 . a + beta2 . (phi(s') - phi(s)) by
    c(s, a); with a previous solution, each guide state contributes a row
    forcing the new bias function to dominate the old one there.
    """
    if not constraint_pairs:
        raise ValueError("need at least one constraint pair")
    j = p.num_items
    n_b = len(bases)
    num_vars = 2 + j + n_b
    states = np.stack([np.asarray(s, dtype=float) for s, _ in constraint_pairs])
    actions = np.stack([np.asarray(a, dtype=float) for _, a in constraint_pairs])
    times = _time_batch(p, states, actions)
    nxt = states + actions - times[:, None] * p.usage_rates
    dphi = features(bases, nxt, eps) - features(bases, states, eps)
    rows = np.zeros((len(states), num_vars))
    rows[:, 0] = times
    rows[:, 2 : 2 + j] = actions
    rows[:, 2 + j :] = dphi
    rhs = _cost_batch(p, states, actions)
    tags = [TAG_STANDARD] * len(states)

    if prev is not None and guide_states is not None and len(guide_states) > 0:
        guide_states = np.atleast_2d(np.asarray(guide_states, dtype=float))
        if len(prev.beta2) > n_b:
            raise ValueError("previous solution uses more bases than the current set")
        prev_bias = prev.bias(bases.prefix(len(prev.beta2)), guide_states, eps)
        g_rows = np.zeros((len(guide_states), num_vars))
        g_rows[:, 1] = -1.0
        g_rows[:, 2 : 2 + j] = guide_states
        g_rows[:, 2 + j :] = features(bases, guide_states, eps)
        rows = np.vstack([rows, g_rows])
        rhs = np.concatenate([rhs, -prev_bias])
        tags += [TAG_SELF_GUIDING] * len(guide_states)

    objective = np.zeros(num_vars)
    objective[0] = 1.0
    objective[2 : 2 + j] = p.usage_rates
    return LpModel(objective=objective, rows=rows, rhs=rhs, tags=tuple(tags))


def _unpack(p: GjrParams, bases: BasisSet, x: np.ndarray) -> BiasApprox:
    j = p.num_items
    return BiasApprox(eta_hat=float(x[0]), intercept=float(x[1]), beta1=x[2 : 2 + j], beta2=x[2 + j :])


@dataclass(frozen=True)
class SearchPlan:
    """Grid-and-refine search used by the separation and lookahead problems."""

    grid_per_dim: int = 50
    refine_sweeps: int = 3
    beam_width: int = 128
    action_grid: int = 21  # lookahead grid points per action dimension

    def __post_init__(self):
        if self.grid_per_dim < 2 or self.action_grid < 2:
            raise ValueError("grids need at least two points")


@dataclass(frozen=True)
class SeparationResult:
    state: np.ndarray
    action: np.ndarray
    slack: float
    status: str  # "violated" | "feasible"


def sep_tol(p: GjrParams) -> float:
    return 1e-6 * (1.0 + abs(p.fixed_cost))


def constraint_slack(
    p: GjrParams,
    bases: BasisSet,
    sol: BiasApprox,
    states: np.ndarray,
    actions: np.ndarray,
    eps: float = DEFAULT_STUMP_EPS,
) -> np.ndarray:
    """c(s,a) - eta_hat T - beta1 . a - beta2 . (phi(s') - phi(s)) per row."""
    states = np.atleast_2d(states)
    actions = np.atleast_2d(actions)
    times = _time_batch(p, states, actions)
    nxt = states + actions - times[:, None] * p.usage_rates
    dphi = features(bases, nxt, eps) - features(bases, states, eps)
    return (
        _cost_batch(p, states, actions)
        - sol.eta_hat * times
        - actions @ sol.beta1
        - dphi @ sol.beta2
    )


def _branch_candidates(p: GjrParams, face: int, support: tuple[int, ...], g: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid points for one (stocked-out item, replenishment support) branch."""
    j = p.num_items
    state_axes = []
    for k in range(j):
        state_axes.append(np.array([0.0]) if k == face else np.linspace(0.0, p.s_bar[k], g))
    action_axes = []
    for k in range(j):
        if k in support:
            action_axes.append(np.linspace(0.0, min(p.s_bar[k], p.a_bar), g))
        else:
            action_axes.append(np.array([0.0]))
    mesh = np.meshgrid(*state_axes, *action_axes, indexing="ij")
    flat = [m.ravel() for m in mesh]
    states = np.stack(flat[:j], axis=1)
    actions = np.stack(flat[j:], axis=1)
    return states, actions


def _feasible_mask(p: GjrParams, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    ok = np.all(states + actions <= p.s_bar + FEAS_TOL, axis=1)
    ok &= actions.sum(axis=1) <= p.a_bar + FEAS_TOL
    ok &= np.any(actions > FEAS_TOL, axis=1)
    ok &= np.all(states + actions > FEAS_TOL, axis=1)  # positive transition time
    return ok


def _refine_point(p, bases, sol, state, action, face, eps, sweeps) -> tuple[np.ndarray, np.ndarray, float]:
    """Coordinate descent on the slack from a grid point, staying in the branch."""
    s = state.copy()
    a = action.copy()
    best = float(constraint_slack(p, bases, sol, s[None, :], a[None, :], eps)[0])
    j = p.num_items
    for _ in range(sweeps):
        improved = False
        for k in range(j):
            if k != face:  # state coordinate
                def f_s(x, k=k):
                    s2 = s.copy()
                    s2[k] = x
                    if not _feasible_mask(p, s2[None, :], a[None, :])[0]:
                        return best + 1.0
                    return float(constraint_slack(p, bases, sol, s2[None, :], a[None, :], eps)[0])

                res = minimize_scalar(f_s, bounds=(0.0, p.s_bar[k]), method="bounded")
                if res.fun < best - 1e-12:
                    best, improved = float(res.fun), True
                    s[k] = float(res.x)
            hi = min(p.s_bar[k] - s[k], p.a_bar - (a.sum() - a[k]))
            if hi <= 0:
                continue

            def f_a(x, k=k):
                a2 = a.copy()
                a2[k] = x
                if not _feasible_mask(p, s[None, :], a2[None, :])[0]:
                    return best + 1.0
                return float(constraint_slack(p, bases, sol, s[None, :], a2[None, :], eps)[0])

            res = minimize_scalar(f_a, bounds=(0.0, hi), method="bounded")
            if res.fun < best - 1e-12:
                best, improved = float(res.fun), True
                a[k] = float(res.x)
        if not improved:
            break
    return s, a, best


def separate(
    p: GjrParams,
    bases: BasisSet,
    sol: BiasApprox,
    search: SearchPlan = SearchPlan(),
    eps: float = DEFAULT_STUMP_EPS,
) -> SeparationResult:
    """Most violated constraint found by support enumeration + grid + refinement.

    Branches pair a stocked-out item (state face) with a replenishment
    support; an exact mixed-integer search can be plugged in behind the same
    result type for larger item counts.
    """
    j = p.num_items
    supports = [c for r in range(1, j + 1) for c in combinations(range(j), r)]
    best: Optional[tuple[np.ndarray, np.ndarray, float]] = None
    for face in range(j):
        for support in supports:
            if face not in support:
                continue  # the stocked-out item must be replenished for time to advance
            states, actions = _branch_candidates(p, face, support, search.grid_per_dim)
            mask = _feasible_mask(p, states, actions)
            if not mask.any():
                continue
            states, actions = states[mask], actions[mask]
            slacks = constraint_slack(p, bases, sol, states, actions, eps)
            idx = int(np.argmin(slacks))
            s_r, a_r, v_r = _refine_point(
                p, bases, sol, states[idx], actions[idx], face, eps, search.refine_sweeps
            )
            if best is None or v_r < best[2]:
                best = (s_r, a_r, v_r)
    assert best is not None
    state, action, slack = best
    status = "violated" if slack < -sep_tol(p) else "feasible"
    return SeparationResult(state=state, action=action, slack=slack, status=status)


def sample_gjr_pairs(p: GjrParams, n: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniform feasible pairs: random stockout face, state in the box, scaled action."""
    pairs = []
    j = p.num_items
    while len(pairs) < n:
        s = rng.uniform(0.0, p.s_bar)
        s[rng.integers(j)] = 0.0
        a = rng.uniform(0.0, p.s_bar - s)
        total = a.sum()
        if total > p.a_bar:
            a *= rng.uniform(0.0, 1.0) * p.a_bar / total
        if is_feasible_action(p, s, a):
            pairs.append((s, a))
    return pairs


def sample_gjr_states(p: GjrParams, n: int, rng: np.random.Generator) -> np.ndarray:
    states = np.empty((n, p.num_items))
    for i in range(n):
        s = rng.uniform(0.0, p.s_bar)
        s[rng.integers(p.num_items)] = 0.0
        states[i] = s
    return states


class ConstraintGenerationError(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass
class CutLoopResult:
    solution: BiasApprox
    eta_lambda: float  # lower bound on the optimal average cost
    trace: list[tuple[int, float, float]]  # (iteration, LP optimum, min slack)
    pairs: list[tuple[np.ndarray, np.ndarray]]


def constraint_generation(
    p: GjrParams,
    bases: BasisSet,
    init_pairs: list[tuple[np.ndarray, np.ndarray]],
    backend: SolverBackend,
    prev: Optional[BiasApprox] = None,
    guide_states: Optional[np.ndarray] = None,
    search: SearchPlan = SearchPlan(),
    max_cuts: int = 500,
    eps: float = DEFAULT_STUMP_EPS,
    seed: int = 0,
) -> CutLoopResult:
    """Solve, separate, append the violated pair, repeat until feasible.

    Unbounded intermediate programs pick up extra sampled pairs until the
    optimum is finite.  Self-guiding rows (when ``prev`` is given) are only
    enforced at the guide states; they are never separated since their
    violation does not threaten the lower bound.
    """
    if not init_pairs:
        raise ValueError("need at least one initial constraint pair")
    pairs = list(init_pairs)
    rng = split_rng(seed, _PAIR_STREAM)
    trace: list[tuple[int, float, float]] = []
    for iteration in range(max_cuts):
        model = build_avg_alp(p, bases, pairs, prev, guide_states, eps)
        lp_sol = backend.solve(model)
        while lp_sol.status == "unbounded":
            pairs.extend(sample_gjr_pairs(p, 200, rng))
            model = build_avg_alp(p, bases, pairs, prev, guide_states, eps)
            lp_sol = backend.solve(model)
        if lp_sol.status != "optimal":
            raise ConstraintGenerationError(f"LP status {lp_sol.status} at cut {iteration}", trace)
        sol = _unpack(p, bases, lp_sol.x)
        sep = separate(p, bases, sol, search, eps)
        trace.append((iteration, float(lp_sol.objective), float(sep.slack)))
        if sep.status == "feasible":
            return CutLoopResult(
                solution=sol, eta_lambda=sol.eta(p.usage_rates), trace=trace, pairs=pairs
            )
        pairs.append((sep.state, sep.action))
        if guide_states is not None:
            guide_states = np.vstack([guide_states, sep.state[None, :]])
    raise ConstraintGenerationError(f"no convergence within {max_cuts} cuts", trace)


def _expand_actions(p: GjrParams, states: np.ndarray, fractions: np.ndarray):
    """All grid actions for every state row: fraction grid scaled by per-state caps."""
    caps = np.minimum(p.s_bar - states, p.a_bar)  # (m, J)
    caps = np.maximum(caps, 0.0)
    actions = fractions[None, :, :] * caps[:, None, :]  # (m, G, J)
    m, g, j = actions.shape
    s_rep = np.repeat(states, g, axis=0)
    a_flat = actions.reshape(m * g, j)
    mask = _feasible_mask(p, s_rep, a_flat)
    return s_rep, a_flat, mask


def _fraction_grid(j: int, points: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, points)] * j
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)  # (points^J, J)


def k_step_greedy(
    p: GjrParams,
    bases: BasisSet,
    sol: BiasApprox,
    s,
    k: int,
    search: SearchPlan = SearchPlan(),
    eps: float = DEFAULT_STUMP_EPS,
) -> np.ndarray:
    """First action of the K-step lookahead minimizing sum(c - eta T) + u(s_K).

    The per-step action grid places ``search.action_grid`` points per item on
    [0, min(cap - s_j, a_bar)]; plans are kept in a beam of width
    ``search.beam_width`` (wide enough beams make the search exhaustive).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(s, dtype=float)
    eta = sol.eta(p.usage_rates)
    fractions = _fraction_grid(p.num_items, search.action_grid)
    states = s[None, :]
    costs = np.zeros(1)
    firsts: Optional[np.ndarray] = None
    for step in range(k):
        s_rep, a_flat, mask = _expand_actions(p, states, fractions)
        if not mask.any():
            raise InfeasiblePairError(f"no feasible lookahead action at {states}")
        g = len(fractions)
        cost_rep = np.repeat(costs, g)
        first_rep = np.repeat(firsts, g, axis=0) if firsts is not None else a_flat
        s_rep, a_flat, cost_rep, first_rep = (
            s_rep[mask],
            a_flat[mask],
            cost_rep[mask],
            first_rep[mask],
        )
        times = _time_batch(p, s_rep, a_flat)
        stage = _cost_batch(p, s_rep, a_flat) - eta * times
        costs = cost_rep + stage
        states = np.maximum(s_rep + a_flat - times[:, None] * p.usage_rates, 0.0)
        firsts = first_rep
        if step < k - 1 and len(costs) > search.beam_width:
            keep = np.argpartition(costs, search.beam_width)[: search.beam_width]
            keep = keep[np.argsort(costs[keep], kind="stable")]
            costs, states, firsts = costs[keep], states[keep], firsts[keep]
    total = costs + sol.bias(bases, states, eps)
    return firsts[int(np.argmin(total))]


def simulate_average_cost(
    p: GjrParams,
    bases: BasisSet,
    sol: BiasApprox,
    stages: int,
    k: int,
    search: SearchPlan = SearchPlan(),
    start=None,
    eps: float = DEFAULT_STUMP_EPS,
) -> float:
    """Long-run cost per unit time of the K-step greedy policy from a fixed start."""
    if stages < 1:
        raise ValueError("stages must be >= 1")
    s = np.zeros(p.num_items) if start is None else np.asarray(start, dtype=float)
    total_cost = 0.0
    total_time = 0.0
    # deterministic dynamics revisit states exactly, so lookahead results are memoizable
    action_cache: dict[bytes, np.ndarray] = {}
    for _ in range(stages):
        key = s.tobytes()
        a = action_cache.get(key)
        if a is None:
            a = k_step_greedy(p, bases, sol, s, k, search, eps)
            action_cache[key] = a
        total_cost += gjr_cost(p, s, a)
        t, s = gjr_step(p, s, a)
        total_time += t
    return total_cost / total_time
