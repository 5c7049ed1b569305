"""Greedy-policy extraction, Monte-Carlo policy cost, and visit frequencies.

The greedy policy minimizes the one-step lookahead cost over a uniform action
grid; its expectations reuse the instance's fixed noise sample set so that LP
construction and policy evaluation see identical dynamics.  Rollouts run on
per-replication PRNG streams and are merged by replication index, so results
are reproducible regardless of batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ralp.alp import VfaWeights, vfa_values
from ralp.bases import BasisSet, features
from ralp.mdp import (
    DiscountedMdp,
    batch_expected_costs,
    batch_next_states,
    noise_from_uniforms,
    paired_next_states,
    split_rng,
)
from ralp import toy as toy_mod

_ROLLOUT_STREAM = 101


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    replications: int
    action_grid: int
    rollout_seed: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.action_grid < 2:
            raise ValueError("action grid needs at least 2 points")


@dataclass(frozen=True)
class PolicyCostEstimate:
    mean: float
    stderr: float
    replications: int
    # gamma^horizon / (1 - gamma): multiply by a stage-cost bound to bound the
    # truncation error of the finite rollout.
    tail_weight: float


def default_horizon(gamma: float, tail: float = 1e-3) -> int:
    """Smallest H with gamma^H <= tail."""
    return int(math.ceil(math.log(tail) / math.log(gamma)))


def action_grid_points(mdp: DiscountedMdp, grid: int) -> np.ndarray:
    """Uniform grid over the action box, cartesian across dimensions, (G, d_a)."""
    axes = [np.linspace(mdp.action_lo[i], mdp.action_hi[i], grid) for i in range(mdp.dim_action)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _expected_next_vfa_split(
    mdp: DiscountedMdp,
    bases: BasisSet,
    w: VfaWeights,
    states: np.ndarray,
    grid_pts: np.ndarray,
) -> np.ndarray:
    """E[V(s') | s, a] for all states x grid actions via the angle-addition identity.

    Valid when one transition output coordinate carries the (scalar) action
    and the rest are action-independent: the noise expectation of cos/sin can
    then be reduced before expanding over the action grid.
    """
    from ralp.bases import fourier_angles, fourier_frequencies

    slot = mdp.action_output_slot
    a_ref = np.full((len(states), 1), mdp.action_lo[0])
    nxt_ref = batch_next_states(mdp, states, a_ref)  # (m, k, d_s)
    m, k, ds = nxt_ref.shape
    freqs = fourier_frequencies(bases)  # (N, d_s)
    w_slot = freqs[:, slot]
    u = fourier_angles(bases, nxt_ref.reshape(m * k, ds)) - w_slot * mdp.action_lo[0]
    weights = mdp.noise.weights
    cu = weights @ np.cos(u).reshape(m, k, len(bases))  # (m, N)
    su = weights @ np.sin(u).reshape(m, k, len(bases))
    v = np.outer(grid_pts[:, 0], w_slot)  # (g, N)
    return w.beta0 + cu @ (np.cos(v) * w.betas).T - su @ (np.sin(v) * w.betas).T


def _greedy_batch(
    mdp: DiscountedMdp,
    bases: BasisSet,
    w: VfaWeights,
    states: np.ndarray,
    grid_pts: np.ndarray,
) -> np.ndarray:
    """Greedy actions for each state row; ties go to the first (lexicographically
    smallest) grid point."""
    m, g = len(states), len(grid_pts)
    if (
        mdp.action_output_slot is not None
        and mdp.dim_action == 1
        and mdp.feasible is None
        and bases.kind == "fourier"
        and len(bases) > 0
    ):
        cont = _expected_next_vfa_split(mdp, bases, w, states, grid_pts)  # (m, g)
        s_rep = np.repeat(states, g, axis=0)
        a_rep = np.tile(grid_pts, (m, 1))
        costs = batch_expected_costs(mdp, s_rep, a_rep).reshape(m, g)
        q = costs + mdp.gamma * cont
        return grid_pts[np.argmin(q, axis=1)]
    s_rep = np.repeat(states, g, axis=0)
    a_rep = np.tile(grid_pts, (m, 1))
    if mdp.feasible is not None:
        feas = np.array([mdp.feasible(s_rep[i], a_rep[i]) for i in range(m * g)])
    else:
        feas = np.ones(m * g, dtype=bool)
    q = np.full(m * g, np.inf)
    if feas.any():
        nxt = batch_next_states(mdp, s_rep[feas], a_rep[feas])  # (f, k, d_s)
        f, k, ds = nxt.shape
        cont = vfa_values(bases, w, nxt.reshape(f * k, ds)).reshape(f, k) @ mdp.noise.weights
        q[feas] = batch_expected_costs(mdp, s_rep[feas], a_rep[feas]) + mdp.gamma * cont
    q = q.reshape(m, g)
    if np.isinf(q).all(axis=1).any():
        raise ValueError("no feasible grid action at some state")
    return grid_pts[np.argmin(q, axis=1)]


def greedy_action(mdp: DiscountedMdp, bases: BasisSet, w: VfaWeights, s, grid: int) -> np.ndarray:
    """Grid minimizer of c(s,a) + gamma E[V(s') | s,a]."""
    s = mdp.check_state(s)
    return _greedy_batch(mdp, bases, w, s[None, :], action_grid_points(mdp, grid))[0]


def _policy_fn(mdp, bases, w, grid_pts, policy: Optional[Callable]):
    if policy is not None:
        return policy
    return lambda states: _greedy_batch(mdp, bases, w, states, grid_pts)


def simulate_policy_cost(
    mdp: DiscountedMdp,
    bases: Optional[BasisSet],
    w: Optional[VfaWeights],
    sim: SimConfig,
    policy: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    dump_path=None,
) -> PolicyCostEstimate:
    """Mean discounted rollout cost from chi-sampled starts.

    Stage costs are the instance's (SAA-)expected immediate costs; randomness
    enters through realized transitions only.  ``policy`` maps a batch of
    states to actions and defaults to the greedy policy of ``(bases, w)``.
    ``dump_path`` writes the rollouts as a debugging CSV with one row per
    (replication, stage).
    """
    grid_pts = action_grid_points(mdp, sim.action_grid) if policy is None else None
    act = _policy_fn(mdp, bases, w, grid_pts, policy)
    reps = sim.replications
    rngs = [split_rng(sim.rollout_seed, _ROLLOUT_STREAM, r) for r in range(reps)]
    states = np.stack([mdp.initial_dist.sample(rngs[r]) for r in range(reps)])
    totals = np.zeros(reps)
    dump_rows = [] if dump_path is not None else None
    for t in range(sim.horizon):
        actions = np.atleast_2d(act(states))
        costs = batch_expected_costs(mdp, states, actions)
        totals += mdp.gamma**t * costs
        if dump_rows is not None:
            for r in range(reps):
                dump_rows.append((r, t, states[r], actions[r], costs[r]))
        xi = noise_from_uniforms(mdp, np.array([rngs[r].random() for r in range(reps)]))
        states = paired_next_states(mdp, states, actions, xi)
    if dump_rows is not None:
        _write_rollout_dump(dump_path, mdp, dump_rows)
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return PolicyCostEstimate(
        mean=mean,
        stderr=stderr,
        replications=reps,
        tail_weight=mdp.gamma**sim.horizon / (1.0 - mdp.gamma),
    )


def _write_rollout_dump(path, mdp: DiscountedMdp, rows) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header = (
            ["replication", "stage"]
            + [f"state_{i}" for i in range(mdp.dim_state)]
            + [f"action_{i}" for i in range(mdp.dim_action)]
            + ["cost"]
        )
        writer.writerow(header)
        for r, t, s, a, c in rows:
            writer.writerow([r, t, *(repr(float(x)) for x in s), *(repr(float(x)) for x in a), repr(float(c))])


def toy_constant_policy_cost(a_star: float) -> float:
    """Exact uniform-start cost of always playing ``a_star`` on the 1-D benchmark.

    From the two-point transition recursion: the cost-to-go at the action's
    fixed point is |a*-0.5|/(1-gamma); averaging the one-step recursion over
    the uniform start gives (1/4 + 0.9 gamma |a*-0.5|/(1-gamma)) / (1-0.1 gamma).
    """
    if not 0.0 <= a_star <= 1.0:
        raise ValueError(f"action {a_star} outside [0,1]")
    g = toy_mod.GAMMA
    stay = toy_mod.STAY_PROB
    dev = abs(a_star - toy_mod.TARGET)
    return (0.25 + (1.0 - stay) * g * dev / (1.0 - g)) / (1.0 - stay * g)


@dataclass(frozen=True)
class VisitHistogram:
    """Discounted state-occupancy over 1-D state bins.

    ``mass`` is the per-rollout average of (initial-state mass) plus
    gamma^(t+1)-weighted visit mass; it sums to 1/(1-gamma) up to horizon
    truncation.  ``chi_mass`` / ``visit_mass`` split out the two layers.
    """

    edges: np.ndarray
    mass: np.ndarray
    chi_mass: np.ndarray
    visit_mass: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def normalized(self) -> np.ndarray:
        return self.mass / self.mass.sum()

    def bin_of(self, x: float) -> int:
        idx = int(np.searchsorted(self.edges, x, side="right") - 1)
        return min(max(idx, 0), len(self.mass) - 1)


def estimate_visit_frequency(
    mdp: DiscountedMdp,
    bases: Optional[BasisSet],
    w: Optional[VfaWeights],
    bins: int,
    sim: SimConfig,
    policy: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> VisitHistogram:
    """Simulation estimate of the discounted state-visit frequency (1-D states)."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if mdp.dim_state != 1:
        raise ValueError("visit-frequency histograms are implemented for 1-D state spaces")
    edges = np.linspace(mdp.state_lo[0], mdp.state_hi[0], bins + 1)
    grid_pts = action_grid_points(mdp, sim.action_grid) if policy is None else None
    act = _policy_fn(mdp, bases, w, grid_pts, policy)
    reps = sim.replications
    rngs = [split_rng(sim.rollout_seed, _ROLLOUT_STREAM, r) for r in range(reps)]
    states = np.stack([mdp.initial_dist.sample(rngs[r]) for r in range(reps)])

    def _bin(vals):  # right edge closes the last bin
        return np.clip(np.searchsorted(edges, vals, side="right") - 1, 0, bins - 1)

    chi_mass = np.bincount(_bin(states[:, 0]), minlength=bins).astype(float)
    visit_mass = np.zeros(bins)
    for t in range(sim.horizon):
        actions = np.atleast_2d(act(states))
        xi = noise_from_uniforms(mdp, np.array([rngs[r].random() for r in range(reps)]))
        states = paired_next_states(mdp, states, actions, xi)
        visit_mass += mdp.gamma ** (t + 1) * np.bincount(_bin(states[:, 0]), minlength=bins)
    chi_mass /= reps
    visit_mass /= reps
    return VisitHistogram(
        edges=edges, mass=chi_mass + visit_mass, chi_mass=chi_mass, visit_mass=visit_mass
    )
