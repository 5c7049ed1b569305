"""Problem-definition contracts for discounted-cost MDPs and average-cost semi-MDPs.

States and actions are plain 1-D float arrays in instance units.  All model
objects are immutable after construction and safe to share across threads;
anything random takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# Closed-interval membership tolerance, absorbs float drift in transitions.
BOX_TOL = 1e-9


class InfeasiblePairError(ValueError):
    """Raised when a state-action pair violates the instance feasibility rules."""


def as_state(x) -> np.ndarray:
    """Coerce scalars / sequences to a 1-D float state vector."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"state must be 1-D, got shape {arr.shape}")
    return arr


def in_box(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float = BOX_TOL) -> bool:
    return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


def split_rng(seed: int, *stream: int) -> np.random.Generator:
    """Named PRNG streams: PCG64 seeded by ``SeedSequence(seed, spawn_key=stream)``.

    Every module derives independent streams with a fixed integer stream key,
    so runs are reproducible across platforms and parallel callers never share
    a generator.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *stream))))


@dataclass(frozen=True)
class NoiseModel:
    """Exogenous noise: either an exact finite distribution or a fixed SAA set.

    ``probs is None`` marks a fixed sample-average set (equal weights).  The
    same sample set is used in every expectation of a run so that LP rows,
    greedy policies, and rollouts see consistent dynamics.
    """

    values: np.ndarray
    probs: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=float)
            if len(p) != len(self.values):
                raise ValueError("probs and values length mismatch")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"exact noise probabilities sum to {p.sum()!r}, not 1")
            object.__setattr__(self, "probs", p)
        self.values.setflags(write=False)

    @property
    def exact(self) -> bool:
        return self.probs is not None

    @property
    def weights(self) -> np.ndarray:
        if self.probs is not None:
            return self.probs
        return np.full(len(self.values), 1.0 / len(self.values))


@dataclass(frozen=True)
class StateDistribution:
    """A distribution over states: sampler plus optional degenerate atom / density.

    When ``atom`` is set the distribution is a point mass and expectations are
    evaluated exactly at the atom instead of by sampling.
    """

    sampler: Callable[[np.random.Generator], np.ndarray]
    atom: Optional[np.ndarray] = None
    density: Optional[Callable[[np.ndarray], float]] = None

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.atom is not None:
            return np.array(self.atom, dtype=float)
        return as_state(self.sampler(rng))

    def sample_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.atom is not None:
            return np.tile(np.asarray(self.atom, dtype=float), (n, 1))
        return np.stack([as_state(self.sampler(rng)) for _ in range(n)])


def degenerate(state) -> StateDistribution:
    s = as_state(state)
    return StateDistribution(sampler=lambda rng: s, atom=s)


def uniform_box(lo, hi) -> StateDistribution:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    vol = float(np.prod(width))
    return StateDistribution(
        sampler=lambda rng: lo + width * rng.random(len(lo)),
        density=lambda s: 1.0 / vol,
    )


@dataclass(frozen=True)
class DiscountedMdp:
    """Infinite-horizon discounted-cost MDP on a box state space.

    ``cost(s, a, noise)`` and ``transition(s, a, noise)`` are vectorized over a
    1-D array of noise realizations: cost returns shape ``(k,)`` and transition
    shape ``(k, d_s)``.  Noise is an explicit argument so that LP construction
    and simulation share one code path (and one SAA sample set).
    """

    state_lo: np.ndarray
    state_hi: np.ndarray
    action_lo: np.ndarray
    action_hi: np.ndarray
    gamma: float
    cost: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    transition: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    noise: NoiseModel
    initial_dist: StateDistribution
    state_relevance: StateDistribution
    feasible: Optional[Callable[[np.ndarray, np.ndarray], bool]] = None
    # Optional fully-broadcast variants: states (..., d_s), actions (..., d_a)
    # and noise (...) combine under numpy broadcasting.  Purely a fast path;
    # semantics must match ``transition`` / ``cost``.
    transition_nd: Optional[Callable] = None
    cost_nd: Optional[Callable] = None
    # Vectorized inverse CDF of the true noise law, used for realized draws in
    # rollouts; defaults to the noise model's own (discrete) quantile.
    noise_quantile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # Structure hint for scalar-action instances: the transition output
    # coordinate that simply carries the action while every other output
    # coordinate is action-independent.  Enables a fast greedy lookahead.
    action_output_slot: Optional[int] = None
    # Instance parameter record (e.g. the inventory catalog row) for consumers
    # that need instance-specific constants.
    params: Optional[object] = None
    name: str = "mdp"

    def __post_init__(self):
        for f in ("state_lo", "state_hi", "action_lo", "action_hi"):
            arr = np.asarray(getattr(self, f), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount factor must be in (0,1), got {self.gamma}")

    @property
    def dim_state(self) -> int:
        return len(self.state_lo)

    @property
    def dim_action(self) -> int:
        return len(self.action_lo)

    def check_state(self, s: np.ndarray) -> np.ndarray:
        s = as_state(s)
        if len(s) != self.dim_state:
            raise ValueError(f"state dimension {len(s)} != {self.dim_state}")
        if not in_box(s, self.state_lo, self.state_hi):
            raise ValueError(f"state {s} outside box [{self.state_lo}, {self.state_hi}]")
        return s

    def check_pair(self, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.check_state(s)
        a = as_state(a)
        if len(a) != self.dim_action:
            raise InfeasiblePairError(f"action dimension {len(a)} != {self.dim_action}")
        if not in_box(a, self.action_lo, self.action_hi):
            raise InfeasiblePairError(f"action {a} outside box")
        if self.feasible is not None and not self.feasible(s, a):
            raise InfeasiblePairError(f"pair ({s}, {a}) fails instance feasibility")
        return s, a

    def next_states(self, s, a) -> np.ndarray:
        """All successor states, one per noise realization, shape (k, d_s)."""
        return self.transition(as_state(s), as_state(a), self.noise.values)

    def expected_cost(self, s, a) -> float:
        return float(self.noise.weights @ self.cost(as_state(s), as_state(a), self.noise.values))


def expected_basis_value(mdp: DiscountedMdp, s, a, f: Callable[[np.ndarray], float]) -> float:
    """E[f(s') | s, a]: exact for a finite noise law, SAA mean otherwise.

    With an SAA noise model the expectation is taken over the fixed sample
    set, so repeated calls with identical inputs are bit-identical.
    """
    s, a = mdp.check_pair(s, a)
    nxt = mdp.next_states(s, a)
    vals = np.array([f(nxt[i]) for i in range(len(nxt))], dtype=float)
    return float(mdp.noise.weights @ vals)


def sample_initial_state(mdp: DiscountedMdp, rng: np.random.Generator) -> np.ndarray:
    """Draw s0 from the instance's initial-state distribution."""
    return mdp.initial_dist.sample(rng)


def noise_from_uniforms(mdp: DiscountedMdp, u: np.ndarray) -> np.ndarray:
    """Map uniforms through the noise quantile (inverse-CDF sampling)."""
    if mdp.noise_quantile is not None:
        return np.asarray(mdp.noise_quantile(u), dtype=float)
    cum = np.cumsum(mdp.noise.weights)
    idx = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
    return mdp.noise.values[idx]


def sample_noise(mdp: DiscountedMdp, rng: np.random.Generator, n: int) -> np.ndarray:
    """Realized noise draws for simulation."""
    return noise_from_uniforms(mdp, rng.random(n))


def batch_next_states(mdp: DiscountedMdp, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Successors for every (state, action) row and every noise atom, (m, k, d_s)."""
    xi = mdp.noise.values
    if mdp.transition_nd is not None:
        return mdp.transition_nd(states[:, None, :], actions[:, None, :], xi[None, :])
    out = np.empty((len(states), len(xi), mdp.dim_state))
    for j in range(len(states)):
        out[j] = mdp.transition(states[j], actions[j], xi)
    return out


def batch_expected_costs(mdp: DiscountedMdp, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """SAA / exact expected immediate cost per (state, action) row, (m,)."""
    xi = mdp.noise.values
    w = mdp.noise.weights
    if mdp.cost_nd is not None:
        c = mdp.cost_nd(states[:, None, :], actions[:, None, :], xi[None, :])
        return np.broadcast_to(c, (len(states), len(xi))) @ w
    return np.array([w @ mdp.cost(states[j], actions[j], xi) for j in range(len(states))])


def paired_next_states(mdp: DiscountedMdp, states: np.ndarray, actions: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Realized successor per row: one noise value per (state, action) pair."""
    if mdp.transition_nd is not None:
        return mdp.transition_nd(states, actions, xi)
    return np.stack(
        [mdp.transition(states[j], actions[j], np.atleast_1d(xi[j]))[0] for j in range(len(states))]
    )


@dataclass(frozen=True)
class SemiMdp:
    """Deterministic average-cost semi-MDP: action-dependent transition times.

    ``transition_time`` must be strictly positive for feasible pairs; the
    long-run performance measure is cost per unit time.
    """

    state_lo: np.ndarray
    state_hi: np.ndarray
    cost: Callable[[np.ndarray, np.ndarray], float]
    transition_time: Callable[[np.ndarray, np.ndarray], float]
    transition: Callable[[np.ndarray, np.ndarray], np.ndarray]
    feasible: Callable[[np.ndarray, np.ndarray], bool]
    name: str = "semi-mdp"

    def __post_init__(self):
        for f in ("state_lo", "state_hi"):
            arr = np.asarray(getattr(self, f), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)

    @property
    def dim_state(self) -> int:
        return len(self.state_lo)

    def step(self, s, a) -> tuple[float, np.ndarray]:
        if not self.feasible(s, a):
            raise InfeasiblePairError(f"action {a} infeasible at state {s}")
        t = float(self.transition_time(s, a))
        if t <= 0.0:
            raise InfeasiblePairError(f"non-positive transition time {t} at ({s}, {a})")
        nxt = self.transition(s, a)
        if not in_box(nxt, self.state_lo, self.state_hi):
            raise ValueError(f"transition left the state box: {nxt}")
        return t, nxt
