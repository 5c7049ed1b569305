"""One-dimensional benchmark MDP with a known value function.

State and action spaces are [0,1]; the next state equals the current state
with probability 0.1 and the chosen action with probability 0.9; the stage
cost |s - 0.5| is action-independent and the discount factor is 0.9.  The
optimal policy plays 0.5 everywhere, so the value function is available in
closed form and the instance serves as ground truth throughout the tests.
"""

from __future__ import annotations

import numpy as np

from ralp.mdp import DiscountedMdp, NoiseModel, uniform_box

GAMMA = 0.9
STAY_PROB = 0.1
TARGET = 0.5


def _toy_cost(s, a, noise):
    return np.full(len(noise), abs(float(s[0]) - TARGET))


def _toy_transition(s, a, noise):
    # noise = 0 keeps the state, noise = 1 jumps to the action
    out = np.where(noise[:, None] == 0.0, float(s[0]), float(a[0]))
    return out


def _toy_cost_nd(s, a, noise):
    return np.abs(s[..., 0] - TARGET) + 0.0 * noise


def _toy_transition_nd(s, a, noise):
    return np.where((noise == 0.0)[..., None], s, a)


def build_toy() -> DiscountedMdp:
    """The two-point-noise MDP on [0,1]^2 with uniform initial distribution."""
    chi = uniform_box([0.0], [1.0])
    return DiscountedMdp(
        state_lo=np.array([0.0]),
        state_hi=np.array([1.0]),
        action_lo=np.array([0.0]),
        action_hi=np.array([1.0]),
        gamma=GAMMA,
        cost=_toy_cost,
        transition=_toy_transition,
        noise=NoiseModel(values=np.array([0.0, 1.0]), probs=np.array([STAY_PROB, 1.0 - STAY_PROB])),
        initial_dist=chi,
        state_relevance=chi,
        transition_nd=_toy_transition_nd,
        cost_nd=_toy_cost_nd,
        name="toy",
    )


def toy_value_function(s) -> float:
    """Optimal cost-to-go |s - 0.5| / (1 - 0.1 * gamma)."""
    s = float(np.atleast_1d(s)[0])
    if not -1e-12 <= s <= 1.0 + 1e-12:
        raise ValueError(f"state {s} outside [0,1]")
    return abs(s - TARGET) / (1.0 - STAY_PROB * GAMMA)


def toy_value_grid(n: int = 1001) -> tuple[np.ndarray, np.ndarray]:
    """Grid of states with the exact value function evaluated on it."""
    grid = np.linspace(0.0, 1.0, n)
    return grid, np.abs(grid - TARGET) / (1.0 - STAY_PROB * GAMMA)
