"""Approximate linear programming for MDPs with randomly sampled basis functions.

The package builds value function approximations (VFAs) for discounted-cost
MDPs and average-cost semi-MDPs by solving sampled approximate linear
programs whose features are random Fourier or random stump bases, optionally
refined with self-guiding constraints, and reports control policies together
with valid lower bounds on the optimal cost.
"""

from ralp import alp, bases, gjr, loop, lower_bound, mdp, pic, policy, toy

__all__ = [
    "alp",
    "bases",
    "gjr",
    "loop",
    "lower_bound",
    "mdp",
    "pic",
    "policy",
    "toy",
]

__version__ = "0.1.0"
