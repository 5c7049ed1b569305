"""Perishable inventory control: a 3-D discounted MDP with partial backlogging.

The commodity lives two periods and orders arrive with a two-period lead
time, so the state is (s0, s1, p1): net inventory maturing now (negative
values are backlogged demand, floored at ``s_min``), fresh on-hand inventory,
and the in-transit order.  Demand is truncated normal on [0, 10] with mean 5
and standard deviation 2 across the whole catalog; lost sales beyond the
backlog limit cost 100 per unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import truncnorm

from ralp.mdp import DiscountedMdp, NoiseModel, StateDistribution, degenerate

DEMAND_SAA_SIZE = 5000

# Catalog rows: (c_o, c_h, c_d, c_b, a_max, s_min, gamma).
_CATALOG = {
    1: (20, 2, 5, 10, 10, -10, 0.95),
    2: (20, 2, 5, 10, 10, -10, 0.99),
    3: (20, 5, 10, 8, 10, -10, 0.95),
    4: (20, 5, 10, 8, 10, -10, 0.99),
    5: (20, 2, 10, 10, 10, -10, 0.95),
    6: (20, 2, 10, 10, 10, -10, 0.99),
    7: (20, 2, 10, 10, 30, -30, 0.95),
    8: (20, 2, 10, 10, 30, -30, 0.99),
    9: (16, 5, 8, 8, 30, -30, 0.95),
    10: (16, 5, 8, 8, 30, -30, 0.99),
    11: (20, 5, 10, 8, 50, -50, 0.95),
    12: (20, 5, 10, 8, 50, -50, 0.99),
    13: (20, 2, 5, 10, 50, -50, 0.95),
    14: (20, 2, 5, 10, 50, -50, 0.99),
    15: (20, 2, 12, 6, 50, -50, 0.95),
    16: (20, 2, 12, 6, 50, -50, 0.99),
}

INITIAL_STATE = (5.0, 5.0, 5.0)


@dataclass(frozen=True)
class PicParams:
    life: int
    lead: int
    c_o: float
    c_h: float
    c_d: float
    c_b: float
    c_l: float
    a_max: float
    s_min: float
    gamma: float
    demand_range: tuple[float, float]
    demand_mean: float
    demand_sd: float

    def __post_init__(self):
        if self.life != 2 or self.lead != 2:
            raise ValueError("only life = lead = 2 is supported")
        if not self.s_min <= 0.0 <= self.a_max:
            raise ValueError("need s_min <= 0 <= a_max")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0,1)")


def instance_from_table(instance_id: int) -> PicParams:
    """Catalog instance 1..16."""
    if instance_id not in _CATALOG:
        raise ValueError(f"instance id must be 1..16, got {instance_id}")
    c_o, c_h, c_d, c_b, a_max, s_min, gamma = _CATALOG[instance_id]
    return PicParams(
        life=2,
        lead=2,
        c_o=float(c_o),
        c_h=float(c_h),
        c_d=float(c_d),
        c_b=float(c_b),
        c_l=100.0,
        a_max=float(a_max),
        s_min=float(s_min),
        gamma=gamma,
        demand_range=(0.0, 10.0),
        demand_mean=5.0,
        demand_sd=2.0,
    )


def catalog_json() -> str:
    """The full catalog as a JSON document for audit."""
    return json.dumps(
        {str(i): asdict(instance_from_table(i)) for i in sorted(_CATALOG)}, indent=1
    )


def pic_transition(p: PicParams, s, a, demand):
    """Next state (max(s1 - (D - s0)+, s_min), p1, a); broadcasts over demand."""
    s = np.asarray(s, dtype=float)
    a_val = float(np.atleast_1d(a)[0])
    d = np.asarray(demand, dtype=float)
    shortfall = np.maximum(d - s[0], 0.0)
    first = np.maximum(s[1] - shortfall, p.s_min)
    out = np.empty(d.shape + (3,)) if d.shape else np.empty(3)
    out[..., 0] = first
    out[..., 1] = s[2]
    out[..., 2] = a_val
    return out


def _transition_nd(p: PicParams):
    def f(s, a, d):
        shortfall = np.maximum(d - s[..., 0], 0.0)
        first = np.maximum(s[..., 1] - shortfall, p.s_min)
        b = np.broadcast(first, s[..., 2], a[..., 0])
        out = np.empty(b.shape + (3,))
        out[..., 0] = first
        out[..., 1] = np.broadcast_to(s[..., 2], b.shape)
        out[..., 2] = np.broadcast_to(a[..., 0], b.shape)
        return out

    return f


def pic_cost(p: PicParams, s, a, demand_samples) -> float:
    """Ordering cost plus SAA mean of holding, disposal, backlog, lost-sales terms.

    Ordering is charged at gamma^lead * c_o per unit since payment happens on
    receipt.
    """
    s = np.asarray(s, dtype=float)
    a_val = float(np.atleast_1d(a)[0])
    d = np.atleast_1d(np.asarray(demand_samples, dtype=float))
    shortfall = np.maximum(d - s[0], 0.0)
    holding = p.c_h * np.maximum(s[1] - shortfall, 0.0)
    disposal = p.c_d * np.maximum(s[0] - d, 0.0)
    backlog = p.c_b * np.maximum(d - s[0] - s[1], 0.0)
    lost = p.c_l * np.maximum(p.s_min + d - s[0] - s[1], 0.0)
    return float(p.gamma**p.lead * p.c_o * a_val + np.mean(holding + disposal + backlog + lost))


def _cost_nd(p: PicParams):
    def f(s, a, d):
        shortfall = np.maximum(d - s[..., 0], 0.0)
        holding = p.c_h * np.maximum(s[..., 1] - shortfall, 0.0)
        disposal = p.c_d * np.maximum(s[..., 0] - d, 0.0)
        backlog = p.c_b * np.maximum(d - s[..., 0] - s[..., 1], 0.0)
        lost = p.c_l * np.maximum(p.s_min + d - s[..., 0] - s[..., 1], 0.0)
        return p.gamma**p.lead * p.c_o * a[..., 0] + holding + disposal + backlog + lost

    return f


def _demand_dist(p: PicParams):
    lo, hi = p.demand_range
    a_std = (lo - p.demand_mean) / p.demand_sd
    b_std = (hi - p.demand_mean) / p.demand_sd
    return truncnorm(a_std, b_std, loc=p.demand_mean, scale=p.demand_sd)


def sample_demand(p: PicParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Inverse-CDF draws from the truncated normal, reproducible from the rng."""
    return _demand_dist(p).ppf(rng.random(n))


def sample_state_action(p: PicParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draw over the state box [s_min, a_max] x [0, a_max]^2 and action [0, a_max]."""
    s = np.array(
        [
            rng.uniform(p.s_min, p.a_max),
            rng.uniform(0.0, p.a_max),
            rng.uniform(0.0, p.a_max),
        ]
    )
    a = np.array([rng.uniform(0.0, p.a_max)])
    return s, a


def build_pic_mdp(p: PicParams, demand_saa_size: int = DEMAND_SAA_SIZE, demand_seed: int = 0) -> DiscountedMdp:
    """Assemble the MDP with a fixed demand SAA set shared by every expectation."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((demand_seed, 7))))
    demand_set = sample_demand(p, rng, demand_saa_size)
    dist = _demand_dist(p)
    chi = degenerate(INITIAL_STATE)

    def cost(s, a, noise):
        d = np.atleast_1d(noise)
        return _cost_nd(p)(s[None, :], np.atleast_1d(a)[None, :], d)

    def transition(s, a, noise):
        return pic_transition(p, s, a, np.atleast_1d(noise))

    return DiscountedMdp(
        state_lo=np.array([p.s_min, 0.0, 0.0]),
        state_hi=np.array([p.a_max, p.a_max, p.a_max]),
        action_lo=np.array([0.0]),
        action_hi=np.array([p.a_max]),
        gamma=p.gamma,
        cost=cost,
        transition=transition,
        noise=NoiseModel(values=demand_set),
        initial_dist=chi,
        state_relevance=chi,
        transition_nd=_transition_nd(p),
        cost_nd=_cost_nd(p),
        noise_quantile=dist.ppf,
        action_output_slot=2,
        params=p,
        name="pic",
    )
