"""Valid lower bounds for constraint-sampled models via a saddle-point estimate.

Sampled approximate linear programs can violate Bellman constraints off the
sample, so their objective is not a trustworthy lower bound.  The repair uses

    y(s, a) = E_chi[V] + (c(s,a) + gamma E[V(s')|s,a] - V(s)) / (1 - gamma),

whose minimum over state-action pairs detects the worst violation.  For any
lambda in (0,1], the optimal policy cost is at least

    E_Y[y(s,a)] + lambda * (Lambda + d ln lambda),

where Y has density proportional to exp(-y/lambda).  E_Y[y] is estimated with
seeded Metropolis-Hastings chains over the state-action box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ralp.alp import VfaWeights, vfa_values
from ralp.bases import BasisSet
from ralp.mdp import DiscountedMdp, batch_expected_costs, batch_next_states, split_rng
from ralp.pic import PicParams

_CHAIN_STREAM = 211

D_SA_PIC = 4


@dataclass(frozen=True)
class SaddleConfig:
    chains: int = 8
    chain_length: int = 1500
    burn_in: int = 1000
    lam: Optional[float] = None  # None selects 1 / (|Lambda| + d)
    proposal_frac: float = 0.05  # random-walk step as a fraction of each box width
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.chain_length:
            raise ValueError("need 0 <= burn_in < chain_length")
        if self.lam is not None and not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must be in (0, 1]")
        if self.chains < 1:
            raise ValueError("need at least one chain")


@dataclass(frozen=True)
class LipschitzConstants:
    l_c: float
    l_y: float
    big_lambda: float
    d_sa: int
    radius: float
    diameter: float

    def __post_init__(self):
        for f in ("l_c", "l_y", "big_lambda", "radius", "diameter"):
            if not math.isfinite(getattr(self, f)):
                raise ValueError(f"{f} must be finite")

    def default_lam(self) -> float:
        """1 / (|Lambda| + d), clipped into (0, 1].

        The Lipschitz penalty makes Lambda large and negative on the inventory
        instances, so the magnitude is what produces a usable lambda; any
        value in (0, 1] keeps the bound valid.
        """
        return min(1.0, 1.0 / (abs(self.big_lambda) + self.d_sa))


@dataclass(frozen=True)
class LowerBoundEstimate:
    bound: float
    stderr: float
    mean_y: float
    correction: float
    lam: float
    acceptance_rates: tuple[float, ...]


def pic_constants(p: PicParams, w: VfaWeights) -> LipschitzConstants:
    """Constants for an inventory instance.

    l_c applies the printed formula 2(gamma^L c_o a + c_h a + c_b s_min
    + c_d a + c_l a) verbatim; note the backlog term enters with the sign of
    s_min (which is non-positive), shrinking the constant.
    """
    a, s_min = p.a_max, p.s_min
    l_c = 2.0 * (p.gamma**p.lead * p.c_o * a + p.c_h * a + p.c_b * s_min + p.c_d * a + p.c_l * a)
    beta_l1 = abs(w.beta0) + float(np.abs(w.betas).sum())
    l_y = (4.0 * beta_l1 + l_c) / (1.0 - p.gamma)
    radius = a / 2.0
    diameter = 3.0 * a**2 + (s_min - a) ** 2
    volume = (a - s_min) * a * a * a  # state box x action box
    big_lambda = (
        -math.log(math.gamma(1.0 + D_SA_PIC / 2.0) * (radius * math.sqrt(math.pi)) ** -D_SA_PIC * volume)
        - l_y * (radius + diameter)
    )
    return LipschitzConstants(
        l_c=l_c,
        l_y=l_y,
        big_lambda=big_lambda,
        d_sa=D_SA_PIC,
        radius=radius,
        diameter=diameter,
    )


def _resolve_value_fn(bases, w, value_fn):
    if value_fn is not None:
        return value_fn
    return lambda states: vfa_values(bases, w, states)


def chi_value(
    mdp: DiscountedMdp,
    bases: BasisSet,
    w: VfaWeights,
    chi_samples: Optional[np.ndarray] = None,
    value_fn=None,
) -> float:
    """E_chi[V]; exact at a degenerate atom, SAA otherwise."""
    if chi_samples is None:
        if mdp.initial_dist.atom is None:
            raise ValueError("chi_samples required for a non-degenerate initial distribution")
        chi_samples = np.atleast_2d(mdp.initial_dist.atom)
    return float(_resolve_value_fn(bases, w, value_fn)(np.atleast_2d(chi_samples)).mean())


def _y_batch(mdp, value_fn, states, actions, e_chi) -> np.ndarray:
    costs = batch_expected_costs(mdp, states, actions)
    nxt = batch_next_states(mdp, states, actions)
    m, k, ds = nxt.shape
    cont = np.asarray(value_fn(nxt.reshape(m * k, ds))).reshape(m, k) @ mdp.noise.weights
    v_here = np.asarray(value_fn(states))
    return e_chi + (costs + mdp.gamma * cont - v_here) / (1.0 - mdp.gamma)


def y_value(
    mdp: DiscountedMdp,
    bases: BasisSet,
    w: VfaWeights,
    s,
    a,
    chi_samples: Optional[np.ndarray] = None,
    value_fn=None,
) -> float:
    """Constraint-violation functional at one state-action pair."""
    s, a = mdp.check_pair(s, a)
    fn = _resolve_value_fn(bases, w, value_fn)
    e_chi = chi_value(mdp, bases, w, chi_samples, value_fn=fn)
    return float(_y_batch(mdp, fn, s[None, :], a[None, :], e_chi)[0])


def mh_acceptance(y_old: float, y_new: float, lam: float) -> float:
    """min(1, exp((y_old - y_new) / lambda)); exponent capped to avoid overflow."""
    return min(1.0, math.exp(min((y_old - y_new) / lam, 700.0)))


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + (width - np.abs(y - width))


def estimate_lower_bound(
    mdp: DiscountedMdp,
    bases: BasisSet,
    w: VfaWeights,
    cfg: SaddleConfig,
    consts: LipschitzConstants,
    chi_samples: Optional[np.ndarray] = None,
    value_fn=None,
) -> LowerBoundEstimate:
    """MH estimate of E_Y[y] plus the analytic correction term.

    Chains start at independent uniform draws over the state-action box and
    move by componentwise Gaussian steps reflected at the boundaries.  The
    standard error is computed across chain means.
    """
    lam = cfg.lam if cfg.lam is not None else consts.default_lam()
    lo = np.concatenate([mdp.state_lo, mdp.action_lo])
    hi = np.concatenate([mdp.state_hi, mdp.action_hi])
    step = cfg.proposal_frac * (hi - lo)
    d = len(lo)
    ds = mdp.dim_state
    fn = _resolve_value_fn(bases, w, value_fn)
    e_chi = chi_value(mdp, bases, w, chi_samples, value_fn=fn)

    rngs = [split_rng(cfg.seed, _CHAIN_STREAM, c) for c in range(cfg.chains)]
    x = np.stack([lo + (hi - lo) * rngs[c].random(d) for c in range(cfg.chains)])
    y = _y_batch(mdp, fn, x[:, :ds], x[:, ds:], e_chi)

    kept_sums = np.zeros(cfg.chains)
    kept_counts = np.zeros(cfg.chains, dtype=int)
    accepts = np.zeros(cfg.chains, dtype=int)
    for t in range(cfg.chain_length):
        noise = np.stack([rngs[c].normal(0.0, 1.0, d) for c in range(cfg.chains)])
        proposal = _reflect(x + step * noise, lo, hi)
        y_new = _y_batch(mdp, fn, proposal[:, :ds], proposal[:, ds:], e_chi)
        u = np.array([rngs[c].random() for c in range(cfg.chains)])
        accept = np.log(u) * lam <= y - y_new
        x[accept] = proposal[accept]
        y[accept] = y_new[accept]
        accepts += accept
        if t >= cfg.burn_in:
            kept_sums += y
            kept_counts += 1
    if int(accepts.sum()) == 0:
        raise RuntimeError("every MH proposal was rejected; proposal step is degenerate")
    chain_means = kept_sums / kept_counts
    mean_y = float(chain_means.mean())
    stderr = float(chain_means.std(ddof=1) / math.sqrt(cfg.chains)) if cfg.chains > 1 else 0.0
    correction = lam * (consts.big_lambda + consts.d_sa * math.log(lam))
    return LowerBoundEstimate(
        bound=mean_y + correction,
        stderr=stderr,
        mean_y=mean_y,
        correction=correction,
        lam=lam,
        acceptance_rates=tuple(accepts / cfg.chain_length),
    )
