"""Iterative basis generation: sample a batch, solve the LP, evaluate bounds.

Each iteration extends the basis set by ``batch`` entries, solves the chosen
model (standard or self-guided), simulates the greedy policy cost, computes a
lower bound, updates the incumbent bound-holders only on improvement, and
stops once the optimality gap 1 - LB/PC drops to the tolerance or the basis
budget is exhausted.

The constraint-sample plan is drawn once per run and reused across
iterations so that iterates differ only through their basis sets; a redraw
knob exists for studying sampling noise.  Rollout seeds are likewise fixed
per run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ralp import alp, lower_bound as lb_mod, policy as policy_mod
from ralp.alp import (
    BellmanRowCache,
    ConstraintSamplePlan,
    SolverBackend,
    VfaWeights,
    build_falp,
    build_fglp,
    lb_expectation,
    nu_sample_set,
    prepare_plan,
    solve,
    uniform_plan,
)
from ralp.bases import BasisSet, fixed_fourier, sample_fourier
from ralp.lower_bound import SaddleConfig
from ralp.mdp import DiscountedMdp, split_rng
from ralp.policy import SimConfig

MODEL_FALP = "falp"
MODEL_FGLP = "fglp"

_PLAN_STREAM = 21
_NU_STREAM = 22
_CHI_STREAM = 23


class LoopError(RuntimeError):
    """Solver failure inside the loop; carries the partial trace."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LoopConfig:
    batch: int
    tolerance: float
    max_bases: int
    model_kind: str
    seed: int
    sim: SimConfig
    num_constraints: Optional[int] = None  # ignored when an explicit plan is given
    plan: Optional[ConstraintSamplePlan] = None
    sigma_range: tuple[float, float] = (1.0, 10.0)
    fixed_omegas: Optional[tuple[float, ...]] = None  # overrides sampling (1-D problems)
    lb_method: str = "expectation"  # "expectation" | "saddle"
    saddle: Optional[SaddleConfig] = None
    nu_sample_size: int = 10_000
    redraw_plan_each_iteration: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0.0 < self.tolerance <= 1.0:
            raise ValueError("tolerance must be in (0, 1]")
        if self.model_kind not in (MODEL_FALP, MODEL_FGLP):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.lb_method not in ("expectation", "saddle"):
            raise ValueError(f"unknown lb method {self.lb_method!r}")
        if self.plan is None and self.num_constraints is None:
            raise ValueError("either an explicit plan or num_constraints is required")


@dataclass(frozen=True)
class IterationRecord:
    num_bases: int
    lb: float  # the bound driving incumbent updates
    pc: float
    pc_stderr: float
    tau_star: float
    lb_expectation: float
    lb_saddle: Optional[float]
    lb_saddle_stderr: Optional[float]
    saddle_acceptance: Optional[tuple[float, ...]]
    incumbent_lb_bases: int  # basis count of the incumbent holders
    incumbent_pc_bases: int
    incumbent_lb: float
    incumbent_pc: float
    wallclock: float


@dataclass
class RunResult:
    records: list[IterationRecord]
    bases: BasisSet
    lb_weights: VfaWeights
    pc_weights: VfaWeights
    converged: bool
    plan: ConstraintSamplePlan
    iterate_weights: list[VfaWeights]

    @property
    def final_gap(self) -> float:
        return self.records[-1].tau_star


def _basis_prefix(config: LoopConfig, mdp: DiscountedMdp, count: int) -> BasisSet:
    if config.fixed_omegas is not None:
        if count > len(config.fixed_omegas):
            raise ValueError("fixed basis list exhausted before reaching max_bases")
        return fixed_fourier(config.fixed_omegas[:count], dim_state=mdp.dim_state)
    return sample_fourier(count, mdp.dim_state, config.sigma_range, config.seed)


def run(mdp: DiscountedMdp, config: LoopConfig, backend: SolverBackend) -> RunResult:
    """Execute the loop; returns the full per-iteration trace.

    A solver failure raises LoopError with the partial trace attached.
    """
    rng_plan = split_rng(config.seed, _PLAN_STREAM)
    rng_nu = split_rng(config.seed, _NU_STREAM)
    nu_samples = nu_sample_set(mdp.state_relevance, config.nu_sample_size, rng_nu)
    if mdp.initial_dist is mdp.state_relevance:
        chi_samples = nu_samples  # shared estimator keeps LB equal to the objective
    else:
        chi_samples = nu_sample_set(mdp.initial_dist, config.nu_sample_size, split_rng(config.seed, _CHI_STREAM))

    plan = config.plan if config.plan is not None else uniform_plan(mdp, config.num_constraints, rng_plan)
    prepared = prepare_plan(mdp, plan)
    row_cache = BellmanRowCache(mdp, prepared)

    records: list[IterationRecord] = []
    iterate_weights: list[VfaWeights] = []
    prev_weights: Optional[VfaWeights] = None
    incumbent_lb = -np.inf
    incumbent_pc = np.inf
    incumbent_lb_bases = 0
    incumbent_pc_bases = 0
    lb_weights = pc_weights = VfaWeights.zero(0)
    bases: Optional[BasisSet] = None
    num_bases = 0
    converged = False
    started = time.monotonic()

    while True:
        num_bases += config.batch
        bases = _basis_prefix(config, mdp, num_bases)
        if config.redraw_plan_each_iteration:
            plan = uniform_plan(mdp, config.num_constraints, rng_plan)
            prepared = prepare_plan(mdp, plan)
            row_cache = BellmanRowCache(mdp, prepared)
        if config.model_kind == MODEL_FGLP:
            model = build_fglp(mdp, bases, prepared, nu_samples, prev_weights, row_cache=row_cache)
        else:
            model = build_falp(mdp, bases, prepared, nu_samples, row_cache=row_cache)
        try:
            weights, _objective = solve(model, backend)
        except alp.SolverError as err:
            raise LoopError(f"iteration with {num_bases} bases: {err}", records) from err

        pc_est = policy_mod.simulate_policy_cost(mdp, bases, weights, config.sim)
        lb_exp = lb_expectation(bases, weights, chi_samples)
        lb_saddle = None
        lb_saddle_stderr = None
        saddle_acceptance = None
        if config.lb_method == "saddle":
            consts = _saddle_constants(mdp, weights)
            saddle_cfg = config.saddle if config.saddle is not None else SaddleConfig(seed=config.seed)
            est = lb_mod.estimate_lower_bound(mdp, bases, weights, saddle_cfg, consts)
            lb_saddle = est.bound
            lb_saddle_stderr = est.stderr
            saddle_acceptance = est.acceptance_rates
            lb_val = lb_saddle
        else:
            lb_val = lb_exp

        if lb_val >= incumbent_lb:
            incumbent_lb = lb_val
            incumbent_lb_bases = num_bases
            lb_weights = weights
        if pc_est.mean <= incumbent_pc:
            incumbent_pc = pc_est.mean
            incumbent_pc_bases = num_bases
            pc_weights = weights
        tau_star = 1.0 - incumbent_lb / incumbent_pc

        records.append(
            IterationRecord(
                num_bases=num_bases,
                lb=lb_val,
                pc=pc_est.mean,
                pc_stderr=pc_est.stderr,
                tau_star=tau_star,
                lb_expectation=lb_exp,
                lb_saddle=lb_saddle,
                lb_saddle_stderr=lb_saddle_stderr,
                saddle_acceptance=saddle_acceptance,
                incumbent_lb_bases=incumbent_lb_bases,
                incumbent_pc_bases=incumbent_pc_bases,
                incumbent_lb=incumbent_lb,
                incumbent_pc=incumbent_pc,
                wallclock=time.monotonic() - started,
            )
        )
        iterate_weights.append(weights)
        prev_weights = weights
        if tau_star <= config.tolerance:
            converged = True
            break
        if num_bases >= config.max_bases:
            break

    return RunResult(
        records=records,
        bases=bases,
        lb_weights=lb_weights,
        pc_weights=pc_weights,
        converged=converged,
        plan=plan,
        iterate_weights=iterate_weights,
    )


def _saddle_constants(mdp: DiscountedMdp, weights: VfaWeights):
    if mdp.name != "pic" or mdp.params is None:
        raise ValueError("saddle lower bound constants are only defined for the inventory MDP")
    return lb_mod.pic_constants(mdp.params, weights)


@dataclass(frozen=True)
class FluctuationStats:
    fluctuation_pct: float  # share of iterations whose raw policy cost worsened
    fluctuation_magnitude: float  # mean worsening over those iterations, cost units


def fluctuation_stats(trace: list[IterationRecord]) -> FluctuationStats:
    """Policy-cost fluctuation over a trace, computed from raw per-iteration costs."""
    if len(trace) < 2:
        raise ValueError("need at least two iterations to measure fluctuation")
    pcs = np.array([r.pc for r in trace])
    jumps = np.diff(pcs)
    worse = jumps > 0.0
    pct = 100.0 * worse.sum() / len(jumps)
    magnitude = float(jumps[worse].mean()) if worse.any() else 0.0
    return FluctuationStats(fluctuation_pct=float(pct), fluctuation_magnitude=magnitude)
