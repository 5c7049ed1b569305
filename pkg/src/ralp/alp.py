"""Construction and solution of the sampled approximate linear programs.

The standard model maximizes the state-relevance-weighted VFA subject to one
Bellman inequality per sampled state-action pair:

    max  beta_0 + sum_i beta_i * E_nu[phi_i]
    s.t. (1-gamma) beta_0 + sum_i beta_i (phi_i(s) - gamma E[phi_i(s') | s,a])
             <= c(s,a)            for sampled (s, a).

The self-guided variant adds, per guide state, a row forcing the new VFA to
dominate the previous iteration's VFA.  Models are plain coefficient
containers handed to a pluggable LP backend; scipy's HiGHS wrapper is the
default backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy.optimize import linprog

from ralp.bases import BasisSet, features
from ralp.mdp import DiscountedMdp

TAG_STANDARD = "standard"
TAG_SELF_GUIDING = "self-guiding"


class SolverError(RuntimeError):
    """LP backend failure with a machine-readable status."""

    def __init__(self, status: str, detail: str = ""):
        super().__init__(f"LP solve failed: {status}" + (f" ({detail})" if detail else ""))
        self.status = status


@dataclass(frozen=True)
class VfaWeights:
    """Intercept plus per-basis coefficients defining V(s) = beta0 + betas . phi(s)."""

    beta0: float
    betas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "betas", np.asarray(self.betas, dtype=float))
        self.betas.setflags(write=False)

    def __len__(self) -> int:
        return len(self.betas)

    @staticmethod
    def zero(n: int) -> "VfaWeights":
        return VfaWeights(beta0=0.0, betas=np.zeros(n))


@dataclass(frozen=True)
class LpModel:
    """max objective . x  s.t.  rows . x <= rhs, x free type; one tag per row."""

    objective: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray
    tags: tuple[str, ...]

    def __post_init__(self):
        obj = np.asarray(self.objective, dtype=float)
        rows = np.asarray(self.rows, dtype=float)
        rhs = np.asarray(self.rhs, dtype=float)
        if rows.ndim != 2 or rows.shape != (len(rhs), len(obj)):
            raise ValueError(f"inconsistent LP shapes: rows {rows.shape}, rhs {rhs.shape}, obj {obj.shape}")
        if len(self.tags) != len(rhs):
            raise ValueError("one tag per row required")
        if not (np.isfinite(obj).all() and np.isfinite(rows).all() and np.isfinite(rhs).all()):
            raise ValueError("non-finite LP coefficient")
        for arr, name in ((obj, "objective"), (rows, "rows"), (rhs, "rhs")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_vars(self) -> int:
        return len(self.objective)

    @property
    def num_rows(self) -> int:
        return len(self.rhs)


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded" | "numeric"
    x: Optional[np.ndarray]
    objective: Optional[float]
    max_violation: Optional[float]  # feasibility report: max(rows.x - rhs)


class SolverBackend(Protocol):
    def solve(self, model: LpModel) -> LpSolution: ...


class ScipyBackend:
    """HiGHS via scipy.optimize.linprog; variables are free.

    Random cosine features can produce nearly collinear LP columns (tiny or
    nearly duplicated frequencies), on which the simplex breaks down.  The
    backend therefore solves in preconditioned variables x = M y, with M the
    inverse R-factor of a QR over sampled rows, which makes the columns
    near-orthonormal without changing the program: the feasible region and
    optimum map exactly through the invertible M.

    Tight feasibility tolerances keep chained models consistent: guide rows
    built from a previous solution stay satisfiable only if that solution
    honored its own rows to well below the guide slack.
    """

    def __init__(
        self,
        feas_tol: float = 1e-9,
        precondition_rows: int = 4000,
        var_bound: Optional[float] = None,
    ):
        self.feas_tol = feas_tol
        self.precondition_rows = precondition_rows
        # Optional box |x_i| <= var_bound.  Nearly duplicated feature columns
        # admit optimal vertices with gigantic cancelling weights whose
        # function values cannot be evaluated to tight tolerances in double
        # precision; chained models (guide rows built from the previous
        # solution) need bounded representatives.  The box must be wide
        # enough never to bind at solutions of interest.
        self.var_bound = var_bound

    def _preconditioner(self, model: LpModel) -> Optional[np.ndarray]:
        n, v = model.num_rows, model.num_vars
        if n < 2 * v or v < 2:
            return None
        idx = np.linspace(0, n - 1, min(n, self.precondition_rows)).astype(int)
        _, r = np.linalg.qr(model.rows[idx])
        diag = np.abs(np.diag(r))
        floor = 1e-10 * max(float(diag.max()), 1.0)
        r = r + np.diag(np.where(diag < floor, floor, 0.0))
        return np.linalg.solve(r, np.eye(v))

    def solve(self, model: LpModel) -> LpSolution:
        rows, rhs = model.rows, model.rhs
        if self.var_bound is not None:
            # box rows compose with the preconditioner (plain variable bounds
            # would not survive the change of variables)
            v = model.num_vars
            eye = np.eye(v)
            rows = np.vstack([rows, eye, -eye])
            rhs = np.concatenate([rhs, np.full(2 * v, self.var_bound)])
        m = self._preconditioner(model)
        a_ub = rows if m is None else rows @ m
        c = model.objective if m is None else m.T @ model.objective
        res = linprog(
            c=-c,
            A_ub=a_ub,
            b_ub=rhs,
            bounds=[(None, None)] * model.num_vars,
            method="highs",
            options={
                "primal_feasibility_tolerance": self.feas_tol,
                "dual_feasibility_tolerance": self.feas_tol,
            },
        )
        status = {0: "optimal", 1: "numeric", 2: "infeasible", 3: "unbounded", 4: "numeric"}.get(
            res.status, "numeric"
        )
        if status != "optimal":
            return LpSolution(status=status, x=None, objective=None, max_violation=None)
        x = np.asarray(res.x) if m is None else m @ np.asarray(res.x)
        viol = float(np.max(model.rows @ x - model.rhs)) if model.num_rows else 0.0
        return LpSolution(status="optimal", x=x, objective=float(-res.fun), max_violation=viol)


@dataclass(frozen=True)
class ConstraintSamplePlan:
    """Sampled state-action pairs for the Bellman rows, plus guide states.

    Guide states default to the distinct states appearing in the sampled
    pairs.  Duplicate pairs are kept as-is; repeated rows are harmless to an
    LP.
    """

    states: np.ndarray  # (n, d_s)
    actions: np.ndarray  # (n, d_a)
    guide_states: np.ndarray  # (m, d_s)

    def __post_init__(self):
        for name in ("states", "actions", "guide_states"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.states) == 0:
            raise ValueError("constraint plan must contain at least one state-action pair")
        if len(self.states) != len(self.actions):
            raise ValueError("states and actions length mismatch")

    @property
    def num_pairs(self) -> int:
        return len(self.states)


def uniform_plan(
    mdp: DiscountedMdp,
    num_pairs: int,
    rng: np.random.Generator,
    pair_sampler=None,
) -> ConstraintSamplePlan:
    """Uniform state-action pairs over the instance boxes (or a custom sampler)."""
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    if pair_sampler is None:
        s_width = mdp.state_hi - mdp.state_lo
        a_width = mdp.action_hi - mdp.action_lo
        states = mdp.state_lo + s_width * rng.random((num_pairs, mdp.dim_state))
        actions = mdp.action_lo + a_width * rng.random((num_pairs, mdp.dim_action))
    else:
        pairs = [pair_sampler(rng) for _ in range(num_pairs)]
        states = np.stack([p[0] for p in pairs])
        actions = np.stack([p[1] for p in pairs])
    return ConstraintSamplePlan(states=states, actions=actions, guide_states=_unique_rows(states))


def grid_plan(states: np.ndarray, actions: np.ndarray) -> ConstraintSamplePlan:
    """Full cartesian grid of the given states and actions."""
    states = np.atleast_2d(np.asarray(states, dtype=float).T).T
    actions = np.atleast_2d(np.asarray(actions, dtype=float).T).T
    if states.ndim == 1:
        states = states[:, None]
    if actions.ndim == 1:
        actions = actions[:, None]
    ns, na = len(states), len(actions)
    s_rep = np.repeat(states, na, axis=0)
    a_rep = np.tile(actions, (ns, 1))
    return ConstraintSamplePlan(states=s_rep, actions=a_rep, guide_states=states)


def _unique_rows(arr: np.ndarray) -> np.ndarray:
    return np.unique(np.atleast_2d(arr), axis=0)


@dataclass(frozen=True)
class PreparedPlan:
    """Plan with successor states and SAA expected costs precomputed.

    Preparing once and reusing across basis sets keeps repeated model builds
    (nested basis extensions, multiple seeds on one grid) cheap.
    """

    plan: ConstraintSamplePlan
    next_states: np.ndarray  # (n, k, d_s)
    rhs: np.ndarray  # (n,) SAA expected costs
    noise_weights: np.ndarray  # (k,)


def prepare_plan(mdp: DiscountedMdp, plan: ConstraintSamplePlan) -> PreparedPlan:
    from ralp.mdp import batch_expected_costs, batch_next_states

    return PreparedPlan(
        plan=plan,
        next_states=batch_next_states(mdp, plan.states, plan.actions),
        rhs=batch_expected_costs(mdp, plan.states, plan.actions),
        noise_weights=mdp.noise.weights,
    )


def nu_sample_set(dist, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sample set for objective expectations; a degenerate distribution yields its atom."""
    if dist.atom is not None:
        return np.atleast_2d(np.asarray(dist.atom, dtype=float))
    return dist.sample_batch(size, rng)


def _basis_columns(bases: BasisSet, prepared: PreparedPlan) -> np.ndarray:
    """phi_i(s) - E[phi_i(s')] building blocks: returns (phi_s, exp_next), each (n, N)."""
    n, k, ds = prepared.next_states.shape
    phi_s = features(bases, prepared.plan.states)
    phi_next = features(bases, prepared.next_states.reshape(n * k, ds)).reshape(n, k, len(bases))
    exp_next = np.einsum("k,nkb->nb", prepared.noise_weights, phi_next)
    return np.stack([phi_s, exp_next])


class BellmanRowCache:
    """Incrementally extended Bellman-row columns for one prepared plan.

    Iterative runs grow the basis set by a batch per iteration; caching the
    per-basis columns makes each rebuild cost only the new columns.
    """

    def __init__(self, mdp: DiscountedMdp, prepared: PreparedPlan):
        self.mdp = mdp
        self.prepared = prepared
        n = prepared.plan.num_pairs
        self._cols = np.zeros((2, n, 0))
        self._count = 0

    def rows(self, bases: BasisSet) -> np.ndarray:
        if self._count > len(bases):
            raise ValueError("cache already holds more columns than the basis set")
        if self._count < len(bases):
            tail = BasisSet(
                kind=bases.kind,
                entries=bases.entries[self._count :],
                seed=bases.seed,
                sigma_range=bases.sigma_range,
                dim_state=bases.dim_state,
            )
            self._cols = np.concatenate([self._cols, _basis_columns(tail, self.prepared)], axis=2)
            self._count = len(bases)
        phi_s = self._cols[0, :, : len(bases)]
        exp_next = self._cols[1, :, : len(bases)]
        n = self.prepared.plan.num_pairs
        rows = np.empty((n, len(bases) + 1))
        rows[:, 0] = 1.0 - self.mdp.gamma
        rows[:, 1:] = phi_s - self.mdp.gamma * exp_next
        return rows


def _bellman_rows(mdp: DiscountedMdp, bases: BasisSet, prepared: PreparedPlan) -> np.ndarray:
    phi_s, exp_next = _basis_columns(bases, prepared)
    rows = np.empty((prepared.plan.num_pairs, len(bases) + 1))
    rows[:, 0] = 1.0 - mdp.gamma
    rows[:, 1:] = phi_s - mdp.gamma * exp_next
    return rows


def _objective(bases: BasisSet, nu_samples: np.ndarray) -> np.ndarray:
    obj = np.empty(len(bases) + 1)
    obj[0] = 1.0
    obj[1:] = features(bases, nu_samples).mean(axis=0)
    return obj


def build_falp(
    mdp: DiscountedMdp,
    bases: BasisSet,
    plan: ConstraintSamplePlan | PreparedPlan,
    nu_samples: np.ndarray,
    row_cache: Optional[BellmanRowCache] = None,
) -> LpModel:
    """Standard model: Bellman rows only."""
    if len(bases) == 0:
        raise ValueError("basis set is empty")
    prepared = plan if isinstance(plan, PreparedPlan) else prepare_plan(mdp, plan)
    if row_cache is not None and row_cache.prepared is not prepared:
        raise ValueError("row cache was built for a different prepared plan")
    rows = row_cache.rows(bases) if row_cache is not None else _bellman_rows(mdp, bases, prepared)
    return LpModel(
        objective=_objective(bases, nu_samples),
        rows=rows,
        rhs=prepared.rhs,
        tags=(TAG_STANDARD,) * len(rows),
    )


# Slack on self-guiding rows.  The previous solution satisfies its Bellman
# rows only to the backend tolerance, so exact-equality guide rows can render
# the chained model infeasible; a slack comfortably above the backend
# tolerance and comfortably below the 1e-6 monotone-chain tolerance restores
# guaranteed feasibility.
GUIDE_TOL = 1e-7


def build_fglp(
    mdp: DiscountedMdp,
    bases: BasisSet,
    plan: ConstraintSamplePlan | PreparedPlan,
    nu_samples: np.ndarray,
    prev: Optional[VfaWeights],
    guide_tol: float = GUIDE_TOL,
    row_cache: Optional[BellmanRowCache] = None,
) -> LpModel:
    """Self-guided model: Bellman rows plus V(s) >= V_prev(s) at each guide state.

    ``prev`` must have been solved against a prefix of ``bases``.  With no
    previous solution the rows coincide with the standard model (the first
    iteration's guide constraints are vacuous).
    """
    falp = build_falp(mdp, bases, plan, nu_samples, row_cache=row_cache)
    if prev is None:
        return falp
    if len(prev) > len(bases):
        raise ValueError(f"previous solution has {len(prev)} bases, current set only {len(bases)}")
    raw_plan = plan.plan if isinstance(plan, PreparedPlan) else plan
    guide = raw_plan.guide_states
    if len(guide) == 0:
        return falp
    prev_vals = vfa_values(bases.prefix(len(prev)), prev, guide)
    # V(s; beta) >= prev - guide_tol stored as -V(s; beta) <= -(prev - guide_tol)
    phi_g = features(bases, guide)
    guide_rows = -np.hstack([np.ones((len(guide), 1)), phi_g])
    return LpModel(
        objective=falp.objective,
        rows=np.vstack([falp.rows, guide_rows]),
        rhs=np.concatenate([falp.rhs, -(prev_vals - guide_tol)]),
        tags=falp.tags + (TAG_SELF_GUIDING,) * len(guide),
    )


def solve(model: LpModel, backend: SolverBackend) -> tuple[VfaWeights, float]:
    """Solve a VFA model; non-optimal statuses raise SolverError."""
    sol = backend.solve(model)
    if sol.status != "optimal":
        raise SolverError(sol.status)
    return VfaWeights(beta0=float(sol.x[0]), betas=sol.x[1:]), float(sol.objective)


def vfa_value(bases: BasisSet, w: VfaWeights, s) -> float:
    return float(vfa_values(bases, w, np.atleast_2d(np.asarray(s, dtype=float)))[0])


def vfa_values(bases: BasisSet, w: VfaWeights, states: np.ndarray) -> np.ndarray:
    """V(s) = beta0 + betas . phi(s) for each row of ``states``."""
    if len(w) != len(bases):
        raise ValueError(f"weight length {len(w)} != basis count {len(bases)}")
    return w.beta0 + features(bases, states) @ w.betas


def lb_expectation(bases: BasisSet, w: VfaWeights, chi_samples: np.ndarray) -> float:
    """E_chi[V(s)] over a fixed sample set (exact for a degenerate chi atom)."""
    return float(vfa_values(bases, w, chi_samples).mean())


# --- plain-text interchange format -----------------------------------------
#
#   ralp-lp 1
#   vars <num_vars>
#   maximize <c_0> ... <c_{v-1}>
#   row <tag> <a_0> ... <a_{v-1}> <= <rhs>      (one line per row)
#
# Floats are written with repr so a round trip is exact.


def lp_to_text(model: LpModel) -> str:
    lines = [
        "ralp-lp 1",
        f"vars {model.num_vars}",
        "maximize " + " ".join(repr(float(c)) for c in model.objective),
    ]
    for i in range(model.num_rows):
        coeffs = " ".join(repr(float(c)) for c in model.rows[i])
        lines.append(f"row {model.tags[i]} {coeffs} <= {float(model.rhs[i])!r}")
    return "\n".join(lines) + "\n"


def lp_from_text(text: str) -> LpModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines[0].strip() != "ralp-lp 1":
        raise ValueError(f"unknown LP format header: {lines[0]!r}")
    num_vars = int(lines[1].split()[1])
    obj = np.array([float(t) for t in lines[2].split()[1:]])
    if len(obj) != num_vars:
        raise ValueError("objective length does not match vars")
    rows, rhs, tags = [], [], []
    for ln in lines[3:]:
        tokens = ln.split()
        if tokens[0] != "row" or tokens[-2] != "<=":
            raise ValueError(f"malformed row line: {ln!r}")
        tags.append(tokens[1])
        rows.append([float(t) for t in tokens[2:-2]])
        rhs.append(float(tokens[-1]))
    return LpModel(
        objective=obj,
        rows=np.array(rows).reshape(len(rhs), num_vars),
        rhs=np.array(rhs),
        tags=tuple(tags),
    )
