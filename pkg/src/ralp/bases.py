"""Random basis functions: samplers, evaluators, and sampling-bound constants.

Two universal feature classes are provided.  Fourier bases are cosines of a
random affine map, ``cos(q + w . s)`` with ``q ~ U[-pi, pi]`` and
``w ~ N(0, sigma^-2 I)``; stump bases are signs of a thresholded coordinate,
``sgn(s_q - w)``, smoothed by a piecewise-linear surrogate near the kink so
they can live inside linear programs.

Basis sets are reproducible from ``(seed, kind, sigma_range, count)`` and
extending a set preserves the existing entries bit-for-bit (draws come
sequentially from a single PCG64 stream), which nested-approximation
arguments rely on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

# Width of the linear band in the stump surrogate.
DEFAULT_STUMP_EPS = 0.01


@dataclass(frozen=True)
class FourierBasis:
    q: float
    omega: tuple[float, ...]
    sigma: Optional[float]  # bandwidth used at sampling time; None for hand-fixed bases

    def __post_init__(self):
        if not -math.pi - 1e-12 <= self.q <= math.pi + 1e-12:
            raise ValueError(f"intercept {self.q} outside [-pi, pi]")
        if not all(math.isfinite(w) for w in self.omega):
            raise ValueError("non-finite frequency")


@dataclass(frozen=True)
class StumpBasis:
    q_index: int  # coordinate selector, 1-based
    omega: float
    sigma: float

    def __post_init__(self):
        if self.q_index < 1:
            raise ValueError(f"q_index must be >= 1, got {self.q_index}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not -self.sigma - 1e-12 <= self.omega <= self.sigma + 1e-12:
            raise ValueError(f"threshold {self.omega} outside [-sigma, sigma]")


Basis = Union[FourierBasis, StumpBasis]


@dataclass(frozen=True)
class BasisSet:
    """Ordered, seed-reproducible collection of random basis parameters."""

    kind: str  # "fourier" | "stump"
    entries: tuple[Basis, ...]
    seed: int
    sigma_range: tuple[float, float]
    dim_state: int

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def fixed(self) -> bool:
        """True for hand-specified sets that cannot be re-derived from the seed."""
        return self.kind == "fourier" and any(b.sigma is None for b in self.entries)

    def prefix(self, count: int) -> "BasisSet":
        """The set restricted to its first ``count`` entries."""
        if count > len(self.entries):
            raise ValueError(f"prefix of {count} from a set of {len(self.entries)}")
        return BasisSet(
            kind=self.kind,
            entries=self.entries[:count],
            seed=self.seed,
            sigma_range=self.sigma_range,
            dim_state=self.dim_state,
        )

    def extend(self, count: int) -> "BasisSet":
        """Return a set with ``count`` additional sampled entries.

        The first ``len(self)`` entries of the result are bit-identical to
        this set's entries.
        """
        if self.fixed:
            raise ValueError("cannot extend a hand-specified basis set")
        if self.kind == "fourier":
            return sample_fourier(len(self) + count, self.dim_state, self.sigma_range, self.seed)
        return sample_stumps(len(self) + count, self.dim_state, self.sigma_range[0], self.seed)

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "seed": self.seed,
            "sigma_range": list(self.sigma_range),
            "dim_state": self.dim_state,
            "entries": [
                {"q": b.q, "omega": list(b.omega), "sigma": b.sigma}
                if self.kind == "fourier"
                else {"q_index": b.q_index, "omega": b.omega, "sigma": b.sigma}
                for b in self.entries
            ],
        }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "BasisSet":
        doc = json.loads(text)
        if doc["kind"] == "fourier":
            entries = tuple(
                FourierBasis(q=e["q"], omega=tuple(e["omega"]), sigma=e["sigma"])
                for e in doc["entries"]
            )
        else:
            entries = tuple(
                StumpBasis(q_index=e["q_index"], omega=e["omega"], sigma=e["sigma"])
                for e in doc["entries"]
            )
        return BasisSet(
            kind=doc["kind"],
            entries=entries,
            seed=doc["seed"],
            sigma_range=tuple(doc["sigma_range"]),
            dim_state=doc["dim_state"],
        )


def sample_fourier(count: int, dim_state: int, sigma_range: Sequence[float], seed: int) -> BasisSet:
    """Sample Fourier bases; sigma is drawn per basis uniformly from the range.

    Per entry the draw order is (sigma, q, omega), all from one stream, so a
    longer set sampled from the same seed starts with the same entries.
    """
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0.0 < lo <= hi:
        raise ValueError(f"sigma range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    entries = []
    for _ in range(count):
        sigma = rng.uniform(lo, hi)
        q = rng.uniform(-math.pi, math.pi)
        omega = rng.normal(0.0, 1.0 / sigma, size=dim_state)
        entries.append(FourierBasis(q=float(q), omega=tuple(omega), sigma=float(sigma)))
    return BasisSet(
        kind="fourier",
        entries=tuple(entries),
        seed=seed,
        sigma_range=(lo, hi),
        dim_state=dim_state,
    )


def sample_stumps(count: int, dim_state: int, sigma: float, seed: int) -> BasisSet:
    """Sample stump bases: coordinate index uniform on {1..d}, threshold on [-sigma, sigma]."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    entries = []
    for _ in range(count):
        q_index = int(rng.integers(1, dim_state + 1))
        omega = rng.uniform(-sigma, sigma)
        entries.append(StumpBasis(q_index=q_index, omega=float(omega), sigma=float(sigma)))
    return BasisSet(
        kind="stump",
        entries=tuple(entries),
        seed=seed,
        sigma_range=(float(sigma), float(sigma)),
        dim_state=dim_state,
    )


def empty_stumps(dim_state: int) -> BasisSet:
    """Zero-entry stump set; the affine bias approximation uses no random bases."""
    return BasisSet(kind="stump", entries=(), seed=0, sigma_range=(1.0, 1.0), dim_state=dim_state)


def fixed_fourier(omegas: Sequence[Sequence[float]] | Sequence[float], dim_state: int = 1) -> BasisSet:
    """Hand-specified Fourier set with zero intercepts, e.g. cos(theta * s) for scalar states."""
    entries = []
    for w in omegas:
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if len(w) != dim_state:
            raise ValueError(f"frequency dimension {len(w)} != {dim_state}")
        entries.append(FourierBasis(q=0.0, omega=tuple(w), sigma=None))
    return BasisSet(
        kind="fourier",
        entries=tuple(entries),
        seed=0,
        sigma_range=(1.0, 1.0),
        dim_state=dim_state,
    )


def eval_fourier(b: FourierBasis, s) -> float:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if len(s) != len(b.omega):
        raise ValueError(f"state dimension {len(s)} != {len(b.omega)}")
    return float(np.cos(b.q + np.dot(b.omega, s)))


def eval_stump(b: StumpBasis, s, eps: float = DEFAULT_STUMP_EPS) -> float:
    """Piecewise-linear sign surrogate: x/eps clipped to [-1, 1] for x = s_q - omega."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = float(s[b.q_index - 1]) - b.omega
    return float(np.clip(x / eps, -1.0, 1.0))


def features(basis_set: BasisSet, states: np.ndarray, eps: float = DEFAULT_STUMP_EPS) -> np.ndarray:
    """Feature matrix Phi with Phi[i, j] = basis_j(states[i]); states shape (n, d) or (d,)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != basis_set.dim_state:
        raise ValueError(f"state dimension {states.shape[1]} != {basis_set.dim_state}")
    if len(basis_set) == 0:
        return np.zeros((len(states), 0))
    if basis_set.kind == "fourier":
        w = np.array([b.omega for b in basis_set.entries])  # (N, d)
        q = np.array([b.q for b in basis_set.entries])
        return np.cos(states @ w.T + q)
    idx = np.array([b.q_index - 1 for b in basis_set.entries])
    thr = np.array([b.omega for b in basis_set.entries])
    return np.clip((states[:, idx] - thr) / eps, -1.0, 1.0)


def fourier_angles(basis_set: BasisSet, states: np.ndarray) -> np.ndarray:
    """Affine-map angles q + w . s per state row, (n, N); Fourier sets only."""
    if basis_set.kind != "fourier":
        raise ValueError("angles are only defined for Fourier sets")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    w = np.array([b.omega for b in basis_set.entries])
    q = np.array([b.q for b in basis_set.entries])
    return states @ w.T + q


def fourier_frequencies(basis_set: BasisSet) -> np.ndarray:
    if basis_set.kind != "fourier":
        raise ValueError("frequencies are only defined for Fourier sets")
    return np.array([b.omega for b in basis_set.entries])


@dataclass(frozen=True)
class BoundConstants:
    """Constants entering the basis-count bound: Omega, Delta_delta, L, C_S."""

    omega_const: float
    delta_const: float
    lipschitz: float
    state_diameter: float

    def __post_init__(self):
        for f in ("omega_const", "delta_const", "lipschitz", "state_diameter"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")


def delta_const(delta: float) -> float:
    """sqrt(2 ln(1/delta)); zero exactly when delta = 1."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    return math.sqrt(2.0 * math.log(1.0 / delta))


def fourier_omega_const(
    dim_state: int,
    sigma_range: Sequence[float],
    state_diameter: float,
    lipschitz: float = 1.0,
) -> BoundConstants:
    """Closed-form Omega for the Fourier class: 4 (C_S + 1) L sqrt(E ||theta||^2).

    E ||theta||^2 = pi^2/3 + d / (sigma_lo * sigma_hi), the second term being
    E[sigma^-2] averaged over the sampling interval.  When sigma is randomized
    per basis this is the exact second moment of the mixture, but Omega should
    still be read as an estimate of the single-bandwidth constant.
    """
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    second_moment = math.pi**2 / 3.0 + dim_state / (lo * hi)
    return BoundConstants(
        omega_const=4.0 * (state_diameter + 1.0) * lipschitz * math.sqrt(second_moment),
        delta_const=0.0,
        lipschitz=lipschitz,
        state_diameter=state_diameter,
    )


def falp_sample_bound(
    eps: float,
    delta: float,
    b_norm: float,
    constants: BoundConstants,
    gamma: float,
) -> int:
    """Number of sampled bases sufficient for an eps-accurate VFA at confidence 1-delta.

    ceil( eps^-2 * b_norm^2 * ((1+gamma)/2 * Omega + Delta_delta)^2 )
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if b_norm < 0:
        raise ValueError(f"b_norm must be non-negative, got {b_norm}")
    dd = delta_const(delta)
    val = eps**-2 * b_norm**2 * ((1.0 + gamma) / 2.0 * constants.omega_const + dd) ** 2
    return int(math.ceil(val))
