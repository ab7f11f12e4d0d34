"""Estimates and bounds for causal-piece counts under random weights.

Whether a size-k input subset can be the causal set of a neuron comes
down to whether its weight sum clears the threshold, so the expected
number of realizable pieces of a fan-in-N neuron is

    eta = sum_k C(N, k) * p_k,      p_k = P(sum of k weights >= theta),

reported alongside the fraction eta / (2^N - 1) of all conceivable
subsets.  This module estimates p_k by Monte Carlo (from a weight
distribution or a concrete weight vector), evaluates eta in exact
integer or log-space arithmetic, extends the estimate through depth by
the recursion eta_n = sum_r C(N, r) * p_r * eta_{n-1}^r, sweeps (mu,
sigma) grids for normal weights, and provides the random-walk lower
bound on the achievable fraction together with its first-passage
helpers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionError, InputError, Topology

__all__ = [
    "FAMILIES",
    "OPTIMIZED_COEFFS",
    "DistributionSpec",
    "PqkProfile",
    "EstimateResult",
    "SweepResult",
    "monte_carlo_pqk",
    "pqk_from_weight_vector",
    "eta_from_pqk",
    "sparre_andersen_bound",
    "first_passage_probability",
    "survival_probability",
    "deep_upper_bound",
    "grid_sweep",
]

FAMILIES = ("normal", "lognormal", "uniform", "uniform_positive")

# Fan-in power-law coefficients found by the evolutionary search, one
# preset per family; these maximize the output-layer piece count.
OPTIMIZED_COEFFS = {
    "normal": (1.69, 0.79, 1.13, 0.49),
    "uniform": (1.85, 0.39, 1.02, 0.54),
    "lognormal": (1.29, 0.57, 0.85, 0.76),
    "uniform_positive": (0.70, 0.25, 0.80, 0.47),
}

_LN2 = math.log(2.0)

# Exact integer binomials below this fan-in, log-gamma above.
_EXACT_N = 60

# Exhaustive subset enumeration cap in pqk_from_weight_vector.
_EXHAUSTIVE_N = 20


def _logsumexp(terms: np.ndarray) -> float:
    if terms.size == 0:
        return -math.inf
    m = float(np.max(terms))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(terms - m))))


def _log_combs(n: int) -> np.ndarray:
    """log C(n, k) for k = 1..n via the cumulative ratio identity."""
    k = np.arange(1, n + 1)
    return np.cumsum(np.log((n - k + 1) / k))


# ---------------------------------------------------------------------------
# weight distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionSpec:
    """A weight distribution, either with fixed parameters or a fan-in
    power law.

    Exactly one of `params` and `coeffs` is given.  The two parameters
    mean, per family:

        normal            (mean, std)
        lognormal         (mean, std) of the distribution itself
        uniform           (half_width, center) -> U(c - h, c + h)
        uniform_positive  (low, width)         -> U(low, low + width)

    With coeffs (c0, c1, c2, c3) the parameters scale with fan-in n as
    param0 = c0 * n^-c1 and param1 = c2 * n^-c3.
    """

    family: str
    params: tuple[float, float] | None = None
    coeffs: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r}, pick one of {FAMILIES}")
        if (self.params is None) == (self.coeffs is None):
            raise InputError("give exactly one of params and coeffs")
        if self.params is not None:
            object.__setattr__(self, "params", tuple(float(v) for v in self.params))
            if len(self.params) != 2:
                raise InputError("params must be a (param0, param1) pair")
        else:
            object.__setattr__(self, "coeffs", tuple(float(v) for v in self.coeffs))
            if len(self.coeffs) != 4:
                raise InputError("coeffs must be (c0, c1, c2, c3)")

    def resolve(self, fan_in: int) -> tuple[float, float]:
        """Concrete (param0, param1) for one fan-in; validates them."""
        if fan_in < 1:
            raise InputError("fan-in must be >= 1")
        if self.coeffs is not None:
            c0, c1, c2, c3 = self.coeffs
            v0, v1 = c0 * fan_in ** (-c1), c2 * fan_in ** (-c3)
        else:
            v0, v1 = self.params
        if not (math.isfinite(v0) and math.isfinite(v1)):
            raise InputError("distribution parameters must be finite")
        if self.family == "normal":
            if v1 < 0.0:
                raise InputError("normal std must be >= 0")
        elif self.family == "lognormal":
            if v0 <= 0.0 or v1 < 0.0:
                raise InputError("lognormal needs mean > 0 and std >= 0")
        elif self.family == "uniform":
            if v0 < 0.0:
                raise InputError("uniform half-width must be >= 0")
        else:
            if v0 < 0.0 or v1 < 0.0:
                raise InputError("uniform_positive needs low >= 0 and width >= 0")
        return v0, v1

    def sample(self, rng: np.random.Generator, size, fan_in: int) -> np.ndarray:
        v0, v1 = self.resolve(fan_in)
        if self.family == "normal":
            return rng.normal(v0, v1, size)
        if self.family == "lognormal":
            # convert the distribution's mean/std to the underlying
            # normal's parameters
            sigma2 = math.log1p((v1 / v0) ** 2)
            mu = math.log(v0) - 0.5 * sigma2
            return rng.lognormal(mu, math.sqrt(sigma2), size)
        if self.family == "uniform":
            return rng.uniform(v1 - v0, v1 + v0, size)
        return rng.uniform(v0, v0 + v1, size)


# ---------------------------------------------------------------------------
# p_k profiles and the eta estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PqkProfile:
    """Threshold-crossing probabilities p_k for k = 1..N.

    p[k-1] estimates P(sum of k weights >= theta); num_samples is the
    Monte Carlo count per k, and exact marks enumerated profiles whose
    standard error is zero.  Enumerated profiles also carry counts, the
    integer number of satisfying size-k subsets, so downstream sums stay
    integer-exact instead of round-tripping through p_k floats.
    """

    p: np.ndarray
    num_samples: int
    exact: bool = False
    counts: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=np.float64)
        object.__setattr__(self, "p", p)
        if p.ndim != 1 or p.size == 0:
            raise DimensionError("p must be a non-empty vector")
        if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
            raise InputError("probabilities must lie in [0, 1]")
        if self.num_samples < 1:
            raise InputError("num_samples must be >= 1")
        if self.counts is not None:
            counts = np.asarray(self.counts, dtype=np.int64)
            object.__setattr__(self, "counts", counts)
            if counts.shape != p.shape:
                raise DimensionError("counts must match p in shape")
            if np.any(counts < 0):
                raise InputError("counts must be non-negative")

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def stderr(self) -> np.ndarray:
        if self.exact:
            return np.zeros_like(self.p)
        return np.sqrt(self.p * (1.0 - self.p) / self.num_samples)


@dataclass(frozen=True)
class EstimateResult:
    """eta with its normalized fraction eta / (2^N - 1).

    log2_eta stays finite when eta itself overflows; stderr is the
    standard error of the fraction, propagated linearly from the p_k.
    """

    eta: float
    fraction: float
    log2_eta: float
    stderr: float


def monte_carlo_pqk(
    spec: DistributionSpec,
    n: int,
    num_samples: int,
    theta: float = 1.0,
    seed: int = 0,
) -> PqkProfile:
    """Estimate p_k by drawing num_samples weight vectors per k.

    Each k uses its own derived stream (seed, k), so the per-k estimates
    are independent and schedule-independent.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if num_samples < 1:
        raise InputError("num_samples must be >= 1")
    if not math.isfinite(theta):
        raise InputError("theta must be finite")
    spec.resolve(n)  # surface bad parameters before any sampling
    p = np.empty(n)
    for k in range(1, n + 1):
        rng = np.random.default_rng([seed, k])
        draws = spec.sample(rng, (num_samples, k), fan_in=n)
        p[k - 1] = np.mean(np.sum(draws, axis=1) >= theta)
    return PqkProfile(p, num_samples)


def pqk_from_weight_vector(
    weights: Sequence[float],
    num_samples: int = 10_000,
    theta: float = 1.0,
    seed: int = 0,
    exhaustive: bool = False,
) -> PqkProfile:
    """p_k for one concrete weight vector via random size-k subsets.

    With exhaustive=True every subset is enumerated instead (exact
    probabilities, capped at 20 weights).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DimensionError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)):
        raise InputError("weights must be finite")
    n = w.size

    if exhaustive:
        if n > _EXHAUSTIVE_N:
            raise InputError(f"exhaustive mode needs at most {_EXHAUSTIVE_N} weights")
        masks = (np.arange(1, 2**n, dtype=np.uint32)[:, None] >> np.arange(n)) & 1
        sums = masks.astype(np.float64) @ w
        sizes = masks.sum(axis=1)
        p = np.empty(n)
        counts = np.empty(n, dtype=np.int64)
        for k in range(1, n + 1):
            sel = sums[sizes == k]
            counts[k - 1] = np.count_nonzero(sel >= theta)
            p[k - 1] = counts[k - 1] / sel.size
        return PqkProfile(p, num_samples=2**n - 1, exact=True, counts=counts)

    if num_samples < 1:
        raise InputError("num_samples must be >= 1")
    p = np.empty(n)
    for k in range(1, n + 1):
        rng = np.random.default_rng([seed, k])
        idx = np.argsort(rng.random((num_samples, n)), axis=1)[:, :k]
        p[k - 1] = np.mean(np.sum(w[idx], axis=1) >= theta)
    return PqkProfile(p, num_samples)


def eta_from_pqk(profile: PqkProfile) -> EstimateResult:
    """eta = sum_k C(N,k) p_k, exact binomials up to N=60, log-space above."""
    n = profile.n
    p = profile.p
    log_combs = _log_combs(n)
    log_denom = n * _LN2 + math.log1p(-(2.0 ** -n))

    if n <= _EXACT_N:
        if profile.counts is not None:
            # integer path: no rounding from the p_k division round trip
            eta = float(int(np.sum(profile.counts)))
        else:
            combs = [math.comb(n, k) for k in range(1, n + 1)]
            eta = math.fsum(c * pk for c, pk in zip(combs, p))
        fraction = eta / float(2**n - 1)
        log2_eta = math.log2(eta) if eta > 0.0 else -math.inf
    else:
        pos = p > 0.0
        log_eta = _logsumexp(log_combs[pos] + np.log(p[pos]))
        log2_eta = log_eta / _LN2
        eta = math.exp(log_eta) if log_eta < 709.0 else math.inf
        fraction = math.exp(log_eta - log_denom) if math.isfinite(log_eta) else 0.0

    w_norm = np.exp(log_combs - log_denom)
    stderr = float(np.sqrt(np.sum((w_norm * profile.stderr) ** 2)))
    return EstimateResult(eta, min(max(fraction, 0.0), 1.0), log2_eta, stderr)


# ---------------------------------------------------------------------------
# random-walk lower bound
# ---------------------------------------------------------------------------


def sparre_andersen_bound(n: int) -> float:
    """Lower bound on the achievable piece fraction of a fan-in-n neuron.

    For symmetric continuous weights in the small-threshold limit, the
    count is at least (2^n - 1) / (2n sqrt(pi (n - 2/3))); this returns
    that bound divided by 2^n - 1, which stays representable at any n.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    return 1.0 / (2.0 * n * math.sqrt(math.pi * (n - 2.0 / 3.0)))


def first_passage_probability(step: int) -> float:
    """Probability a symmetric random walk first crosses at this step.

    Catalan numbers give p(m + 1) = C_m / 2^(2m + 1); integer-exact,
    correctly rounded at any step.
    """
    if step < 1:
        raise InputError("step must be >= 1")
    m = step - 1
    return math.comb(2 * m, m) // (m + 1) / (1 << (2 * m + 1))


def survival_probability(steps: int) -> float:
    """Probability the walk has not crossed within the first `steps`."""
    if steps < 0:
        raise InputError("steps must be >= 0")
    return math.comb(2 * steps, steps) / (1 << (2 * steps))


# ---------------------------------------------------------------------------
# depth recursion and grid sweeps
# ---------------------------------------------------------------------------


def deep_upper_bound(profiles: Sequence[PqkProfile], topology: Topology) -> float:
    """log2 of the layered estimate eta_L.

    Starting from eta_0 = 1, each layer multiplies the reachable pieces:
    eta_n = sum_r C(N, r) p_r eta_{n-1}^r with N the layer's fan-in.
    Evaluated fully in log-space, so only the log value is returned.
    """
    if len(profiles) != topology.num_layers:
        raise DimensionError("need one profile per layer")
    for ell, prof in enumerate(profiles):
        if prof.n != topology.layer_sizes[ell]:
            raise DimensionError(
                f"profile {ell} covers fan-in {prof.n}, layer needs "
                f"{topology.layer_sizes[ell]}"
            )
    log_eta = 0.0
    for prof in profiles:
        n = prof.n
        r = np.arange(1, n + 1)
        pos = prof.p > 0.0
        if not np.any(pos) or log_eta == -math.inf:
            log_eta = -math.inf
            continue
        terms = _log_combs(n)[pos] + np.log(prof.p[pos]) + r[pos] * log_eta
        log_eta = _logsumexp(terms)
    return log_eta / _LN2


@dataclass(frozen=True)
class SweepResult:
    """Fractions over a (mu, sigma) grid of normal weight distributions."""

    mus: np.ndarray
    sigmas: np.ndarray
    fraction: np.ndarray
    log2_eta: np.ndarray
    stderr: np.ndarray
    n: int
    num_samples: int
    theta: float
    seed: int


def grid_sweep(
    mus: Sequence[float],
    sigmas: Sequence[float],
    n: int,
    num_samples: int,
    theta: float = 1.0,
    seed: int = 0,
) -> SweepResult:
    """eta fractions for normal(mu, sigma^2) weights over a grid.

    The per-k standard-normal sums are drawn once from streams
    (seed, k) and shifted/scaled per grid point, so every point sees the
    same estimator distribution as monte_carlo_pqk while the whole grid
    costs one set of draws (common random numbers across points).
    """
    mu_ax = np.asarray(mus, dtype=np.float64)
    sg_ax = np.asarray(sigmas, dtype=np.float64)
    if mu_ax.ndim != 1 or mu_ax.size == 0 or sg_ax.ndim != 1 or sg_ax.size == 0:
        raise DimensionError("mu and sigma ranges must be non-empty vectors")
    if not (np.all(np.isfinite(mu_ax)) and np.all(np.isfinite(sg_ax))):
        raise InputError("grid values must be finite")
    if np.any(sg_ax < 0.0):
        raise InputError("sigma must be >= 0")
    if n < 1 or num_samples < 1:
        raise InputError("n and num_samples must be >= 1")

    prob = np.empty((n, mu_ax.size, sg_ax.size))
    pos = sg_ax > 0.0
    for k in range(1, n + 1):
        rng = np.random.default_rng([seed, k])
        z = np.sort(np.sum(rng.standard_normal((num_samples, k)), axis=1))
        # sum of k N(mu, sigma^2) draws == k*mu + sigma * (k-fold normal sum)
        thresholds = (theta - k * mu_ax[:, None]) / sg_ax[None, pos]
        below = np.searchsorted(z, thresholds.ravel(), side="left")
        prob[k - 1][:, pos] = (num_samples - below.reshape(thresholds.shape)) / num_samples
        prob[k - 1][:, ~pos] = (k * mu_ax[:, None] >= theta)

    fraction = np.empty((mu_ax.size, sg_ax.size))
    log2_eta = np.empty_like(fraction)
    stderr = np.empty_like(fraction)
    for i in range(mu_ax.size):
        for j in range(sg_ax.size):
            est = eta_from_pqk(PqkProfile(prob[:, i, j], num_samples))
            fraction[i, j] = est.fraction
            log2_eta[i, j] = est.log2_eta
            stderr[i, j] = est.stderr
    return SweepResult(mu_ax, sg_ax, fraction, log2_eta, stderr, n, num_samples,
                       float(theta), int(seed))
