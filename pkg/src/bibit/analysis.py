"""Numerical experiments on the quantities that drive binarized attention
and distillation: direction-mismatch rates of Q-bit quantization, the
softmax binarization threshold, the distribution of binary attention
scores, sign balance after mean removal, order preservation of shifted
softmax binarization, and the entropy of partially zeroed weights.

Monte Carlo routines split their samples into shards, each with its own
``SeedSequence`` child stream, and merge integer counts in shard order, so a
(seed, samples, shards) triple always produces the same numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from . import binarize as bz
from .attention import binary_entropy, entropy_from_fraction
from .errors import DomainError

DEFAULT_SAMPLES = 10**6


def _shard_sizes(samples: int, shards: int) -> list[int]:
    base, extra = divmod(samples, shards)
    return [base + (i < extra) for i in range(shards)]


def _streams(seed: int, shards: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(shards)]


# ------------------------------------------------------------------ mismatch


@dataclass(frozen=True)
class MismatchSimConfig:
    samples: int = DEFAULT_SAMPLES
    q_values: tuple[int, ...] = tuple(range(1, 9))
    L: float = 1.0
    sigma1: float = 1.0
    sigma2: float = 1.0
    seed: int = 0
    shards: int = 8

    def __post_init__(self):
        if self.samples < 10**4:
            raise DomainError(f"need at least 1e4 samples, got {self.samples}")
        if not self.q_values:
            raise DomainError("no bit widths requested")
        for q in self.q_values:
            bz.QuantizerSpec(int(q), self.L)
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise DomainError("standard deviations must be positive")
        if self.shards < 1:
            raise DomainError("shards must be positive")


def simulate_mismatch(cfg: MismatchSimConfig) -> list[dict]:
    """Rate at which ``sign(X - X_T)`` and ``sign(quantize_Q(X) - X_T)`` disagree.

    ``X ~ N(0, sigma1^2)``, ``X_T ~ N(0, sigma2^2)`` independent; a zero on
    either side counts as agreement. Returns rows ``{"Q", "rate"}``.
    """
    counts = {q: 0 for q in cfg.q_values}
    for rng, n in zip(_streams(cfg.seed, cfg.shards), _shard_sizes(cfg.samples, cfg.shards)):
        x = rng.normal(0.0, cfg.sigma1, n)
        x_t = rng.normal(0.0, cfg.sigma2, n)
        want = np.sign(x - x_t)
        for q in cfg.q_values:
            got = np.sign(bz.quantize_q(x, bz.QuantizerSpec(int(q), cfg.L)) - x_t)
            counts[q] += int(np.count_nonzero(want * got < 0))
    return [{"Q": int(q), "rate": counts[q] / cfg.samples} for q in cfg.q_values]


def mismatch_rate_quadrature(q: int, L: float = 1.0, sigma1: float = 1.0, sigma2: float = 1.0) -> float:
    """Exact mismatch rate by numerical integration.

    A mismatch happens when ``X_T`` falls strictly between ``X`` and its
    quantized value, so the rate is
    ``E_X |Phi_2(X) - Phi_2(quantize(X))|`` with ``Phi_2`` the CDF of ``X_T``.
    """
    spec = bz.QuantizerSpec(int(q), L)
    cdf2 = lambda t: special.ndtr(t / sigma2)  # noqa: E731

    def integrand(x):
        qx = float(bz.quantize_q(np.array([x]), spec)[0])
        return math.exp(-0.5 * (x / sigma1) ** 2) / (sigma1 * math.sqrt(2 * math.pi)) * abs(cdf2(x) - cdf2(qx))

    if q == 1:
        cuts = [0.0]
    else:
        levels = 2**q - 1
        step = 2.0 * L / levels
        # rounding jumps where levels * x / 2L + 0.5 is an integer j
        jumps = {(j - 0.5) * step for j in range(-levels, levels + 2)}
        cuts = sorted({c for c in jumps if abs(c) <= L} | {-L, L})
    lo, hi = -12.0 * sigma1, 12.0 * sigma1
    edges = [lo] + [c for c in cuts if lo < c < hi] + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, a, b, limit=200, epsabs=1e-12, epsrel=1e-10)
        total += val
    return total


# ---------------------------------------------------------------- threshold


def threshold_curve(k_values, samples: int = 10**5, seed: int = 0, shards: int = 4) -> list[dict]:
    """Median of the first softmax component over iid standard normal k-vectors."""
    k_values = [int(k) for k in k_values]
    if any(k < 2 for k in k_values):
        raise DomainError("every k must be at least 2")
    if samples < 1:
        raise DomainError("samples must be positive")
    rows = []
    for i, k in enumerate(k_values):
        firsts = []
        child = np.random.SeedSequence([seed, i])
        for s, n in zip(child.spawn(shards), _shard_sizes(samples, shards)):
            a = np.random.default_rng(s).standard_normal((n, k))
            z = np.exp(a - a.max(axis=1, keepdims=True))
            firsts.append(z[:, 0] / z.sum(axis=1))
        rows.append({"k": k, "tau": float(np.median(np.concatenate(firsts)))})
    return rows


# ------------------------------------------------------------- score pmf


@dataclass
class ScoreDistribution:
    D: int
    support: np.ndarray
    pmf: np.ndarray
    expected: np.ndarray
    chi2: float
    p_value: float
    dof: int
    mean: float
    std: float

    def rows(self) -> list[dict]:
        return [{"score": int(s), "empirical": float(p), "exact": float(e)}
                for s, p, e in zip(self.support, self.pmf, self.expected)]


def _pool_bins(obs: np.ndarray, exp: np.ndarray, min_expected: float = 5.0):
    """Merge adjacent bins from both tails until every expected count reaches ``min_expected``."""
    obs, exp = list(obs), list(exp)
    for _ in range(2):
        while len(exp) > 1 and exp[0] < min_expected:
            e0, o0 = exp.pop(0), obs.pop(0)
            exp[0] += e0
            obs[0] += o0
        obs.reverse()
        exp.reverse()
    return np.array(obs), np.array(exp)


def score_distribution_check(D: int, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                             shards: int = 8) -> ScoreDistribution:
    """Score ``B_q . B_k`` of independent, balanced random +-1 rows of length D.

    Rows are drawn as random bit words, so the score is
    ``D - 2 popcount(q xor k)``; it is compared with the exact binomial pmf
    ``P(2i - D) = 0.5^D C(D, i)`` by a chi-square test on pooled bins.
    """
    if D < 1:
        raise DomainError("D must be at least 1")
    if samples < 1:
        raise DomainError("samples must be positive")
    words = -(-D // 64)
    tail = D - 64 * (words - 1)
    last_mask = np.uint64((1 << tail) - 1) if tail < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    counts = np.zeros(D + 1, dtype=np.int64)
    total, total_sq = 0, 0
    for rng, n in zip(_streams(seed, shards), _shard_sizes(samples, shards)):
        q = rng.integers(0, 2**64, size=(n, words), dtype=np.uint64, endpoint=False)
        k = rng.integers(0, 2**64, size=(n, words), dtype=np.uint64, endpoint=False)
        q[:, -1] &= last_mask
        k[:, -1] &= last_mask
        ones = np.bitwise_count(np.bitwise_xor(q, k)).sum(axis=1, dtype=np.int64)
        score = D - 2 * ones
        counts += np.bincount((score + D) // 2, minlength=D + 1)
        total += int(score.sum())
        total_sq += int((score * score).sum())
    support = np.arange(-D, D + 1, 2)
    exact = np.array([math.comb(D, i) for i in range(D + 1)], dtype=np.float64) / 2.0**D
    obs, exp = _pool_bins(counts.astype(np.float64), exact * samples)
    if len(obs) > 1:
        chi2, p = stats.chisquare(obs, exp * obs.sum() / exp.sum())
        dof = len(obs) - 1
    else:
        chi2, p, dof = 0.0, 1.0, 0
    mean = total / samples
    var = total_sq / samples - mean * mean
    return ScoreDistribution(D, support, counts / samples, exact, float(chi2), float(p), dof,
                             float(mean), float(math.sqrt(max(var, 0.0))))


# ----------------------------------------------------------------- balance


@dataclass(frozen=True)
class BalanceResult:
    before: float
    after: float
    entropy_after: float


def balance_check(w, shift: float = 0.0) -> BalanceResult:
    """Positive-sign fraction of ``W + shift`` before and after removing its mean."""
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size < 10**4:
        raise DomainError(f"need at least 1e4 weights, got {w.size}")
    shifted = w + shift
    before = float((bz.sign_fwd(shifted) > 0).mean())
    signs, _ = bz.weight_signs(shifted)
    after = float((signs > 0).mean())
    return BalanceResult(before, after, binary_entropy(signs))


def gaussian_weights(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(n)


# ------------------------------------------------------- order preservation


@dataclass(frozen=True)
class OrderCheck:
    rows: int
    preserved: int

    @property
    def ok(self) -> bool:
        return self.preserved == self.rows


def order_preservation_check(k: int, tau: float, samples: int = 10**4, seed: int = 0) -> OrderCheck:
    """Check that ``sign(softmax(a) - tau)`` always selects a top-n set of ``a``."""
    if k < 2:
        raise DomainError("k must be at least 2")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((samples, k))
    z = np.exp(a - a.max(axis=1, keepdims=True))
    s = z / z.sum(axis=1, keepdims=True)
    picked = bz.sign_fwd(s - tau) > 0
    order = np.sort(a, axis=1)[:, ::-1]
    n_sel = picked.sum(axis=1)
    ok = 0
    for row, n in enumerate(n_sel):
        if n == 0:
            ok += 1
            continue
        cut = order[row, n - 1]
        ok += bool(np.all(a[row][picked[row]] >= cut) and np.all(a[row][~picked[row]] < cut))
    return OrderCheck(samples, ok)


# ------------------------------------------------------------------ entropy


def entropy_ablation(percentages, size: int = 10**4) -> list[dict]:
    """Entropy of a {0,1} weight tensor in which exactly fraction p is zero."""
    rows = []
    for p in percentages:
        p = float(p)
        if not 0.0 < p < 1.0:
            raise DomainError(f"zero fraction must lie in (0, 1), got {p}")
        zeros = int(round(p * size))
        weights = np.ones(size)
        weights[:zeros] = 0.0
        rows.append({"zero_fraction": p, "entropy": binary_entropy(weights),
                     "analytic": entropy_from_fraction(min(zeros, size - zeros) / size)})
    return rows


@dataclass
class ExperimentResult:
    """Rows for CSV output and a JSON summary with pass/fail flags."""

    name: str
    rows: list[dict]
    summary: dict = field(default_factory=dict)
