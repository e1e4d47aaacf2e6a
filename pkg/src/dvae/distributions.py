"""Probability kernels: Bernoulli/categorical mass functions, sampling,
entropy, cross-entropy, binary cross-entropy, their aggregate (summed) forms,
and the closed-form KL divergence against a uniform categorical.

Conventions used throughout:
  * natural logarithms everywhere (entropies and divergences are in nats);
  * 0 * ln 0 = 0 in entropy sums (the limit value);
  * any probability entering a logarithm is clipped away from 0 (and, for
    binary cross-entropy, from 1) by EPS = 1e-7. Stored parameters are never
    clipped, only the value fed to the log.
"""

from __future__ import annotations

import math

import numpy as np

from dvae.tensor import ShapeError

# Clipping constant for probabilities inside logarithms.
EPS = 1e-7

_MASK64 = (1 << 64) - 1


class Rng:
    """SplitMix64 counter-based generator.

    The state advances by a fixed odd constant per draw and the output is a
    bijective mix of the state, so the stream is a pure function of
    (seed, draw index) and identical on every platform. Reference outputs for
    seed 42 (first three raw draws) are pinned in the test suite and README:

        0xBDD732262FEB6E95, 0x28EFE333B266F103, 0x47526757130F9F52
    """

    __slots__ = ("seed", "state")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.state = self.seed

    def next_uint64(self) -> int:
        """Next raw 64-bit output."""
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * 2.0 ** -53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Uses floor(u * n); the bias is
        below 2^-53 * n and irrelevant for the sizes used here."""
        return int(self.uniform() * n)

    def shuffle(self, indices: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(indices) - 1, 0, -1):
            j = self.randint(i + 1)
            indices[i], indices[j] = indices[j], indices[i]


def bernoulli_log_pmf(x: float, p: float) -> float:
    """log of the two-outcome mass function: x*ln(p) + (1-x)*ln(1-p).

    x must be 0 or 1; p must lie in [0, 1] and is clipped to [EPS, 1-EPS]
    before the logs.
    """
    if x not in (0, 1):
        raise ValueError(f"binary value expected, got {x!r}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p!r}")
    p = min(max(p, EPS), 1.0 - EPS)
    return x * math.log(p) + (1.0 - x) * math.log(1.0 - p)


def categorical_sample(p: np.ndarray, rng: Rng) -> int:
    """Draw an index in [0, K) with probability p[i], by inverse CDF.

    The cumulative sum runs left to right over one uniform draw; the last
    category absorbs any rounding residue.
    """
    u = rng.uniform()
    acc = 0.0
    for i, pi in enumerate(p):
        acc += pi
        if u < acc:
            return i
    return len(p) - 1


def entropy(p: np.ndarray) -> float:
    """-sum(p * ln p) in nats, with 0*ln(0) = 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0.0
    return float(-(p[nz] * np.log(p[nz])).sum())


def cross_entropy(a: np.ndarray, b: np.ndarray) -> float:
    """-sum(a * ln b) in nats; b is clipped to >= EPS inside the log."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(-(a * np.log(np.maximum(b, EPS))).sum())


def bce(target: float, prediction: float) -> float:
    """Binary cross-entropy -t*ln(y) - (1-t)*ln(1-y) for a single outcome.

    The target t may be any value in [0, 1]; the prediction y is clipped to
    [EPS, 1-EPS] before the logs.
    """
    y = min(max(prediction, EPS), 1.0 - EPS)
    return -target * math.log(y) - (1.0 - target) * math.log1p(-y)


def aggregate_entropy(probs: np.ndarray) -> float:
    """Sum of per-row entropies of a (D, K) array of probability rows."""
    probs = np.asarray(probs, dtype=np.float64)
    masked = np.where(probs > 0.0, probs, 1.0)  # ln(1) = 0 stands in for 0*ln(0)
    return float(-(probs * np.log(masked)).sum())


def aggregate_bce(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Sum of per-element binary cross-entropies, targets against predictions."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError(f"length mismatch: {predictions.shape} vs {targets.shape}")
    y = np.clip(predictions, EPS, 1.0 - EPS)
    return float(-(targets * np.log(y) + (1.0 - targets) * np.log1p(-y)).sum())


def kl_categorical_vs_uniform(p: np.ndarray) -> float:
    """KL(p || uniform over K) = ln(K) - entropy(p), always >= 0.

    Equal (to rounding) to the direct sum  sum_i p_i * ln(K * p_i).
    """
    p = np.asarray(p, dtype=np.float64)
    return math.log(len(p)) - entropy(p)
