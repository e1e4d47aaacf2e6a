"""The discrete VAE: encoder to categorical parameters, one-hot latent
sampling, decoder to Bernoulli means, the single-sample ELBO estimate, and
both gradient estimators.

Parameter naming convention, used consistently across this package: phi is
the encoder's parameter vector, theta is the decoder's. The ELBO for one
input x with one sampled latent z is

    entropy_term + prior_term + recon_term
      = aggregate_entropy(encode(x)) - D*ln(K) - aggregate_bce(decode(z), x)

and the ascent directions are
  * theta: gradient of recon_term through the decoder only;
  * phi:   analytic gradient of entropy_term through the softmax head, plus
    the score-function term  c * grad_phi log q(z|x)  with the coefficient
    c = recon_term held constant (no gradient flows through c, and none
    flows from the decoder into the encoder through the discrete sample).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dvae.distributions import EPS, Rng, aggregate_bce, aggregate_entropy, categorical_sample
from dvae.network import HEAD_SIGMOID, HEAD_SOFTMAX, Mlp
from dvae.tensor import ShapeError


@dataclass
class CategoricalParams:
    """D rows of K category probabilities (each row sums to 1)."""

    probs: np.ndarray

    @property
    def d(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]


@dataclass
class LatentSample:
    """One categorical draw per latent: one-hot matrix plus the raw indices."""

    one_hot: np.ndarray   # (D, K) of {0.0, 1.0}
    indices: np.ndarray   # (D,) ints, indices[d] = selected category


@dataclass(frozen=True)
class ElboBreakdown:
    """The three ELBO terms and their sum (added left to right, in order)."""

    entropy_term: float
    prior_term: float
    recon_term: float
    total: float

    @classmethod
    def from_terms(cls, entropy_term: float, prior_term: float,
                   recon_term: float) -> "ElboBreakdown":
        entropy_term = float(entropy_term)
        prior_term = float(prior_term)
        recon_term = float(recon_term)
        return cls(entropy_term, prior_term, recon_term,
                   entropy_term + prior_term + recon_term)


@dataclass
class GradientReport:
    """Live gradient accumulators plus the score-function bookkeeping.

    encoder_grads / decoder_grads are references to the networks' buffers,
    not copies; they reflect everything accumulated since zero_grads().
    mc_coefficient is the detached reconstruction coefficient c multiplying
    grad log q, and log_q the log-probability of the drawn latent.
    """

    encoder_grads: list[np.ndarray]
    decoder_grads: list[np.ndarray]
    mc_coefficient: float
    log_q: float


def uniform_params(d: int, k: int) -> CategoricalParams:
    """The uniform prior over each latent: every row is 1/K."""
    return CategoricalParams(np.full((d, k), 1.0 / k))


def elbo_estimate(x: np.ndarray, params: CategoricalParams,
                  xhat: np.ndarray) -> ElboBreakdown:
    """Single-sample ELBO estimate for input x, encoder output params and
    reconstruction xhat (already decoded from one latent draw)."""
    entropy_term = aggregate_entropy(params.probs)
    prior_term = -params.d * math.log(params.k)
    recon_term = -aggregate_bce(xhat, x)
    return ElboBreakdown.from_terms(entropy_term, prior_term, recon_term)


def d_entropy_d_probs(probs: np.ndarray) -> np.ndarray:
    """Gradient of aggregate entropy with respect to the probability matrix.

    Exact value is -(ln p + 1); probabilities are clipped away from 0 inside
    the log, which leaves the composed softmax gradient with its correct
    limit of 0 as any p -> 0.
    """
    return -(np.log(np.maximum(probs, EPS)) + 1.0)


def d_logq_d_probs(probs: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Gradient of log q(z|x) = sum_d ln(probs[d, k(d)]) w.r.t. the matrix.

    Matches the clipped objective: 1/p at each selected entry with p >= EPS,
    and 0 where the clip is active (the clipped log is flat there).
    """
    d = probs.shape[0]
    rows = np.arange(d)
    grad = np.zeros_like(probs)
    sel = probs[rows, indices]
    grad[rows, indices] = np.where(sel >= EPS, 1.0 / np.maximum(sel, EPS), 0.0)
    return grad


class DiscreteVae:
    """Encoder/decoder pair over D categorical latents with K categories."""

    def __init__(self, encoder: Mlp, decoder: Mlp, d: int, k: int):
        if encoder.head != HEAD_SOFTMAX or encoder.softmax_shape != (d, k):
            raise ShapeError(f"encoder head must be softmax over ({d}, {k})")
        if decoder.head != HEAD_SIGMOID:
            raise ShapeError("decoder head must be sigmoid")
        if decoder.in_size != d * k:
            raise ShapeError(
                f"decoder input {decoder.in_size} != D*K = {d * k}"
            )
        self.encoder = encoder
        self.decoder = decoder
        self.d = d
        self.k = k
        self.p = decoder.layers[-1].weights.shape[0]

    @classmethod
    def create(cls, p: int, d: int, k: int, hidden: int | None,
               encoder_rng: Rng, decoder_rng: Rng) -> "DiscreteVae":
        """Fresh model: p -> hidden -> D*K softmax rows, D*K -> hidden -> p
        sigmoid. hidden=None drops the hidden layers entirely."""
        enc_sizes = [p, d * k] if hidden is None else [p, hidden, d * k]
        dec_sizes = [d * k, p] if hidden is None else [d * k, hidden, p]
        encoder = Mlp.create(enc_sizes, HEAD_SOFTMAX, encoder_rng, softmax_shape=(d, k))
        decoder = Mlp.create(dec_sizes, HEAD_SIGMOID, decoder_rng)
        return cls(encoder, decoder, d, k)

    def encode(self, x: np.ndarray) -> CategoricalParams:
        """Categorical parameters for input x (entries expected in [0, 1])."""
        return CategoricalParams(self.encoder.forward(np.asarray(x, dtype=np.float64)))

    def sample_latent(self, params: CategoricalParams, rng: Rng) -> LatentSample:
        """One independent categorical draw per latent row."""
        indices = np.empty(params.d, dtype=np.int64)
        one_hot = np.zeros((params.d, params.k))
        for d in range(params.d):
            idx = categorical_sample(params.probs[d], rng)
            indices[d] = idx
            one_hot[d, idx] = 1.0
        return LatentSample(one_hot, indices)

    def decode(self, z: LatentSample) -> np.ndarray:
        """Pixel-wise Bernoulli means for the flattened one-hot latent."""
        return self.decoder.forward(z.one_hot.reshape(-1))

    def log_q(self, params: CategoricalParams, z: LatentSample) -> float:
        """log q(z|x) = sum_d ln(probs[d, k(d)]), clipped away from ln(0)."""
        sel = params.probs[np.arange(params.d), z.indices]
        return float(np.log(np.maximum(sel, EPS)).sum())

    def compute_gradients(self, x: np.ndarray, rng: Rng) -> tuple[GradientReport, ElboBreakdown]:
        """One full pass: encode, sample one latent, decode, accumulate both
        ascent gradients into the networks' buffers.

        Accumulation is += on top of whatever is already in the buffers;
        callers decide when to zero_grads(). Exactly one Monte Carlo latent
        draw is used per call.
        """
        x = np.asarray(x, dtype=np.float64)
        params = self.encode(x)
        z = self.sample_latent(params, rng)
        xhat = self.decode(z)
        breakdown = elbo_estimate(x, params, xhat)

        # Decoder: gradient of recon_term = -aggregate_bce(xhat, x) w.r.t. xhat,
        # zero where the bce clip is active (the clipped objective is flat there).
        up_dec = np.zeros_like(xhat)
        inside = (xhat > EPS) & (xhat < 1.0 - EPS)
        up_dec[inside] = x[inside] / xhat[inside] - (1.0 - x[inside]) / (1.0 - xhat[inside])
        self.decoder.backward(up_dec)

        # Encoder: entropy gradient plus the score-function term with the
        # reconstruction coefficient detached. Both reach the probabilities,
        # so a single backward with the summed upstream accumulates them.
        coeff = breakdown.recon_term
        up_enc = d_entropy_d_probs(params.probs) + coeff * d_logq_d_probs(params.probs, z.indices)
        self.encoder.backward(up_enc)

        report = GradientReport(
            encoder_grads=self.encoder.grad_arrays(),
            decoder_grads=self.decoder.grad_arrays(),
            mc_coefficient=coeff,
            log_q=self.log_q(params, z),
        )
        return report, breakdown
