import math

import numpy as np
import pytest

from dvae.distributions import Rng
from dvae.model import (
    CategoricalParams,
    DiscreteVae,
    LatentSample,
    d_entropy_d_probs,
    d_logq_d_probs,
    elbo_estimate,
    uniform_params,
)
from dvae.network import HEAD_SOFTMAX, LinearLayer, Mlp, flat_grads
from dvae.oracle import exact_encoder_gradient, tiny_model_and_input
from helpers import zero_init_model

# Regression fixture: model from DiscreteVae.create(5, 2, 3, 4, Rng(901), Rng(902))
# applied to x = [0, 1, 1, 0, 1]; outputs generated once and frozen.
FIXTURE_X = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
FIXTURE_ENCODE = np.array([
    [0.33223216937019984, 0.31078780457557542, 0.35698002605422480],
    [0.13436385691790179, 0.28711869340357216, 0.57851744967852603],
])
FIXTURE_Z = LatentSample(
    one_hot=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    indices=np.array([1, 2]),
)
FIXTURE_DECODE = np.array([
    0.6406353001874174, 0.6837962602053882, 0.7028064892841879,
    0.6748057230848052, 0.7187156500900465,
])


def fixture_model():
    return DiscreteVae.create(p=5, d=2, k=3, hidden=4,
                              encoder_rng=Rng(901), decoder_rng=Rng(902))


class TestEncodeDecode:
    def test_zero_init_encoder_is_uniform(self):
        model = zero_init_model()
        params = model.encode(np.array([1.0, 0.0, 1.0, 1.0]))
        assert np.allclose(params.probs, 1.0 / 3.0, rtol=0, atol=1e-15)

    def test_rows_sum_to_one(self):
        model, x = tiny_model_and_input(321)
        params = model.encode(x)
        assert np.allclose(params.probs.sum(axis=1), 1.0, rtol=0, atol=1e-9)

    def test_encode_golden_fixture(self):
        params = fixture_model().encode(FIXTURE_X)
        assert np.allclose(params.probs, FIXTURE_ENCODE, rtol=0, atol=1e-15)

    def test_zero_init_decoder_outputs_half(self):
        model = zero_init_model()
        z = LatentSample(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.array([0, 1]))
        assert np.array_equal(model.decode(z), np.full(4, 0.5))

    def test_decode_in_open_unit_interval(self):
        model, x = tiny_model_and_input(322)
        z = model.sample_latent(model.encode(x), Rng(3))
        xhat = model.decode(z)
        assert np.all(xhat > 0.0) and np.all(xhat < 1.0)

    def test_decode_golden_fixture(self):
        assert np.allclose(fixture_model().decode(FIXTURE_Z), FIXTURE_DECODE,
                           rtol=0, atol=1e-15)


class TestSampleLatent:
    def test_one_hot_params_give_deterministic_sample(self):
        params = CategoricalParams(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))
        model = zero_init_model(d=2, k=3)
        rng = Rng(5)
        for _ in range(10):
            z = model.sample_latent(params, rng)
            assert z.indices.tolist() == [1, 0]

    def test_fair_coin_frequency(self):
        model = zero_init_model(d=1, k=2, p=2, hidden=2)
        params = uniform_params(1, 2)
        rng = Rng(606)
        n = 100_000
        zeros = sum(model.sample_latent(params, rng).indices[0] == 0 for _ in range(n))
        assert abs(zeros / n - 0.5) < 0.01

    def test_one_hot_and_indices_agree(self):
        model, x = tiny_model_and_input(323)
        params = model.encode(x)
        rng = Rng(7)
        for _ in range(1000):
            z = model.sample_latent(params, rng)
            assert np.all(z.one_hot.sum(axis=1) == 1.0)
            assert np.all(z.one_hot[np.arange(len(z.indices)), z.indices] == 1.0)


class TestLogQ:
    def test_uniform_params(self):
        model = zero_init_model(d=2, k=4, p=3, hidden=2)
        params = uniform_params(2, 4)
        z = model.sample_latent(params, Rng(8))
        assert model.log_q(params, z) == pytest.approx(2 * math.log(0.25), abs=1e-12)

    def test_one_hot_params_matching_z(self):
        params = CategoricalParams(np.array([[1.0, 0.0], [0.0, 1.0]]))
        z = LatentSample(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
        model = zero_init_model(d=2, k=2, p=3, hidden=2)
        assert abs(model.log_q(params, z)) < 1e-6

    def test_hand_evaluated(self):
        params = CategoricalParams(np.array([[0.5, 0.5], [0.25, 0.75]]))
        z = LatentSample(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
        model = zero_init_model(d=2, k=2, p=3, hidden=2)
        expected = math.log(0.5) + math.log(0.75)
        assert model.log_q(params, z) == pytest.approx(expected, abs=1e-12)


class TestElboEstimate:
    def test_uniform_params_cancel_prior(self):
        d, k, p = 2, 3, 4
        params = uniform_params(d, k)
        x = np.array([1.0, 0.0, 1.0, 0.0])
        xhat = np.full(p, 0.5)
        bd = elbo_estimate(x, params, xhat)
        assert bd.entropy_term == pytest.approx(d * math.log(k), abs=1e-12)
        assert bd.prior_term == -d * math.log(k)
        assert bd.total == pytest.approx(bd.recon_term, abs=1e-12)

    def test_perfect_reconstruction(self):
        params = uniform_params(2, 3)
        x = np.array([1.0, 0.0, 1.0, 1.0])
        bd = elbo_estimate(x, params, x)
        assert bd.total == pytest.approx(bd.entropy_term + bd.prior_term,
                                         abs=1e-6 * len(x))

    def test_total_is_exact_term_sum(self):
        model, x = tiny_model_and_input(324)
        params = model.encode(x)
        xhat = model.decode(model.sample_latent(params, Rng(1)))
        bd = elbo_estimate(x, params, xhat)
        assert bd.total == bd.entropy_term + bd.prior_term + bd.recon_term
        assert bd.recon_term <= 0.0
        assert 0.0 <= bd.entropy_term <= model.d * math.log(model.k) + 1e-12


class TestComputeGradients:
    def test_entropy_gradient_vanishes_at_uniform(self):
        # zero-weight encoder puts every row at the entropy maximum, where the
        # entropy upstream has zero pull on the logits
        model = zero_init_model()
        x = np.array([1.0, 0.0, 0.0, 1.0])
        params = model.encode(x)
        model.encoder.zero_grads()
        model.encoder.backward(d_entropy_d_probs(params.probs))
        final = model.encoder.layers[-1]
        assert np.allclose(final.grad_bias, 0.0, rtol=0, atol=1e-14)
        assert np.allclose(final.grad_weights, 0.0, rtol=0, atol=1e-14)

    def test_score_gradient_vanishes_at_unit_probability(self):
        # a (numerically) one-hot row gives grad log q = 0 through the softmax
        logits = np.array([[40.0, 0.0, 0.0], [0.0, 40.0, 0.0]])
        net = Mlp([LinearLayer(np.eye(6), np.zeros(6))], HEAD_SOFTMAX, softmax_shape=(2, 3))
        probs = net.forward(logits.reshape(-1))
        indices = np.array([0, 1])
        net.zero_grads()
        net.backward(d_logq_d_probs(probs, indices))
        assert np.allclose(net.layers[0].grad_bias, 0.0, rtol=0, atol=1e-12)

    def test_decoder_grads_match_finite_differences(self):
        from dvae.distributions import aggregate_bce
        from dvae.network import flat_params, set_flat_params
        from dvae.oracle import finite_difference, scaled_gradient_error

        model, x = tiny_model_and_input(325)
        model.encoder.zero_grads()
        model.decoder.zero_grads()
        model.compute_gradients(x, Rng(17))
        analytic = flat_grads(model.decoder)
        z = model.sample_latent(model.encode(x), Rng(17))  # same stream => same z
        theta0 = flat_params(model.decoder)

        def objective(vec):
            set_flat_params(model.decoder, vec)
            return -aggregate_bce(model.decode(z), x)

        fd = finite_difference(objective, theta0, 1e-5)
        set_flat_params(model.decoder, theta0)
        assert scaled_gradient_error(analytic, fd) <= 1e-4

    def test_decoder_params_reach_encoder_grads_only_through_coefficient(self):
        # swapping decoders changes the encoder gradient only by scaling the
        # score direction: (gA - gB) / (cA - cB) is decoder-independent
        model, x = tiny_model_and_input(326)
        encoder = model.encoder

        def encoder_grad_with(decoder_seed):
            other = DiscreteVae.create(model.p, model.d, model.k, 8,
                                       Rng(decoder_seed), Rng(decoder_seed + 1))
            hybrid = DiscreteVae(encoder, other.decoder, model.d, model.k)
            hybrid.encoder.zero_grads()
            hybrid.decoder.zero_grads()
            report, _ = hybrid.compute_gradients(x, Rng(99))  # same z every call
            return flat_grads(hybrid.encoder), report.mc_coefficient

        g_a, c_a = encoder_grad_with(1001)
        g_b, c_b = encoder_grad_with(2002)
        g_c, c_c = encoder_grad_with(3003)
        s_ab = (g_a - g_b) / (c_a - c_b)
        s_ac = (g_a - g_c) / (c_a - c_c)
        assert np.allclose(s_ab, s_ac, rtol=0, atol=1e-10)

    def test_report_carries_live_accumulators_and_scalars(self):
        model, x = tiny_model_and_input(327)
        model.encoder.zero_grads()
        model.decoder.zero_grads()
        report, bd = model.compute_gradients(x, Rng(31))
        assert report.encoder_grads[0] is model.encoder.layers[0].grad_weights
        assert report.mc_coefficient == bd.recon_term
        assert all(np.all(np.isfinite(g)) for g in report.encoder_grads)
        assert all(np.all(np.isfinite(g)) for g in report.decoder_grads)
        assert math.isfinite(report.log_q)

    def test_mean_single_sample_elbo_stays_below_log_px(self):
        from dvae.oracle import enumerate_table, exact_marginal_log_px

        model, x = tiny_model_and_input(329, p=4)
        log_px = exact_marginal_log_px(enumerate_table(model, x))
        rng = Rng(330)
        n = 4000
        params = model.encode(x)
        totals = np.empty(n)
        for i in range(n):
            z = model.sample_latent(params, rng)
            totals[i] = elbo_estimate(x, params, model.decode(z)).total
        se = totals.std(ddof=1) / math.sqrt(n)
        assert totals.mean() <= log_px + 5 * se

    def test_mc_mean_approaches_exact_gradient(self):
        # small-draw smoke test of unbiasedness; the acceptance suite runs
        # the full-scale version
        model, x = tiny_model_and_input(328, p=4)
        exact = exact_encoder_gradient(model, x)
        stream = Rng(500)
        n = 10_000
        total = np.zeros_like(exact)
        sq = np.zeros_like(exact)
        for _ in range(n):
            model.encoder.zero_grads()
            model.decoder.zero_grads()
            model.compute_gradients(x, stream)
            g = flat_grads(model.encoder)
            total += g
            sq += g * g
        mean = total / n
        se = np.sqrt(np.maximum(sq - n * mean * mean, 0.0) / (n - 1) / n)
        z = np.abs(mean - exact) / np.where(se > 0, se, 1.0)
        assert float(z.max()) < 6.0
