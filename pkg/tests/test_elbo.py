"""Divergence terms and assembled training objective."""

import numpy as np
import pytest

from sbgru.corpus import Batch
from sbgru.elbo import (
    elbo_loss,
    kl_gaussian,
    kl_gaussian_mc,
    kl_indicators,
    kl_indicators_mc,
    kl_sticks_mc,
    nll_tokens,
)
from sbgru.model import ModelConfig, Seq2SeqModel
from sbgru.stochastic import RngStream, TemperatureSchedule
from sbgru.tensor import DomainError, Tape, Tensor

from conftest import assert_grad_matches


class TestKlGaussian:
    def test_prior_equals_posterior(self):
        assert kl_gaussian(Tensor(0.0), Tensor(1.0)).item() == 0.0

    def test_unit_mean_shift(self):
        assert kl_gaussian(Tensor(1.0), Tensor(1.0)).item() == pytest.approx(0.5, abs=1e-12)

    def test_variance_two(self):
        val = kl_gaussian(Tensor(0.0), Tensor(np.sqrt(2.0))).item()
        assert val == pytest.approx(0.5 * (2.0 - 1.0 - np.log(2.0)), abs=1e-9)
        assert val == pytest.approx(0.15343, abs=1e-5)

    def test_nonnegative_and_zero_only_at_prior(self):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal((5, 5))
        sigma = rng.uniform(0.2, 2.0, (5, 5))
        assert kl_gaussian(Tensor(mu), Tensor(sigma)).item() > 0
        assert kl_gaussian(Tensor(np.zeros((3, 3))), Tensor(np.ones((3, 3)))).item() == 0.0

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(DomainError):
            kl_gaussian(Tensor(0.0), Tensor(0.0))

    def test_mc_estimate_converges_to_closed_form(self):
        rng = RngStream(3)
        mu, sigma = Tensor(0.7), Tensor(1.3)
        draws = mu.data + sigma.data * rng.normal(200_000)
        est = kl_gaussian_mc(mu, sigma, Tensor(draws)).item() / draws.size
        assert est == pytest.approx(kl_gaussian(mu, sigma).item(), abs=0.02)


class TestKlSticks:
    def test_uniform_posterior_and_prior_vanish(self):
        for u in (0.1, 0.5, 0.93):
            val = kl_sticks_mc(Tensor(1.0), Tensor(1.0), 1.0, Tensor(u)).item()
            assert val == pytest.approx(0.0, abs=1e-12)

    def test_zero_crossing_point(self):
        # a=2, b=1 has pdf 2u, zero log density at u=0.5; prior log is 0
        val = kl_sticks_mc(Tensor(2.0), Tensor(1.0), 1.0, Tensor(0.5)).item()
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_mc_mean_matches_quadrature_oracle(self):
        from scipy.integrate import quad

        a, b, alpha = 2.0, 1.0, 1.0

        def integrand(u):
            q = a * b * u ** (a - 1) * (1 - u**a) ** (b - 1)
            p = alpha * u ** (alpha - 1)
            return q * (np.log(q) - np.log(p))

        oracle, _ = quad(integrand, 1e-12, 1.0 - 1e-12)
        draws = RngStream(11).uniform(100_000)
        from sbgru.stochastic import sample_kumaraswamy

        u = sample_kumaraswamy(Tensor(a), Tensor(b), draws)
        est = kl_sticks_mc(Tensor(a), Tensor(b), alpha,
                           u).item() / draws.size
        assert est >= -0.01
        assert est == pytest.approx(oracle, abs=0.01)


class TestKlIndicators:
    def test_identical_distributions_vanish(self):
        # posterior 0.3 against prior pi_1 = u_1 = 0.3
        val = kl_indicators(Tensor([[0.3]]), Tensor([0.3])).item()
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_saturated_posterior_against_half(self):
        val = kl_indicators(Tensor([[1.0 - 1e-7]]), Tensor([0.5])).item()
        assert val == pytest.approx(np.log(2.0), abs=1e-4)

    def test_hand_value(self):
        val = kl_indicators(Tensor([[0.5]]), Tensor([0.25])).item()
        assert val == pytest.approx(0.14384, abs=1e-5)
        assert val == pytest.approx(0.5 * np.log(2) + 0.5 * np.log(2.0 / 3.0), abs=1e-9)

    def test_strictly_positive_off_prior(self):
        rng = np.random.default_rng(1)
        pi_tilde = Tensor(rng.uniform(0.05, 0.95, (4, 3)))
        u = Tensor(rng.uniform(0.2, 0.9, 3))
        assert kl_indicators(pi_tilde, u).item() > 0

    def test_mc_variant_tracks_closed_form_in_expectation(self):
        # average the relaxed-sample estimator over many mask draws
        rng = RngStream(5)
        pi_tilde = Tensor(np.array([[0.7]]))
        u = Tensor(np.array([0.4]))
        logit = np.log(0.7 / 0.3)
        from sbgru.stochastic import sample_binary_concrete

        z = sample_binary_concrete(Tensor(np.full((50_000, 1), logit)), 0.05,
                                   rng.uniform((50_000, 1)))
        est = kl_indicators_mc(Tensor(np.full((50_000, 1), 0.7)), z,
                               u).item() / 50_000
        closed = kl_indicators(pi_tilde, u).item()
        assert est == pytest.approx(closed, abs=0.05)


class TestNllTokens:
    def test_uniform_logits(self):
        t, v = 7, 11
        val = nll_tokens(Tensor(np.zeros((t, v))), np.zeros(t, dtype=int)).item()
        assert val == pytest.approx(t * np.log(v), rel=1e-12)

    def test_margin_limit(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 50.0
        val = nll_tokens(Tensor(logits), np.array([2])).item()
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_all_padding_is_zero(self):
        logits = np.random.default_rng(0).standard_normal((3, 5))
        val = nll_tokens(Tensor(logits), np.array([1, 2, 3]),
                         mask=np.zeros(3)).item()
        assert val == 0.0

    def test_out_of_vocab_target(self):
        with pytest.raises(DomainError):
            nll_tokens(Tensor(np.zeros((2, 4))), np.array([0, 4]))


def _toy_batch():
    src = np.array([[4, 5, 6], [5, 4, 0]])
    src_len = np.array([3, 2])
    tgt_in = np.array([[1, 4, 5], [1, 6, 0]])
    tgt_out = np.array([[4, 5, 2], [6, 2, 0]])
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    return Batch(src, src_len, tgt_in, tgt_out, mask)


def _tiny_model(kinds):
    cfg = ModelConfig(src_vocab_size=8, tgt_vocab_size=8, hidden_units=4,
                      enc_layers=1, dec_layers=1, layer_kinds=kinds,
                      embed_dim=4, alpha=1.0)
    return Seq2SeqModel(cfg, RngStream(0, 0))


SCHED = TemperatureSchedule(1.0, 0.5, 1e-4, 100)


class TestElboLoss:
    def test_plain_model_loss_is_nll_bitwise(self):
        model = _tiny_model(["plain", "plain"])
        with Tape():
            bd = elbo_loss(model, _toy_batch(), RngStream(0, 1), 0,
                           n_train=32, schedule=SCHED)
        assert bd.kl_w == bd.kl_z == bd.kl_u == 0.0
        assert bd.total_loss == bd.nll
        assert bd.loss.item() == bd.nll

    def test_kl_scale_zero_recovers_nll_bitwise(self):
        model = _tiny_model(["sb", "plain"])
        with Tape():
            bd = elbo_loss(model, _toy_batch(), RngStream(0, 1), 0,
                           n_train=32, schedule=SCHED, kl_scale=0.0)
        assert bd.total_loss == bd.nll
        assert bd.kl_w > 0.0  # components still reported

    def test_kl_scale_is_batch_fraction_and_doubles_with_batch(self):
        model = _tiny_model(["sb", "plain"])
        batch = _toy_batch()
        with Tape():
            bd = elbo_loss(model, batch, RngStream(0, 1), 0, n_train=32,
                           schedule=SCHED)
        assert bd.kl_scale == batch.size / 32
        double = Batch(np.concatenate([batch.src] * 2),
                       np.concatenate([batch.src_len] * 2),
                       np.concatenate([batch.tgt_in] * 2),
                       np.concatenate([batch.tgt_out] * 2),
                       np.concatenate([batch.tgt_mask] * 2))
        with Tape():
            bd2 = elbo_loss(model, double, RngStream(0, 1), 0, n_train=32,
                            schedule=SCHED)
        assert bd2.kl_scale == 2 * bd.kl_scale

    def test_breakdown_identity(self):
        model = _tiny_model(["sb", "sb"])
        with Tape():
            bd = elbo_loss(model, _toy_batch(), RngStream(3, 1), 5,
                           n_train=32, schedule=SCHED)
        recomputed = bd.nll + bd.kl_scale * (bd.kl_w + bd.kl_z + bd.kl_u)
        assert bd.total_loss == pytest.approx(recomputed, rel=1e-12)

    def test_sb_components_behave_at_degenerate_posteriors(self):
        model = _tiny_model(["sb", "plain"])
        cell = model.enc_cells[0]
        cell.cand.rho.data[:] = np.log(np.expm1(1e-6))
        cell.indicators.logit_pi.data[:] = 16.0
        with Tape():
            bd = elbo_loss(model, _toy_batch(), RngStream(0, 1), 0,
                           n_train=32, schedule=SCHED)
        # sigma -> 0 makes -log sigma^2 dominate kl_w, mask KL stays finite
        assert bd.kl_w > 0 and np.isfinite(bd.kl_z) and np.isfinite(bd.kl_u)

    @pytest.mark.parametrize("mc_kl", [False, True])
    def test_gradients_match_finite_differences(self, mc_kl):
        model = _tiny_model(["sb", "sb"])
        batch = _toy_batch()
        params = [p for _, p in model.parameters()]

        def f():
            bd = elbo_loss(model, batch, RngStream(7, 1), 3, n_train=32,
                           schedule=SCHED, mc_kl=mc_kl)
            return bd.loss

        assert_grad_matches(f, params, max_entries=4, rtol=2e-4)
