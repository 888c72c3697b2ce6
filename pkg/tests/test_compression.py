"""Pruning, quantization, report arithmetic, and checkpoint compression."""

import numpy as np
import pytest

from sbgru.checkpoint import Checkpoint, save_model
from sbgru.compression import (
    compress,
    eval_with_compression,
    prune_mask,
    quantize_weights,
)
from sbgru.model import ModelConfig, Seq2SeqModel
from sbgru.stochastic import RngStream
from sbgru.tensor import ContractError, DomainError


class TestPruneMask:
    def test_zero_threshold_keeps_everything(self):
        pi = np.random.default_rng(0).random((5, 4))
        np.testing.assert_array_equal(prune_mask(pi, 0.0), np.ones((5, 4)))

    def test_threshold_above_max_prunes_everything(self):
        pi = np.full((3, 3), 0.4)
        np.testing.assert_array_equal(prune_mask(pi, 0.5), np.zeros((3, 3)))

    def test_hand_case(self):
        pi = np.array([[0.9, 0.01], [0.5, 0.6]])
        np.testing.assert_array_equal(prune_mask(pi, 0.5),
                                      [[1.0, 0.0], [1.0, 1.0]])

    def test_sparsity_monotone_in_tau(self):
        pi = np.random.default_rng(1).random((40, 25))
        sweep = [0.0, 0.01, 0.1, 0.5, 0.9]
        sparsities = [1.0 - prune_mask(pi, tau).mean() for tau in sweep]
        assert sparsities == sorted(sparsities)
        assert sparsities[0] == 0.0


class TestQuantize:
    def test_nearest_grid_point(self):
        mu = np.array([0.3])
        sigma = np.full(1, 0.25)
        q, bits, delta = quantize_weights(mu, sigma)
        assert delta == 0.25
        assert q[0] == pytest.approx(0.25)

    def test_single_level_when_delta_exceeds_range(self):
        mu = np.array([0.1, 0.2, 0.15])
        q, bits, delta = quantize_weights(mu, np.full(3, 10.0))
        assert bits == 1

    def test_constant_tensor_is_one_bit(self):
        q, bits, _ = quantize_weights(np.full(6, 0.4), np.full(6, 0.01))
        assert bits == 1

    def test_error_bounded_by_half_step(self):
        rng = np.random.default_rng(2)
        mu = rng.standard_normal(4096)
        sigma = rng.uniform(0.01, 0.2, 4096)
        q, bits, delta = quantize_weights(mu, sigma)
        assert np.max(np.abs(q - mu)) <= delta / 2 + 1e-12

    def test_indices_fit_reported_bits(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            mu = rng.standard_normal(257) * rng.uniform(0.1, 4.0)
            sigma = np.full(257, rng.uniform(0.005, 1.0))
            q, bits, delta = quantize_weights(mu, sigma)
            idx = np.floor(q / delta + 0.5)
            levels = int(idx.max() - idx.min()) + 1
            assert levels <= 2**bits

    def test_mean_var_mode(self):
        sigma = np.array([0.5, 0.3])
        _, _, delta = quantize_weights(np.zeros(2), sigma, mode="mean-var")
        assert delta == pytest.approx(np.mean(sigma**2))

    def test_override(self):
        _, _, delta = quantize_weights(np.zeros(2), np.ones(2),
                                       delta_override=0.125)
        assert delta == 0.125

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(DomainError):
            quantize_weights(np.ones(2), np.zeros(2))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ContractError):
            quantize_weights(np.ones(2), np.ones(2), mode="median")


def _checkpoint(kinds=("plain", "sb", "plain", "repar"), seed=0, logit=None):
    cfg = ModelConfig(src_vocab_size=9, tgt_vocab_size=9, hidden_units=8,
                      enc_layers=2, dec_layers=2, embed_dim=6,
                      layer_kinds=list(kinds))
    model = Seq2SeqModel(cfg, RngStream(seed, 0))
    if logit is not None:
        for cell in model.cells():
            if cell.kind in ("bp", "sb"):
                cell.indicators.logit_pi.data = logit(cell)
    from sbgru.trainer import _vocab_metadata
    from sbgru.corpus import build_vocab

    vocab = build_vocab([[f"t{i}" for i in range(5)]])
    return save_model(model, _vocab_metadata(vocab, vocab)), model


class TestCompress:
    def test_report_factor_recomputes_from_fields(self):
        ckpt, _ = _checkpoint()
        _, report = compress(ckpt, tau=0.01)
        total = sum(l.total for l in report.layers)
        stored = sum(l.bits_per_weight * l.retained for l in report.layers)
        assert report.compression_factor(32) == pytest.approx(32 * total / stored)
        assert report.compression_factor(16) == pytest.approx(16 * total / stored)

    def test_layers_covered(self):
        ckpt, _ = _checkpoint()
        _, report = compress(ckpt, tau=0.01)
        assert sorted(l.kind for l in report.layers) == ["repar", "sb"]

    def test_plain_layers_pass_through_bit_identical(self):
        ckpt, _ = _checkpoint()
        out, _ = compress(ckpt, tau=0.01)
        for name, entry in ckpt.entries.items():
            if "enc1" in name or "dec1" in name:  # the stochastic cells
                continue
            assert out.entries[name].payload == entry.payload
            assert out.entries[name].encoding == entry.encoding

    def test_quantization_error_bounded_after_decode(self):
        ckpt, model = _checkpoint()
        out, report = compress(ckpt, tau=0.01)
        layer = {l.name: l for l in report.layers}["enc1"]
        decoded = out.array("enc1.cand.mu")
        original = ckpt.array("enc1.cand.mu")
        mask = out.array("enc1.cand.hard_mask") > 0
        assert np.max(np.abs(decoded[mask] - original[mask])) <= layer.delta / 2 + 1e-12
        np.testing.assert_array_equal(decoded[~mask], 0.0)

    def test_recompression_is_idempotent(self):
        ckpt, _ = _checkpoint()
        once, r1 = compress(ckpt, tau=0.1)
        twice, r2 = compress(once, tau=0.1)
        assert once.to_bytes() == twice.to_bytes()
        assert [(l.retained, l.bits_per_weight, l.delta) for l in r1.layers] == \
            [(l.retained, l.bits_per_weight, l.delta) for l in r2.layers]

    def test_full_pruning_keeps_nothing(self):
        ckpt, _ = _checkpoint(logit=lambda cell: np.full(cell.cand.shape, -30.0))
        out, report = compress(ckpt, tau=0.01)
        sb = {l.name: l for l in report.layers}["enc1"]
        assert sb.retained == 0
        np.testing.assert_array_equal(out.array("enc1.cand.mu"), 0.0)
        np.testing.assert_array_equal(out.array("enc1.cand.hard_mask"), 0.0)

    def test_sparsity_monotone_over_tau_sweep(self):
        ckpt, _ = _checkpoint(
            logit=lambda cell: RngStream(5).normal(cell.cand.shape) * 3)
        sparsities = []
        for tau in (0.0, 0.01, 0.1, 0.5, 0.9):
            _, report = compress(ckpt, tau=tau)
            sb = {l.name: l for l in report.layers}["enc1"]
            sparsities.append(sb.sparsity)
        assert sparsities == sorted(sparsities)

    def test_bp_layer_prunes_without_quantization(self):
        ckpt, _ = _checkpoint(kinds=("bp", "plain", "plain", "plain"),
                              logit=lambda cell: np.where(
                                  RngStream(6).uniform(cell.cand.shape) > 0.5,
                                  5.0, -5.0))
        out, report = compress(ckpt, tau=0.01)
        row = report.layers[0]
        assert row.kind == "bp"
        assert row.bits_per_weight == 64 and row.delta == 0.0
        assert 0 < row.retained < row.total
        decoded = out.array("enc0.cand.mu")
        mask = out.array("enc0.cand.hard_mask")
        original = ckpt.array("enc0.cand.mu")
        np.testing.assert_array_equal(decoded, original * mask)

    def test_missing_posterior_tensors_named(self):
        ckpt, _ = _checkpoint()
        del ckpt.entries["enc1.cand.rho"]
        with pytest.raises(ContractError, match="enc1.cand.rho"):
            compress(ckpt, tau=0.01)

    def test_compressed_checkpoint_roundtrips_bitwise(self):
        ckpt, _ = _checkpoint()
        out, _ = compress(ckpt, tau=0.05)
        raw = out.to_bytes()
        assert Checkpoint.from_bytes(raw).to_bytes() == raw

    def test_report_table_prints_both_reference_factors(self):
        ckpt, _ = _checkpoint()
        _, report = compress(ckpt, tau=0.01)
        table = report.format_table()
        assert "vs 32-bit" in table and "vs 16-bit" in table


class TestEvalWithCompression:
    def test_lossless_limit_preserves_translations(self, toy_dev_path):
        from sbgru.corpus import build_vocab, load_corpus
        from sbgru.trainer import _vocab_metadata

        dev = load_corpus(toy_dev_path)
        vs = build_vocab(g for g, _ in dev.pairs)
        vt = build_vocab(t for _, t in dev.pairs)
        cfg = ModelConfig(src_vocab_size=len(vs), tgt_vocab_size=len(vt),
                          hidden_units=8, enc_layers=2, dec_layers=2,
                          embed_dim=6, layer_kinds=["plain", "sb", "plain", "plain"])
        model = Seq2SeqModel(cfg, RngStream(2, 0))
        ckpt = save_model(model, _vocab_metadata(vs, vt))
        # grid fine enough that every mean decodes to within float noise
        mu = ckpt.array("enc1.cand.mu")
        span = float(mu.max() - mu.min())
        override = span / (2**31)
        out, report = compress(ckpt, tau=0.0, delta_override=override)
        assert report.compression_factor(32) == pytest.approx(1.0, rel=0.05)
        scores = eval_with_compression(model, out, dev, vs, vt)
        assert scores["before"] == scores["after"]
