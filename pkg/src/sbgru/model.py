"""Encoder-decoder gloss-to-text network without attention.

Embedding, a stack of gated recurrent layers per side, and an output
projection. The decoder's layer i starts from the final hidden state of
encoder layer i (zero state when the stacks have unequal depth). Training
uses teacher forcing through the sequence kernels; greedy decoding runs a
numpy-only step loop on posterior means with hard thresholded masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import LAYER_KINDS, SBGRUCell, gru_sequence, sample_layer_noise
from .stochastic import RngStream
from .tensor import (
    ContractError,
    Tensor,
    embed_lookup,
    gather_time,
    matmul,
    mul,
    reshape,
)

__all__ = ["ModelConfig", "Seq2SeqModel", "desk_config", "paper_config",
           "PAD", "BOS", "EOS", "UNK"]

# reserved vocabulary slots, shared with the corpus module
PAD, BOS, EOS, UNK = 0, 1, 2, 3


@dataclass
class ModelConfig:
    src_vocab_size: int = 8
    tgt_vocab_size: int = 8
    hidden_units: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    layer_kinds: list = field(default_factory=list)
    embed_dim: int = 0  # 0 means: use hidden_units
    dropout: float = 0.0
    alpha: float = 1.0
    max_decode_len: int = 40
    tau: float = 0.01

    def __post_init__(self):
        if not self.layer_kinds:
            self.layer_kinds = ["plain"] * (self.enc_layers + self.dec_layers)
        if len(self.layer_kinds) != self.enc_layers + self.dec_layers:
            raise ContractError(
                f"layer_kinds must list {self.enc_layers + self.dec_layers} kinds, "
                f"got {len(self.layer_kinds)}")
        for kind in self.layer_kinds:
            if kind not in LAYER_KINDS:
                raise ContractError(f"unknown layer kind {kind!r}")
        if self.embed_dim == 0:
            self.embed_dim = self.hidden_units
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")


def desk_config(**overrides) -> ModelConfig:
    """Small configuration for tests and toy corpora."""
    base = dict(hidden_units=64, enc_layers=2, dec_layers=2, embed_dim=64)
    base.update(overrides)
    return ModelConfig(**base)


def paper_config(**overrides) -> ModelConfig:
    """Full-scale configuration: 4+4 layers of 1000 units, the sparsity
    mechanism on the last encoder layer, dropout 0.2."""
    base = dict(hidden_units=1000, enc_layers=4, dec_layers=4, embed_dim=1000,
                dropout=0.2)
    base.update(overrides)
    cfg = ModelConfig(**base)
    if "layer_kinds" not in overrides:
        kinds = ["plain"] * (cfg.enc_layers + cfg.dec_layers)
        kinds[cfg.enc_layers - 1] = "sb"
        cfg.layer_kinds = kinds
    return cfg


def _np_sigmoid(x):
    e = np.exp(-np.abs(x))
    pos = 1.0 / (1.0 + e)
    return np.where(x >= 0, pos, 1.0 - pos)


def _np_step(x_t, y_prev, wm, bm, wr, br, wy_eff, by):
    """One recurrence step on plain arrays (inference fast path)."""
    h = np.concatenate([y_prev, x_t], axis=1)
    m = _np_sigmoid(h @ wm + bm)
    r = _np_sigmoid(h @ wr + br)
    g = np.concatenate([r * y_prev, x_t], axis=1)
    c = np.tanh(g @ wy_eff + by)
    return (1.0 - m) * y_prev + m * c


class Seq2SeqModel:
    """Gloss-to-text sequence-to-sequence model with per-layer kind."""

    def __init__(self, config: ModelConfig, rng: RngStream):
        self.config = config
        k, e = config.hidden_units, config.embed_dim

        def unif(shape, bound):
            return rng.uniform(shape) * (2.0 * bound) - bound

        eb = 1.0 / np.sqrt(e)
        self.src_embed = Tensor(unif((config.src_vocab_size, e), eb),
                                requires_grad=True, name="src_embed")
        self.tgt_embed = Tensor(unif((config.tgt_vocab_size, e), eb),
                                requires_grad=True, name="tgt_embed")
        self.enc_cells = [
            SBGRUCell(e if i == 0 else k, k, config.layer_kinds[i],
                      config.alpha, rng, name=f"enc{i}")
            for i in range(config.enc_layers)
        ]
        self.dec_cells = [
            SBGRUCell(e if i == 0 else k, k,
                      config.layer_kinds[config.enc_layers + i],
                      config.alpha, rng, name=f"dec{i}")
            for i in range(config.dec_layers)
        ]
        pb = 1.0 / np.sqrt(k)
        self.proj_w = Tensor(unif((k, config.tgt_vocab_size), pb),
                             requires_grad=True, name="proj_w")
        self.proj_b = Tensor(np.zeros(config.tgt_vocab_size),
                             requires_grad=True, name="proj_b")

    def cells(self) -> list[SBGRUCell]:
        return self.enc_cells + self.dec_cells

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [("src_embed", self.src_embed), ("tgt_embed", self.tgt_embed)]
        for cell in self.cells():
            out.extend(cell.parameters())
        out.extend([("proj_w", self.proj_w), ("proj_b", self.proj_b)])
        return out

    # ------------------------------------------------------------------
    # training-mode forward (tape ops)

    def _dropout(self, t: Tensor, mode: str, rng: RngStream | None) -> Tensor:
        p = self.config.dropout
        if mode != "train" or p == 0.0:
            return t
        keep = (rng.uniform(t.shape) >= p) / (1.0 - p)
        return mul(t, keep)

    def encode(self, src, src_len=None, mode: str = "eval",
               rng: RngStream | None = None, lam: float = 1.0):
        """Embed and run the encoder; returns (per-layer final states,
        (cell, noise) pairs). Accepts [B, T] batches or a single [T] row."""
        src = np.asarray(src)
        if src.ndim == 1:
            src = src[None, :]
        if src.shape[1] == 0:
            raise ContractError("encode requires a nonempty token sequence")
        if src_len is None:
            src_len = np.full(src.shape[0], src.shape[1])
        src_len = np.asarray(src_len)
        x = embed_lookup(self.src_embed, src)
        finals, noises = [], []
        for cell in self.enc_cells:
            x = self._dropout(x, mode, rng)
            noise = sample_layer_noise(cell, rng, lam, mode, self.config.tau)
            noises.append((cell, noise))
            w_eff = mul(noise.w, noise.z)
            y0 = Tensor(np.zeros((src.shape[0], cell.hidden_dim)))
            x = gru_sequence(x, y0, cell.wm, cell.bm, cell.wr, cell.br,
                             w_eff, cell.by)
            finals.append(gather_time(x, src_len - 1))
        return finals, noises

    def forward_teacher_forced(self, src, src_len, tgt_in, mode: str = "train",
                               rng: RngStream | None = None, lam: float = 1.0):
        """Teacher-forced logits [B, T_t, V]; the decoder consumes the gold
        previous tokens. Also returns the (cell, noise) pairs of both stacks
        for the divergence terms."""
        tgt_in = np.asarray(tgt_in)
        enc_finals, noises = self.encode(src, src_len, mode, rng, lam)
        x = embed_lookup(self.tgt_embed, tgt_in)
        batch = tgt_in.shape[0]
        for i, cell in enumerate(self.dec_cells):
            x = self._dropout(x, mode, rng)
            noise = sample_layer_noise(cell, rng, lam, mode, self.config.tau)
            noises.append((cell, noise))
            w_eff = mul(noise.w, noise.z)
            if i < len(enc_finals):
                y0 = enc_finals[i]
            else:
                y0 = Tensor(np.zeros((batch, cell.hidden_dim)))
            x = gru_sequence(x, y0, cell.wm, cell.bm, cell.wr, cell.br,
                             w_eff, cell.by)
        x = self._dropout(x, mode, rng)
        k = self.config.hidden_units
        flat = reshape(x, (-1, k))
        logits = matmul(flat, self.proj_w) + self.proj_b
        return reshape(logits, (batch, tgt_in.shape[1], -1)), noises

    # ------------------------------------------------------------------
    # inference (numpy fast path; posterior means + hard masks)

    def _eval_weights(self):
        out = []
        for cell in self.cells():
            w_eff = cell.cand.mu.data * cell.hard_mask(self.config.tau)
            out.append((cell.wm.data, cell.bm.data, cell.wr.data,
                        cell.br.data, w_eff, cell.by.data))
        return out

    def greedy_decode(self, src_ids, max_len: int | None = None) -> list[int]:
        """Translate one source token sequence; feeds back the argmax token
        each step and stops at EOS or after max_len tokens."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_ids.ndim != 1 or src_ids.size == 0:
            raise ContractError("greedy_decode takes one nonempty id sequence")
        max_len = max_len if max_len is not None else self.config.max_decode_len
        weights = self._eval_weights()
        n_enc = len(self.enc_cells)

        x = self.src_embed.data[src_ids][None, :, :]  # [1, T, E]
        states = []
        for i in range(n_enc):
            wm, bm, wr, br, wy, by = weights[i]
            y = np.zeros((1, self.enc_cells[i].hidden_dim))
            outs = np.empty((x.shape[1], 1, y.shape[1]))
            for t in range(x.shape[1]):
                y = _np_step(x[:, t, :], y, wm, bm, wr, br, wy, by)
                outs[t] = y
            states.append(y)
            x = np.swapaxes(outs, 0, 1)

        dec_states = [
            states[i].copy() if i < n_enc else
            np.zeros((1, self.dec_cells[i].hidden_dim))
            for i in range(len(self.dec_cells))
        ]
        tok = BOS
        result: list[int] = []
        for _ in range(max_len):
            xt = self.tgt_embed.data[tok][None, :]
            for i in range(len(self.dec_cells)):
                wm, bm, wr, br, wy, by = weights[n_enc + i]
                dec_states[i] = _np_step(xt, dec_states[i], wm, bm, wr, br, wy, by)
                xt = dec_states[i]
            logits = xt @ self.proj_w.data + self.proj_b.data
            tok = int(np.argmax(logits[0]))
            if tok == EOS:
                break
            result.append(tok)
        return result
