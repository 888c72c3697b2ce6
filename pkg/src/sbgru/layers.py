"""Recurrent layer mechanics: stick-breaking sparsity state, masked dense
layers, and the four GRU cell variants.

A cell's gates are always deterministic point estimates; only the candidate
(non-gate) weight matrix carries the Gaussian posterior and the binary
utility indicators. The ``layer_kind`` selects which of the two mechanisms
are active:

  plain  candidate weight = posterior mean, mask = ones
  repar  candidate weight sampled, mask = ones
  bp     candidate weight = posterior mean, mask sampled
  sb     both sampled

Weight convention everywhere: gate/candidate matrices have K + J rows, the
first K multiplying the previous state and the last J the current input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .stochastic import (
    RngStream,
    sample_binary_concrete,
    sample_gaussian,
    sample_kumaraswamy,
)
from .tensor import (
    ContractError,
    DomainError,
    ShapeError,
    Tensor,
    as_tensor,
    concat_cols,
    cumprod,
    matmul,
    mul,
    sigmoid,
    softplus,
    tanh,
)

__all__ = [
    "LAYER_KINDS",
    "GaussianWeight",
    "StickState",
    "IndicatorPosterior",
    "SBGRUCell",
    "LayerNoise",
    "stick_probs",
    "sb_dense_forward",
    "gru_step",
    "sbgru_step",
    "gru_sequence",
    "sample_layer_noise",
    "inv_softplus",
]

LAYER_KINDS = ("plain", "repar", "bp", "sb")

# default fraction of the init scale used for the initial posterior stddev
_INIT_SIGMA_FRACTION = 0.01
# initial indicator log-odds: sigmoid(3) ~ 0.95, i.e. start dense
_INIT_LOGIT_PI = 3.0


def inv_softplus(y: float) -> float:
    """Inverse of log(1 + exp(x)); y must be positive."""
    if y <= 0:
        raise DomainError("softplus outputs are positive")
    return float(np.log(np.expm1(y)))


class GaussianWeight:
    """Factorized Gaussian posterior over a weight matrix.

    The stddev is parameterized as softplus(rho) so both tensors are
    unconstrained during optimization.
    """

    def __init__(self, mu: Tensor, rho: Tensor):
        if mu.shape != rho.shape:
            raise ShapeError("mu and rho must have identical shapes")
        self.mu = mu
        self.rho = rho

    @property
    def shape(self):
        return self.mu.shape

    def sigma(self) -> Tensor:
        return softplus(self.rho)

    def sigma_values(self) -> np.ndarray:
        return np.logaddexp(0.0, self.rho.data)


class StickState:
    """Kumaraswamy posterior parameters over the K stick variables, plus the
    innovation hyperparameter of the sparsity prior."""

    def __init__(self, a_raw: Tensor, b_raw: Tensor, alpha: float):
        if a_raw.shape != b_raw.shape or a_raw.ndim != 1:
            raise ShapeError("stick parameters must be equal-length vectors")
        if alpha <= 0:
            raise ContractError("innovation hyperparameter must be positive")
        self.a_raw = a_raw
        self.b_raw = b_raw
        self.alpha = float(alpha)

    def a(self) -> Tensor:
        return softplus(self.a_raw)

    def b(self) -> Tensor:
        return softplus(self.b_raw)


class IndicatorPosterior:
    """Per-connection Bernoulli posterior over the utility indicators,
    parameterized by unconstrained log-odds."""

    def __init__(self, logit_pi: Tensor):
        self.logit_pi = logit_pi

    @property
    def shape(self):
        return self.logit_pi.shape

    def pi_tilde(self) -> Tensor:
        return sigmoid(self.logit_pi)

    def pi_tilde_values(self) -> np.ndarray:
        x = self.logit_pi.data
        e = np.exp(-np.abs(x))
        pos = 1.0 / (1.0 + e)
        return np.where(x >= 0, pos, 1.0 - pos)


@dataclass
class LayerNoise:
    """One draw of the per-layer stochastic quantities for a training step."""

    w: Tensor
    z: Tensor
    u: Tensor | None


class SBGRUCell:
    """A GRU cell whose candidate weight matrix carries the variational
    machinery; gates stay deterministic."""

    def __init__(self, input_dim: int, hidden_dim: int, kind: str,
                 alpha: float, rng: RngStream, name: str = "cell"):
        if kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind {kind!r}")
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.kind = kind
        self.name = name
        kj = self.hidden_dim + self.input_dim
        k = self.hidden_dim
        bound = 1.0 / np.sqrt(kj)

        def unif(shape):
            return rng.uniform(shape) * (2.0 * bound) - bound

        self.wm = Tensor(unif((kj, k)), requires_grad=True, name=f"{name}.wm")
        self.bm = Tensor(np.zeros(k), requires_grad=True, name=f"{name}.bm")
        self.wr = Tensor(unif((kj, k)), requires_grad=True, name=f"{name}.wr")
        self.br = Tensor(np.zeros(k), requires_grad=True, name=f"{name}.br")
        rho0 = inv_softplus(_INIT_SIGMA_FRACTION * bound)
        self.cand = GaussianWeight(
            Tensor(unif((kj, k)), requires_grad=True, name=f"{name}.cand.mu"),
            Tensor(np.full((kj, k), rho0), requires_grad=True, name=f"{name}.cand.rho"),
        )
        self.by = Tensor(np.zeros(k), requires_grad=True, name=f"{name}.by")
        self.indicators = IndicatorPosterior(
            Tensor(np.full((kj, k), _INIT_LOGIT_PI), requires_grad=True,
                   name=f"{name}.logit_pi")
        )
        self.sticks = StickState(
            Tensor(np.full(k, inv_softplus(alpha)), requires_grad=True,
                   name=f"{name}.a_raw"),
            Tensor(np.full(k, inv_softplus(1.0)), requires_grad=True,
                   name=f"{name}.b_raw"),
            alpha,
        )
        # hard mask baked in by checkpoint compression; overrides thresholding
        self.baked_mask: np.ndarray | None = None

    def parameters(self) -> list[tuple[str, Tensor]]:
        n = self.name
        return [
            (f"{n}.wm", self.wm),
            (f"{n}.bm", self.bm),
            (f"{n}.wr", self.wr),
            (f"{n}.br", self.br),
            (f"{n}.cand.mu", self.cand.mu),
            (f"{n}.cand.rho", self.cand.rho),
            (f"{n}.by", self.by),
            (f"{n}.logit_pi", self.indicators.logit_pi),
            (f"{n}.a_raw", self.sticks.a_raw),
            (f"{n}.b_raw", self.sticks.b_raw),
        ]

    def hard_mask(self, tau: float) -> np.ndarray:
        """Inference-time binary mask: baked by checkpoint compression if
        present, otherwise thresholded indicator posteriors."""
        if self.kind in ("plain", "repar"):
            return np.ones(self.cand.shape)
        if self.baked_mask is not None:
            return self.baked_mask
        from .compression import prune_mask

        return prune_mask(self.pi_tilde_values(), tau)

    def pi_tilde_values(self) -> np.ndarray:
        return self.indicators.pi_tilde_values()


def stick_probs(u) -> Tensor:
    """Inclusion probabilities as cumulative products of stick draws; the
    output is nonincreasing along the stick axis."""
    u = as_tensor(u)
    if np.any(u.data <= 0) or np.any(u.data > 1):
        raise DomainError("stick draws must lie in (0, 1]")
    return cumprod(u)


def sb_dense_forward(x, w, z, b, act=None) -> Tensor:
    """Masked dense layer: act(x @ (w * z) + b).

    ``z`` may be a relaxed mask in (0, 1) during training or a hard binary
    mask at inference.
    """
    x, w, z, b = as_tensor(x), as_tensor(w), as_tensor(z), as_tensor(b)
    if w.shape != z.shape:
        raise ShapeError(f"weight/mask shapes disagree: {w.shape} vs {z.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape((1, x.shape[0]))
    out = matmul(x, mul(w, z)) + b
    if act is not None:
        out = act(out)
    return out.reshape(out.shape[1]) if squeeze else out


def _step(x_t, y_prev, wm, bm, wr, br, w_cand, by):
    h = concat_cols(y_prev, x_t)
    m = sigmoid(matmul(h, wm) + bm)
    r = sigmoid(matmul(h, wr) + br)
    g = concat_cols(mul(r, y_prev), x_t)
    c = tanh(matmul(g, w_cand) + by)
    return (1.0 - m) * y_prev + mul(m, c)


def _as_row(t: Tensor) -> tuple[Tensor, bool]:
    if t.ndim == 1:
        return t.reshape((1, t.shape[0])), True
    return t, False


def gru_step(x_t, y_prev, cell: SBGRUCell) -> Tensor:
    """One deterministic GRU step using the candidate posterior mean."""
    x_t, squeeze = _as_row(as_tensor(x_t))
    y_prev, _ = _as_row(as_tensor(y_prev))
    out = _step(x_t, y_prev, cell.wm, cell.bm, cell.wr, cell.br,
                cell.cand.mu, cell.by)
    return out.reshape(out.shape[1]) if squeeze else out


def sbgru_step(x_t, y_prev, cell: SBGRUCell, sampled_w, sampled_z) -> Tensor:
    """One GRU step with the candidate path masked: uses sampled_w * sampled_z
    in place of the candidate weight matrix."""
    x_t, squeeze = _as_row(as_tensor(x_t))
    y_prev, _ = _as_row(as_tensor(y_prev))
    w_eff = mul(as_tensor(sampled_w), as_tensor(sampled_z))
    out = _step(x_t, y_prev, cell.wm, cell.bm, cell.wr, cell.br, w_eff, cell.by)
    return out.reshape(out.shape[1]) if squeeze else out


def gru_sequence(x, y0, wm, bm, wr, br, w_cand, by) -> Tensor:
    """Run a whole [B, T, J] batch through the recurrence in one tape node.

    This is the training hot path: the forward and the backpropagation
    through time both run inside the selected kernel backend instead of
    unrolling one tape node per timestep.
    """
    from .tensor import _record  # shared tape plumbing

    x, y0 = as_tensor(x), as_tensor(y0)
    wm, bm = as_tensor(wm), as_tensor(bm)
    wr, br = as_tensor(wr), as_tensor(br)
    w_cand, by = as_tensor(w_cand), as_tensor(by)
    if x.ndim != 3:
        raise ShapeError(f"expected [batch, time, features], got {x.shape}")
    xt = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))
    y, m, r, c = kernels.gru_forward(
        xt, np.ascontiguousarray(y0.data), wm.data, bm.data,
        wr.data, br.data, w_cand.data, by.data)
    out = Tensor(np.ascontiguousarray(np.swapaxes(y, 0, 1)))

    def bwd(g):
        gt = np.ascontiguousarray(np.swapaxes(g, 0, 1))
        dx, dy0, dwm, dbm, dwr, dbr, dwy, dby = kernels.gru_backward(
            xt, np.ascontiguousarray(y0.data), wm.data, wr.data, w_cand.data,
            y, m, r, c, gt)
        return (np.swapaxes(dx, 0, 1), dy0, dwm, dbm, dwr, dbr, dwy, dby)

    return _record(out, (x, y0, wm, bm, wr, br, w_cand, by), bwd)


def sample_layer_noise(cell: SBGRUCell, rng: RngStream | None, lam: float,
                       mode: str = "train", tau: float = 0.01) -> LayerNoise:
    """Draw the per-step stochastic quantities a cell's kind requires.

    Training mode draws, in a fixed order, the candidate weights (Gaussian
    reparameterization), the stick variables (Kumaraswamy), and the relaxed
    mask (binary concrete). Eval mode is deterministic: posterior means and
    a hard thresholded mask.
    """
    ones = Tensor(np.ones(cell.cand.shape))
    if mode == "eval":
        return LayerNoise(w=cell.cand.mu, z=Tensor(cell.hard_mask(tau)), u=None)
    if mode != "train":
        raise ContractError(f"unknown mode {mode!r}")
    if lam <= 0:
        raise ContractError("training requires a positive temperature")

    kind = cell.kind
    if kind == "plain":
        return LayerNoise(w=cell.cand.mu, z=ones, u=None)
    if kind == "repar":
        eps = rng.normal(cell.cand.shape)
        return LayerNoise(
            w=sample_gaussian(cell.cand.mu, cell.cand.sigma(), eps), z=ones, u=None)
    if kind == "bp":
        u = sample_kumaraswamy(cell.sticks.a(), cell.sticks.b(),
                               rng.uniform(cell.hidden_dim))
        z = sample_binary_concrete(cell.indicators.logit_pi, lam,
                                   rng.uniform(cell.cand.shape))
        return LayerNoise(w=cell.cand.mu, z=z, u=u)
    # sb: both mechanisms, same draw order as the separate kinds
    eps = rng.normal(cell.cand.shape)
    w = sample_gaussian(cell.cand.mu, cell.cand.sigma(), eps)
    u = sample_kumaraswamy(cell.sticks.a(), cell.sticks.b(),
                           rng.uniform(cell.hidden_dim))
    z = sample_binary_concrete(cell.indicators.logit_pi, lam,
                               rng.uniform(cell.cand.shape))
    return LayerNoise(w=w, z=z, u=u)
