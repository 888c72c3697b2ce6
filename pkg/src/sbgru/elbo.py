"""Training objective: negative expected log-likelihood plus the scaled sum
of the three divergence terms (weights, indicators, sticks).

The weight and indicator divergences use closed forms by default (exact
Gaussian-vs-standard-normal, and Bernoulli-vs-Bernoulli with Monte Carlo
only over the stick draws); single-draw estimators of both are available
behind ``mc_kl=True`` for fidelity experiments. The stick divergence is
always a single-draw estimate and may be negative on any one step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import stick_probs
from .stochastic import (
    RngStream,
    TemperatureSchedule,
    kumaraswamy_log_pdf,
    temperature,
)
from .tensor import (
    ContractError,
    DomainError,
    Tensor,
    as_tensor,
    clip,
    cross_entropy_rows,
    log,
    mul,
    reshape,
)

__all__ = [
    "ElboBreakdown",
    "kl_gaussian",
    "kl_gaussian_mc",
    "kl_sticks_mc",
    "kl_indicators",
    "kl_indicators_mc",
    "nll_tokens",
    "elbo_loss",
]

_PI_EPS = 1e-7


@dataclass
class ElboBreakdown:
    """Scalar summary of one training objective evaluation.

    ``loss`` is the differentiable total; the float fields mirror its
    components for logging. total_loss = nll + kl_scale * (kl_w + kl_z + kl_u).
    """

    nll: float
    kl_w: float
    kl_z: float
    kl_u: float
    kl_scale: float
    total_loss: float
    loss: Tensor


def kl_gaussian(mu, sigma) -> Tensor:
    """Exact KL of an elementwise Gaussian posterior against the standard
    normal prior: sum of 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    if np.any(sigma.data <= 0):
        raise DomainError("sigma must be strictly positive")
    var = mul(sigma, sigma)
    return mul(0.5, (mul(mu, mu) + var - 1.0 - log(var)).sum())


def kl_gaussian_mc(mu, sigma, w_draw) -> Tensor:
    """Single-draw estimate log q(w) - log p(w) at the sampled weights."""
    mu, sigma, w = as_tensor(mu), as_tensor(sigma), as_tensor(w_draw)
    if np.any(sigma.data <= 0):
        raise DomainError("sigma must be strictly positive")
    dq = (w - mu) / sigma
    log_q = -log(sigma) - 0.5 * mul(dq, dq)
    log_p = -0.5 * mul(w, w)
    return (log_q - log_p).sum()


def kl_sticks_mc(a, b, alpha: float, u_draw) -> Tensor:
    """Single-draw estimate of the stick divergence: log q(u) - log p(u),
    where the prior density is alpha * u^(alpha-1) on (0, 1).

    ``u_draw`` must be the same reparameterized samples used by the forward
    pass so that gradients flow into the shape parameters.
    """
    a, b, u = as_tensor(a), as_tensor(b), as_tensor(u_draw)
    log_q = kumaraswamy_log_pdf(u, a, b)
    log_p = float(np.log(alpha)) + mul(alpha - 1.0, log(u))
    return (log_q - log_p).sum()


def _bernoulli_kl(pi_tilde: Tensor, pi: Tensor) -> Tensor:
    return (
        mul(pi_tilde, log(pi_tilde) - log(pi))
        + mul(1.0 - pi_tilde, log(1.0 - pi_tilde) - log(1.0 - pi))
    ).sum()


def kl_indicators(pi_tilde, u_draw) -> Tensor:
    """Indicator divergence, closed-form Bernoulli KL per connection with
    Monte Carlo only over the stick draws that set the prior inclusion
    probabilities (one probability per output unit, shared across rows)."""
    pi_tilde = clip(as_tensor(pi_tilde), _PI_EPS, 1.0 - _PI_EPS)
    pi = clip(stick_probs(u_draw), _PI_EPS, 1.0 - _PI_EPS)
    return _bernoulli_kl(pi_tilde, pi)


def kl_indicators_mc(pi_tilde, z_draw, u_draw) -> Tensor:
    """Single-draw estimate log q(z) - log p(z | pi) evaluated at the relaxed
    mask samples, with the Bernoulli mass extended multiplicatively to the
    open unit interval."""
    pi_tilde = clip(as_tensor(pi_tilde), _PI_EPS, 1.0 - _PI_EPS)
    pi = clip(stick_probs(u_draw), _PI_EPS, 1.0 - _PI_EPS)
    z = clip(as_tensor(z_draw), _PI_EPS, 1.0 - _PI_EPS)
    ratio = mul(z, log(pi_tilde) - log(pi)) + mul(1.0 - z, log(1.0 - pi_tilde) - log(1.0 - pi))
    return ratio.sum()


def nll_tokens(logits, targets, mask=None) -> Tensor:
    """Summed token cross-entropy with padding excluded.

    logits [T, V] or [B, T, V]; targets the matching integer array; mask
    (same shape as targets) zeroes padding positions.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    v = logits.shape[-1]
    flat = reshape(logits, (-1, v)) if logits.ndim == 3 else logits
    w = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    return cross_entropy_rows(flat, targets.reshape(-1), w)


def elbo_loss(model, batch, rng: RngStream, step: int, *, n_train: int,
              schedule: TemperatureSchedule, mc_kl: bool = False,
              kl_scale: float | None = None) -> ElboBreakdown:
    """Assemble the minibatch objective for one optimizer step.

    Draws one noise set per stochastic layer, runs the teacher-forced
    forward pass, and adds the divergence terms scaled by batch_size/n_train
    (so one epoch accounts for the full divergence once). ``kl_scale``
    overrides that default; 0 recovers pure maximum likelihood.
    """
    if n_train <= 0:
        raise ContractError("n_train must be positive")
    lam = temperature(step, schedule)
    logits, noises = model.forward_teacher_forced(
        batch.src, batch.src_len, batch.tgt_in, mode="train", rng=rng, lam=lam)
    nll = nll_tokens(logits, batch.tgt_out, batch.tgt_mask)

    kl_w_terms, kl_z_terms, kl_u_terms = [], [], []
    for cell, noise in noises:
        if cell.kind in ("repar", "sb"):
            if mc_kl:
                kl_w_terms.append(kl_gaussian_mc(cell.cand.mu, cell.cand.sigma(), noise.w))
            else:
                kl_w_terms.append(kl_gaussian(cell.cand.mu, cell.cand.sigma()))
        if cell.kind in ("bp", "sb"):
            if mc_kl:
                kl_z_terms.append(kl_indicators_mc(
                    cell.indicators.pi_tilde(), noise.z, noise.u))
            else:
                kl_z_terms.append(kl_indicators(cell.indicators.pi_tilde(), noise.u))
            kl_u_terms.append(kl_sticks_mc(
                cell.sticks.a(), cell.sticks.b(), cell.sticks.alpha, noise.u))

    scale = batch.size / n_train if kl_scale is None else float(kl_scale)

    def total(terms):
        if not terms:
            return None
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc

    kw, kz, ku = total(kl_w_terms), total(kl_z_terms), total(kl_u_terms)
    divergences = [t for t in (kw, kz, ku) if t is not None]
    if divergences and scale != 0.0:
        loss = nll + mul(scale, total(divergences))
    else:
        # bitwise identical to maximum likelihood when nothing is stochastic
        loss = nll
    return ElboBreakdown(
        nll=nll.item(),
        kl_w=kw.item() if kw is not None else 0.0,
        kl_z=kz.item() if kz is not None else 0.0,
        kl_u=ku.item() if ku is not None else 0.0,
        kl_scale=scale,
        total_loss=loss.item(),
        loss=loss,
    )
