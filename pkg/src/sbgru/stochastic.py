"""Reparameterized sampling primitives and temperature annealing.

All samplers split into a raw noise draw (from :class:`RngStream`) and a
deterministic, differentiable transform of that noise, so gradients flow
into the distribution parameters while the noise itself can be frozen and
replayed, e.g. for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ContractError,
    DomainError,
    Tensor,
    as_tensor,
    clip,
    exp,
    log,
    mul,
    power,
    sigmoid,
)

__all__ = [
    "UNIFORM_EPS",
    "RngStream",
    "TemperatureSchedule",
    "temperature",
    "sample_gaussian",
    "sample_kumaraswamy",
    "kumaraswamy_log_pdf",
    "sample_binary_concrete",
]

# uniform draws are clamped away from {0, 1} before any log transform
UNIFORM_EPS = 1e-7
# relaxed-mask samples merely need to stay inside the open interval; a much
# tighter clamp keeps low temperatures visibly saturating toward {0, 1}
CONCRETE_EPS = 1e-12


class RngStream:
    """Counter-based random stream with platform-stable output.

    Backed by the Philox bit generator keyed directly by (seed, stream), so
    the same pair reproduces the same draw sequence on any machine. Parallel
    or resumable consumers derive independent streams with :meth:`split`;
    callers are responsible for using distinct child indices.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, child: int) -> "RngStream":
        """Independent stream for a worker or step; child indices must be
        unique within one seed."""
        return RngStream(self.seed, child)

    def uniform(self, shape=()) -> np.ndarray:
        """Open-interval uniforms, clamped to [eps, 1-eps] for log safety."""
        u = self._gen.random(shape)
        return np.clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


@dataclass
class TemperatureSchedule:
    """Piecewise-constant exponential decay for the relaxation temperature."""

    lambda0: float = 1.0
    lambda_min: float = 0.5
    decay_rate: float = 1e-4
    update_every: int = 100

    def __post_init__(self):
        if self.lambda0 <= 0 or self.lambda_min <= 0:
            raise ContractError("temperatures must be positive")
        if self.decay_rate < 0 or self.update_every < 1:
            raise ContractError("invalid schedule constants")


def temperature(step: int, sched: TemperatureSchedule) -> float:
    """Annealed temperature at a step; constant within update_every blocks,
    never below lambda_min."""
    held = (step // sched.update_every) * sched.update_every
    return max(sched.lambda_min, sched.lambda0 * float(np.exp(-sched.decay_rate * held)))


def sample_gaussian(mu, sigma, eps) -> Tensor:
    """Location-scale draw mu + sigma * eps, differentiable in mu and sigma."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    if np.any(sigma.data < 0):
        raise ContractError("sigma must be nonnegative")
    return mu + mul(sigma, np.asarray(eps, dtype=np.float64))


def sample_kumaraswamy(a, b, x) -> Tensor:
    """Inverse-CDF draw u = (1 - (1-x)^(1/b))^(1/a) for x ~ U(0,1).

    Differentiable in the positive shape parameters a and b; x is a frozen
    uniform draw in the open interval. The result is clamped into the open
    interval because extreme shape parameters can round it to exactly 0 or
    1 in float64, which downstream log densities cannot take.
    """
    a, b = as_tensor(a), as_tensor(b)
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0) or np.any(x >= 1):
        raise ContractError("uniform draw must lie strictly inside (0, 1)")
    log1mx = Tensor(np.log1p(-x))
    # the inner clip guards log(0) when (1-x)^(1/b) rounds up to exactly 1
    inner = clip(1.0 - exp(mul(log1mx, power(b, -1.0))), 1e-300, 1.0)
    u = exp(mul(log(inner), power(a, -1.0)))
    return clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS)


def kumaraswamy_log_pdf(u, a, b) -> Tensor:
    """log density log(a) + log(b) + (a-1) log u + (b-1) log(1 - u^a)."""
    u, a, b = as_tensor(u), as_tensor(a), as_tensor(b)
    if np.any(u.data <= 0) or np.any(u.data >= 1):
        raise DomainError("density support is the open unit interval")
    u_pow_a = exp(mul(log(u), a))
    # u^a can round to exactly 1 for degenerate shape values; guard the log
    tail = clip(1.0 - u_pow_a, 1e-300, 1.0)
    return log(a) + log(b) + mul(a - 1.0, log(u)) + mul(b - 1.0, log(tail))


def sample_binary_concrete(log_alpha, lam: float, u) -> Tensor:
    """Relaxed Bernoulli draw sigmoid((log_alpha + logistic noise) / lam).

    The two-category Gumbel-softmax collapses to this logistic form for
    binary variables; log_alpha is the posterior log-odds and is the only
    differentiable argument.
    """
    if lam <= 0:
        raise ContractError("temperature must be positive")
    log_alpha = as_tensor(log_alpha)
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u >= 1):
        raise DomainError("uniform draw must lie strictly inside (0, 1)")
    logistic = Tensor(np.log(u) - np.log1p(-u))
    z = sigmoid((log_alpha + logistic) * (1.0 / lam))
    # low temperatures saturate the logistic to exactly 0/1 in float64;
    # keep the relaxed sample strictly inside the open interval
    return clip(z, CONCRETE_EPS, 1.0 - CONCRETE_EPS)
