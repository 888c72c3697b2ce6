"""Adam-based training loop for the variational objective.

Determinism contract: every random quantity of step s is drawn from a
counter-based stream keyed by (seed, stream id), with stream 0 reserved for
model initialization, 1 + s for step s, and a high offset for per-epoch
batch order. Losses are therefore a pure function of (seed, config, corpus)
and training resumes bit-exactly from a checkpoint holding the step counter
and optimizer moments.

The metric log contains only deterministic columns (step, objective parts,
temperature); wall-clock timings go to a separate sidecar file so that two
runs of the same configuration produce byte-identical metric logs.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_mod
from .corpus import Batch, ParallelCorpus, Vocab, batchify, bleu4
from .elbo import elbo_loss
from .model import Seq2SeqModel
from .stochastic import RngStream, TemperatureSchedule, temperature
from .tensor import ContractError, Tape, backward, zero_grads

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingDiverged",
    "adam_step",
    "clip_global_norm",
    "train",
    "TrainResult",
    "STEP_STREAM_BASE",
    "EPOCH_STREAM_BASE",
]

STEP_STREAM_BASE = 1
EPOCH_STREAM_BASE = 2**48


class TrainingDiverged(RuntimeError):
    """Raised when the objective turns non-finite; the offending batch is
    dumped next to the metric log."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_steps: int = 2000
    clip_norm: float = 5.0
    seed: int = 1
    eval_every: int = 200
    patience: int = 10
    lambda0: float = 1.0
    lambda_min: float = 0.5
    decay_rate: float = 1e-4
    update_every: int = 100
    mc_kl: bool = False
    kl_scale_override: float | None = None
    stop_train_ppl: float | None = None  # early exit for overfit harnesses

    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.lambda0, self.lambda_min,
                                   self.decay_rate, self.update_every)


def paper_train_config(**overrides) -> TrainConfig:
    """Full-scale optimizer settings: Adam at 1e-5, batches of 128."""
    base = dict(learning_rate=1e-5, batch_size=128, max_steps=200000,
                eval_every=500)
    base.update(overrides)
    return TrainConfig(**base)


class AdamState:
    """First/second moment accumulators, keyed by parameter name."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, in place on the parameter data."""
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for (name, param), g in zip(params, grads):
        if g.shape != param.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        param.data = param.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads, clip_norm: float):
    """Rescale all gradients jointly when their global L2 norm exceeds
    clip_norm; returns (grads, observed norm)."""
    if clip_norm <= 0:
        raise ContractError("clip_norm must be positive")
    sq = 0.0
    for g in grads:
        sq += float((g * g).sum())
    norm = float(np.sqrt(sq))
    if norm > clip_norm:
        scale = clip_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class TrainResult:
    steps: int
    history: list = field(default_factory=list)
    best_dev_bleu: float = -1.0
    best_step: int = -1
    stopped_early: bool = False
    final_train_ppl: float = float("inf")


def _dump_batch(path: str, batch: Batch, step: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"step = {step}\n")
        for name in ("src", "src_len", "tgt_in", "tgt_out", "tgt_mask"):
            fh.write(f"{name} = {getattr(batch, name).tolist()!r}\n")


def _decode_corpus(model: Seq2SeqModel, corpus: ParallelCorpus,
                   vocab_src: Vocab, vocab_tgt: Vocab) -> list[list[str]]:
    out = []
    for gloss, _ in corpus.pairs:
        ids = model.greedy_decode(vocab_src.encode(gloss))
        out.append(vocab_tgt.decode(ids))
    return out


def evaluate_bleu(model, corpus, vocab_src, vocab_tgt) -> float:
    hyps = _decode_corpus(model, corpus, vocab_src, vocab_tgt)
    refs = [text for _, text in corpus.pairs]
    return bleu4(hyps, refs)


def train(model: Seq2SeqModel, train_corpus: ParallelCorpus,
          dev_corpus: ParallelCorpus | None, vocab_src: Vocab,
          vocab_tgt: Vocab, cfg: TrainConfig, out_dir: str,
          start_step: int = 0, adam: AdamState | None = None,
          initial_best_bleu: float = -1.0) -> TrainResult:
    """Run SGVB training until max_steps or early stopping.

    Writes metrics.log (deterministic), timings.log (wall clock), and
    best.ckpt / last.ckpt under out_dir. ``start_step`` plus a checkpointed
    optimizer state resume an interrupted run on its original trajectory;
    ``initial_best_bleu`` carries the resumed run's best dev score so a
    worse continuation never displaces the retained best checkpoint.
    """
    if len(train_corpus) == 0:
        raise ContractError("training corpus is empty")
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.log")
    timings_path = os.path.join(out_dir, "timings.log")
    batches = batchify(train_corpus, cfg.batch_size, vocab_src, vocab_tgt)
    n_train = len(train_corpus)
    schedule = cfg.schedule()
    adam = adam if adam is not None else AdamState()
    params = model.parameters()

    result = TrainResult(steps=start_step)
    best_bleu = float(initial_best_bleu)
    best_step = start_step if initial_best_bleu > -1.0 else -1
    evals_since_best = 0
    vocab_meta = _vocab_metadata(vocab_src, vocab_tgt)
    train_meta = _train_metadata(cfg)

    mode = "a" if start_step > 0 and os.path.exists(metrics_path) else "w"
    metrics = open(metrics_path, mode, encoding="utf-8")
    timings = open(timings_path, mode, encoding="utf-8")
    if mode == "w":
        metrics.write("step\tnll\tkl_w\tkl_z\tkl_u\tlambda\n")
        timings.write("step\twall_ms\n")

    def save(tag: str, step: int, dev_bleu: float | None) -> None:
        extra = {"state.step": str(step)}
        if dev_bleu is not None:
            extra["state.dev_bleu"] = repr(dev_bleu)
        extra.update(train_meta)
        extra.update(vocab_meta)
        ckpt = ckpt_mod.save_model(model, extra, adam=adam)
        ckpt.save(os.path.join(out_dir, f"{tag}.ckpt"))

    try:
        step = start_step
        order_epoch = -1
        order = None
        while step < cfg.max_steps:
            epoch, pos = divmod(step, len(batches))
            if epoch != order_epoch:
                order = RngStream(cfg.seed, EPOCH_STREAM_BASE + epoch).permutation(
                    len(batches))
                order_epoch = epoch
            batch = batches[order[pos]]
            rng = RngStream(cfg.seed, STEP_STREAM_BASE + step)
            t0 = time.perf_counter()
            with Tape() as tape:
                breakdown = elbo_loss(
                    model, batch, rng, step, n_train=n_train,
                    schedule=schedule, mc_kl=cfg.mc_kl,
                    kl_scale=cfg.kl_scale_override)
                if not np.isfinite(breakdown.total_loss):
                    dump = os.path.join(out_dir, "diverged_batch.txt")
                    _dump_batch(dump, batch, step)
                    raise TrainingDiverged(
                        f"non-finite loss at step {step}; batch dumped to {dump}")
                zero_grads(p for _, p in params)
                backward(breakdown.loss, tape)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for _, p in params]
            grads, _ = clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, adam, cfg.learning_rate)
            wall_ms = (time.perf_counter() - t0) * 1000.0

            lam = temperature(step, schedule)
            metrics.write(
                f"{step}\t{breakdown.nll!r}\t{breakdown.kl_w!r}\t"
                f"{breakdown.kl_z!r}\t{breakdown.kl_u!r}\t{lam!r}\n")
            timings.write(f"{step}\t{wall_ms:.3f}\n")
            tokens = float(batch.tgt_mask.sum())
            ppl = float(np.exp(breakdown.nll / tokens))
            result.history.append({
                "step": step, "nll": breakdown.nll, "kl_w": breakdown.kl_w,
                "kl_z": breakdown.kl_z, "kl_u": breakdown.kl_u,
                "lambda": lam, "ppl": ppl, "wall_ms": wall_ms,
            })
            step += 1
            result.steps = step
            result.final_train_ppl = ppl

            if cfg.stop_train_ppl is not None and ppl < cfg.stop_train_ppl:
                result.stopped_early = True
                break
            if dev_corpus is not None and step % cfg.eval_every == 0:
                dev_bleu = evaluate_bleu(model, dev_corpus, vocab_src, vocab_tgt)
                if dev_bleu > best_bleu:
                    best_bleu, best_step = dev_bleu, step
                    evals_since_best = 0
                    save("best", step, dev_bleu)
                else:
                    evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    result.stopped_early = True
                    break
    finally:
        metrics.close()
        timings.close()

    if dev_corpus is not None and best_step < 0:
        best_bleu = evaluate_bleu(model, dev_corpus, vocab_src, vocab_tgt)
        best_step = result.steps
        save("best", result.steps, best_bleu)
    save("last", result.steps, best_bleu if best_step >= 0 else None)
    result.best_dev_bleu = best_bleu
    result.best_step = best_step
    return result


def _train_metadata(cfg: TrainConfig) -> dict[str, str]:
    """Snapshot of the optimizer settings for the checkpoint audit trail."""
    keys = ("learning_rate", "batch_size", "max_steps", "clip_norm", "seed",
            "eval_every", "patience", "lambda0", "lambda_min", "decay_rate",
            "update_every", "mc_kl")
    return {f"train.{k}": repr(getattr(cfg, k)) for k in keys}


def _vocab_metadata(vocab_src: Vocab, vocab_tgt: Vocab) -> dict[str, str]:
    from .corpus import RESERVED_TOKENS

    n = len(RESERVED_TOKENS)
    return {
        "vocab.src": " ".join(vocab_src.itos[n:]),
        "vocab.src.min_freq": str(vocab_src.min_freq),
        "vocab.src.singletons": str(vocab_src.singletons),
        "vocab.tgt": " ".join(vocab_tgt.itos[n:]),
        "vocab.tgt.min_freq": str(vocab_tgt.min_freq),
        "vocab.tgt.singletons": str(vocab_tgt.singletons),
    }


def vocabs_from_metadata(meta: dict[str, str]) -> tuple[Vocab, Vocab]:
    src = Vocab(meta.get("vocab.src", "").split(),
                min_freq=int(meta.get("vocab.src.min_freq", "1")),
                singletons=int(meta.get("vocab.src.singletons", "0")))
    tgt = Vocab(meta.get("vocab.tgt", "").split(),
                min_freq=int(meta.get("vocab.tgt.min_freq", "1")),
                singletons=int(meta.get("vocab.tgt.singletons", "0")))
    return src, tgt
