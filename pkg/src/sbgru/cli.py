"""Command-line surface tying the library into batch workflows.

Subcommands: train, translate, evaluate, compress, inspect. Every error
path exits nonzero with a one-line message on stderr; SBGRU_SEED overrides
the configured seed.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, FormatError, load_adam, load_model
from .compression import DELTA_MODES, compress
from .config import ConfigError, load_run_config
from .corpus import CorpusError, bleu4, load_corpus, rouge_l
from .model import Seq2SeqModel
from .stochastic import RngStream
from .tensor import ContractError, DomainError, ShapeError
from .trainer import TrainingDiverged, train, vocabs_from_metadata

_ERRORS = (ConfigError, CorpusError, FormatError, ContractError, DomainError,
           ShapeError, TrainingDiverged, OSError)


def _load_checkpoint(path: str) -> Checkpoint:
    return Checkpoint.load(path)


def _load_model_and_vocabs(path: str):
    ckpt = _load_checkpoint(path)
    model = load_model(ckpt)
    vocab_src, vocab_tgt = vocabs_from_metadata(ckpt.metadata)
    return ckpt, model, vocab_src, vocab_tgt


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if not cfg.train_path:
        raise ConfigError("config is missing train_path")
    print(cfg.describe())
    train_corpus = load_corpus(cfg.train_path, "train")
    dev_corpus = load_corpus(cfg.dev_path, "dev") if cfg.dev_path else None
    from .corpus import build_vocab

    vocab_src = build_vocab((g for g, _ in train_corpus.pairs), cfg.src_min_freq)
    vocab_tgt = build_vocab((t for _, t in train_corpus.pairs), cfg.tgt_min_freq)
    model_cfg = cfg.model_config(len(vocab_src), len(vocab_tgt))

    start_step, adam, prior_best = 0, None, -1.0
    if args.resume:
        ckpt = _load_checkpoint(args.resume)
        model = load_model(ckpt)
        adam = load_adam(ckpt, model)
        start_step = int(ckpt.metadata.get("state.step", "0"))
        prior_best = float(ckpt.metadata.get("state.dev_bleu", "-1"))
        print(f"resuming from {args.resume} at step {start_step}")
    else:
        model = Seq2SeqModel(model_cfg, RngStream(cfg.train.seed, 0))

    result = train(model, train_corpus, dev_corpus, vocab_src, vocab_tgt,
                   cfg.train, cfg.out_dir, start_step=start_step, adam=adam,
                   initial_best_bleu=prior_best)
    print(f"trained {result.steps} steps; final train perplexity "
          f"{result.final_train_ppl:.4f}")
    if result.best_step >= 0:
        print(f"best dev BLEU-4 {result.best_dev_bleu:.2f} at step {result.best_step}")
    print(f"checkpoints and logs under {cfg.out_dir}")
    return 0


def cmd_translate(args) -> int:
    _, model, vocab_src, vocab_tgt = _load_model_and_vocabs(args.checkpoint)
    with open(args.input, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for line in lines:
        tokens = line.split()
        if not tokens:
            print("")
            continue
        ids = model.greedy_decode(vocab_src.encode(tokens))
        print(" ".join(vocab_tgt.decode(ids)))
    return 0


def cmd_evaluate(args) -> int:
    ckpt, model, vocab_src, vocab_tgt = _load_model_and_vocabs(args.checkpoint)
    corpus = load_corpus(args.corpus, "eval")
    hyps, refs = [], []
    src_tokens = tgt_tokens = 0
    for gloss, text in corpus.pairs:
        src_tokens += len(gloss)
        tgt_tokens += len(text)
        hyps.append(vocab_tgt.decode(model.greedy_decode(vocab_src.encode(gloss))))
        refs.append(text)
    bleu = bleu4(hyps, refs)
    rouge = float(np.mean([rouge_l(h, r) for h, r in zip(hyps, refs)]))
    kinds = ckpt.metadata.get("model.layer_kinds", "?")
    print(f"sentences: {len(corpus.pairs)}  source tokens: {src_tokens}  "
          f"target tokens: {tgt_tokens}")
    print(f"layer kinds: {kinds}")
    print(f"BLEU-4: {bleu:.2f}")
    print(f"ROUGE-L: {rouge:.4f} ({100.0 * rouge:.2f})")
    return 0


def cmd_compress(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    compressed, report = compress(ckpt, tau=args.tau, delta_mode=args.delta_mode,
                                  delta_override=args.delta_override)
    compressed.save(args.out)
    print(report.format_table())
    print(f"compressed checkpoint written to {args.out}")
    return 0


def _kumaraswamy_mean(a: float, b: float) -> float:
    # E[u] = b * Gamma(1 + 1/a) Gamma(b) / Gamma(1 + 1/a + b)
    return b * math.exp(math.lgamma(1.0 + 1.0 / a) + math.lgamma(b)
                        - math.lgamma(1.0 + 1.0 / a + b))


def cmd_inspect(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    print(f"checkpoint version {ckpt.metadata.get('format.version', '1')}, "
          f"{len(ckpt.entries)} tensors")
    for key in sorted(k for k in ckpt.metadata if not k.startswith("vocab.")):
        print(f"  {key} = {ckpt.metadata[key]}")
    print(f"{'tensor':<24}{'encoding':<13}{'shape':<16}{'bytes':>10}")
    for entry in ckpt.entries.values():
        shape = "x".join(str(s) for s in entry.shape)
        print(f"{entry.name:<24}{entry.encoding:<13}{shape:<16}"
              f"{len(entry.payload):>10}")

    from .checkpoint import config_from_metadata

    cfg = config_from_metadata(ckpt.metadata)
    tau = cfg.tau
    names = [(f"enc{i}", cfg.layer_kinds[i]) for i in range(cfg.enc_layers)]
    names += [(f"dec{i}", cfg.layer_kinds[cfg.enc_layers + i])
              for i in range(cfg.dec_layers)]
    for name, kind in names:
        if kind not in ("bp", "sb"):
            continue
        logit = ckpt.array(f"{name}.logit_pi")
        e = np.exp(-np.abs(logit))
        pos = 1.0 / (1.0 + e)
        pi_tilde = np.where(logit >= 0, pos, 1.0 - pos)
        sparsity = float((pi_tilde < tau).mean())
        hist, _ = np.histogram(pi_tilde, bins=10, range=(0.0, 1.0))
        a = np.logaddexp(0.0, ckpt.array(f"{name}.a_raw"))
        b = np.logaddexp(0.0, ckpt.array(f"{name}.b_raw"))
        means = [_kumaraswamy_mean(float(ai), float(bi)) for ai, bi in zip(a, b)]
        profile = np.cumprod(means)
        print(f"{name} ({kind}): sparsity {sparsity:.4f} at tau={tau}")
        print(f"  pi_tilde histogram (10 bins, 0..1): {hist.tolist()}")
        head = ", ".join(f"{p:.4f}" for p in profile[:8])
        print(f"  stick profile pi_k (first {min(8, len(profile))}): {head}")
        if np.any(np.diff(profile) > 1e-12):
            raise ContractError(f"stick profile of {name} is not nonincreasing")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbgru",
        description="Variational stick-breaking GRU translation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default="", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("translate", help="translate gloss lines to text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("compress", help="prune and quantize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--delta-mode", choices=DELTA_MODES, default="mean-sigma")
    p.add_argument("--delta-override", type=float, default=None,
                   help="force the quantization step instead of deriving it")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
