#!/usr/bin/env python3
"""Benchmark the recurrence kernel backends and the per-kind step cost.

Times the sequence forward and backward kernels for the compiled Cython
backend against the pure-numpy fallback across a few problem sizes, then
measures full optimizer-step wall time for each layer kind on the bundled
toy corpus (mirroring the training-overhead ablation).

Usage: python benchmarks/bench_backends.py [--repeats N] [--skip-kinds]
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from sbgru import kernels  # noqa: E402

SIZES = [
    # (t_len, batch, input_dim, hidden)
    (10, 16, 64, 64),
    (20, 32, 64, 64),
    (20, 32, 256, 256),
    (30, 64, 512, 512),
]


def _problem(rng, t_len, batch, j, k):
    x = rng.standard_normal((t_len, batch, j))
    y0 = rng.standard_normal((batch, k)) * 0.1
    ws = [rng.standard_normal((k + j, k)) * 0.2 for _ in range(3)]
    bs = [np.zeros(k) for _ in range(3)]
    dy = rng.standard_normal((t_len, batch, k))
    return x, y0, ws, bs, dy


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    backends = kernels.available_backends()
    print(f"backends available: {', '.join(backends)}  "
          f"(selected: {kernels.BACKEND})")
    header = f"{'t x b x j x k':>20} {'phase':>9}"
    for name in backends:
        header += f" {name + ' (ms)':>15}"
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    rng = np.random.default_rng(0)
    for t_len, batch, j, k in SIZES:
        x, y0, (wm, wr, wy), (bm, br, by), dy = _problem(rng, t_len, batch, j, k)
        for phase in ("forward", "backward"):
            row = f"{f'{t_len} x {batch} x {j} x {k}':>20} {phase:>9}"
            times = {}
            for name, mod in backends.items():
                fwd = mod.gru_forward(x, y0, wm, bm, wr, br, wy, by)
                if phase == "forward":
                    fn = lambda: mod.gru_forward(x, y0, wm, bm, wr, br, wy, by)
                else:
                    y, m, r, c = fwd
                    fn = lambda: mod.gru_backward(x, y0, wm, wr, wy, y, m, r,
                                                  c, dy)
                times[name] = _time(fn, repeats)
                row += f" {times[name] * 1000:>15.3f}"
            if len(times) == 2:
                row += f" {times['python'] / times['compiled']:>8.2f}x"
            print(row)


def bench_kinds(repeats):
    from sbgru.corpus import batchify, build_vocab, load_corpus
    from sbgru.elbo import elbo_loss
    from sbgru.model import Seq2SeqModel, desk_config
    from sbgru.stochastic import RngStream, TemperatureSchedule
    from sbgru.tensor import Tape, backward, zero_grads
    from sbgru.trainer import AdamState, adam_step, clip_global_norm

    toy = os.path.join(os.path.dirname(__file__), "..", "data", "toy",
                       "train.tsv")
    corpus = load_corpus(toy)
    vs = build_vocab(g for g, _ in corpus.pairs)
    vt = build_vocab(t for _, t in corpus.pairs)
    batch = batchify(corpus, 16, vs, vt)[1]
    sched = TemperatureSchedule()

    print(f"\nfull optimizer step on the toy corpus ({kernels.BACKEND} backend),"
          " stochastic kind on the last encoder layer:")
    base = None
    for kind in ("plain", "repar", "bp", "sb"):
        cfg = desk_config(src_vocab_size=len(vs), tgt_vocab_size=len(vt),
                          layer_kinds=["plain", kind, "plain", "plain"])
        model = Seq2SeqModel(cfg, RngStream(1, 0))
        adam = AdamState()
        params = model.parameters()
        times = []
        for step in range(repeats + 5):
            t0 = time.perf_counter()
            with Tape() as tape:
                bd = elbo_loss(model, batch, RngStream(1, step + 1), step,
                               n_train=len(corpus), schedule=sched)
                zero_grads(p for _, p in params)
                backward(bd.loss, tape)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for _, p in params]
            grads, _ = clip_global_norm(grads, 5.0)
            adam_step(params, grads, adam, 1e-3)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times[5:]))
        base = base or med
        print(f"  {kind:>6}: {med * 1000:8.3f} ms/step  "
              f"(+{100 * (med / base - 1):.0f}%)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--skip-kinds", action="store_true",
                        help="only benchmark the raw kernels")
    args = parser.parse_args()
    bench_kernels(args.repeats)
    if not args.skip_kinds:
        bench_kinds(args.repeats)


if __name__ == "__main__":
    main()
