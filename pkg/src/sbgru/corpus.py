"""Parallel gloss-to-text corpus handling and translation metrics.

Corpus files are UTF-8 text, one pair per line, gloss side and text side
separated by a single tab; tokenization is whitespace splitting with casing
preserved. Metrics are corpus-level 4-gram BLEU (unsmoothed by default)
and LCS-based ROUGE-L F1.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .model import BOS, EOS, PAD, UNK

__all__ = [
    "CorpusError",
    "Vocab",
    "ParallelCorpus",
    "Batch",
    "load_corpus",
    "build_vocab",
    "batchify",
    "bleu4",
    "rouge_l",
    "RESERVED_TOKENS",
]

RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class CorpusError(ValueError):
    """Malformed corpus file or inconsistent metric inputs."""


class Vocab:
    """Bidirectional token/index map with four reserved leading slots."""

    def __init__(self, tokens: list[str], min_freq: int = 1, singletons: int = 0):
        self.itos = list(RESERVED_TOKENS) + list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate tokens in vocabulary")
        self.min_freq = min_freq
        self.singletons = singletons

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(tok, UNK) for tok in tokens]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    split: str = "train"

    def __len__(self):
        return len(self.pairs)


@dataclass
class Batch:
    """Padded id arrays for one training step.

    tgt_in is the BOS-framed decoder input, tgt_out the EOS-framed target,
    and tgt_mask is 1.0 on real target positions, 0.0 on padding.
    """

    src: np.ndarray
    src_len: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.src.shape[0]


def load_corpus(path, split: str = "train") -> ParallelCorpus:
    """Read tab-separated gloss/text pairs, preserving line order."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise CorpusError(f"{path}:{lineno}: missing tab separator")
            gloss, text = line.split("\t", 1)
            gloss_toks, text_toks = gloss.split(), text.split()
            if not gloss_toks or not text_toks:
                raise CorpusError(f"{path}:{lineno}: empty side")
            pairs.append((gloss_toks, text_toks))
    return ParallelCorpus(pairs, split)


def build_vocab(sentences, min_freq: int = 1) -> Vocab:
    """Frequency-descending vocabulary (ties broken lexicographically);
    tokens below min_freq map to the unknown id."""
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = sorted((tok for tok, n in counts.items() if n >= min_freq),
                  key=lambda tok: (-counts[tok], tok))
    singletons = sum(1 for n in counts.values() if n == 1)
    return Vocab(kept, min_freq=min_freq, singletons=singletons)


def batchify(corpus: ParallelCorpus, batch_size: int, vocab_src: Vocab,
             vocab_tgt: Vocab) -> list[Batch]:
    """Length-bucketed padded batches with BOS/EOS framing on targets.

    Pairs are ordered by source length (stable) before chunking so padding
    stays small; shuffling batch order is the trainer's job.
    """
    order = sorted(range(len(corpus.pairs)),
                   key=lambda i: len(corpus.pairs[i][0]))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [corpus.pairs[i] for i in order[start:start + batch_size]]
        n = len(chunk)
        src_ids = [vocab_src.encode(g) for g, _ in chunk]
        tgt_ids = [vocab_tgt.encode(t) for _, t in chunk]
        max_s = max(len(s) for s in src_ids)
        max_t = max(len(t) for t in tgt_ids) + 1  # room for BOS/EOS framing
        src = np.full((n, max_s), PAD, dtype=np.int64)
        src_len = np.empty(n, dtype=np.int64)
        tgt_in = np.full((n, max_t), PAD, dtype=np.int64)
        tgt_out = np.full((n, max_t), PAD, dtype=np.int64)
        mask = np.zeros((n, max_t))
        for i, (s, t) in enumerate(zip(src_ids, tgt_ids)):
            src[i, :len(s)] = s
            src_len[i] = len(s)
            tgt_in[i, 0] = BOS
            tgt_in[i, 1:len(t) + 1] = t
            tgt_out[i, :len(t)] = t
            tgt_out[i, len(t)] = EOS
            mask[i, :len(t) + 1] = 1.0
        batches.append(Batch(src, src_len, tgt_in, tgt_out, mask))
    return batches


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses, references, smooth: bool = False) -> float:
    """Corpus-level BLEU in [0, 100]: modified n-gram precisions for n=1..4,
    geometric mean, multiplied by the brevity penalty.

    Without smoothing a zero precision at any order gives 0; ``smooth``
    applies add-one smoothing to every order.
    """
    if len(hypotheses) != len(references):
        raise CorpusError("hypothesis/reference counts differ")
    if not hypotheses:
        raise CorpusError("empty corpus")
    matched = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h_counts = _ngram_counts(hyp, n)
            r_counts = _ngram_counts(ref, n)
            total[n - 1] += max(0, len(hyp) - n + 1)
            matched[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
    log_prec = 0.0
    for n in range(4):
        num, den = matched[n], total[n]
        if smooth:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_prec += math.log(num / den) / 4.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(1, hyp_len))
    return 100.0 * bp * math.exp(log_prec)


def rouge_l(hypothesis, reference) -> float:
    """LCS-based F1 with equal precision/recall weighting."""
    if not reference:
        raise CorpusError("reference must be nonempty")
    if not hypothesis:
        return 0.0
    m, n = len(hypothesis), len(reference)
    table = np.zeros((m + 1, n + 1), dtype=np.int64)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if hypothesis[i - 1] == reference[j - 1]:
                table[i, j] = table[i - 1, j - 1] + 1
            else:
                table[i, j] = max(table[i - 1, j], table[i, j - 1])
    lcs = int(table[m, n])
    if lcs == 0:
        return 0.0
    precision = lcs / m
    recall = lcs / n
    return 2.0 * precision * recall / (precision + recall)
