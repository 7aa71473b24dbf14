"""Text corpus ingestion: vocabulary construction and skip-gram pair streaming.

Input corpora are plain UTF-8 text, one sentence per line, whitespace
tokenized.  Pairs never cross line boundaries.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EmptyCorpus, ParseError

logger = logging.getLogger(__name__)

VOCAB_MAGIC = "#vocab v1"


class TextPair(NamedTuple):
    target: int
    context: int


@dataclass(frozen=True)
class Vocabulary:
    """Immutable word <-> id map.

    Ids are assigned in descending count order, ties broken lexicographically,
    so rebuilding from the same token stream always yields the same ids.
    """

    words: tuple[str, ...]
    counts: tuple[int, ...]
    min_count: int
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {w: i for i, w in enumerate(self.words)})

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index[word]

    def word(self, wid: int) -> str:
        return self.words[wid]

    def count_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def save(self, path) -> None:
        """Write the TSV vocabulary file: header line, then "word<TAB>count"."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{VOCAB_MAGIC} {len(self.words)} {self.min_count}\n")
            for w, c in zip(self.words, self.counts):
                fh.write(f"{w}\t{c}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            parts = header.split()
            if len(parts) != 4 or " ".join(parts[:2]) != VOCAB_MAGIC:
                raise ParseError("bad vocabulary header", path=path, line=1)
            try:
                size, min_count = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError("bad vocabulary header", path=path, line=1)
            words, counts = [], []
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                cols = line.split("\t")
                if len(cols) != 2:
                    raise ParseError("expected word<TAB>count", path=path, line=lineno)
                try:
                    c = int(cols[1])
                except ValueError:
                    raise ParseError("count is not an integer", path=path, line=lineno)
                words.append(cols[0])
                counts.append(c)
        if len(words) != size:
            raise ParseError(f"header size {size} != {len(words)} entries", path=path)
        return cls(tuple(words), tuple(counts), min_count)


def build_vocab(token_stream: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count tokens and keep words with count >= min_count.

    Raises EmptyCorpus when nothing survives (empty stream included).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(token_stream)
    kept = [(w, c) for w, c in counts.items() if c >= min_count]
    if not kept:
        raise EmptyCorpus(f"no word reached min_count={min_count}")
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary(
        tuple(w for w, _ in kept), tuple(c for _, c in kept), min_count
    )


def stream_pairs(
    tokens: Sequence[int], window: int, rng: np.random.Generator
) -> Iterator[TextPair]:
    """Yield (target, context) id pairs with a dynamic window.

    For each position i one window width w_i is drawn uniformly from
    [1, window] (always exactly one draw per position, so the stream is
    reproducible given the generator seed), and every in-range j != i with
    |i - j| <= w_i produces a pair.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(tokens)
    for i in range(n):
        w = int(rng.integers(1, window + 1))
        lo = max(0, i - w)
        hi = min(n, i + w + 1)
        for j in range(lo, hi):
            if j != i:
                yield TextPair(int(tokens[i]), int(tokens[j]))


@dataclass
class Corpus:
    """A vocabulary plus the encoded sentences it was built from."""

    vocab: Vocabulary
    sentences: list  # list of int32 arrays, out-of-vocabulary tokens dropped

    def token_count(self) -> int:
        return int(sum(len(s) for s in self.sentences))


def read_sentences(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def encode_sentences(sentences: Iterable[Sequence[str]], vocab: Vocabulary) -> list:
    index = vocab.index
    out = []
    for sent in sentences:
        ids = [index[t] for t in sent if t in index]
        out.append(np.asarray(ids, dtype=np.int32))
    return out


def load_corpus(path, min_count: int = 1) -> Corpus:
    sentences = read_sentences(path)
    vocab = build_vocab((t for s in sentences for t in s), min_count=min_count)
    return Corpus(vocab, encode_sentences(sentences, vocab))


def keep_probabilities(counts: np.ndarray, threshold: float) -> np.ndarray:
    """Word2vec-style subsampling keep probability per word id.

    p_keep = (sqrt(f/t) + 1) * t/f with f the corpus frequency.  Values are
    clipped to 1.  threshold <= 0 disables subsampling (all ones).
    """
    counts = np.asarray(counts, dtype=np.float64)
    if threshold <= 0:
        return np.ones_like(counts)
    total = counts.sum()
    f = counts / total
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (np.sqrt(f / threshold) + 1.0) * (threshold / f)
    return np.minimum(np.nan_to_num(p, nan=1.0, posinf=1.0), 1.0)


def subsample(ids: np.ndarray, keep_p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Drop tokens with probability 1 - keep_p[id]."""
    if len(ids) == 0:
        return ids
    keep = rng.random(len(ids)) < keep_p[ids]
    return ids[keep]
