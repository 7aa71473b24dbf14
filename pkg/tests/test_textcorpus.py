from collections import Counter

import numpy as np
import pytest

from ctxvec.errors import EmptyCorpus, ParseError
from ctxvec.textcorpus import (
    TextPair,
    Vocabulary,
    build_vocab,
    encode_sentences,
    keep_probabilities,
    load_corpus,
    stream_pairs,
    subsample,
)


def test_build_vocab_counts_and_ids():
    vocab = build_vocab(["a", "b", "a", "c", "a", "b"], min_count=2)
    assert vocab.words == ("a", "b")
    assert vocab.counts == (3, 2)
    assert vocab.id("a") == 0 and vocab.id("b") == 1
    assert "c" not in vocab


def test_build_vocab_all_filtered_raises():
    with pytest.raises(EmptyCorpus):
        build_vocab(["x"], min_count=2)


def test_build_vocab_empty_stream_raises():
    with pytest.raises(EmptyCorpus):
        build_vocab([], min_count=1)


def test_build_vocab_counts_match_brute_force():
    rng = np.random.default_rng(7)
    types = [f"w{i}" for i in range(10)]
    tokens = [types[i] for i in rng.integers(0, 10, size=1000)]
    vocab = build_vocab(tokens, min_count=1)
    assert len(vocab) == 10
    truth = Counter(tokens)
    for w, c in zip(vocab.words, vocab.counts):
        assert c == truth[w]


def test_build_vocab_tie_break_lexicographic():
    vocab = build_vocab(["b", "a", "c", "a", "b", "c"], min_count=1)
    # all counts equal: ids must follow lexicographic order
    assert vocab.words == ("a", "b", "c")


def test_build_vocab_descending_counts():
    rng = np.random.default_rng(3)
    tokens = []
    for i, reps in enumerate(rng.integers(1, 50, size=30)):
        tokens.extend([f"t{i:02d}"] * int(reps))
    vocab = build_vocab(tokens, min_count=1)
    assert all(a >= b for a, b in zip(vocab.counts, vocab.counts[1:]))


def test_stream_pairs_fixed_window_enumeration():
    rng = np.random.default_rng(0)
    pairs = list(stream_pairs([5, 7, 9], window=1, rng=rng))
    assert pairs == [TextPair(5, 7), TextPair(7, 5), TextPair(7, 9), TextPair(9, 7)]


def test_stream_pairs_single_token_empty():
    assert list(stream_pairs([3], window=1, rng=np.random.default_rng(0))) == []
    assert list(stream_pairs([], window=5, rng=np.random.default_rng(0))) == []


def _reference_pairs(tokens, window, rng):
    # independent enumerator: same one-draw-per-position contract
    out = []
    for i, t in enumerate(tokens):
        width = int(rng.integers(1, window + 1))
        js = [j for j in range(len(tokens)) if j != i and abs(i - j) <= width]
        out.extend((t, tokens[j]) for j in js)
    return out


def test_stream_pairs_matches_reference_enumerator():
    tokens = list(np.random.default_rng(11).integers(0, 50, size=100))
    got = list(stream_pairs(tokens, window=5, rng=np.random.default_rng(42)))
    want = _reference_pairs(tokens, 5, np.random.default_rng(42))
    assert [(p.target, p.context) for p in got] == want


def test_stream_pairs_deterministic_given_seed():
    tokens = list(range(30))
    a = list(stream_pairs(tokens, 4, np.random.default_rng(9)))
    b = list(stream_pairs(tokens, 4, np.random.default_rng(9)))
    assert a == b


def test_corpus_pairs_stay_in_vocab(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("a b c a\nb d d b\nc c a\n")
    corpus = load_corpus(path, min_count=2)
    rng = np.random.default_rng(1)
    for sent in corpus.sentences:
        for pair in stream_pairs(sent, 3, rng):
            assert 0 <= pair.target < len(corpus.vocab)
            assert 0 <= pair.context < len(corpus.vocab)


def test_encode_drops_oov():
    vocab = build_vocab(["a", "a", "b", "b"], min_count=2)
    enc = encode_sentences([["a", "zzz", "b"]], vocab)
    assert enc[0].tolist() == [vocab.id("a"), vocab.id("b")]


def test_vocab_save_load_roundtrip_byte_identical(tmp_path):
    vocab = build_vocab(["a", "b", "a", "c", "a", "b", "c", "c"], min_count=1)
    p1, p2 = tmp_path / "v1.tsv", tmp_path / "v2.tsv"
    vocab.save(p1)
    again = Vocabulary.load(p1)
    assert again == vocab
    again.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == f"#vocab v1 {len(vocab)} 1"


def test_vocab_load_bad_header(tmp_path):
    p = tmp_path / "v.tsv"
    p.write_text("not a vocab\n")
    with pytest.raises(ParseError):
        Vocabulary.load(p)


def test_vocab_load_bad_row(tmp_path):
    p = tmp_path / "v.tsv"
    p.write_text("#vocab v1 1 1\nword_without_count\n")
    with pytest.raises(ParseError) as ei:
        Vocabulary.load(p)
    assert ei.value.line == 2


def test_keep_probabilities_formula():
    counts = np.array([1000, 10, 1])
    t = 1e-2
    p = keep_probabilities(counts, t)
    f = counts / counts.sum()
    expected = np.minimum((np.sqrt(f / t) + 1) * (t / f), 1.0)
    assert np.allclose(p, expected)
    assert np.all(keep_probabilities(counts, 0.0) == 1.0)


def test_subsample_drops_frequent():
    rng = np.random.default_rng(5)
    ids = np.zeros(10000, dtype=np.int32)
    keep_p = np.array([0.25])
    kept = subsample(ids, keep_p, rng)
    assert 2200 < len(kept) < 2800
