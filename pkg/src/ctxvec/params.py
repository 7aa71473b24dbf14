"""Learned parameter matrices: ownership, initialization and serialization.

The store holds every trainable matrix:

* T  (vocab x d)        shared target embeddings, updated by all loss terms
* U  (vocab x d)        text context table
* V  (obj_vocab x d)    object context table; rows cover the vocabulary subset
                        that occurs as scene entities, with a dense side map
                        word id -> row
* N  (d x B)            projection of patch activation vectors to d
* M_concat (d x (d+4))  linear fusion of context embedding and spatial vector
* M_bilin  (4 x d x d)  bilinear fusion tensor

The native file format ("CVP1") stores all matrices as little-endian f32, so
initial draws are quantized through f32 to keep save -> load an exact round
trip.  In memory the default dtype is float64 for optimizer accuracy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InitError

STORE_MAGIC = b"CVP1"
STORE_VERSION = 1

MODE_UNIFORM = "uniform_scaled"
MODE_ZEROS_CONTEXT = "zeros_context"
MODE_PRETRAINED = "from_pretrained"


@dataclass
class InitSpec:
    mode: str = MODE_UNIFORM
    seed: int = 1
    pretrained_path: str | None = None

    def __post_init__(self):
        if self.mode not in (MODE_UNIFORM, MODE_ZEROS_CONTEXT, MODE_PRETRAINED):
            raise InitError(f"unknown init mode {self.mode!r}")
        if self.mode == MODE_PRETRAINED and not self.pretrained_path:
            raise InitError("from_pretrained requires a path")


@dataclass
class ParameterStore:
    d: int
    feature_dim: int
    T: np.ndarray
    U: np.ndarray
    V: np.ndarray
    N: np.ndarray
    M_concat: np.ndarray
    M_bilin: np.ndarray
    obj_words: np.ndarray  # word id per V row, int32
    obj_rows: np.ndarray   # word id -> V row (or -1), int32, len == vocab size

    @property
    def vocab_size(self) -> int:
        return self.T.shape[0]

    @property
    def obj_vocab_size(self) -> int:
        return self.V.shape[0]

    def matrices(self) -> dict:
        return {
            "T": self.T, "U": self.U, "V": self.V,
            "N": self.N, "M_concat": self.M_concat, "M_bilin": self.M_bilin,
        }

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            self.d, self.feature_dim,
            self.T.copy(), self.U.copy(), self.V.copy(), self.N.copy(),
            self.M_concat.copy(), self.M_bilin.copy(),
            self.obj_words.copy(), self.obj_rows.copy(),
        )

    def allclose(self, other: "ParameterStore") -> bool:
        return all(
            np.array_equal(a, b)
            for a, b in zip(self.matrices().values(), other.matrices().values())
        )


def _obj_rows_from_words(obj_words: np.ndarray, vocab_size: int) -> np.ndarray:
    rows = np.full(vocab_size, -1, dtype=np.int32)
    rows[obj_words] = np.arange(len(obj_words), dtype=np.int32)
    return rows


def _f32_grid(a: np.ndarray, dtype) -> np.ndarray:
    return a.astype(np.float32).astype(dtype)


def init(
    vocab_size: int,
    obj_vocab_size: int,
    d: int,
    feature_dim: int,
    spec: InitSpec,
    *,
    vocab_words=None,
    obj_words=None,
    dtype=np.float64,
) -> ParameterStore:
    """Build a freshly initialized store.

    uniform_scaled draws T, V, N and both fusion tensors i.i.d. uniform in
    [-0.5/d, 0.5/d]; U starts at zero (word2vec convention).  zeros_context
    additionally zeroes the object table V.  from_pretrained copies T rows
    from a text-format embedding file (which must match d and cover the whole
    vocabulary) and initializes everything else like uniform_scaled.
    """
    if d < 1 or feature_dim < 1:
        raise ValueError("d and feature_dim must be >= 1")
    if obj_words is None:
        obj_words = np.arange(obj_vocab_size, dtype=np.int32)
    obj_words = np.asarray(obj_words, dtype=np.int32)
    if len(obj_words) != obj_vocab_size:
        raise InitError("obj_words length must equal obj_vocab_size")
    if obj_vocab_size and (obj_words.min() < 0 or obj_words.max() >= vocab_size):
        raise InitError("obj_words contain ids outside the vocabulary")

    rng = np.random.default_rng(spec.seed)
    bound = 0.5 / d

    def draw(shape):
        return _f32_grid(rng.uniform(-bound, bound, size=shape), dtype)

    # draw order is fixed so a seed fully determines the store
    T = draw((vocab_size, d))
    V = draw((obj_vocab_size, d))
    N = draw((d, feature_dim))
    M_concat = draw((d, d + 4))
    M_bilin = draw((4, d, d))
    U = np.zeros((vocab_size, d), dtype=dtype)

    if spec.mode == MODE_ZEROS_CONTEXT:
        V = np.zeros_like(V)
    elif spec.mode == MODE_PRETRAINED:
        if vocab_words is None:
            raise InitError("from_pretrained requires the vocabulary word list")
        words, mat = read_text_embeddings(spec.pretrained_path)
        if mat.shape[1] != d:
            raise InitError(
                f"pretrained dimension {mat.shape[1]} does not match d={d}"
            )
        lookup = {w: i for i, w in enumerate(words)}
        missing = [w for w in vocab_words if w not in lookup]
        if missing:
            raise InitError(
                f"pretrained file misses {len(missing)} vocabulary words "
                f"(first: {missing[0]!r})"
            )
        rows = [lookup[w] for w in vocab_words]
        T = _f32_grid(mat[rows], dtype)

    return ParameterStore(
        d, feature_dim, T, U, V, N, M_concat, M_bilin,
        obj_words, _obj_rows_from_words(obj_words, vocab_size),
    )


def save(store: ParameterStore, path) -> None:
    """Write the native binary format: CVP1 header, obj map, matrices as f32."""
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack(
            "<IIIII", STORE_VERSION, store.vocab_size, store.obj_vocab_size,
            store.d, store.feature_dim,
        ))
        fh.write(np.asarray(store.obj_words, dtype="<i4").tobytes())
        for mat in store.matrices().values():
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load(path, dtype=np.float64) -> ParameterStore:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 24 or data[:4] != STORE_MAGIC:
        raise FormatError(f"{path}: not a CVP1 store")
    version, vocab_size, obj_vocab_size, d, feature_dim = struct.unpack_from(
        "<IIIII", data, 4
    )
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 24

    def take(count, np_dtype):
        nonlocal off
        nbytes = count * np.dtype(np_dtype).itemsize
        if len(data) < off + nbytes:
            raise FormatError(f"{path}: truncated file")
        out = np.frombuffer(data, dtype=np_dtype, count=count, offset=off).copy()
        off += nbytes
        return out

    obj_words = take(obj_vocab_size, "<i4").astype(np.int32)
    shapes = {
        "T": (vocab_size, d),
        "U": (vocab_size, d),
        "V": (obj_vocab_size, d),
        "N": (d, feature_dim),
        "M_concat": (d, d + 4),
        "M_bilin": (4, d, d),
    }
    mats = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        mats[name] = take(n, "<f4").astype(dtype).reshape(shape)
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return ParameterStore(
        d, feature_dim, mats["T"], mats["U"], mats["V"], mats["N"],
        mats["M_concat"], mats["M_bilin"],
        obj_words, _obj_rows_from_words(obj_words, vocab_size),
    )


def write_text_embeddings(words, matrix: np.ndarray, path) -> None:
    """Word2vec text convention: first line "count dim", then "word v1 .. vd".

    %.9g keeps f32-resolution values exact through a write/read cycle.
    """
    matrix = np.asarray(matrix)
    if len(words) != matrix.shape[0]:
        raise ValueError("words/matrix row mismatch")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for w, row in zip(words, matrix):
            fh.write(w + " " + " ".join(f"{v:.9g}" for v in row) + "\n")


def read_text_embeddings(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: bad text embedding header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: bad text embedding header")
        words = []
        rows = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            parts = fh.readline().split()
            if len(parts) != dim + 1:
                raise FormatError(f"{path}: row {i + 2} has wrong field count")
            words.append(parts[0])
            rows[i] = [float(v) for v in parts[1:]]
    if not np.all(np.isfinite(rows)):
        raise FormatError(f"{path}: non-finite embedding values")
    return words, rows
