"""Shared test utilities: store builders and the finite-difference oracle."""

import numpy as np

from ctxvec.params import ParameterStore


def random_store(rng, vocab_size=6, obj_vocab=5, d=5, feature_dim=8, scale=0.4):
    """A float64 store with dense random entries (for gradient checks)."""
    obj_words = np.arange(obj_vocab, dtype=np.int32)
    obj_rows = np.full(vocab_size, -1, dtype=np.int32)
    obj_rows[:obj_vocab] = np.arange(obj_vocab, dtype=np.int32)
    return ParameterStore(
        d=d,
        feature_dim=feature_dim,
        T=rng.normal(0, scale, (vocab_size, d)),
        U=rng.normal(0, scale, (vocab_size, d)),
        V=rng.normal(0, scale, (obj_vocab, d)),
        N=rng.normal(0, scale, (d, feature_dim)),
        M_concat=rng.normal(0, scale, (d, d + 4)),
        M_bilin=rng.normal(0, scale, (4, d, d)),
        obj_words=obj_words,
        obj_rows=obj_rows,
    )


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(loss_fn, store, grads, rel_tol=1e-4, eps=1e-6):
    """Central finite differences on every parameter the batch touches.

    loss_fn() recomputes the loss from the (mutated) store.  Returns the
    worst relative error seen; asserts every block is within rel_tol.
    """
    mats = store.matrices()
    worst = 0.0
    for (name, row), analytic in grads.rows.items():
        mat = mats[name]
        numeric = np.zeros_like(analytic)
        for j in range(mat.shape[1]):
            orig = mat[row, j]
            mat[row, j] = orig + eps
            up = loss_fn()
            mat[row, j] = orig - eps
            down = loss_fn()
            mat[row, j] = orig
            numeric[j] = (up - down) / (2 * eps)
        err = _rel_err(analytic, numeric)
        worst = max(worst, err)
        assert err < rel_tol, f"{name}[{row}]: rel err {err:.2e}"
    for name, analytic in grads.dense.items():
        mat = mats[name]
        numeric = np.zeros_like(analytic)
        it = np.nditer(mat, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = mat[idx]
            mat[idx] = orig + eps
            up = loss_fn()
            mat[idx] = orig - eps
            down = loss_fn()
            mat[idx] = orig
            numeric[idx] = (up - down) / (2 * eps)
        err = _rel_err(analytic.ravel(), numeric.ravel())
        worst = max(worst, err)
        assert err < rel_tol, f"{name}: rel err {err:.2e}"
    return worst
