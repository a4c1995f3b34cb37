"""Shared test utilities: the finite-difference gradient oracle and small
model/corpus builders."""

from __future__ import annotations

import numpy as np

from layertrim import tensor as T
from layertrim.tensor import Tensor

FD_H = 1e-5
FD_TOL = 1e-4


def numeric_grad(make_loss, param: Tensor, h: float = FD_H) -> np.ndarray:
    """Central finite differences of make_loss() w.r.t. every coordinate of
    ``param`` (whose data is perturbed in place and restored)."""
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    with T.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = make_loss().item()
            flat[i] = orig - h
            down = make_loss().item()
            flat[i] = orig
            grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def numeric_grad_at(make_loss, param: Tensor, flat_indices, h: float = FD_H) -> np.ndarray:
    """Central differences at selected flat coordinates only."""
    flat = param.data.reshape(-1)
    out = np.zeros(len(flat_indices), dtype=param.data.dtype)
    with T.no_grad():
        for k, i in enumerate(flat_indices):
            orig = flat[i]
            flat[i] = orig + h
            up = make_loss().item()
            flat[i] = orig - h
            down = make_loss().item()
            flat[i] = orig
            out[k] = (up - down) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation normalized by the numeric gradient scale."""
    return float(np.abs(analytic - numeric).max() / (np.abs(numeric).max() + 1e-12))


def check_op_gradients(make_loss, params: list[Tensor], tol: float = FD_TOL) -> float:
    """Backward once, then compare every param's adjoint to the oracle."""
    loss = make_loss()
    T.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numeric_grad(make_loss, p)))
    assert worst < tol, f"gradient mismatch: relative error {worst:.3e} >= {tol}"
    return worst


def write_corpus(path, rng: np.random.Generator, n_docs: int = 64, words_per_doc: int = 30) -> str:
    """Tiny deterministic word-salad corpus, one document per line."""
    vocab = [
        "the", "a", "stone", "river", "walks", "sings", "bright", "cold",
        "north", "garden", "remembers", "tower", "echo", "under", "between",
    ]
    lines = []
    for _ in range(n_docs):
        words = rng.choice(vocab, size=words_per_doc)
        lines.append(" ".join(words))
    path = str(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
