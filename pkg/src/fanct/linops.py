"""Minimal linear-operator interface shared by solvers and network blocks.

An operator maps arrays of ``domain_shape`` to ``range_shape`` and knows
its exact transpose.  Keeping the pair together lets iterative solvers
and reverse-mode differentiation treat projection, filtering, and
wavelet maps uniformly.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LinearOperator",
    "IdentityOperator",
    "TransformOperator",
    "TransposedOperator",
    "ComposedOperator",
    "operator_norm_sq",
]


class LinearOperator:
    """Base class: subclasses implement ``apply`` and ``apply_transpose``."""

    domain_shape: tuple[int, ...]
    range_shape: tuple[int, ...]

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityOperator(LinearOperator):
    def __init__(self, shape: tuple[int, ...]):
        self.domain_shape = tuple(shape)
        self.range_shape = tuple(shape)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).copy()

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64).copy()


class TransformOperator(LinearOperator):
    """Adapts a sparsifying transform (forward/adjoint pair) to this interface."""

    def __init__(self, transform, image_n: int):
        self.transform = transform
        self.domain_shape = (image_n, image_n)
        self.range_shape = transform.coefficient_shape(image_n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.transform.forward(x)

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return self.transform.adjoint(y)


class TransposedOperator(LinearOperator):
    """The transpose of a wrapped operator, as an operator of its own."""

    def __init__(self, op: LinearOperator):
        self.base = op
        self.domain_shape = op.range_shape
        self.range_shape = op.domain_shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.base.apply_transpose(x)

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return self.base.apply(y)


class ComposedOperator(LinearOperator):
    """outer(inner(x)) with the matching transpose."""

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if outer.domain_shape != inner.range_shape:
            raise ValueError(f"cannot compose: outer domain "
                             f"{outer.domain_shape} vs inner range "
                             f"{inner.range_shape}")
        self.outer = outer
        self.inner = inner
        self.domain_shape = inner.domain_shape
        self.range_shape = outer.range_shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.outer.apply(self.inner.apply(x))

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return self.inner.apply_transpose(self.outer.apply_transpose(y))


def operator_norm_sq(op: LinearOperator, n_iters: int = 50, seed: int = 0,
                     extra_normal: LinearOperator | None = None) -> float:
    """Largest eigenvalue of ``op^T op`` (+ ``extra^T extra``) by power iteration.

    Equals the squared spectral norm of the stacked operator.  The start
    vector is drawn from a fixed seed and the iteration count is fixed,
    so repeated calls give bit-identical estimates.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.domain_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iters):
        w = op.apply_transpose(op.apply(v))
        if extra_normal is not None:
            w = w + extra_normal.apply_transpose(extra_normal.apply(v))
        lam = float(np.sum(v * w))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return lam
