"""Sparsifying transforms and the soft-threshold shrinkage rule.

Two fixed analysis transforms are provided: an orthonormal multi-level
Haar wavelet (adjoint equals inverse, energy preserving) and a
forward-difference gradient with replicated edges (adjoint is the exact
matrix transpose, not an inverse).  Both expose the same ``forward`` /
``adjoint`` pair so solvers can treat them interchangeably.

Public functions
----------------
soft_threshold : elementwise shrinkage toward zero
make_transform : build a transform from its config name
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "soft_threshold",
    "SparsifyingTransform",
    "HaarTransform",
    "GradientTransform",
    "IdentityTransform",
    "make_transform",
]


def soft_threshold(u: np.ndarray, tau: float) -> np.ndarray:
    """Shrink ``u`` toward zero by ``tau``.

    Returns ``sign(u) * max(|u| - tau, 0)`` elementwise: values with
    ``|u| <= tau`` map to exactly zero, larger values keep their sign and
    lose ``tau`` in magnitude.

    Parameters
    ----------
    u : array of any shape.
    tau : nonnegative threshold; negative values raise ``ValueError``.
    """
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    u = np.asarray(u)
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


class SparsifyingTransform:
    """Interface: ``forward`` maps an image to coefficients, ``adjoint`` back.

    ``orthonormal`` marks transforms whose adjoint is the exact inverse;
    for those, synthesis of shrunk analysis coefficients is the exact
    proximal map of the analysis l1 penalty.
    """

    kind: str = "abstract"
    orthonormal: bool = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def coefficient_shape(self, n: int) -> tuple[int, ...]:
        raise NotImplementedError


class HaarTransform(SparsifyingTransform):
    """Orthonormal 2-D Haar wavelet analysis, ``levels`` recursion depths.

    Coefficients are packed into a single array the same shape as the
    input: at each level the working block splits into four quadrants
    (approximation top-left, details in the other three), and the next
    level recurses on the approximation quadrant.  With the orthonormal
    scaling the adjoint is the exact inverse and energy is preserved.
    """

    kind = "haar"
    orthonormal = True

    def __init__(self, levels: int = 2):
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = levels

    def _check(self, n: int) -> None:
        if n % (2 ** self.levels) != 0:
            raise ValueError(
                f"image size {n} not divisible by 2^{self.levels}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        if x.shape != (n, n):
            raise ValueError("expected a square 2-D image")
        self._check(n)
        out = x.copy()
        size = n
        for _ in range(self.levels):
            blk = out[:size, :size]
            a = blk[0::2, 0::2]
            b = blk[0::2, 1::2]
            c = blk[1::2, 0::2]
            d = blk[1::2, 1::2]
            m = size // 2
            ll = (a + b + c + d) / 2.0
            hl = (a - b + c - d) / 2.0
            lh = (a + b - c - d) / 2.0
            hh = (a - b - c + d) / 2.0
            out[:m, :m] = ll
            out[:m, m:size] = hl
            out[m:size, :m] = lh
            out[m:size, m:size] = hh
            size = m
        return out

    def adjoint(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        n = c.shape[0]
        if c.shape != (n, n):
            raise ValueError("expected square coefficients")
        self._check(n)
        out = c.copy()
        # Undo levels from coarsest to finest.
        for lvl in range(self.levels - 1, -1, -1):
            size = n // (2 ** lvl)
            m = size // 2
            ll = out[:m, :m]
            hl = out[:m, m:size]
            lh = out[m:size, :m]
            hh = out[m:size, m:size]
            blk = np.empty((size, size), dtype=np.float64)
            blk[0::2, 0::2] = (ll + hl + lh + hh) / 2.0
            blk[0::2, 1::2] = (ll - hl + lh - hh) / 2.0
            blk[1::2, 0::2] = (ll + hl - lh - hh) / 2.0
            blk[1::2, 1::2] = (ll - hl - lh + hh) / 2.0
            out[:size, :size] = blk
        return out

    def coefficient_shape(self, n: int) -> tuple[int, ...]:
        return (n, n)


class GradientTransform(SparsifyingTransform):
    """Forward differences along both axes with replicated last sample.

    ``forward`` returns shape ``(2, n, n)``: channel 0 holds row
    differences ``x[i+1,j] - x[i,j]`` (last row zero), channel 1 column
    differences.  ``adjoint`` is the exact matrix transpose of that map,
    a negative divergence with the matching boundary convention.
    """

    kind = "gradient"

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        if x.shape != (n, n):
            raise ValueError("expected a square 2-D image")
        c = np.zeros((2, n, n), dtype=np.float64)
        c[0, :-1, :] = x[1:, :] - x[:-1, :]
        c[1, :, :-1] = x[:, 1:] - x[:, :-1]
        return c

    def adjoint(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if c.ndim != 3 or c.shape[0] != 2 or c.shape[1] != c.shape[2]:
            raise ValueError("expected coefficients of shape (2, n, n)")
        n = c.shape[1]
        out = np.zeros((n, n), dtype=np.float64)
        # transpose of d0: +c[i-1] - c[i], rows beyond the last diff excluded
        out[1:, :] += c[0, :-1, :]
        out[:-1, :] -= c[0, :-1, :]
        out[:, 1:] += c[1, :, :-1]
        out[:, :-1] -= c[1, :, :-1]
        return out

    def coefficient_shape(self, n: int) -> tuple[int, ...]:
        return (2, n, n)


class IdentityTransform(SparsifyingTransform):
    """Degenerate transform pair, mainly for tests and block-level checks."""

    kind = "identity"
    orthonormal = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).copy()

    def adjoint(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c, dtype=np.float64).copy()

    def coefficient_shape(self, n: int) -> tuple[int, ...]:
        return (n, n)


def make_transform(kind: str, haar_levels: int = 2) -> SparsifyingTransform:
    """Build a transform from its config name: one of haar, gradient, identity."""
    if kind == "haar":
        return HaarTransform(levels=haar_levels)
    if kind == "gradient":
        return GradientTransform()
    if kind == "identity":
        return IdentityTransform()
    raise ValueError(f"unknown transform kind: {kind!r}")
