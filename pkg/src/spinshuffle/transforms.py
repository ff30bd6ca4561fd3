"""Orthonormal sparsifying transforms for regularization and TPSF scoring."""

from __future__ import annotations

import numpy as np


class IdentityTransform:
    """No-op transform; coefficients are the image itself."""

    name = "identity"

    def forward(self, image: np.ndarray) -> np.ndarray:
        return image.copy()

    def adjoint(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs.copy()

    inverse = adjoint


class HaarTransform:
    """Multi-level orthonormal 2-D Haar wavelet.

    Each level splits the current low-pass block into (a+b)/sqrt(2) and
    (a-b)/sqrt(2) pairs along both axes. The transform is unitary, so its
    adjoint is its inverse and the l1 prox stays exact.
    """

    name = "haar"

    def __init__(self, levels: int = 3):
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = levels

    def _check(self, shape):
        div = 2 ** self.levels
        if shape[0] % div or shape[1] % div:
            raise ValueError(
                f"dims {shape} not divisible by 2^levels = {div}")

    @staticmethod
    def _split(a, axis):
        even = np.take(a, np.arange(0, a.shape[axis], 2), axis=axis)
        odd = np.take(a, np.arange(1, a.shape[axis], 2), axis=axis)
        lo = (even + odd) / np.sqrt(2)
        hi = (even - odd) / np.sqrt(2)
        return np.concatenate([lo, hi], axis=axis)

    @staticmethod
    def _merge(a, axis):
        n = a.shape[axis] // 2
        lo = np.take(a, np.arange(n), axis=axis)
        hi = np.take(a, np.arange(n, 2 * n), axis=axis)
        even = (lo + hi) / np.sqrt(2)
        odd = (lo - hi) / np.sqrt(2)
        out = np.empty_like(a)
        sl_even = [slice(None)] * a.ndim
        sl_odd = [slice(None)] * a.ndim
        sl_even[axis] = slice(0, 2 * n, 2)
        sl_odd[axis] = slice(1, 2 * n, 2)
        out[tuple(sl_even)] = even
        out[tuple(sl_odd)] = odd
        return out

    def forward(self, image: np.ndarray) -> np.ndarray:
        self._check(image.shape)
        out = image.astype(complex, copy=True)
        nx, ny = image.shape
        for _ in range(self.levels):
            block = self._split(self._split(out[:nx, :ny], 0), 1)
            out[:nx, :ny] = block
            nx //= 2
            ny //= 2
        return out

    def adjoint(self, coeffs: np.ndarray) -> np.ndarray:
        self._check(coeffs.shape)
        out = coeffs.astype(complex, copy=True)
        sizes = []
        nx, ny = coeffs.shape
        for _ in range(self.levels):
            sizes.append((nx, ny))
            nx //= 2
            ny //= 2
        for nx, ny in reversed(sizes):
            out[:nx, :ny] = self._merge(self._merge(out[:nx, :ny], 1), 0)
        return out

    inverse = adjoint


def make_transform(name: str, levels: int = 3):
    if name == "identity":
        return IdentityTransform()
    if name == "haar":
        return HaarTransform(levels=levels)
    raise ValueError(f"unknown transform {name!r}")
