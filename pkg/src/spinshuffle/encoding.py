"""Linear measurement model: per-echo Cartesian Fourier sampling.

The encoder composes, per echo i and coil j, a sampling operator, a unitary
centered 2-D FFT, coil sensitivity weighting, and (optionally) a temporal
basis as a right factor so the unknowns are subspace coefficient images. A
precomputed per-frequency block kernel lets the normal operator run entirely
in coefficient space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subspace import SubspaceBasis


def fft2c(image: np.ndarray) -> np.ndarray:
    """Unitary 2-D FFT with DC at the array center (last two axes)."""
    shifted = np.fft.ifftshift(image, axes=(-2, -1))
    k = np.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2c(kspace: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    shifted = np.fft.ifftshift(kspace, axes=(-2, -1))
    img = np.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


@dataclass(frozen=True)
class SamplingMasks:
    """Per-echo binary acquisition masks on the centered k-space grid."""

    masks: np.ndarray  # (T, nx, ny) bool

    def __post_init__(self):
        m = np.asarray(self.masks, bool)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3:
            raise ValueError("masks must be a (T, nx, ny) array")
        object.__setattr__(self, "masks", m)

    @property
    def n_echoes(self) -> int:
        return self.masks.shape[0]

    @property
    def dims(self) -> tuple:
        return self.masks.shape[1:]

    @property
    def sample_counts(self) -> np.ndarray:
        return self.masks.reshape(self.n_echoes, -1).sum(axis=1)

    @property
    def total_samples(self) -> int:
        return int(self.masks.sum())


@dataclass(frozen=True)
class SensitivityMaps:
    """Complex coil sensitivity profiles (C, nx, ny)."""

    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, complex)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3:
            raise ValueError("maps must be a (C, nx, ny) array")
        object.__setattr__(self, "maps", m)

    @classmethod
    def uniform(cls, dims) -> "SensitivityMaps":
        return cls(np.ones((1, *dims), complex))

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]


class Encoder:
    """Composed forward operator for one acquisition configuration.

    Without a basis the domain is the echo-image stack (T, nx, ny); with a
    basis it is the coefficient stack (K, nx, ny). Measurements are laid out
    echo-major, coil-minor, with masked samples in row-major grid order.
    Instances are immutable after construction and safe to share.
    """

    def __init__(self, masks: SamplingMasks,
                 maps: SensitivityMaps | None = None,
                 basis: SubspaceBasis | None = None):
        self.masks = masks
        self.maps = maps if maps is not None else SensitivityMaps.uniform(masks.dims)
        if self.maps.maps.shape[1:] != masks.dims:
            raise ValueError("sensitivity maps do not match mask dims")
        if basis is not None and basis.n_echoes != masks.n_echoes:
            raise ValueError("basis echo count does not match masks")
        self.basis = basis
        self.fft_norm = "ortho"

    @property
    def dims(self) -> tuple:
        return self.masks.dims

    @property
    def n_echoes(self) -> int:
        return self.masks.n_echoes

    @property
    def n_coils(self) -> int:
        return self.maps.n_coils

    @property
    def domain_shape(self) -> tuple:
        lead = self.basis.k if self.basis is not None else self.n_echoes
        return (lead, *self.dims)

    @property
    def n_measurements(self) -> int:
        return self.masks.total_samples * self.n_coils

    def to_time_images(self, x: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return x
        return np.tensordot(self.basis.phi_k, x, axes=1)

    def from_time_images(self, images: np.ndarray) -> np.ndarray:
        if self.basis is None:
            return images
        return np.tensordot(self.basis.phi_k.conj().T, images, axes=1)


def apply_forward(enc: Encoder, x: np.ndarray) -> np.ndarray:
    """Map domain images to the acquired measurement vector."""
    x = np.asarray(x, complex)
    if x.shape != enc.domain_shape:
        raise ValueError(f"expected domain shape {enc.domain_shape}, got {x.shape}")
    images = enc.to_time_images(x)                       # (T, nx, ny)
    smaps = enc.maps.maps
    chunks = []
    for i in range(enc.n_echoes):
        k = fft2c(smaps * images[i])                     # (C, nx, ny)
        sel = enc.masks.masks[i]
        for j in range(enc.n_coils):
            chunks.append(k[j][sel])
    return np.concatenate(chunks) if chunks else np.zeros(0, complex)


def apply_adjoint(enc: Encoder, y: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`apply_forward`."""
    y = np.asarray(y, complex)
    if y.size != enc.n_measurements:
        raise ValueError(f"expected {enc.n_measurements} samples, got {y.size}")
    images = np.zeros((enc.n_echoes, *enc.dims), complex)
    smaps = enc.maps.maps
    pos = 0
    for i in range(enc.n_echoes):
        sel = enc.masks.masks[i]
        m = int(sel.sum())
        k = np.zeros((enc.n_coils, *enc.dims), complex)
        for j in range(enc.n_coils):
            k[j][sel] = y[pos:pos + m]
            pos += m
        images[i] = np.sum(np.conj(smaps) * ifft2c(k), axis=0)
    return enc.from_time_images(images)


@dataclass(frozen=True)
class NormalKernel:
    """Per-frequency K x K Hermitian blocks of the subspace normal operator."""

    psi_k: np.ndarray  # (nx, ny, K, K)


def build_normal_kernel(enc: Encoder) -> NormalKernel:
    """Assemble Psi(k) = sum_i mask_i(k) * phi_i phi_i^H.

    phi_i is the i-th row of the temporal basis, so applying the blocks in
    k-space reproduces the composed normal operator without ever forming the
    echo-image series.
    """
    if enc.basis is None:
        raise ValueError("encoder has no temporal basis")
    phi = enc.basis.phi_k                                 # (T, K)
    masks = enc.masks.masks.astype(float)                 # (T, nx, ny)
    outer = phi[:, :, None] * phi[:, None, :].conj()      # (T, K, K)
    psi = np.tensordot(masks, outer, axes=(0, 0))         # (nx, ny, K, K)
    return NormalKernel(psi_k=psi)


def apply_normal_kernel(enc: Encoder, kernel: NormalKernel,
                        x: np.ndarray) -> np.ndarray:
    """Apply A^H A to coefficient images through the per-frequency blocks."""
    x = np.asarray(x, complex)
    if x.shape != enc.domain_shape:
        raise ValueError(f"expected domain shape {enc.domain_shape}, got {x.shape}")
    smaps = enc.maps.maps
    out = np.zeros_like(x)
    for j in range(enc.n_coils):
        xs = smaps[j] * x                                 # (K, nx, ny)
        ks = fft2c(xs)
        mixed = np.einsum("xykl,lxy->kxy", kernel.psi_k, ks)
        out += np.conj(smaps[j]) * ifft2c(mixed)
    return out


def materialize_forward(enc: Encoder) -> np.ndarray:
    """Dense matrix of the forward operator (small grids only)."""
    shape = enc.domain_shape
    n = int(np.prod(shape))
    cols = []
    e = np.zeros(n, complex)
    for idx in range(n):
        e[:] = 0
        e[idx] = 1.0
        cols.append(apply_forward(enc, e.reshape(shape)))
    return np.stack(cols, axis=1)
