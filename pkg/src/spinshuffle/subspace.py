"""Temporal subspace design from simulated signal ensembles.

An ensemble of unit-density signal evolutions is drawn from a tissue prior,
stacked into a T x L matrix, and compressed with a truncated SVD. The
resulting orthonormal temporal basis is the workhorse of the
subspace-constrained reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spinsim import SequenceParams, TissueParams, simulate_fse_ensemble

DEFAULT_T1_RANGE_MS = (500.0, 3000.0)
DEFAULT_T2_RANGE_MS = (20.0, 400.0)
DEFAULT_ENSEMBLE_SIZE = 256


@dataclass(frozen=True)
class TissuePrior:
    """Distribution over relaxation parameters used to train the basis."""

    t1_range_ms: tuple = DEFAULT_T1_RANGE_MS
    t2_range_ms: tuple = DEFAULT_T2_RANGE_MS
    sampling: str = "log-uniform"   # log-uniform | uniform | explicit
    seed: int = 0
    tissues: tuple = ()             # used when sampling == "explicit"

    def __post_init__(self):
        if self.sampling not in ("log-uniform", "uniform", "explicit"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.sampling != "explicit":
            for lo, hi in (self.t1_range_ms, self.t2_range_ms):
                if not (0 < lo <= hi):
                    raise ValueError("ranges must be positive with min <= max")


def sample_prior(prior: TissuePrior, n: int) -> list[TissueParams]:
    """Draw n tissues from the prior, reproducibly for a given seed.

    Pairs violating t2 <= t1 are rejected and redrawn.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    if prior.sampling == "explicit":
        if len(prior.tissues) != n:
            raise ValueError(
                f"explicit prior holds {len(prior.tissues)} tissues, not {n}")
        return list(prior.tissues)

    rng = np.random.default_rng(prior.seed)

    def draw(k):
        if prior.sampling == "log-uniform":
            t1 = np.exp(rng.uniform(*np.log(prior.t1_range_ms), size=k))
            t2 = np.exp(rng.uniform(*np.log(prior.t2_range_ms), size=k))
        else:
            t1 = rng.uniform(*prior.t1_range_ms, size=k)
            t2 = rng.uniform(*prior.t2_range_ms, size=k)
        return t1, t2

    t1, t2 = draw(n)
    bad = t2 > t1
    while np.any(bad):
        t1b, t2b = draw(int(bad.sum()))
        t1[bad], t2[bad] = t1b, t2b
        bad = t2 > t1
    return [TissueParams(rho=1.0, t1=float(a), t2=float(b))
            for a, b in zip(t1, t2)]


@dataclass(frozen=True)
class EnsembleMatrix:
    """T x L matrix whose columns are unit-density signal evolutions."""

    data: np.ndarray
    tissues: tuple = ()

    @property
    def n_echoes(self) -> int:
        return self.data.shape[0]

    @property
    def n_signals(self) -> int:
        return self.data.shape[1]


def build_ensemble(tissues, seq: SequenceParams) -> EnsembleMatrix:
    """Simulate one evolution per tissue (rho normalized to 1)."""
    tissues = list(tissues)
    if not tissues:
        raise ValueError("empty tissue list")
    t1 = np.array([t.t1 for t in tissues])
    t2 = np.array([t.t2 for t in tissues])
    eta = np.array([t.eta for t in tissues])
    data = simulate_fse_ensemble(t1, t2, seq, eta=eta)
    return EnsembleMatrix(data=data, tissues=tuple(tissues))


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal temporal basis with the full singular spectrum."""

    phi_k: np.ndarray
    singular_values: np.ndarray

    @property
    def n_echoes(self) -> int:
        return self.phi_k.shape[0]

    @property
    def k(self) -> int:
        return self.phi_k.shape[1]


def _fix_column_signs(u: np.ndarray) -> np.ndarray:
    # Make the first significantly nonzero entry of each column real-positive
    # so repeated SVDs of the same data are bit-identical.
    u = u.copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size:
            pivot = col[idx[0]]
            u[:, j] = col * np.conj(pivot / abs(pivot))
    return u


def compute_basis(ensemble: EnsembleMatrix, k: int) -> SubspaceBasis:
    """Top-k left singular vectors of the ensemble matrix."""
    x = ensemble.data
    t, l = x.shape
    if not 1 <= k <= min(t, l):
        raise ValueError(f"k={k} out of range for a {t}x{l} ensemble")
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    return SubspaceBasis(phi_k=_fix_column_signs(u[:, :k]), singular_values=s)


def projection_error(ensemble: EnsembleMatrix, basis: SubspaceBasis,
                     metric: str = "frobenius-relative") -> float:
    """Relative residual of projecting the ensemble onto the basis."""
    x = ensemble.data
    norm = np.linalg.norm(x)
    if norm == 0:
        raise ValueError("ensemble matrix has zero norm")
    resid = x - basis.phi_k @ (basis.phi_k.conj().T @ x)
    if metric == "frobenius-relative":
        return float(np.linalg.norm(resid) / norm)
    if metric == "worst-column-relative":
        colnorm = np.linalg.norm(x, axis=0)
        if np.any(colnorm == 0):
            raise ValueError("ensemble contains a zero column")
        return float(np.max(np.linalg.norm(resid, axis=0) / colnorm))
    raise ValueError(f"unknown metric {metric!r}")


def project_coefficients(basis: SubspaceBasis, images: np.ndarray) -> np.ndarray:
    """Temporal compression: alpha = Phi^H x along the leading axis."""
    return np.tensordot(basis.phi_k.conj().T, images, axes=1)


def back_project(basis: SubspaceBasis, coeffs: np.ndarray) -> np.ndarray:
    """Back-projection to the echo-image series: x = Phi alpha."""
    return np.tensordot(basis.phi_k, coeffs, axes=1)
