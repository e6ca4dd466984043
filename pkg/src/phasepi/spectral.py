"""Spectral decomposition of a correlation matrix and the principal factor
approximation (PFA) built from it.

The PFA splits ``Z = mu + G_k w + v`` where ``G_k`` holds the top ``k``
scaled eigenvectors of the correlation matrix (the *major* part) and ``v``
collects the remaining, weakly dependent, *minor* part.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError, ValidationError

SYMMETRY_TOL = 1e-12
DIAGONAL_TOL = 1e-10
ENTRY_TOL = 1e-10
# relative slack on the k_delta inequality; the identity matrix sits exactly
# on the boundary and must not flip on rounding
_CHOOSE_K_RTOL = 1e-10


@dataclass(frozen=True)
class SymmetricSpectrum:
    """Eigenvalues in non-increasing order and matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def m(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def clamped(self) -> np.ndarray:
        """Eigenvalues with negative round-off set to zero."""
        return np.clip(self.eigenvalues, 0.0, None)


@dataclass(frozen=True)
class PfaDecomposition:
    k: int
    loadings: np.ndarray  # m x k, columns sqrt(lambda_j) * rho_j
    factor_variances: np.ndarray  # lambda_1..lambda_k (clamped)
    factor_vectors: np.ndarray  # rho_1..rho_k, m x k
    sigma_major_sq: np.ndarray
    minor_sd: np.ndarray
    a_min: float
    gamma_m: float
    delta: Optional[float] = None

    @property
    def m(self) -> int:
        return self.minor_sd.shape[0]

    def major(self, w: np.ndarray) -> np.ndarray:
        """Major vector ``G_k w``; zeros when ``k == 0``."""
        if self.k == 0:
            return np.zeros(self.m)
        return self.loadings @ np.asarray(w, dtype=float)


def validate_correlation(sigma) -> np.ndarray:
    """Return ``sigma`` as a float array after checking it is a correlation matrix."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValidationError(f"correlation matrix must be square, got shape {sigma.shape}")
    if sigma.shape[0] < 1:
        raise ValidationError("correlation matrix must be non-empty")
    if not np.all(np.isfinite(sigma)):
        raise ValidationError("correlation matrix has non-finite entries")
    asym = np.max(np.abs(sigma - sigma.T))
    if asym > SYMMETRY_TOL:
        raise ValidationError(f"correlation matrix is not symmetric (max |S - S^T| = {asym:.3g})")
    diag_err = np.max(np.abs(np.diag(sigma) - 1.0))
    if diag_err > DIAGONAL_TOL:
        raise ValidationError(f"correlation matrix diagonal deviates from 1 by {diag_err:.3g}")
    if np.max(np.abs(sigma)) > 1.0 + ENTRY_TOL:
        raise ValidationError("correlation matrix has entries outside [-1, 1]")
    return sigma


def _canonicalize_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive; argmax takes the
    # first index on ties, which keeps this deterministic
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigh_sym(sigma) -> SymmetricSpectrum:
    """Eigendecomposition of a correlation matrix.

    Uses LAPACK's symmetric driver (Householder tridiagonalization followed
    by a divide-and-conquer / implicit QL sweep). Eigenvalues are returned in
    non-increasing order and each eigenvector is sign-normalized so that its
    largest-magnitude entry is positive.
    """
    sigma = validate_correlation(sigma)
    try:
        vals, vecs = np.linalg.eigh(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver failed for m={sigma.shape[0]}: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = _canonicalize_signs(vecs[:, ::-1])
    if vals[-1] < -1e-8 * max(1.0, vals[0]):
        raise ValidationError(
            f"correlation matrix is not positive semidefinite (smallest eigenvalue {vals[-1]:.3g})"
        )
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return SymmetricSpectrum(vals, vecs)


def tail_norms(spectrum: SymmetricSpectrum) -> np.ndarray:
    """``tail[k] = m^-1 sqrt(lambda_{k+1}^2 + ... + lambda_m^2)`` for k = 0..m-1."""
    lam2 = spectrum.clamped**2
    # reverse cumulative sum: tails[k] = sum_{j >= k} lam2[j] (0-based)
    tails = np.cumsum(lam2[::-1])[::-1]
    return np.sqrt(tails) / spectrum.m


def choose_k(spectrum: SymmetricSpectrum, delta: float = 0.5) -> int:
    """Smallest number of factors whose removal leaves a weakly dependent tail.

    Returns the smallest ``k`` in ``[0, m - 1]`` with
    ``m^-1 sqrt(sum_{j > k} lambda_j^2) <= m^-delta``.
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    m = spectrum.m
    bound = m ** (-delta) * (1.0 + _CHOOSE_K_RTOL)
    ok = np.nonzero(tail_norms(spectrum) <= bound)[0]
    if ok.size == 0:
        warnings.warn(
            f"no k in [0, {m - 1}] satisfies the tail bound for delta={delta}; using k={m - 1}",
            RuntimeWarning,
            stacklevel=2,
        )
        return m - 1
    return int(min(ok[0], m - 1))


def build_pfa(spectrum: SymmetricSpectrum, k: int, delta: Optional[float] = None) -> PfaDecomposition:
    m = spectrum.m
    if not 0 <= k <= m - 1:
        raise ValidationError(f"k must lie in [0, {m - 1}], got {k}")
    lam = spectrum.clamped[:k]
    vecs = np.asarray(spectrum.eigenvectors[:, :k])
    loadings = vecs * np.sqrt(lam)
    sigma_major_sq = (vecs**2) @ lam if k else np.zeros(m)
    minor_sd = np.sqrt(np.clip(1.0 - sigma_major_sq, 0.0, None))
    max_sd = float(np.max(minor_sd))
    a_min = math.inf if max_sd == 0.0 else 1.0 / max_sd
    gamma_m = max_sd * math.sqrt(2.0 * math.log(m)) if m > 1 else 0.0
    return PfaDecomposition(
        k=int(k),
        loadings=loadings,
        factor_variances=lam.copy(),
        factor_vectors=vecs.copy(),
        sigma_major_sq=sigma_major_sq,
        minor_sd=minor_sd,
        a_min=a_min,
        gamma_m=gamma_m,
        delta=delta,
    )


def pfa_from_sigma(sigma, delta: float = 0.5) -> tuple[SymmetricSpectrum, PfaDecomposition]:
    """Convenience: eigendecompose, pick ``k`` and build the PFA in one call."""
    spectrum = eigh_sym(sigma)
    k = choose_k(spectrum, delta)
    return spectrum, build_pfa(spectrum, k, delta)
