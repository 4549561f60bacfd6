"""
Dense symmetric-matrix kernels used by the closed forms.

All routines work on small dense matrices (d up to a few dozen) and
delegate to LAPACK through numpy / scipy.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

from mmapprox.errors import (
    FactorizationError,
    NotPositiveSemidefiniteError,
    NotSymmetricError,
)
from mmapprox.settings import resolve


@dataclass(frozen=True)
class SymSpectrum:
    """Eigen-decomposition M = P diag(eigenvalues) P^T with ascending eigenvalues."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        P = self.eigenvectors
        return (P * self.eigenvalues) @ P.T

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Matrix P diag(values) P^T sharing this eigenbasis."""
        P = self.eigenvectors
        return (P * values) @ P.T


def _norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def check_symmetric(M: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """Return M as a float array, raising NotSymmetricError past the relative tolerance."""
    tol = resolve(tol, 'linalg', 'symmetry_tol')
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetricError(f"Expected a square matrix, got shape {M.shape}")
    scale = max(_norm(M), np.finfo(float).tiny)
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > tol * scale:
        raise NotSymmetricError(
            f"Matrix is not symmetric: max |M - M^T| = {asym:.3e} "
            f"exceeds {tol:.1e} * ||M|| = {tol * scale:.3e}"
        )
    return M


def sym_eig(M: np.ndarray, tol: Optional[float] = None) -> SymSpectrum:
    """
    Eigen-decomposition of a symmetric matrix.

    Eigenvalues come back in ascending order. Each eigenvector is signed so
    that its largest-magnitude component is positive, which makes the
    output reproducible for identical inputs.
    """
    M = check_symmetric(M, tol)
    sym = 0.5 * (M + M.T)
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as e:
        raise FactorizationError(f"Symmetric eigen-decomposition did not converge: {e}") from e
    if eigenvectors.size:
        pivots = np.argmax(np.abs(eigenvectors), axis=0)
        signs = np.sign(eigenvectors[pivots, np.arange(eigenvectors.shape[1])])
        signs[signs == 0] = 1.0
        eigenvectors = eigenvectors * signs
    return SymSpectrum(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def sym_sqrt(M: np.ndarray, clamp_tol: Optional[float] = None) -> np.ndarray:
    """
    Symmetric PSD square root.

    Eigenvalues in [-clamp_tol * ||M||, 0) are rounding noise and are set
    to zero; anything more negative raises NotPositiveSemidefiniteError.
    """
    clamp_tol = resolve(clamp_tol, 'linalg', 'psd_clamp_tol')
    spectrum = sym_eig(M)
    lam = spectrum.eigenvalues
    floor = -clamp_tol * _norm(np.asarray(M, dtype=float))
    if lam.size and lam[0] < floor:
        raise NotPositiveSemidefiniteError(
            f"Matrix is not positive semidefinite: smallest eigenvalue "
            f"{lam[0]:.6e} is below the tolerance {floor:.3e}"
        )
    root = spectrum.apply(np.sqrt(np.clip(lam, 0.0, None)))
    return 0.5 * (root + root.T)


def pseudo_inverse(spectrum: SymSpectrum, rank_tol: Optional[float] = None) -> np.ndarray:
    """Moore-Penrose inverse from a spectrum; |eigenvalue| <= rank_tol counts as zero.

    rank_tol defaults to the configured relative cutoff times max |eigenvalue|.
    """
    lam = spectrum.eigenvalues
    if rank_tol is None:
        scale = float(np.max(np.abs(lam))) if lam.size else 0.0
        rank_tol = resolve(None, 'linalg', 'rank_tol') * scale
    inv = np.zeros_like(lam)
    keep = np.abs(lam) > rank_tol
    inv[keep] = 1.0 / lam[keep]
    return spectrum.apply(inv)


def range_projector(spectrum: SymSpectrum, rank_tol: Optional[float] = None) -> np.ndarray:
    """Orthogonal projector onto the image of the matrix (M M^+)."""
    lam = spectrum.eigenvalues
    if rank_tol is None:
        scale = float(np.max(np.abs(lam))) if lam.size else 0.0
        rank_tol = resolve(None, 'linalg', 'rank_tol') * scale
    return spectrum.apply((np.abs(lam) > rank_tol).astype(float))


def cholesky(M: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = M; raises FactorizationError if M is not PD."""
    M = check_symmetric(M)
    try:
        return sla.cholesky(M, lower=True)
    except sla.LinAlgError as e:
        raise FactorizationError(
            f"Cholesky factorization failed, matrix is not positive definite: {e}"
        ) from e
