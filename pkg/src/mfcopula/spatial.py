"""Spatial correlation, coregionalization and Cholesky factorization.

The latent Gaussian vector stacks the ``p`` fields field-major:
index ``i * d + j`` holds field ``i`` at site ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import CovarianceAssemblyError, DomainError

__all__ = [
    "SiteSet",
    "CovarianceModel",
    "exp_correlation",
    "coregionalization_matrix",
    "assemble_lmc",
    "cholesky_with_jitter",
    "project_local_km",
]

JITTER_START = 1e-10
JITTER_MAX = 1e-6
EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class SiteSet:
    """Site coordinates and their Euclidean distance matrix."""

    coords: np.ndarray
    distances: np.ndarray

    @classmethod
    def from_coords(cls, coords):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or not np.all(np.isfinite(coords)):
            raise DomainError("coordinates must be a finite (d, D) array")
        return cls(coords, cdist(coords, coords))

    @property
    def d(self):
        return self.coords.shape[0]

    def subset(self, index):
        index = np.asarray(index)
        return SiteSet(self.coords[index], self.distances[np.ix_(index, index)])


def project_local_km(lon, lat):
    """Equirectangular projection about the centroid, in kilometres."""
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    lat0 = lat.mean()
    x = EARTH_RADIUS_KM * (lon - lon.mean()) * np.cos(lat0)
    y = EARTH_RADIUS_KM * (lat - lat0)
    return np.column_stack([x, y])


def exp_correlation(H, lam):
    """Isotropic exponential correlation ``exp(-H / lam)``."""
    if lam == np.inf:
        return np.ones_like(np.asarray(H, dtype=float))
    if not lam > 0:
        raise DomainError(f"range must be positive, got {lam}")
    return np.exp(-np.asarray(H, dtype=float) / lam)


def coregionalization_matrix(rho):
    """Lower-triangular ``L`` for two fields with cross-correlation ``rho``."""
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [-1, 1], got {rho}")
    return np.array([[1.0, 0.0], [rho, np.sqrt(max(0.0, 1.0 - rho * rho))]])


def cholesky_with_jitter(sigma):
    """Lower Cholesky factor, adding diagonal jitter when needed.

    Returns ``(factor, jitter)``; ``jitter`` is 0 when none was required.
    """
    try:
        return np.linalg.cholesky(sigma), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(sigma.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            return np.linalg.cholesky(sigma + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    smallest = float(np.linalg.eigvalsh(sigma)[0])
    raise CovarianceAssemblyError(
        f"correlation matrix not positive definite after jitter {JITTER_MAX:g}; "
        f"smallest eigenvalue {smallest:.3e}"
    )


@dataclass(frozen=True)
class CovarianceModel:
    """Cross-correlation of the stacked latent Gaussian field.

    Attributes:
        ranges: per-field exponential ranges.
        L: lower-triangular coregionalization matrix with unit-norm rows.
        sigma: ``(p d, p d)`` correlation matrix (no jitter).
        chol: lower Cholesky factor of ``sigma + jitter * I``.
        jitter: diagonal jitter used for the factorization.
        factor_chols: per-factor Cholesky factors of ``c_f(H)``, used for
            sampling through the coregionalization mixture.
    """

    ranges: np.ndarray
    L: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    jitter: float
    factor_chols: tuple

    @property
    def p(self):
        return self.L.shape[0]

    @property
    def d(self):
        return self.sigma.shape[0] // self.p

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def _lmc_sigma(H, ranges, L):
    p = L.shape[0]
    d = H.shape[0]
    corr = np.stack([exp_correlation(H, lam) for lam in ranges])
    # block (a, b) = sum_f L[a, f] L[b, f] c_f(H)
    sigma = np.einsum("af,bf,fjk->ajbk", L, L, corr)
    return sigma.reshape(p * d, p * d), corr


def assemble_lmc(sites: SiteSet, ranges, L, *, factor_for_sampling=True):
    """Build the latent correlation matrix and its Cholesky factor.

    Args:
        sites: site set providing the distance matrix.
        ranges: ``p`` positive exponential ranges.
        L: ``(p, p)`` lower-triangular matrix whose rows have unit norm.
        factor_for_sampling: also factor each ``c_f(H)`` for simulation.
    """
    ranges = np.atleast_1d(np.asarray(ranges, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    p = L.shape[0]
    if L.shape != (p, p) or ranges.shape != (p,):
        raise DomainError("ranges and L must describe the same number of fields")
    if np.any(np.triu(L, 1) != 0):
        raise DomainError("L must be lower triangular")
    if not np.allclose(np.sum(L**2, axis=1), 1.0, atol=1e-10):
        raise DomainError("rows of L must have unit Euclidean norm")
    if np.any(~(ranges > 0)):
        raise DomainError("ranges must be positive")

    sigma, corr = _lmc_sigma(sites.distances, ranges, L)
    chol, jitter = cholesky_with_jitter(sigma)
    factors = ()
    if factor_for_sampling:
        factors = tuple(cholesky_with_jitter(c)[0] for c in corr)
    return CovarianceModel(ranges, L, sigma, chol, jitter, factors)
