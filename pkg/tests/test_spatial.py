import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfcopula.exceptions import CovarianceAssemblyError, DomainError
from mfcopula.spatial import (
    SiteSet,
    assemble_lmc,
    cholesky_with_jitter,
    coregionalization_matrix,
    exp_correlation,
    project_local_km,
)


def blockwise_sigma(H, lam1, lam2, rho):
    """Two-field blocks written out entry by entry."""
    c1, c2 = np.exp(-H / lam1), np.exp(-H / lam2)
    s11 = c1
    s22 = rho**2 * c1 + (1 - rho**2) * c2
    s12 = rho * c1
    return np.block([[s11, s12], [s12.T, s22]])


def test_site_distances():
    s = SiteSet.from_coords([[0, 0], [3, 4], [0, 1]])
    assert s.distances[0, 1] == 5.0
    assert np.allclose(s.distances, s.distances.T)
    assert np.all(np.diag(s.distances) == 0)


def test_exp_correlation_values():
    H = np.array([[0.0, 0.7], [0.7, 0.0]])
    C = exp_correlation(H, 0.7)
    assert C[0, 0] == 1.0
    assert C[0, 1] == pytest.approx(math.exp(-1), rel=1e-15)
    assert np.all(exp_correlation(H, np.inf) == 1.0)
    with pytest.raises(DomainError):
        exp_correlation(H, 0.0)


def test_rho_zero_block_diagonal(sites5):
    cov = assemble_lmc(sites5, [0.5, 0.2], coregionalization_matrix(0.0))
    d = sites5.d
    assert np.all(cov.sigma[:d, d:] == 0)
    np.testing.assert_allclose(cov.sigma[d:, d:], exp_correlation(sites5.distances, 0.2), atol=1e-15)


def test_cross_block_two_sites():
    sites = SiteSet.from_coords([[0, 0], [0.3, 0.4]])
    cov = assemble_lmc(sites, [0.6, 0.3], coregionalization_matrix(0.7))
    cross = cov.sigma[:2, 2:]
    np.testing.assert_allclose(np.diag(cross), 0.7, atol=1e-15)
    assert cross[0, 1] == pytest.approx(0.7 * math.exp(-0.5 / 0.6), rel=1e-14)


def test_rho_minus_one_negated_field(sites5):
    cov = assemble_lmc(sites5, [0.5, 0.2], coregionalization_matrix(-1.0))
    d = sites5.d
    c1 = exp_correlation(sites5.distances, 0.5)
    np.testing.assert_allclose(cov.sigma[d:, d:], c1, atol=1e-15)
    np.testing.assert_allclose(cov.sigma[:d, d:], -c1, atol=1e-15)
    assert cov.jitter > 0  # singular matrix needed jitter


def test_unit_diagonal_and_cholesky(sites5):
    cov = assemble_lmc(sites5, [0.5, 0.2], coregionalization_matrix(-0.7))
    assert np.allclose(np.diag(cov.sigma), 1.0, atol=1e-15)
    assert np.max(np.abs(cov.chol @ cov.chol.T - cov.sigma)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(lam1=st.floats(0.01, 5), lam2=st.floats(0.01, 5), rho=st.floats(-0.999, 0.999),
       seed=st.integers(0, 2**31))
def test_matches_blockwise_formulas(lam1, lam2, rho, seed):
    rng = np.random.default_rng(seed)
    sites = SiteSet.from_coords(rng.uniform(size=(6, 2)))
    cov = assemble_lmc(sites, [lam1, lam2], coregionalization_matrix(rho))
    assert np.max(np.abs(cov.sigma - blockwise_sigma(sites.distances, lam1, lam2, rho))) < 1e-12
    assert np.min(np.linalg.eigvalsh(cov.sigma)) > -1e-10


def test_general_p_validation(sites5):
    L = np.array([[1, 0, 0], [0.6, 0.8, 0], [0.0, 0.6, 0.8]])
    cov = assemble_lmc(sites5, [0.3, 0.4, 0.5], L)
    assert cov.sigma.shape == (15, 15)
    assert np.allclose(np.diag(cov.sigma), 1.0)
    with pytest.raises(DomainError):
        assemble_lmc(sites5, [0.3, 0.4, 0.5], L.T)
    with pytest.raises(DomainError):
        assemble_lmc(sites5, [0.3, 0.4, 0.5], 2 * L)


def test_jitter_then_failure():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(CovarianceAssemblyError, match="smallest eigenvalue -1.000e\\+00"):
        cholesky_with_jitter(bad)
    G, jitter = cholesky_with_jitter(np.ones((3, 3)))
    assert 0 < jitter <= 1e-6


def test_projection_local_km():
    # one degree of latitude is about 111.2 km
    xy = project_local_km([-86.0, -86.0], [32.0, 33.0])
    assert np.hypot(*(xy[1] - xy[0])) == pytest.approx(111.19, abs=0.05)
    assert np.allclose(xy.mean(axis=0), 0.0)
