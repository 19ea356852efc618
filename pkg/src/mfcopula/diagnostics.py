"""Sub-asymptotic tail dependence ``chi(h, u)`` within and across fields.

Pairs are given as 0-based field indices ``(i1, i2)``.  For the upper tail

    chi(h, u) = P(U_i1(s) > u | U_i2(s') > u),      |s - s'| = h,

and the lower tail uses ``< u``.  Every estimate averages the two
conditioning directions, so it is symmetric in the pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .dataset import Dataset
from .exceptions import DomainError
from .margins import marginal_quantile
from .model import ParameterVector
from .simulate import simulate_pair

__all__ = [
    "ChiCurve",
    "wilson_interval",
    "distance_bins",
    "empirical_chi",
    "empirical_chi_threshold",
    "true_chi",
    "model_chi",
    "SelectionDesign",
    "grid_model_selection",
]

UPPER, LOWER = "upper", "lower"


@dataclass(eq=False)
class ChiCurve:
    """One chi curve with a 95% envelope.

    ``abscissa_type`` is ``"distance"`` (fixed threshold) or ``"threshold"``
    (fixed distance).  Undefined estimates are NaN.
    """

    tail: str
    pair: tuple
    abscissa_type: str
    abscissa: np.ndarray
    estimate: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    estimator: str
    fixed_value: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def pair_label(self):
        return f"{self.pair[0] + 1}{self.pair[1] + 1}"

    def rows(self):
        for x, e, lo, hi in zip(self.abscissa, self.estimate, self.lo, self.hi):
            yield (self.tail, self.pair_label, self.abscissa_type, float(x), float(e),
                   float(lo), float(hi), self.estimator)


def _check_tail(tail):
    if tail not in (UPPER, LOWER):
        raise DomainError(f"tail must be 'upper' or 'lower', got {tail!r}")


def wilson_interval(successes, trials, level=0.95):
    """Wilson score interval; NaN where ``trials == 0``."""
    successes = np.asarray(successes, dtype=float)
    trials = np.asarray(trials, dtype=float)
    zq = norm.ppf(0.5 + level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        phat = successes / trials
        denom = 1.0 + zq**2 / trials
        centre = (phat + zq**2 / (2 * trials)) / denom
        half = zq * np.sqrt(phat * (1 - phat) / trials + zq**2 / (4 * trials**2)) / denom
    return centre - half, centre + half


def _exceed(U, u, tail):
    return U > u if tail == UPPER else U < u


def _site_pairs(d, i1, i2):
    if i1 == i2:
        j1, j2 = np.triu_indices(d, k=1)
    else:
        j1, j2 = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        j1, j2 = j1.ravel(), j2.ravel()
    return j1, j2


def distance_bins(distances, n_bins):
    """Equal-count bin edges over the observed pair distances."""
    edges = np.unique(np.quantile(np.asarray(distances, dtype=float), np.linspace(0, 1, n_bins + 1)))
    # all distances equal: keep one closed bin
    return np.repeat(edges, 2) if edges.size == 1 else edges


def _assign(h, edges):
    idx = np.searchsorted(edges, h, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def _pooled(U, pair, tail, u, j1, j2):
    """Joint and marginal exceedance counts for each site pair in ``(j1, j2)``."""
    i1, i2 = pair
    E1 = _exceed(U[i1], u, tail).astype(np.int64)
    E2 = _exceed(U[i2], u, tail).astype(np.int64)
    joint = np.einsum("pn,pn->p", E1[j1], E2[j2])
    return joint, E1[j1].sum(axis=1), E2[j2].sum(axis=1)


def _estimate(joint, c1, c2):
    with np.errstate(divide="ignore", invalid="ignore"):
        est = 0.5 * (joint / c1 + joint / c2)
    est = np.where((c1 > 0) & (c2 > 0), est, np.nan)
    return est


def empirical_chi(data: Dataset, tail, pair, u, bins=12) -> ChiCurve:
    """Empirical chi against distance at a fixed threshold.

    All site pairs whose distance falls in a bin and all replicates are
    pooled.  ``bins`` is a number of equal-count bins or explicit edges.
    The envelope is a Wilson interval on the pooled counts.
    """
    _check_tail(tail)
    if not 0 < u < 1:
        raise DomainError("u must lie in (0, 1)")
    i1, i2 = pair
    j1, j2 = _site_pairs(data.d, i1, i2)
    h = data.sites.distances[j1, j2]
    edges = distance_bins(h, bins) if np.isscalar(bins) else np.asarray(bins, dtype=float)
    which = _assign(h, edges)
    joint, c1, c2 = _pooled(data.U, pair, tail, u, j1, j2)
    nb = len(edges) - 1
    J = np.bincount(which, joint, nb)
    C1 = np.bincount(which, c1, nb)
    C2 = np.bincount(which, c2, nb)
    count = np.bincount(which, minlength=nb)
    centre = np.bincount(which, h, nb) / np.maximum(count, 1)
    keep = count > 0
    est = _estimate(J, C1, C2)
    lo, hi = wilson_interval(np.minimum(J, 0.5 * (C1 + C2)), 0.5 * (C1 + C2))
    return ChiCurve(tail, (i1, i2), "distance", centre[keep], est[keep], lo[keep], hi[keep],
                    "empirical", fixed_value=float(u),
                    extra={"edges": edges, "n_pairs": count[keep], "joint": J[keep],
                           "cond": 0.5 * (C1 + C2)[keep]})


def empirical_chi_threshold(data: Dataset, tail, pair, h_range, u_grid) -> ChiCurve:
    """Empirical chi against threshold, pooling pairs with distance in ``h_range``."""
    _check_tail(tail)
    i1, i2 = pair
    j1, j2 = _site_pairs(data.d, i1, i2)
    h = data.sites.distances[j1, j2]
    sel = (h >= h_range[0]) & (h <= h_range[1])
    if not sel.any():
        raise DomainError(f"no site pairs with distance in {h_range}")
    j1, j2 = j1[sel], j2[sel]
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=float))
    est, lo, hi = (np.empty(u_grid.size) for _ in range(3))
    for k, u in enumerate(u_grid):
        joint, c1, c2 = _pooled(data.U, pair, tail, u, j1, j2)
        J, C1, C2 = joint.sum(), c1.sum(), c2.sum()
        est[k] = _estimate(J, C1, C2)
        lo[k], hi[k] = wilson_interval(min(J, 0.5 * (C1 + C2)), 0.5 * (C1 + C2))
    return ChiCurve(tail, (i1, i2), "threshold", u_grid, est, lo, hi, "empirical",
                    fixed_value=float(np.mean(h[sel])))


# --------------------------------------------------------------------------
# Model-based chi
# --------------------------------------------------------------------------

def _chi_from_draws(X, theta: ParameterVector, pair, tail, u_grid):
    """Direction-averaged chi and mean conditioning count for each threshold."""
    i1, i2 = pair
    thr1 = marginal_quantile(u_grid, theta.margin(i1))
    thr2 = marginal_quantile(u_grid, theta.margin(i2))
    est = np.empty(u_grid.size)
    cond = np.empty(u_grid.size)
    for k in range(u_grid.size):
        if tail == UPPER:
            e1, e2 = X[:, 0] > thr1[k], X[:, 1] > thr2[k]
        else:
            e1, e2 = X[:, 0] < thr1[k], X[:, 1] < thr2[k]
        J = np.count_nonzero(e1 & e2)
        C1, C2 = np.count_nonzero(e1), np.count_nonzero(e2)
        est[k] = _estimate(J, C1, C2)
        cond[k] = 0.5 * (C1 + C2)
    return est, cond


def true_chi(theta: ParameterVector, tail, pair, h, u, mc=1_000_000, seed=0):
    """Monte Carlo chi for a single parameter vector.

    Returns ``(estimate, standard_error)`` arrays over ``u`` (scalars when
    ``u`` is scalar).  The standard error is binomial on the mean
    conditioning count.
    """
    _check_tail(tail)
    if mc < 100_000:
        raise DomainError("true_chi needs mc >= 1e5")
    scalar = np.ndim(u) == 0
    u_grid = np.atleast_1d(np.asarray(u, dtype=float))
    X = simulate_pair(theta, pair[0], pair[1], h, mc, seed)
    est, cond = _chi_from_draws(X, theta, pair, tail, u_grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(est * (1 - est) / cond)
    if scalar:
        return float(est[0]), float(se[0])
    return est, se


def _sample_seed(seed, s, k):
    return int(np.random.SeedSequence(seed, spawn_key=(s, k)).generate_state(1)[0])


def model_chi(samples, tail, pair, h, u, mc=20_000, seed=0, max_samples=200) -> ChiCurve:
    """Posterior chi curve: median and 2.5%/97.5% quantiles over samples.

    Args:
        samples: iterable of :class:`ParameterVector` (e.g. posterior draws).
        h: distance (scalar) or distances (array, with scalar ``u``).
        u: threshold (scalar) or thresholds (array, with scalar ``h``).
        mc: simulated replicates per sample and distance.
        max_samples: samples are thinned evenly to at most this many.
    """
    _check_tail(tail)
    if mc < 10_000:
        raise DomainError("model_chi needs mc >= 1e4")
    samples = list(samples)
    if len(samples) > max_samples:
        idx = np.unique(np.linspace(0, len(samples) - 1, max_samples).round().astype(int))
        samples = [samples[k] for k in idx]
    h_arr = np.atleast_1d(np.asarray(h, dtype=float))
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if h_arr.size > 1 and u_arr.size > 1:
        raise DomainError("vary either the distance or the threshold, not both")
    values = np.empty((len(samples), h_arr.size, u_arr.size))
    for s, theta in enumerate(samples):
        for k, hk in enumerate(h_arr):
            X = simulate_pair(theta, pair[0], pair[1], hk, mc, _sample_seed(seed, s, k))
            values[s, k], _ = _chi_from_draws(X, theta, pair, tail, u_arr)
    values = values.reshape(len(samples), -1)
    med = np.nanmedian(values, axis=0)
    lo, hi = np.nanquantile(values, [0.025, 0.975], axis=0)
    if h_arr.size > 1 or u_arr.size == 1 and h_arr.size == 1 and np.ndim(h) > 0:
        kind, absc, fixed = "distance", h_arr, float(u_arr[0])
    else:
        kind, absc, fixed = "threshold", u_arr, float(h_arr[0])
    return ChiCurve(tail, tuple(pair), kind, absc, med, lo, hi, "model", fixed_value=fixed,
                    extra={"draws": values})


# --------------------------------------------------------------------------
# Model selection over fixed-parameter fits
# --------------------------------------------------------------------------

@dataclass
class SelectionDesign:
    """Cells compared by :func:`grid_model_selection`.

    Each cell is ``(tail, pair, distance tertile, threshold)``; distance
    tertiles are equal-count bins of the observed pair distances.
    """

    upper_thresholds: tuple = (0.9, 0.95)
    lower_thresholds: tuple = (0.05, 0.1)
    n_distance_bins: int = 3

    def thresholds(self, tail):
        return self.upper_thresholds if tail == UPPER else self.lower_thresholds


def _pairs(p):
    return [(a, b) for a in range(p) for b in range(a, p)]


def selection_cells(data: Dataset, design: SelectionDesign):
    """Empirical chi in every design cell.

    Returns a list of dicts with keys ``tail, pair, h, u, empirical``.
    """
    cells = []
    for tail in (LOWER, UPPER):
        for pair in _pairs(data.p):
            for u in design.thresholds(tail):
                curve = empirical_chi(data, tail, pair, u, bins=design.n_distance_bins)
                for h, est in zip(curve.abscissa, curve.estimate):
                    cells.append({"tail": tail, "pair": pair, "h": float(h), "u": float(u),
                                  "empirical": float(est)})
    return cells


def model_cells(chain, cells, mc=20_000, seed=0, max_samples=100):
    """Posterior-median model chi at every cell of ``cells``."""
    samples = chain.parameter_vectors()
    out = np.empty(len(cells))
    groups = {}
    for k, c in enumerate(cells):
        groups.setdefault((c["tail"], c["pair"], c["h"]), []).append(k)
    for g, ((tail, pair, h), idx) in enumerate(sorted(groups.items())):
        us = np.array([cells[k]["u"] for k in idx])
        curve = model_chi(samples, tail, pair, h, us, mc=mc, seed=seed + g, max_samples=max_samples)
        out[idx] = curve.estimate
    return out


def grid_model_selection(fits, data: Dataset, design: SelectionDesign | None = None, mc=20_000,
                         seed=0, max_samples=100, model_values=None):
    """Rank fixed-parameter fits by chi discrepancy against the data.

    Args:
        fits: sequence of ``(fixed_values: dict, ChainOutput)``.
        data: data the fits were run on.
        design: comparison cells (defaults to :class:`SelectionDesign`).
        model_values: optional precomputed model chi per fit, aligned with
            the design cells; skips simulation.

    Returns:
        list of dicts (``rank, index, fixed, score, n_cells, n_missing``),
        sorted by ascending score; ties keep input order.
    """
    if not fits:
        raise DomainError("at least one fit is required")
    design = design or SelectionDesign()
    cells = selection_cells(data, design)
    emp = np.array([c["empirical"] for c in cells])
    missing = ~np.isfinite(emp)
    results = []
    for k, (fixed, chain) in enumerate(fits):
        model = (np.asarray(model_values[k], dtype=float) if model_values is not None
                 else model_cells(chain, cells, mc=mc, seed=seed, max_samples=max_samples))
        ok = ~missing & np.isfinite(model)
        score = float(np.mean((model[ok] - emp[ok]) ** 2)) if ok.any() else math.inf
        results.append({"index": k, "fixed": dict(fixed), "score": score,
                        "n_cells": int(ok.sum()), "n_missing": int((~ok).sum())})
    order = sorted(range(len(results)), key=lambda k: (results[k]["score"], k))
    ranked = []
    for r, k in enumerate(order, start=1):
        ranked.append(dict(results[k], rank=r))
    return ranked
