"""Blockwise adaptive MCMC: random-walk Metropolis on the hyperparameters
and MALA on the stacked latent variables.

The sampler works with any *target* object exposing

    names                          free parameter names (length M)
    evaluate(theta_star, R_star, grad=True) -> (total, per_replicate, grad)

where ``per_replicate`` holds the replicate-wise terms that depend on
``R_star`` (shape ``(n,)``) and ``grad`` is ``d total / d R_star`` with the
shape of ``R_star``.  :class:`mfcopula.likelihood.Posterior` is the model
target.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import ConfigError
from .likelihood import Posterior, PriorSpec
from .model import ParameterVector, from_unconstrained, to_unconstrained

log = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "SamplerError",
    "rw_propose",
    "mala_propose",
    "mala_log_q",
    "mala_log_accept_ratio",
    "adapt_sigma",
    "run_chain",
    "run_target",
    "fit",
    "initial_state",
    "effective_sample_size",
    "split_rhat",
]

TARGET_RW = 0.234
TARGET_MALA = 0.574


class SamplerError(RuntimeError):
    """The chain cannot start from the supplied state."""


@dataclass
class SamplerConfig:
    """Chain length, adaptation and storage settings.

    ``latent_blocking`` is ``"joint"`` (one MALA block over all replicates) or
    ``"replicate"`` (independent per-replicate MALA blocks sharing one step
    size).
    """

    n_iter: int = 50_000
    n_burn: int = 10_000
    adapt_interval: int = 100
    adapt_scale: float = 10.0
    target_rw: float = TARGET_RW
    target_mala: float = TARGET_MALA
    sigma_rw: float = 0.05
    sigma_mala: float = 0.05
    thin: int = 10
    seed: int = 0
    store_latents: bool = False
    latent_blocking: str = "joint"

    def validate(self):
        if not 0 < self.adapt_interval < self.n_burn < self.n_iter:
            raise ConfigError("need 0 < adapt_interval < n_burn < n_iter")
        if self.sigma_rw <= 0 or self.sigma_mala <= 0 or self.adapt_scale <= 0:
            raise ConfigError("step sizes and adapt_scale must be positive")
        for name in ("target_rw", "target_mala"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.latent_blocking not in ("joint", "replicate"):
            raise ConfigError("latent_blocking must be 'joint' or 'replicate'")

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------

def rw_propose(theta_star, sigma_rw, rng):
    """Gaussian random-walk proposal ``theta* + sigma * eps``."""
    theta_star = np.asarray(theta_star, dtype=float)
    return theta_star + sigma_rw * rng.standard_normal(theta_star.shape)


def mala_propose(R_star, grad, sigma_mala, rng):
    """Langevin proposal ``R* + (sigma^2 / 2) grad + sigma * eps``."""
    R_star = np.asarray(R_star, dtype=float)
    return R_star + 0.5 * sigma_mala**2 * grad + sigma_mala * rng.standard_normal(R_star.shape)


def mala_log_q(to, frm, grad_frm, sigma_mala, axis=None):
    """Log density (up to a constant) of proposing ``to`` from ``frm``."""
    diff = to - frm - 0.5 * sigma_mala**2 * grad_frm
    return -np.sum(diff * diff, axis=axis) / (2.0 * sigma_mala**2)


def mala_log_accept_ratio(lp_cur, lp_prop, R_cur, R_prop, g_cur, g_prop, sigma_mala, axis=None):
    """Log Metropolis-Hastings ratio of a MALA move (before ``min(0, .)``)."""
    return (lp_prop - lp_cur
            + mala_log_q(R_cur, R_prop, g_prop, sigma_mala, axis)
            - mala_log_q(R_prop, R_cur, g_cur, sigma_mala, axis))


def adapt_sigma(sigma, observed, target, scale):
    """Geometric step-size update ``sigma * exp((observed - target) / scale)``."""
    return sigma * math.exp((observed - target) / scale)


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

def _autocorr(x):
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0] if acf[0] > 0 else np.zeros(n)


def effective_sample_size(samples):
    """Per-column ESS using Geyer's initial monotone positive sequence."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    n, m = samples.shape
    out = np.empty(m)
    for c in range(m):
        if n < 4 or np.ptp(samples[:, c]) == 0:
            out[c] = float(n) if n else 0.0
            continue
        rho = _autocorr(samples[:, c])
        pairs = rho[: 2 * ((n - 1) // 2)].reshape(-1, 2).sum(axis=1)
        # truncate at the first negative pair, enforce monotonicity
        neg = np.flatnonzero(pairs < 0)
        pairs = pairs[: neg[0]] if neg.size else pairs
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * np.sum(pairs)
        out[c] = n / max(tau, 1e-12)
    return out


def split_rhat(samples):
    """Split-chain potential scale reduction per column (single chain)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    n = samples.shape[0] // 2
    if n < 2:
        return np.full(samples.shape[1], np.nan)
    halves = np.stack([samples[:n], samples[n:2 * n]])
    w = halves.var(axis=1, ddof=1).mean(axis=0)
    b = n * halves.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_plus / w)


# --------------------------------------------------------------------------
# Chain
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ChainOutput:
    """Post-burn-in samples and run diagnostics.

    ``theta_star`` holds thinned unconstrained samples, one row per stored
    iteration; ``trace`` has one row per adaptation window with columns
    ``(iteration, rate_rw, rate_mala, sigma_rw, sigma_mala)``.
    """

    names: tuple
    theta_star: np.ndarray
    template: ParameterVector
    trace: np.ndarray
    sigma_rw: float
    sigma_mala: float
    accept_rw: float
    accept_mala: float
    rejected_nonfinite: int
    config: SamplerConfig
    latents: np.ndarray | None = None
    ess: np.ndarray = field(default=None)
    rhat: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ess is None:
            self.ess = effective_sample_size(self.theta_star) if len(self.theta_star) else np.array([])
        if self.rhat is None:
            self.rhat = split_rhat(self.theta_star) if len(self.theta_star) else np.array([])

    def natural(self):
        """Samples mapped back to the natural scale, ``(S, M)``."""
        out = np.empty_like(self.theta_star)
        for s, row in enumerate(self.theta_star):
            vals = from_unconstrained(row, self.template).as_dict()
            out[s] = [vals[n] for n in self.names]
        return out

    def parameter_vectors(self, index=None):
        rows = self.theta_star if index is None else self.theta_star[index]
        return [from_unconstrained(row, self.template) for row in rows]

    def posterior_median(self) -> ParameterVector:
        med = np.median(self.natural(), axis=0)
        return self.template.with_values(dict(zip(self.names, med)))

    def credible_intervals(self, level=0.95):
        nat = self.natural()
        a = (1.0 - level) / 2.0
        return np.quantile(nat, [a, 1.0 - a], axis=0).T

    def summary(self):
        nat = self.natural()
        ci = self.credible_intervals()
        params = {}
        for k, name in enumerate(self.names):
            params[name] = {
                "mean": float(nat[:, k].mean()),
                "sd": float(nat[:, k].std(ddof=1)) if len(nat) > 1 else 0.0,
                "ci95": [float(ci[k, 0]), float(ci[k, 1])],
                "ess": float(self.ess[k]),
                "rhat": float(self.rhat[k]),
            }
        return {
            "parameters": params,
            "fixed": {n: v for n, v in self.template.as_dict().items() if n not in self.names},
            "acceptance": {"rw": self.accept_rw, "mala": self.accept_mala},
            "final_step_sizes": {"rw": self.sigma_rw, "mala": self.sigma_mala},
            "rejected_nonfinite": self.rejected_nonfinite,
            "trace": self.trace.tolist(),
            "n_samples": int(len(self.theta_star)),
        }


def initial_state(template: ParameterVector, priors: PriorSpec, n):
    """Free parameters at their prior medians and all latents at ``R = 1``."""
    theta0 = template.with_values({name: priors.median(name) for name in template.free_names()})
    return theta0, np.ones((n, 2 * (template.p + 1)))


def run_target(target, theta_star, R_star, cfg: SamplerConfig):
    """Run the two-block sampler on any target (see the module docstring).

    ``theta_star`` and ``R_star`` are the starting point on the unconstrained
    scale.  Returns a dict of raw results; :func:`run_chain` wraps it for the
    model posterior.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    theta_star = np.array(theta_star, dtype=float)
    R_star = np.array(R_star, dtype=float)
    per_rep_mode = cfg.latent_blocking == "replicate"
    n_rep = R_star.shape[0]

    lp, per_rep, grad = target.evaluate(theta_star, R_star)
    if not (np.isfinite(lp) and grad is not None and np.all(np.isfinite(grad))):
        raise SamplerError(f"initial log-posterior is not finite ({lp})")

    sig_rw, sig_mala = cfg.sigma_rw, cfg.sigma_mala
    n_keep = (cfg.n_iter - cfg.n_burn) // cfg.thin
    kept = np.empty((n_keep, theta_star.size))
    kept_R = np.empty((n_keep,) + R_star.shape) if cfg.store_latents else None
    trace = []
    win_rw = win_mala = 0.0
    post_rw = post_mala = 0.0
    nonfinite = 0
    s = 0
    M = theta_star.size

    for t in range(1, cfg.n_iter + 1):
        # block 1: hyperparameters
        if M:
            prop = rw_propose(theta_star, sig_rw, rng)
            log_u = math.log(rng.random())
            lp_p, rep_p, g_p = target.evaluate(prop, R_star)
            if np.isfinite(lp_p) and g_p is not None and log_u <= lp_p - lp:
                theta_star, lp, per_rep, grad = prop, lp_p, rep_p, g_p
                win_rw += 1
                if t > cfg.n_burn:
                    post_rw += 1

        # block 2: latent variables
        R_p = mala_propose(R_star, grad, sig_mala, rng)
        log_v = np.log(rng.random(n_rep)) if per_rep_mode else math.log(rng.random())
        lp_p, rep_p, g_p = target.evaluate(theta_star, R_p)
        ok = np.isfinite(lp_p) and g_p is not None and np.all(np.isfinite(g_p))
        if not ok:
            nonfinite += 1
            log.debug("iteration %d: non-finite MALA proposal rejected", t)
        elif per_rep_mode:
            ratio = mala_log_accept_ratio(per_rep, rep_p, R_star, R_p, grad, g_p, sig_mala, axis=1)
            acc = log_v <= ratio
            if acc.any():
                R_new = np.where(acc[:, None], R_p, R_star)
                lp, per_rep, grad = target.evaluate(theta_star, R_new)
                R_star = R_new
            rate = acc.mean()
            win_mala += rate
            if t > cfg.n_burn:
                post_mala += rate
        else:
            ratio = mala_log_accept_ratio(lp, lp_p, R_star, R_p, grad, g_p, sig_mala)
            if log_v <= ratio:
                R_star, lp, per_rep, grad = R_p, lp_p, rep_p, g_p
                win_mala += 1
                if t > cfg.n_burn:
                    post_mala += 1

        if t % cfg.adapt_interval == 0:
            a_rw = win_rw / cfg.adapt_interval
            a_mala = win_mala / cfg.adapt_interval
            if t < cfg.n_burn:
                if M:
                    sig_rw = adapt_sigma(sig_rw, a_rw, cfg.target_rw, cfg.adapt_scale)
                sig_mala = adapt_sigma(sig_mala, a_mala, cfg.target_mala, cfg.adapt_scale)
            trace.append((t, a_rw, a_mala, sig_rw, sig_mala))
            win_rw = win_mala = 0.0

        if t > cfg.n_burn and (t - cfg.n_burn) % cfg.thin == 0:
            kept[s] = theta_star
            if kept_R is not None:
                kept_R[s] = R_star
            s += 1

    n_post = cfg.n_iter - cfg.n_burn
    return dict(
        theta_star=kept,
        latents=kept_R,
        trace=np.array(trace).reshape(-1, 5),
        sigma_rw=sig_rw,
        sigma_mala=sig_mala,
        accept_rw=post_rw / n_post,
        accept_mala=post_mala / n_post,
        rejected_nonfinite=nonfinite,
        final_theta_star=theta_star,
        final_R_star=R_star,
    )


def run_chain(data, theta0: ParameterVector, R0, priors: PriorSpec | None, cfg: SamplerConfig,
              target=None) -> ChainOutput:
    """Run the two-block adaptive sampler.

    Args:
        data: :class:`~mfcopula.dataset.Dataset` of pseudo-uniform scores.
        theta0: initial parameters; its ``fixed`` set marks entries held fixed.
        R0: initial latent blocks ``(n, 2(p+1))`` on the natural scale, or
            ``None`` for all ones.
        priors: prior specification (defaults when ``None``).
        cfg: sampler configuration.
        target: optional pre-built :class:`Posterior` (reuses its caches).
    """
    priors = priors or PriorSpec()
    target = target or Posterior(data, theta0, priors)
    if R0 is None:
        R0 = np.ones((data.n, 2 * (theta0.p + 1)))
    theta_star0 = to_unconstrained(theta0).values
    res = run_target(target, theta_star0, np.log(np.asarray(R0, dtype=float)), cfg)
    return ChainOutput(
        names=tuple(theta0.free_names()),
        theta_star=res["theta_star"],
        template=theta0,
        trace=res["trace"],
        sigma_rw=res["sigma_rw"],
        sigma_mala=res["sigma_mala"],
        accept_rw=res["accept_rw"],
        accept_mala=res["accept_mala"],
        rejected_nonfinite=res["rejected_nonfinite"],
        config=cfg,
        latents=None if res["latents"] is None else np.exp(res["latents"]),
    )


def fit(data, template: ParameterVector, priors: PriorSpec | None = None, cfg: SamplerConfig | None = None):
    """Run a chain from the default initialization (prior medians, ``R = 1``)."""
    priors = priors or PriorSpec()
    cfg = cfg or SamplerConfig()
    theta0, R0 = initial_state(template, priors, data.n)
    return run_chain(data, theta0, R0, priors, cfg)
