"""Multi-factor copula model for multivariate spatial extremes.

Closed-form margins, exact simulation, tail classification, a Gaussian-copula
likelihood given latent factors, and an adaptive random-walk/MALA sampler.
"""
from .dataset import Dataset
from .diagnostics import (
    ChiCurve,
    SelectionDesign,
    empirical_chi,
    empirical_chi_threshold,
    grid_model_selection,
    model_chi,
    true_chi,
)
from .exceptions import (
    ConfigError,
    CovarianceAssemblyError,
    DegenerateMarginWarning,
    DomainError,
    GridSizeError,
    IngestError,
    UnsupportedConfigurationError,
)
from .ingest import Panel, harmonic_detrend, ingest_csv, rank_transform
from .likelihood import Posterior, PosteriorState, PriorSpec, grad_latent, log_likelihood, log_posterior
from .margins import (
    BetaCoefficients,
    MarginalSpec,
    latent_sum_cdf,
    marginal_cdf,
    marginal_logpdf,
    marginal_pdf,
    marginal_quantile,
)
from .model import (
    ParameterVector,
    TailReport,
    classify_tails,
    from_unconstrained,
    to_unconstrained,
)
from .sampler import ChainOutput, SamplerConfig, adapt_sigma, fit, mala_propose, run_chain, rw_propose
from .simulate import SimulationOutput, simulate, simulate_grid, simulate_pair
from .spatial import CovarianceModel, SiteSet, assemble_lmc, exp_correlation

__version__ = "0.1.0"
