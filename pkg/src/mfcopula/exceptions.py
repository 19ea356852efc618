"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class UnsupportedConfigurationError(ValueError):
    """A parameter configuration has no implemented evaluation rule."""


class CovarianceAssemblyError(RuntimeError):
    """The latent Gaussian correlation matrix could not be factorized."""


class GridSizeError(ValueError):
    """A dense simulation grid exceeds the configured Cholesky cap."""


class IngestError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class DegenerateMarginWarning(RuntimeWarning):
    """Coincident latent scales were perturbed before evaluating a margin."""
