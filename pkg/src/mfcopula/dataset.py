"""Pseudo-uniform data container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .spatial import SiteSet


@dataclass(frozen=True, eq=False)
class Dataset:
    """``p`` fields x ``d`` sites x ``n`` replicates of scores in (0, 1).

    Attributes:
        U: scores, shape ``(p, d, n)``.
        sites: site coordinates and distances.
        field_names: one label per field.
        site_names: one label per site.
        replicate_labels: one label per replicate (e.g. ISO dates).
        provenance: ``"raw"``, ``"rank-transformed"`` or ``"externally standardized"``.
    """

    U: np.ndarray
    sites: SiteSet
    field_names: tuple = ()
    site_names: tuple = ()
    replicate_labels: tuple = ()
    provenance: str = "raw"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim != 3:
            raise DomainError("U must have shape (p, d, n)")
        if not np.all((U > 0) & (U < 1)):
            raise DomainError("all scores must lie strictly inside (0, 1)")
        if U.shape[1] != self.sites.d:
            raise DomainError(f"U has {U.shape[1]} sites but the site set has {self.sites.d}")
        object.__setattr__(self, "U", U)
        p, d, n = U.shape
        if not self.field_names:
            object.__setattr__(self, "field_names", tuple(f"field{i + 1}" for i in range(p)))
        if not self.site_names:
            object.__setattr__(self, "site_names", tuple(f"s{j + 1}" for j in range(d)))
        if not self.replicate_labels:
            object.__setattr__(self, "replicate_labels", tuple(str(k + 1) for k in range(n)))

    @property
    def p(self):
        return self.U.shape[0]

    @property
    def d(self):
        return self.U.shape[1]

    @property
    def n(self):
        return self.U.shape[2]

    def take_replicates(self, index):
        index = np.asarray(index)
        labels = tuple(np.asarray(self.replicate_labels, dtype=object)[index])
        return Dataset(self.U[:, :, index], self.sites, self.field_names, self.site_names,
                       labels, self.provenance, dict(self.meta))
