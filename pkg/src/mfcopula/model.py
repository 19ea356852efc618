"""Parameter vector, unconstrained reparameterization, latent blocks and
tail-dependence classification."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit, log_expit

from .exceptions import DomainError
from .margins import MarginalSpec
from .spatial import coregionalization_matrix

__all__ = [
    "ParameterVector",
    "TransformedParameters",
    "TailReport",
    "param_domain",
    "to_unconstrained",
    "from_unconstrained",
    "log_jacobian_theta",
    "latent_weights",
    "latent_shift",
    "latent_names",
    "classify_tails",
]

POSITIVE, UNIT, SYMMETRIC = "positive", "unit", "symmetric"
BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Model hyperparameters for ``p`` fields.

    ``rho`` is the cross-correlation used for ``p == 2``; for other ``p`` a
    fixed coregionalization matrix ``L`` (unit-norm rows) is supplied instead
    and is never sampled.  ``fixed`` lists parameter names held constant
    during inference.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    delta_u: float
    delta_l: float
    lam: np.ndarray
    rho: float | None = None
    L: np.ndarray | None = None
    fixed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("alpha", "gamma", "lam"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "delta_u", float(self.delta_u))
        object.__setattr__(self, "delta_l", float(self.delta_l))
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        p = self.alpha.size
        if self.gamma.size != p or self.lam.size != p:
            raise DomainError("alpha, gamma and lam must have one entry per field")
        if p == 2:
            if self.rho is None:
                raise DomainError("rho is required for two fields")
            object.__setattr__(self, "rho", float(self.rho))
        elif self.L is None:
            if p != 1:
                raise DomainError("a coregionalization matrix L is required when p != 2")
            object.__setattr__(self, "L", np.ones((1, 1)))
        unknown = self.fixed - set(self.names())
        if unknown:
            raise DomainError(f"unknown fixed parameters: {sorted(unknown)}")
        self.validate()

    @classmethod
    def bivariate(cls, alpha, gamma, delta_u, delta_l, lam, rho, fixed=()):
        return cls(np.asarray(alpha), np.asarray(gamma), delta_u, delta_l, np.asarray(lam), rho, fixed=frozenset(fixed))

    @property
    def p(self):
        return self.alpha.size

    def validate(self):
        if np.any(~(self.alpha > 0)):
            raise DomainError("alpha entries must be positive")
        if np.any(~(self.lam > 0)):
            raise DomainError("lambda entries must be positive")
        if np.any((self.gamma < 0) | (self.gamma > 1)):
            raise DomainError("gamma entries must lie in [0, 1]")
        for name in ("delta_u", "delta_l"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in [0, 1]")
        if self.rho is not None and not -1 <= self.rho <= 1:
            raise DomainError("rho_12 must lie in [-1, 1]")

    def names(self):
        p = self.p
        names = [f"alpha_{i + 1}" for i in range(p)]
        names += [f"gamma_{i + 1}" for i in range(p)]
        names += ["delta_u", "delta_l"]
        names += [f"lambda_{i + 1}" for i in range(p)]
        if p == 2:
            names.append("rho_12")
        return names

    def free_names(self):
        return [n for n in self.names() if n not in self.fixed]

    def as_dict(self):
        out = {}
        for i in range(self.p):
            out[f"alpha_{i + 1}"] = float(self.alpha[i])
        for i in range(self.p):
            out[f"gamma_{i + 1}"] = float(self.gamma[i])
        out["delta_u"] = self.delta_u
        out["delta_l"] = self.delta_l
        for i in range(self.p):
            out[f"lambda_{i + 1}"] = float(self.lam[i])
        if self.p == 2:
            out["rho_12"] = self.rho
        return out

    def with_values(self, values: dict, fixed=None):
        alpha, gamma, lam = self.alpha.copy(), self.gamma.copy(), self.lam.copy()
        kw = {}
        for name, val in values.items():
            if name == "delta_u" or name == "delta_l":
                kw[name] = float(val)
            elif name == "rho_12":
                kw["rho"] = float(val)
            else:
                base, idx = name.rsplit("_", 1)
                arr = {"alpha": alpha, "gamma": gamma, "lambda": lam}.get(base)
                if arr is None:
                    raise DomainError(f"unknown parameter {name!r}")
                arr[int(idx) - 1] = float(val)
        return replace(
            self, alpha=alpha, gamma=gamma, lam=lam,
            fixed=self.fixed if fixed is None else frozenset(fixed), **kw,
        )

    def coregionalization(self):
        if self.p == 2:
            return coregionalization_matrix(self.rho)
        return np.asarray(self.L, dtype=float)

    def margin(self, i):
        return MarginalSpec.from_params(self.alpha[i], self.gamma[i], self.delta_u, self.delta_l)

    def margins(self):
        return [self.margin(i) for i in range(self.p)]

    def __repr__(self):
        vals = ", ".join(f"{k}={v:.6g}" for k, v in self.as_dict().items())
        return f"ParameterVector({vals})"


def param_domain(name):
    if name.startswith(("alpha_", "lambda_")):
        return POSITIVE
    if name.startswith(("gamma_", "delta_")):
        return UNIT
    if name == "rho_12":
        return SYMMETRIC
    raise DomainError(f"unknown parameter {name!r}")


@dataclass(frozen=True, eq=False)
class TransformedParameters:
    """Free parameters mapped to the real line, in ``names`` order."""

    values: np.ndarray
    names: tuple

    def __len__(self):
        return len(self.names)


def _forward(name, value):
    kind = param_domain(name)
    if kind == POSITIVE:
        if not value > 0:
            raise DomainError(f"{name} must be positive for the log transform")
        return np.log(value)
    if kind == UNIT:
        if not 0 < value < 1:
            raise DomainError(f"{name}={value} is on the boundary of (0, 1)")
        return logit(value)
    if not -1 < value < 1:
        raise DomainError(f"{name}={value} is on the boundary of (-1, 1)")
    return logit((value + 1.0) / 2.0)


def _inverse(name, value):
    kind = param_domain(name)
    if kind == POSITIVE:
        return float(np.exp(value))
    if kind == UNIT:
        return float(expit(value))
    return float(2.0 * expit(value) - 1.0)


def to_unconstrained(theta: ParameterVector) -> TransformedParameters:
    """Map the non-fixed entries to R: log, logit, and ``logit((rho+1)/2)``."""
    values = theta.as_dict()
    names = tuple(theta.free_names())
    return TransformedParameters(np.array([_forward(n, values[n]) for n in names]), names)


def from_unconstrained(tp, template: ParameterVector) -> ParameterVector:
    """Inverse of :func:`to_unconstrained`; fixed entries come from ``template``."""
    values = tp.values if isinstance(tp, TransformedParameters) else np.asarray(tp, dtype=float)
    names = tp.names if isinstance(tp, TransformedParameters) else tuple(template.free_names())
    return template.with_values({n: _inverse(n, v) for n, v in zip(names, values)})


def log_jacobian_theta(tp, names=None):
    """``log |d theta / d theta*|`` summed over the free coordinates."""
    if isinstance(tp, TransformedParameters):
        values, names = tp.values, tp.names
    else:
        values = np.asarray(tp, dtype=float)
    total = 0.0
    for name, x in zip(names, values):
        kind = param_domain(name)
        if kind == POSITIVE:
            total += x
        else:
            # d/dx expit(x) = expit(x) expit(-x)
            total += log_expit(x) + log_expit(-x)
            if kind == SYMMETRIC:
                total += np.log(2.0)
    return float(total)


# --------------------------------------------------------------------------
# Latent blocks
# --------------------------------------------------------------------------

def latent_names(p):
    """Column labels of a latent block: R0U, R0L, R1U, R1L, ..., RpU, RpL."""
    names = ["R0_U", "R0_L"]
    for i in range(1, p + 1):
        names += [f"R{i}_U", f"R{i}_L"]
    return names


def latent_weights(theta: ParameterVector):
    """``(2(p+1), p)`` matrix ``B`` with ``T = R @ B`` for latent rows ``R``."""
    p = theta.p
    B = np.zeros((2 * (p + 1), p))
    a, g, du, dl = theta.alpha, theta.gamma, theta.delta_u, theta.delta_l
    B[0] = a * g * du
    B[1] = -a * (1 - g) * dl
    for i in range(p):
        B[2 + 2 * i, i] = a[i] * g[i] * (1 - du)
        B[3 + 2 * i, i] = -a[i] * (1 - g[i]) * (1 - dl)
    return B


def latent_shift(theta: ParameterVector, R):
    """Per-field shift ``T_i`` for latent blocks ``R`` of shape ``(n, 2(p+1))``."""
    return np.asarray(R, dtype=float) @ latent_weights(theta)


# --------------------------------------------------------------------------
# Tail classification
# --------------------------------------------------------------------------

AD, AI, BOUNDARY = "AD", "AI", "BOUNDARY"


@dataclass
class TailReport:
    """Asymptotic dependence labels for each field and each field pair.

    ``conditions`` records, per entry, the left- and right-hand sides of the
    inequality that was tested.
    """

    upper: list
    lower: list
    cross_upper: dict
    cross_lower: dict
    conditions: dict
    notes: list

    def to_dict(self):
        return {
            "upper": self.upper,
            "lower": self.lower,
            "cross_upper": {f"{a}-{b}": v for (a, b), v in self.cross_upper.items()},
            "cross_lower": {f"{a}-{b}": v for (a, b), v in self.cross_lower.items()},
            "conditions": self.conditions,
            "notes": self.notes,
        }

    def summary(self):
        """Compact label string, e.g. ``U: AD, AD--AD; L: AD, AI--AI``."""
        cu = ", ".join(self.cross_upper.values())
        cl = ", ".join(self.cross_lower.values())
        return f"U: {', '.join(self.upper)}--{cu}; L: {', '.join(self.lower)}--{cl}"


def _compare(lhs, rhs):
    if abs(lhs - rhs) <= BOUNDARY_RTOL * max(abs(lhs), abs(rhs)):
        return BOUNDARY
    return AD if lhs > rhs else AI


def classify_tails(theta: ParameterVector) -> TailReport:
    """Classify within-field and cross-field tail dependence."""
    with np.errstate(over="ignore"):  # 1 / subnormal weight is +inf, which is the right limit
        return _classify(theta)


def _classify(theta):
    p = theta.p
    upper_w = theta.alpha * theta.gamma
    lower_w = theta.alpha * (1.0 - theta.gamma)
    notes = []
    conditions = {}
    labels = {}
    for tail, weights, delta in (("upper", upper_w, theta.delta_u), ("lower", lower_w, theta.delta_l)):
        out = []
        for i in range(p):
            key = f"{tail}_{i + 1}"
            if weights[i] == 0:
                notes.append(f"{key}: latent {tail} term absent (gamma_{i + 1} at bound); classified AI")
                conditions[key] = {"lhs": max(delta, 1 - delta), "rhs": None}
                out.append(AI)
                continue
            lhs, rhs = max(delta, 1.0 - delta), 1.0 / weights[i]
            conditions[key] = {"lhs": lhs, "rhs": rhs}
            out.append(_compare(lhs, rhs))
        labels[tail] = out

        cross = {}
        for i1 in range(p):
            for i2 in range(i1 + 1, p):
                key = f"cross_{tail}_{i1 + 1}-{i2 + 1}"
                if weights[i1] == 0 or weights[i2] == 0:
                    notes.append(f"{key}: a latent {tail} term is absent; classified AI")
                    conditions[key] = {"lhs": delta, "rhs": None}
                    cross[(i1 + 1, i2 + 1)] = AI
                    continue
                rhs = max(1.0 / weights[i1], 1.0 / weights[i2], 0.5)
                conditions[key] = {"lhs": delta, "rhs": rhs}
                cross[(i1 + 1, i2 + 1)] = _compare(delta, rhs)
        labels["cross_" + tail] = cross

    return TailReport(
        upper=labels["upper"],
        lower=labels["lower"],
        cross_upper=labels["cross_upper"],
        cross_lower=labels["cross_lower"],
        conditions=conditions,
        notes=notes,
    )
