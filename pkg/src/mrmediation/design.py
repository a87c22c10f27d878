"""Declarative feature maps for the three working models.

A term is a tuple of factors whose product forms one feature column.  A
factor is ``"e"`` (exposure), ``"m"`` (mediator value), ``"m@k"`` (indicator
that the mediator equals k) or the name of a (possibly transformed)
covariate.  The intercept is controlled separately.

Covariate transforms are looked up by name in ``TRANSFORMS``; each maps the
raw covariate matrix to a new matrix and column names, so a working model can
be specified on a latent scale that is a known function of the observed one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .regression import LINK_KINDS

TARGETS = ("outcome", "mediator", "propensity")


def _identity_transform(x: np.ndarray, names: tuple[str, ...]):
    return x, names


def _kang_schafer_z(x: np.ndarray, names: tuple[str, ...]):
    """Invert X1=exp(Z1/2), X2=Z2/(1+exp(Z1))+10, X3=(Z1 Z3/25+0.6)^3, X4=(Z2+Z4+20)^2."""
    if x.shape[1] != 4:
        raise ConfigError("kang_schafer_z transform needs exactly four covariates")
    z1 = 2.0 * np.log(x[:, 0])
    z2 = (x[:, 1] - 10.0) * (1.0 + np.exp(z1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z3 = 25.0 * (np.cbrt(x[:, 2]) - 0.6) / z1
    z3 = np.where(z1 == 0, 0.0, z3)
    z4 = np.sqrt(x[:, 3]) - 20.0 - z2
    return np.column_stack([z1, z2, z3, z4]), ("z1", "z2", "z3", "z4")


TRANSFORMS: dict[str, Callable] = {
    "identity": _identity_transform,
    "kang_schafer_z": _kang_schafer_z,
}


def register_transform(name: str, func: Callable) -> None:
    """Make ``func(x, names) -> (matrix, names)`` available to specs as ``name``."""
    TRANSFORMS[name] = func


def _normalize_term(term) -> tuple[str, ...]:
    if isinstance(term, str):
        term = tuple(t for t in term.split(":") if t)
    term = tuple(str(f) for f in term)
    if not term:
        raise ConfigError("empty term; use intercept=True for a constant column")
    return term


@dataclass(frozen=True)
class DesignSpec:
    """Feature map and link for one working model.

    Parameters
    ----------
    target : {"outcome", "mediator", "propensity"}
    terms : sequence of terms
        Each term is a tuple of factors or a ``"a:b"`` string.
    link : str
        One of ``identity``, ``logit``, ``loglog``, ``cloglog``.
    intercept : bool
    transform : str
        Name of a covariate transform in ``TRANSFORMS``.
    score : {"likelihood", "residual"}
        Estimating function for a binary model with a log-log type link:
        the Bernoulli likelihood score (maximum likelihood) or the
        unweighted residual equation.  Both coincide for logit and identity.
    """

    target: str
    terms: tuple[tuple[str, ...], ...] = ()
    link: str = "identity"
    intercept: bool = True
    transform: str = "identity"
    score: str = "likelihood"

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}")
        if self.link not in LINK_KINDS:
            raise ConfigError(f"unknown link {self.link!r}")
        if self.score not in ("residual", "likelihood"):
            raise ConfigError(f"unknown score {self.score!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        terms = tuple(_normalize_term(t) for t in self.terms)
        if len(set(terms)) != len(terms):
            raise ConfigError(f"duplicate terms in {self.target} spec")
        for term in terms:
            has_m = any(f == "m" or f.startswith("m@") for f in term)
            if self.target != "outcome" and has_m:
                raise ConfigError(f"{self.target} features cannot depend on the mediator")
            if self.target == "propensity" and "e" in term:
                raise ConfigError("propensity features cannot depend on the exposure")
        if not terms and not self.intercept:
            raise ConfigError(f"{self.target} spec has no features")
        object.__setattr__(self, "terms", terms)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return (("1",) if self.intercept else ()) + tuple(":".join(t) for t in self.terms)

    @property
    def n_features(self) -> int:
        return len(self.terms) + int(self.intercept)

    def covariates(self, x: np.ndarray, x_names: tuple[str, ...]):
        """Apply the transform; returns (matrix, names)."""
        return TRANSFORMS[self.transform](np.asarray(x, dtype=float), tuple(x_names))

    def features(self, cov: np.ndarray, cov_names: tuple[str, ...], m=None, e=None) -> np.ndarray:
        """Feature matrix from already transformed covariates.

        ``m`` and ``e`` may be arrays or scalars; they are required only when a
        term uses them.
        """
        n = cov.shape[0]
        index = {name: j for j, name in enumerate(cov_names)}
        cols = [np.ones(n)] if self.intercept else []
        for term in self.terms:
            col = np.ones(n)
            for f in term:
                if f == "e":
                    if e is None:
                        raise ConfigError(f"term {':'.join(term)} needs the exposure")
                    col = col * np.broadcast_to(np.asarray(e, dtype=float), (n,))
                elif f == "m" or f.startswith("m@"):
                    if m is None:
                        raise ConfigError(f"term {':'.join(term)} needs the mediator")
                    mv = np.broadcast_to(np.asarray(m, dtype=float), (n,))
                    col = col * (mv if f == "m" else (mv == float(f[2:])).astype(float))
                elif f in index:
                    col = col * cov[:, index[f]]
                else:
                    raise ConfigError(f"unknown covariate {f!r} in {self.target} spec (have {list(cov_names)})")
            cols.append(col)
        return np.column_stack(cols) if cols else np.empty((n, 0))

    def replace(self, **changes) -> "DesignSpec":
        fields = dict(
            target=self.target, terms=self.terms, link=self.link,
            intercept=self.intercept, transform=self.transform, score=self.score,
        )
        fields.update(changes)
        return DesignSpec(**fields)

    def without(self, *terms) -> "DesignSpec":
        drop = {_normalize_term(t) for t in terms}
        return self.replace(terms=tuple(t for t in self.terms if t not in drop))

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "terms": [":".join(t) for t in self.terms],
            "link": self.link,
            "intercept": self.intercept,
            "transform": self.transform,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: dict, target: str | None = None) -> "DesignSpec":
        if not isinstance(data, dict):
            raise ConfigError("spec must be a JSON object")
        unknown = set(data) - {"target", "terms", "link", "intercept", "transform", "score"}
        if unknown:
            raise ConfigError(f"unknown spec keys {sorted(unknown)}")
        target = data.get("target", target)
        if target is None:
            raise ConfigError("spec is missing its target")
        default_link = "identity" if target == "outcome" else "logit"
        return cls(
            target=target,
            terms=tuple(data.get("terms", ())),
            link=data.get("link", default_link),
            intercept=bool(data.get("intercept", True)),
            transform=data.get("transform", "identity"),
            score=data.get("score", "likelihood"),
        )


@dataclass(frozen=True)
class NuisanceSpecs:
    outcome: DesignSpec
    mediator: DesignSpec
    propensity: DesignSpec

    def __post_init__(self):
        for name in TARGETS:
            if getattr(self, name).target != name:
                raise ConfigError(f"{name} slot holds a {getattr(self, name).target} spec")

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in TARGETS}

    @classmethod
    def from_dict(cls, data: dict) -> "NuisanceSpecs":
        missing = [t for t in TARGETS if t not in data]
        if missing:
            raise ConfigError(f"spec config is missing {missing}")
        return cls(*(DesignSpec.from_dict(data[t], t) for t in TARGETS))


def main_effects_specs(x_names, outcome_link: str = "identity", em_interaction: bool = True,
                       mediator_link: str = "logit") -> NuisanceSpecs:
    """Additive working models in all covariates (the default for ``analyze``)."""
    xs = tuple((name,) for name in x_names)
    y_terms = xs + (("e",), ("m",)) + ((("e", "m"),) if em_interaction else ())
    return NuisanceSpecs(
        DesignSpec("outcome", y_terms, outcome_link),
        DesignSpec("mediator", xs + (("e",),), mediator_link),
        DesignSpec("propensity", xs, "logit"),
    )


def _all_products(factors) -> list[tuple[str, ...]]:
    out = [()]
    for f in factors:
        out = out + [t + (f,) for t in out]
    return [t for t in out if t]


def saturated_specs(x_names, support_size: int = 2, outcome_link: str = "identity") -> NuisanceSpecs:
    """Fully interacted specs for binary covariates and a finite mediator.

    With every cell occupied these reproduce the empirical conditional means
    and frequencies exactly.
    """
    xs = list(x_names)
    m_factors = ["m"] if support_size == 2 else [f"m@{k}" for k in range(1, support_size)]
    x_terms = _all_products(xs)
    ex_terms = _all_products(["e"] + xs)
    y_terms = list(ex_terms)
    for mf in m_factors:
        y_terms += [(mf,)] + [t + (mf,) for t in ex_terms]
    return NuisanceSpecs(
        DesignSpec("outcome", tuple(y_terms), outcome_link),
        DesignSpec("mediator", tuple(ex_terms), "logit"),
        DesignSpec("propensity", tuple(x_terms), "logit"),
    )
