"""Working-model fits for the outcome, mediator and propensity.

Every downstream estimator reads fitted quantities through ``NuisanceValues``:
arrays indexed by exposure level, row and mediator value, evaluated at the
observed covariates.  Because the mediator has finite support, the
functional ``eta(e, e*, x) = sum_m E(Y | x, m, e) f(m | e*, x)`` is a finite sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import MediationDataset
from .design import DesignSpec, NuisanceSpecs
from .errors import ConfigError, ConvergenceError, ModelFitError, ValidationError
from .regression import (
    DEFAULT_TOL,
    FitResult,
    LinkFunction,
    fit,
    fit_multinomial,
    multinomial_probabilities,
)

MODEL_ORDER = ("mediator", "propensity", "outcome")


@dataclass(frozen=True)
class NuisanceValues:
    """Fitted quantities at a set of covariate rows.

    Attributes
    ----------
    mu : (2, n, K)
        ``mu[e, i, m]`` is the outcome regression at (x_i, m, e).
    fm : (2, n, K)
        ``fm[e, i, m]`` is the mediator probability f(m | e, x_i).
    fe : (2, n)
        ``fe[e, i]`` is the propensity f(e | x_i).
    log_fe : (2, n)
        Logs of ``fe`` computed without underflow.
    """

    mu: np.ndarray
    fm: np.ndarray
    fe: np.ndarray
    log_fe: np.ndarray

    @property
    def n(self) -> int:
        return self.fe.shape[1]

    def eta(self, e: int, e_star: int) -> np.ndarray:
        return eta_from_values(self.mu, self.fm, e, e_star)


def eta_from_values(mu: np.ndarray, fm: np.ndarray, e: int, e_star: int) -> np.ndarray:
    return np.sum(mu[e] * fm[e_star], axis=-1)


def _linear_predictor(result: FitResult, h: np.ndarray) -> np.ndarray:
    return h @ result.coefficients


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Fitted outcome, mediator and propensity models.

    ``values(d)`` evaluates every fitted quantity at the rows of ``d`` and is
    cached for the most recently used dataset.
    """

    specs: NuisanceSpecs
    outcome: FitResult
    mediator: FitResult
    propensity: FitResult
    support_size: int
    x_names: tuple[str, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # fitted quantities -------------------------------------------------

    def outcome_mean(self, x: np.ndarray, m, e) -> np.ndarray:
        spec = self.specs.outcome
        cov, names = spec.covariates(x, self.x_names)
        h = spec.features(cov, names, m=m, e=e)
        return LinkFunction(spec.link).forward(_linear_predictor(self.outcome, h))

    def mediator_probs(self, x: np.ndarray, e) -> np.ndarray:
        """(n, K) array of f(m | e, x)."""
        spec = self.specs.mediator
        cov, names = spec.covariates(x, self.x_names)
        h = spec.features(cov, names, e=e)
        if self.support_size > 2:
            return multinomial_probabilities(h, self.mediator.coefficients, self.support_size)
        link = LinkFunction(spec.link)
        eta = _linear_predictor(self.mediator, h)
        return np.column_stack([link.complement(eta), link.forward(eta)])

    def propensity_probs(self, x: np.ndarray):
        """Returns (fe, log_fe), each (2, n)."""
        spec = self.specs.propensity
        cov, names = spec.covariates(x, self.x_names)
        eta = _linear_predictor(self.propensity, spec.features(cov, names))
        link = LinkFunction(spec.link)
        fe = np.vstack([link.complement(eta), link.forward(eta)])
        log_fe = np.vstack([link.log_complement(eta), link.log_forward(eta)])
        return fe, log_fe

    def values_at(self, x: np.ndarray) -> NuisanceValues:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, k = x.shape[0], self.support_size
        mu = np.empty((2, n, k))
        fm = np.empty((2, n, k))
        for e in (0, 1):
            fm[e] = self.mediator_probs(x, e)
            for m in range(k):
                mu[e, :, m] = self.outcome_mean(x, m, e)
        fe, log_fe = self.propensity_probs(x)
        return NuisanceValues(mu, fm, fe, log_fe)

    def values(self, d: MediationDataset) -> NuisanceValues:
        hit = self._cache.get("values")
        if hit is not None and hit[0] is d:
            return hit[1]
        v = self.values_at(d.x)
        self._cache["values"] = (d, v)
        return v

    # parameter vector and scores --------------------------------------

    @property
    def coefficients(self) -> np.ndarray:
        """Stacked coefficients in (mediator, propensity, outcome) order."""
        return np.concatenate([getattr(self, name).coefficients for name in MODEL_ORDER])

    def blocks(self) -> list[slice]:
        out, start = [], 0
        for name in MODEL_ORDER:
            q = getattr(self, name).coefficients.shape[0]
            out.append(slice(start, start + q))
            start += q
        return out

    def with_coefficients(self, beta: np.ndarray) -> "NuisanceFit":
        beta = np.asarray(beta, dtype=float)
        if beta.shape != self.coefficients.shape:
            raise ValueError("coefficient vector has the wrong length")
        parts = {}
        for name, sl in zip(MODEL_ORDER, self.blocks()):
            old = getattr(self, name)
            parts[name] = FitResult(beta[sl].copy(), old.converged, old.iterations, old.max_abs_score, old.link)
        return NuisanceFit(self.specs, parts["outcome"], parts["mediator"], parts["propensity"],
                           self.support_size, self.x_names)

    def _design(self, d: MediationDataset, name: str) -> np.ndarray:
        spec = getattr(self.specs, name)
        cov, names = spec.covariates(d.x, d.x_names)
        if name == "outcome":
            return spec.features(cov, names, m=d.m, e=d.e)
        if name == "mediator":
            return spec.features(cov, names, e=d.e)
        return spec.features(cov, names)

    def _response(self, d: MediationDataset, name: str) -> np.ndarray:
        return {"outcome": d.y, "mediator": d.m, "propensity": d.e}[name].astype(float)

    def scores(self, d: MediationDataset) -> np.ndarray:
        """Per-row estimating functions of all three models, (n, q), stacked in model order."""
        cols = []
        for name in MODEL_ORDER:
            h = self._design(d, name)
            y = self._response(d, name)
            res = getattr(self, name)
            if name == "mediator" and self.support_size > 2:
                k = self.support_size
                p = multinomial_probabilities(h, res.coefficients, k)
                onehot = np.eye(k)[d.m][:, 1:]
                r = onehot - p[:, 1:]
                cols.append((r[:, :, None] * h[:, None, :]).reshape(d.n, -1))
                continue
            spec = getattr(self.specs, name)
            link = LinkFunction(spec.link)
            eta = h @ res.coefficients
            r = y - link.forward(eta)
            if spec.score == "likelihood" and link.kind in ("loglog", "cloglog"):
                var = np.maximum(link.forward(eta) * link.complement(eta), 1e-300)
                r = r * link.derivative(eta) / var
            cols.append(h * r[:, None])
        return np.hstack(cols)

    def score_jacobian(self, d: MediationDataset) -> np.ndarray:
        """``P_n dS/dbeta'`` for the stacked scores (block diagonal)."""
        q = self.coefficients.shape[0]
        jac = np.zeros((q, q))
        for name, sl in zip(MODEL_ORDER, self.blocks()):
            h = self._design(d, name)
            res = getattr(self, name)
            spec = getattr(self.specs, name)
            if name == "mediator" and self.support_size > 2:
                k = self.support_size
                p = multinomial_probabilities(h, res.coefficients, k)
                qq = h.shape[1]
                block = np.empty((k - 1, qq, k - 1, qq))
                for a in range(1, k):
                    for b in range(1, k):
                        c = p[:, a] * ((a == b) - p[:, b])
                        block[a - 1, :, b - 1, :] = -(h.T @ (h * c[:, None])) / d.n
                jac[sl, sl] = block.reshape((k - 1) * qq, (k - 1) * qq)
            elif spec.score == "likelihood" and spec.link in ("loglog", "cloglog"):
                jac[sl, sl] = _numeric_jacobian(self, d, name, sl)
            else:
                dmu = LinkFunction(spec.link).derivative(h @ res.coefficients)
                jac[sl, sl] = -(h.T @ (h * dmu[:, None])) / d.n
        return jac


def _numeric_jacobian(nf: NuisanceFit, d: MediationDataset, name: str, sl: slice) -> np.ndarray:
    beta = nf.coefficients
    q = sl.stop - sl.start
    out = np.empty((q, q))
    for j in range(q):
        step = 1e-6 * (1.0 + abs(beta[sl.start + j]))
        bp, bm = beta.copy(), beta.copy()
        bp[sl.start + j] += step
        bm[sl.start + j] -= step
        sp = nf.with_coefficients(bp).scores(d)[:, sl].mean(axis=0)
        sm = nf.with_coefficients(bm).scores(d)[:, sl].mean(axis=0)
        out[:, j] = (sp - sm) / (2 * step)
    return out


def _fit_one(name: str, spec: DesignSpec, h, y, support_size: int, weights=None, tolerance=DEFAULT_TOL):
    try:
        if name == "mediator" and support_size > 2:
            if spec.link != "logit":
                raise ConfigError("a mediator with more than two levels requires the logit link")
            return fit_multinomial(h, y, support_size, weights=weights, tolerance=tolerance)
        return fit(h, y, spec.link, weights=weights, tolerance=tolerance, score=spec.score)
    except ConvergenceError as exc:
        raise ModelFitError(name, exc) from exc


def fit_nuisances(d: MediationDataset, specs: NuisanceSpecs, tolerance: float = DEFAULT_TOL) -> NuisanceFit:
    """Fit the three working models on all rows of ``d``.

    Raises ``ModelFitError`` naming the failing model when a fit does not
    converge or its design is singular.
    """
    if specs.outcome.link != "identity" and np.any((d.y < 0) | (d.y > 1)):
        raise ValidationError(f"outcome link {specs.outcome.link} needs outcomes in [0, 1]")
    k = d.mediator_support_size
    results = {}
    for name in MODEL_ORDER:
        spec = getattr(specs, name)
        cov, names = spec.covariates(d.x, d.x_names)
        if name == "outcome":
            h = spec.features(cov, names, m=d.m, e=d.e)
            y = d.y
        elif name == "mediator":
            h = spec.features(cov, names, e=d.e)
            y = d.m.astype(float)
        else:
            h = spec.features(cov, names)
            y = d.e.astype(float)
        results[name] = _fit_one(name, spec, h, y, k, tolerance=tolerance)
    return NuisanceFit(specs, results["outcome"], results["mediator"], results["propensity"], k, d.x_names)


def eta(e: int, e_star: int, x, fit: NuisanceFit) -> np.ndarray | float:
    """``sum_m E(Y | x, m, e) f(m | e*, x)`` at one row or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    v = fit.values_at(x)
    out = v.eta(e, e_star)
    return float(out[0]) if x.ndim == 1 else out


def mediator_density(m: int, e: int, x, fit: NuisanceFit):
    x = np.asarray(x, dtype=float)
    out = fit.mediator_probs(np.atleast_2d(x), e)[:, m]
    return float(out[0]) if x.ndim == 1 else out


def propensity(e: int, x, fit: NuisanceFit):
    x = np.asarray(x, dtype=float)
    out = fit.propensity_probs(np.atleast_2d(x))[0][e]
    return float(out[0]) if x.ndim == 1 else out
