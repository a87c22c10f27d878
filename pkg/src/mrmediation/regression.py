"""Weighted estimating-equation regression.

``fit`` solves ``0 = sum_i w_i h_i (y_i - g^{-1}(beta' h_i))`` by Newton
iterations (iteratively reweighted least squares) with step halving.  For
the identity and logit links this is the normal/likelihood equation; for the
log-log links it is the residual-form estimating equation, which is what the
multiply robust identities rely on.  ``score="likelihood"`` switches binary
links to the Bernoulli likelihood score instead.

Convergence is judged on the column-standardized mean score
``max_j |sum_i w_i h_ij r_i| / (sum_i w_i * s_j)`` where ``s_j`` is the
weighted RMS of column j, so the tolerance means the same thing regardless
of covariate units or sample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit, logit, logsumexp

from .errors import NonConvergenceError, SingularDesignError

LINK_KINDS = ("identity", "logit", "loglog", "cloglog")

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
RANK_THRESHOLD = 1e-12
# largest |eta| at which the log-log tails still evaluate without overflow
_ETA_CLIP = 700.0


@dataclass(frozen=True)
class LinkFunction:
    """Mean function ``forward = g^{-1}`` of a working regression model.

    ``loglog`` is ``exp(-exp(-eta))``; ``cloglog`` is ``1 - exp(-exp(eta))``.
    """

    kind: str = "identity"

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link {self.kind!r}; choose from {LINK_KINDS}")

    @property
    def bounded(self) -> bool:
        return self.kind != "identity"

    def forward(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "identity":
            return eta
        if self.kind == "logit":
            return expit(eta)
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        if self.kind == "loglog":
            return np.exp(-np.exp(-eta))
        return -np.expm1(-np.exp(eta))

    def complement(self, eta):
        """``1 - forward(eta)`` without cancellation in the upper tail."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "identity":
            return 1.0 - eta
        if self.kind == "logit":
            return expit(-eta)
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        if self.kind == "loglog":
            return -np.expm1(-np.exp(-eta))
        return np.exp(-np.exp(eta))

    def log_forward(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "logit":
            return log_expit(eta)
        if self.kind == "loglog":
            return -np.exp(-np.clip(eta, -_ETA_CLIP, _ETA_CLIP))
        with np.errstate(divide="ignore"):
            return np.log(self.forward(eta))

    def log_complement(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "logit":
            return log_expit(-eta)
        if self.kind == "cloglog":
            return -np.exp(np.clip(eta, -_ETA_CLIP, _ETA_CLIP))
        with np.errstate(divide="ignore"):
            return np.log(self.complement(eta))

    def inverse(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "identity":
            return mu
        if self.kind == "logit":
            return logit(mu)
        if self.kind == "loglog":
            return -np.log(-np.log(mu))
        return np.log(-np.log1p(-mu))

    def derivative(self, eta):
        """d mean / d eta."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "identity":
            return np.ones_like(eta)
        if self.kind == "logit":
            return expit(eta) * expit(-eta)
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        if self.kind == "loglog":
            return np.exp(-eta - np.exp(-eta))
        return np.exp(eta - np.exp(eta))


def _log_mean_curvature(a):
    """Second derivative in eta of ``log(1 - exp(-a))`` with ``a = exp(+-eta)``.

    Written as ``q (1 - a - q)`` with ``q = a / expm1(a)``, which is stable
    for both small and large ``a`` and is never positive.
    """
    with np.errstate(over="ignore"):
        q = a / np.expm1(a)
    return q * (1.0 - a - q)


def bernoulli_curvature(link: LinkFunction, eta, y) -> np.ndarray:
    """Observed information ``-d^2/d eta^2`` of the Bernoulli log-likelihood.

    Nonnegative for the log-log links, whose log-likelihoods are concave in eta.
    """
    eta = np.clip(np.asarray(eta, dtype=float), -_ETA_CLIP, _ETA_CLIP)
    if link.kind == "cloglog":
        a = np.exp(eta)
        return -y * _log_mean_curvature(a) + (1.0 - y) * a
    if link.kind == "loglog":
        a = np.exp(-eta)
        return y * a - (1.0 - y) * _log_mean_curvature(a)
    raise ValueError(f"no curvature formula for the {link.kind} link")


IDENTITY = LinkFunction("identity")
LOGIT = LinkFunction("logit")


def as_link(link) -> LinkFunction:
    return link if isinstance(link, LinkFunction) else LinkFunction(link)


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_score: float
    link: str = "identity"


def _check_rank(h: np.ndarray, what: str = "design") -> None:
    if h.shape[0] < h.shape[1]:
        raise SingularDesignError(f"{what} has {h.shape[0]} usable rows for {h.shape[1]} columns")
    r = linalg.qr(h, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size and (diag[0] == 0 or diag[-1] <= RANK_THRESHOLD * diag[0]):
        raise SingularDesignError(f"{what} is rank deficient (relative pivot {diag[-1] / max(diag[0], 1e-300):.2e})")


def _prepare(design, response, weights):
    h = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).reshape(-1)
    if h.ndim != 2 or h.shape[0] != y.shape[0]:
        raise ValueError(f"design shape {h.shape} does not match response length {y.shape[0]}")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape != y.shape:
            raise ValueError("weights must have one entry per row")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
    keep = w > 0
    h, y, w = h[keep], y[keep], w[keep]
    if y.size == 0:
        raise SingularDesignError("no rows with positive weight")
    w = w / w.sum()
    scale = np.sqrt(w @ (h * h))
    if np.any(scale == 0):
        raise SingularDesignError("design has a column that is identically zero on the weighted support")
    hs = h / scale
    _check_rank(hs * np.sqrt(w)[:, None])
    return hs, y, w, scale


def fit(
    design,
    response,
    link="identity",
    weights=None,
    tolerance: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    score: str = "residual",
) -> FitResult:
    """Solve the weighted estimating equation for a single-index regression.

    Parameters
    ----------
    design : (n, q) array
        Feature matrix ``h``; include the intercept column yourself.
    response : (n,) array
        Must lie in [0, 1] for the bounded links.
    link : LinkFunction or str
    weights : (n,) array, optional
        Nonnegative; zero-weight rows are dropped.
    tolerance : float
        Bound on the standardized score (see module docstring).
    max_iter : int
    score : {"residual", "likelihood"}
        Estimating function. They coincide for identity and logit links.

    Raises
    ------
    SingularDesignError
        The weighted design is rank deficient.
    NonConvergenceError
        Iterations exhausted, including divergence under separation.
    """
    link = as_link(link)
    if score not in ("residual", "likelihood"):
        raise ValueError(f"unknown score {score!r}")
    hs, y, w, scale = _prepare(design, response, weights)
    if link.bounded and (np.any(y < 0) or np.any(y > 1)):
        raise ValueError(f"response must lie in [0, 1] for the {link.kind} link")
    likelihood = score == "likelihood" and link.kind in ("loglog", "cloglog")

    def evaluate(beta):
        eta = hs @ beta
        mu = link.forward(eta)
        dmu = link.derivative(eta)
        if likelihood:
            # Newton on the observed information; Fisher scoring can stall
            # when the model is misspecified
            var = np.maximum(mu * link.complement(eta), 1e-300)
            u = hs.T @ (w * (y - mu) * dmu / var)
            jw = w * bernoulli_curvature(link, eta, y)
        else:
            u = hs.T @ (w * (y - mu))
            jw = w * dmu
        return u, jw, merit(eta, mu, u)

    # line-search merit: the objective whose stationary point is sought when
    # there is one, otherwise the squared score
    if link.kind == "identity":
        def merit(eta, mu, u):
            return float(w @ (y - mu) ** 2)
    elif likelihood or link.kind == "logit":
        def merit(eta, mu, u):
            return -float(w @ (y * link.log_forward(eta) + (1 - y) * link.log_complement(eta)))
    else:
        def merit(eta, mu, u):
            return float(u @ u)

    if link.bounded:
        start = link.inverse((y + 0.5) / 2.0)
        beta = linalg.lstsq(hs * np.sqrt(w)[:, None], start * np.sqrt(w))[0]
    else:
        beta = np.zeros(hs.shape[1])
    u, jw, obj = evaluate(beta)
    norm = np.max(np.abs(u))
    step_tol = 1e-7
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        jac = hs.T @ (hs * jw[:, None])
        try:
            step = linalg.solve(jac, u, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(jac, u)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            u_c, jw_c, obj_c = evaluate(cand)
            slack = 1e-13 * (1.0 + abs(obj))
            if np.isfinite(obj_c) and (obj_c <= obj + slack or t < 2.0**-30):
                break
            t *= 0.5
        # judged on the full Newton step: under separation it stays O(1) forever
        moved = np.max(np.abs(step))
        if np.isfinite(obj_c) and (obj_c <= obj + slack or not np.isfinite(obj)):
            beta, u, jw, obj = cand, u_c, jw_c, obj_c
            norm = np.max(np.abs(u))
        if norm <= tolerance and moved <= step_tol * (1.0 + np.max(np.abs(beta))):
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"{link.kind} fit did not converge in {max_iter} iterations (score {norm:.3e})",
            last_iterate=beta / scale,
            iterations=iterations,
        )
    # a couple of extra Newton steps drive the score to rounding level
    for _ in range(2):
        jac = hs.T @ (hs * jw[:, None])
        try:
            cand = beta + linalg.solve(jac, u, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            break
        u_c, jw_c, obj_c = evaluate(cand)
        norm_c = np.max(np.abs(u_c))
        if not norm_c < norm:
            break
        beta, u, jw, norm = cand, u_c, jw_c, norm_c
    return FitResult(beta / scale, True, iterations, float(norm), link.kind)


def multinomial_probabilities(design: np.ndarray, coefficients: np.ndarray, k: int) -> np.ndarray:
    """Baseline-category logit probabilities, shape (n, k); category 0 is the baseline."""
    beta = np.asarray(coefficients, dtype=float).reshape(k - 1, -1)
    scores = np.column_stack([np.zeros(design.shape[0]), design @ beta.T])
    return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


def fit_multinomial(
    design,
    response,
    k: int,
    weights=None,
    tolerance: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FitResult:
    """Baseline-category multinomial logistic regression by Newton's method.

    Coefficients are returned flattened, category-major: ``(k - 1) * q``.
    """
    hs, y, w, scale = _prepare(design, response, weights)
    if np.any((y != np.round(y)) | (y < 0) | (y > k - 1)):
        raise ValueError(f"response must be an integer in 0..{k - 1}")
    n, q = hs.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y.astype(int)] = 1.0

    def evaluate(beta):
        p = multinomial_probabilities(hs, beta, k)
        resid = (onehot - p)[:, 1:]
        u = (hs.T @ (w[:, None] * resid)).T.reshape(-1)
        return u, p

    def hessian(p):
        blocks = np.empty((k - 1, q, k - 1, q))
        for a in range(1, k):
            for b in range(1, k):
                c = p[:, a] * ((a == b) - p[:, b])
                blocks[a - 1, :, b - 1, :] = hs.T @ (hs * (w * c)[:, None])
        return blocks.reshape((k - 1) * q, (k - 1) * q)

    beta = np.zeros((k - 1) * q)
    u, p = evaluate(beta)
    norm = np.max(np.abs(u))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        step = linalg.lstsq(hessian(p), u)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            u_c, p_c = evaluate(cand)
            norm_c = np.max(np.abs(u_c))
            if norm_c < norm or t < 2.0**-30:
                break
            t *= 0.5
        moved = np.max(np.abs(step))
        if norm_c <= norm:
            beta, u, p, norm = cand, u_c, p_c, norm_c
        if norm <= tolerance and moved <= 1e-7 * (1.0 + np.max(np.abs(beta))):
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"multinomial fit did not converge in {max_iter} iterations (score {norm:.3e})",
            last_iterate=(beta.reshape(k - 1, q) / scale).reshape(-1),
            iterations=iterations,
        )
    return FitResult((beta.reshape(k - 1, q) / scale).reshape(-1), True, iterations, float(norm), "logit")


def predict_mean(result: FitResult, design_row, link=None) -> float:
    """``g^{-1}(beta' h)`` for a single feature row."""
    link = as_link(link or result.link)
    row = np.asarray(design_row, dtype=float).reshape(-1)
    if row.shape[0] != result.coefficients.shape[0]:
        raise ValueError(f"row has {row.shape[0]} features, fit has {result.coefficients.shape[0]} coefficients")
    return float(link.forward(row @ result.coefficients))
