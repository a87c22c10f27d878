"""Simulation designs, ground truth and the Monte Carlo harness.

Two designs are provided:

``S3``  binary covariates plus a Gaussian covariate, logistic exposure and
        mediator models with an X1*X3 interaction, and a linear outcome with
        an exposure-mediator interaction.
``S6``  four latent standard normals Z observed only through the nonlinear
        transforms X of the Kang and Schafer construction, which makes the
        X-based working models nearly right yet produces extreme weights.

Replicate ``r`` of a run with seed ``s`` draws its data from the counter-based
stream ``Philox(SeedSequence([s, r]))``, so results do not depend on how the
replicates are distributed over worker processes, and every misspecification
row of a table sees the same datasets.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import MediationDataset
from .design import DesignSpec, NuisanceSpecs
from .errors import ConfigError, MediationError
from .estimators import delta_estimate
from .inference import sandwich_variance
from .nuisance import fit_nuisances
from .pipeline import ALL_KINDS, theta_value

SCENARIOS = ("S3", "S6")
YZ_MODES = ("as_printed", "kang_schafer")
MODEL_FLAGS = ("Y", "E", "M")
FAILURE_FLAG_RATE = 0.05

# rows of the reference tables, in table order
TABLE_ROWS = {
    "S3": ((), ("Y",), ("M",), ("E",)),
    "S6": ((), ("Y",), ("M",), ("E",), ("Y", "E"), ("Y", "M"), ("E", "M"), ("Y", "E", "M")),
}
ESTIMATOR_LABELS = {
    "ym": "M_ym", "ye": "M_ye", "em": "M_em", "triply": "M_union",
    "dag1": "M_union_dag1", "dag2": "M_union_dag2", "doubly": "M_doubly",
}


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


# data generators ------------------------------------------------------------

S3_E_COEF = (0.4, 1.0, -1.0, 0.1, -1.5)  # 1, X1, X2, X3, X1X3
S3_M_COEF = (0.5, -1.0, 0.5, -0.9, 1.0, -1.5)  # 1, X1, X2, X3, E, X1X3
S3_Y_COEF = (1.0, 0.2, 0.3, 1.4, -2.5, -3.5, 5.0)  # 1, X1, X2, X3, E, M, EM


def _s3_mediator_prob(x1, x2, x3, e):
    a = S3_M_COEF
    return expit(a[0] + a[1] * x1 + a[2] * x2 + a[3] * x3 + a[4] * e + a[5] * x1 * x3)


def _s3_outcome_mean(x1, x2, x3, e, m):
    b = S3_Y_COEF
    return b[0] + b[1] * x1 + b[2] * x2 + b[3] * x3 + b[4] * e + b[5] * m + b[6] * e * m


def _s3_x3_mean(x1, x2):
    return -0.024 - 0.4 * x1 + 0.4 * x2


def generate_s3(n: int, rng: np.random.Generator) -> MediationDataset:
    """Draw ``n`` records from the S3 design."""
    if n < 1:
        raise ValueError("n must be positive")
    x1 = (rng.random(n) < 0.4).astype(float)
    x2 = (rng.random(n) < 0.3 + 0.4 * x1).astype(float)
    x3 = _s3_x3_mean(x1, x2) + rng.standard_normal(n)
    a = S3_E_COEF
    pe = expit(a[0] + a[1] * x1 + a[2] * x2 + a[3] * x3 + a[4] * x1 * x3)
    e = (rng.random(n) < pe).astype(float)
    m = (rng.random(n) < _s3_mediator_prob(x1, x2, x3, e)).astype(float)
    y = _s3_outcome_mean(x1, x2, x3, e, m) + rng.standard_normal(n)
    return MediationDataset(y, e, m, np.column_stack([x1, x2, x3]), ("x1", "x2", "x3"))


def s6_covariates(z: np.ndarray) -> np.ndarray:
    z1, z2, z3, z4 = z.T
    return np.column_stack([
        np.exp(z1 / 2.0),
        z2 / (1.0 + np.exp(z1)) + 10.0,
        (z1 * z3 / 25.0 + 0.6) ** 3,
        (z2 + z4 + 20.0) ** 2,
    ])


def _s6_mediator_lin(z, e):
    return 0.5 - z[:, 0] + 0.5 * z[:, 1] - 0.9 * z[:, 2] + z[:, 3] - 1.5 * e


def _s6_outcome_z_part(z, yz_mode):
    if yz_mode == "as_printed":
        return 27.4 * z[:, 0] + 2 * 13.7 * z[:, 2]
    if yz_mode == "kang_schafer":
        return 27.4 * z[:, 0] + 13.7 * (z[:, 1] + z[:, 2] + z[:, 3])
    raise ConfigError(f"unknown yz_coefficient_mode {yz_mode!r}")


def generate_s6(n: int, rng: np.random.Generator, yz_mode: str = "as_printed") -> MediationDataset:
    """Draw ``n`` records from the S6 design; the latent Z is kept in ``latent``.

    The exposure probability is ``1 / (1 + exp(Z1 - 0.5 Z2 + 0.25 Z3 + 0.1 Z4))``.
    ``yz_mode="as_printed"`` uses the outcome mean
    ``210 + 27.4 Z1 + 13.7 Z3 + 13.7 Z3 + M + E``; ``"kang_schafer"`` uses
    ``210 + 27.4 Z1 + 13.7 (Z2 + Z3 + Z4) + M + E``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if yz_mode not in YZ_MODES:
        raise ConfigError(f"unknown yz_coefficient_mode {yz_mode!r}")
    z = rng.standard_normal((n, 4))
    pe = expit(-(z[:, 0] - 0.5 * z[:, 1] + 0.25 * z[:, 2] + 0.1 * z[:, 3]))
    e = (rng.random(n) < pe).astype(float)
    m = (rng.random(n) < expit(_s6_mediator_lin(z, e))).astype(float)
    y = 210.0 + _s6_outcome_z_part(z, yz_mode) + m + e + rng.standard_normal(n)
    return MediationDataset(y, e, m, s6_covariates(z), ("x1", "x2", "x3", "x4"), latent={"z": z})


# working models -------------------------------------------------------------


def misspecified_specs(scenario: str, misspecify=(), wrong_mediator_link: str = "cloglog") -> NuisanceSpecs:
    """Working models for a scenario with the models in ``misspecify`` made wrong.

    S3: a wrong exposure model drops X1*X3, a wrong mediator model swaps the
    logit link for ``wrong_mediator_link``, a wrong outcome model drops E*M.
    S6: wrong models use the observed X in place of the latent Z.
    """
    flags = set(misspecify)
    unknown = flags - set(MODEL_FLAGS)
    if unknown:
        raise ConfigError(f"unknown misspecification flag(s) {sorted(unknown)}")
    if scenario == "S3":
        xs = (("x1",), ("x2",), ("x3",))
        prop = DesignSpec("propensity", xs + (("x1", "x3"),), "logit")
        med = DesignSpec("mediator", xs + (("e",), ("x1", "x3")), "logit")
        out = DesignSpec("outcome", xs + (("e",), ("m",), ("e", "m")), "identity")
        if "E" in flags:
            prop = prop.without("x1:x3")
        if "M" in flags:
            med = med.replace(link=wrong_mediator_link)
        if "Y" in flags:
            out = out.without("e:m")
        return NuisanceSpecs(out, med, prop)
    if scenario == "S6":
        def cov(wrong):
            if wrong:
                return "identity", tuple((f"x{j}",) for j in range(1, 5))
            return "kang_schafer_z", tuple((f"z{j}",) for j in range(1, 5))

        tr, terms = cov("Y" in flags)
        out = DesignSpec("outcome", terms + (("m",), ("e",)), "identity", transform=tr)
        tr, terms = cov("M" in flags)
        med = DesignSpec("mediator", terms + (("e",),), "logit", transform=tr)
        tr, terms = cov("E" in flags)
        prop = DesignSpec("propensity", terms, "logit", transform=tr)
        return NuisanceSpecs(out, med, prop)
    raise ConfigError(f"unknown scenario {scenario!r}")


# ground truth ---------------------------------------------------------------


@dataclass(frozen=True)
class TrueEffects:
    theta0: float
    delta0: float
    delta1: float
    NDE: float
    NIE: float
    oracle_replicates: int
    oracle_se: float
    provenance: str

    def get(self, estimand: str) -> float:
        return float(getattr(self, estimand))

    def to_dict(self) -> dict:
        return asdict(self)


def _truth(theta0, delta0, delta1, reps, se, provenance) -> TrueEffects:
    return TrueEffects(float(theta0), float(delta0), float(delta1), float(theta0 - delta0),
                       float(delta1 - theta0), int(reps), float(se), provenance)


def _gauss_hermite(nodes: int = 120):
    t, w = np.polynomial.hermite.hermgauss(nodes)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


def _s3_truth_quadrature() -> TrueEffects:
    u, w = _gauss_hermite()
    means = np.zeros(3)  # theta0, delta0, delta1
    for x1, p1 in ((0.0, 0.6), (1.0, 0.4)):
        q = 0.3 + 0.4 * x1
        for x2, p2 in ((0.0, 1 - q), (1.0, q)):
            x3 = _s3_x3_mean(x1, x2) + u
            pm = [_s3_mediator_prob(x1, x2, x3, e) for e in (0, 1)]

            def mean_y(e, e_star):
                return (1 - pm[e_star]) * _s3_outcome_mean(x1, x2, x3, e, 0) + pm[e_star] * _s3_outcome_mean(
                    x1, x2, x3, e, 1)

            vals = np.array([mean_y(1, 0), mean_y(0, 0), mean_y(1, 1)]) @ w
            means += p1 * p2 * vals
    return _truth(*means, 0, 0.0, "quadrature")


def _s6_truth_quadrature(yz_mode: str) -> TrueEffects:
    # the mediator's linear predictor is Gaussian with sd sqrt(1 + .25 + .81 + 1)
    u, w = _gauss_hermite()
    sd = math.sqrt(1.0 + 0.25 + 0.81 + 1.0)
    pm = [float(expit(0.5 - 1.5 * e + sd * u) @ w) for e in (0, 1)]
    _s6_outcome_z_part(np.zeros((1, 4)), yz_mode)  # validates the mode
    return _truth(211.0 + pm[0], 210.0 + pm[0], 211.0 + pm[1], 0, 0.0, "quadrature")


def true_effects(scenario: str, oracle_replicates: int = 2_000_000, seed: int = 0,
                 yz_mode: str = "as_printed", method: str = "monte_carlo") -> TrueEffects:
    """Counterfactual means of the structural model.

    ``method="monte_carlo"`` draws covariates, averages the counterfactual
    outcome means with the mediator integrated out exactly given the
    covariates, and reports the Monte Carlo standard error of theta0.
    ``method="quadrature"`` integrates the remaining Gaussian dimension with
    Gauss-Hermite quadrature and is exact to rounding.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if method == "quadrature":
        return _s3_truth_quadrature() if scenario == "S3" else _s6_truth_quadrature(yz_mode)
    if method != "monte_carlo":
        raise ConfigError(f"unknown truth method {method!r}")
    rng = replicate_rng(seed, 2**32 - 1)
    chunks = []
    left = int(oracle_replicates)
    while left > 0:
        k = min(left, 500_000)
        left -= k
        if scenario == "S3":
            x1 = (rng.random(k) < 0.4).astype(float)
            x2 = (rng.random(k) < 0.3 + 0.4 * x1).astype(float)
            x3 = _s3_x3_mean(x1, x2) + rng.standard_normal(k)
            pm = [_s3_mediator_prob(x1, x2, x3, e) for e in (0, 1)]

            def mean_y(e, e_star):
                return (1 - pm[e_star]) * _s3_outcome_mean(x1, x2, x3, e, 0) + pm[e_star] * _s3_outcome_mean(
                    x1, x2, x3, e, 1)
        else:
            z = rng.standard_normal((k, 4))
            base = 210.0 + _s6_outcome_z_part(z, yz_mode)
            pm = [expit(_s6_mediator_lin(z, e)) for e in (0, 1)]

            def mean_y(e, e_star):
                return base + e + pm[e_star]
        chunks.append(np.column_stack([mean_y(1, 0), mean_y(0, 0), mean_y(1, 1)]))
    draws = np.vstack(chunks)
    means = draws.mean(axis=0)
    se = float(draws[:, 0].std(ddof=1) / math.sqrt(draws.shape[0]))
    return _truth(*means, draws.shape[0], se, "monte_carlo")


# Monte Carlo harness --------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """One row of a simulation table.

    ``target`` is the estimand reported for every estimator: ``NDE`` means
    each theta0 estimator minus the doubly robust estimate of delta0.
    """

    scenario: str = "S3"
    n: int = 600
    replicates: int = 1000
    seed: int = 20240101
    misspecify: tuple[str, ...] = ()
    estimators: tuple[str, ...] = ("ym", "ye", "em", "triply")
    yz_coefficient_mode: str = "as_printed"
    target: str | None = None
    wrong_mediator_link: str = "cloglog"
    coverage: bool = False
    level: float = 0.95

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if int(self.n) < 2 or int(self.replicates) < 1:
            raise ConfigError("n must be at least 2 and replicates at least 1")
        flags = tuple(str(f) for f in self.misspecify)
        if set(flags) - set(MODEL_FLAGS):
            raise ConfigError(f"misspecify must be a subset of {MODEL_FLAGS}")
        object.__setattr__(self, "misspecify", tuple(f for f in MODEL_FLAGS if f in flags))
        est = tuple(self.estimators)
        bad = [k for k in est if k not in ALL_KINDS]
        if bad or not est:
            raise ConfigError(f"unknown estimator(s) {bad}; choose from {ALL_KINDS}")
        object.__setattr__(self, "estimators", est)
        if self.yz_coefficient_mode not in YZ_MODES:
            raise ConfigError(f"unknown yz_coefficient_mode {self.yz_coefficient_mode!r}")
        target = self.target or ("NDE" if self.scenario == "S3" else "theta0")
        if target not in ("NDE", "theta0"):
            raise ConfigError("target must be NDE or theta0")
        object.__setattr__(self, "target", target)
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")

    @property
    def label(self) -> str:
        return "All correct" if not self.misspecify else ",".join(self.misspecify) + " wrong"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["misspecify"] = list(self.misspecify)
        out["estimators"] = list(self.estimators)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        data = dict(data)
        for key in ("misspecify", "estimators"):
            if key in data:
                if isinstance(data[key], str):
                    data[key] = [data[key]]
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    bias: float
    mc_se: float
    sd: float
    median_abs_error: float
    successes: int
    failures: int
    floor_events: int
    coverage: float | None = None
    mean_se: float | None = None


@dataclass(frozen=True)
class MCReport:
    config: ScenarioConfig
    truth: TrueEffects
    summaries: tuple[EstimatorSummary, ...]
    estimates: np.ndarray = field(repr=False)
    failure_flag: bool = False

    def summary(self, estimator: str) -> EstimatorSummary:
        for s in self.summaries:
            if s.estimator == estimator:
                return s
        raise KeyError(estimator)

    def to_dict(self) -> dict:
        return {
            "row": self.config.label,
            "config": self.config.to_dict(),
            "truth": self.truth.to_dict(),
            "target": self.config.target,
            "failure_flag": self.failure_flag,
            "estimators": [asdict(s) for s in self.summaries],
        }


def _replicate(config: ScenarioConfig, rep: int):
    """Estimates (target scale) per estimator for one replicate, NaN on failure."""
    rng = replicate_rng(config.seed, rep)
    if config.scenario == "S3":
        d = generate_s3(config.n, rng)
    else:
        d = generate_s6(config.n, rng, config.yz_coefficient_mode)
    specs = misspecified_specs(config.scenario, config.misspecify, config.wrong_mediator_link)
    k = len(config.estimators)
    values = np.full(k, np.nan)
    floors = np.zeros(k)
    se = np.full(k, np.nan)
    try:
        base = fit_nuisances(d, specs)
        delta0 = delta_estimate(d, base, 0).value if config.target == "NDE" else 0.0
    except (MediationError, FloatingPointError, np.linalg.LinAlgError):
        return values, floors, se
    for j, kind in enumerate(config.estimators):
        try:
            theta, diag = theta_value(d, kind, base, specs)
        except (MediationError, FloatingPointError, np.linalg.LinAlgError):
            continue
        values[j] = theta - delta0
        floors[j] = diag.get("floor_events", 0.0)
        if config.coverage and kind in ("ym", "ye", "em", "triply", "doubly"):
            try:
                rep_var = sandwich_variance(d, base, config.target if config.target == "NDE" else "theta0",
                                            theta_kind=kind)
                se[j] = rep_var.se
            except MediationError:
                pass
    return values, floors, se


def _run_block(args):
    config, reps = args
    return [_replicate(config, r) for r in reps]


def run_mc(config: ScenarioConfig, workers: int = 1, truth: TrueEffects | None = None) -> MCReport:
    """Run the replicates of ``config`` and summarize each estimator.

    Results are identical for any ``workers`` because each replicate owns its
    random stream and the reduction runs in replicate order.
    """
    truth = truth or true_effects(config.scenario, yz_mode=config.yz_coefficient_mode, method="quadrature")
    reps = list(range(config.replicates))
    if workers > 1 and len(reps) > 1:
        blocks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, [(config, b) for b in blocks]))
        by_rep = {}
        for block, part in zip(blocks, parts):
            by_rep.update(zip(block, part))
        results = [by_rep[r] for r in reps]
    else:
        results = _run_block((config, reps))
    est = np.array([r[0] for r in results])
    floors = np.array([r[1] for r in results])
    ses = np.array([r[2] for r in results])
    target = truth.get(config.target)
    z = float(norm.ppf(0.5 + config.level / 2))
    summaries = []
    flag = False
    for j, kind in enumerate(config.estimators):
        ok = np.isfinite(est[:, j])
        vals = est[ok, j]
        n_ok = int(ok.sum())
        failures = config.replicates - n_ok
        flag = flag or failures > FAILURE_FLAG_RATE * config.replicates
        if n_ok:
            bias = float(vals.mean() - target)
            sd = float(vals.std(ddof=1)) if n_ok > 1 else 0.0
            mae = float(np.median(np.abs(vals - target)))
        else:
            bias = sd = mae = float("nan")
        coverage = mean_se = None
        if config.coverage:
            s = ses[ok, j]
            good = np.isfinite(s)
            if np.any(good):
                covered = np.abs(vals[good] - target) <= z * s[good]
                coverage = float(np.mean(covered))
                mean_se = float(np.mean(s[good]))
        summaries.append(EstimatorSummary(
            kind, bias, sd / math.sqrt(max(n_ok, 1)), sd, mae, n_ok, failures,
            int(floors[ok, j].sum()), coverage, mean_se,
        ))
    return MCReport(config, truth, tuple(summaries), est, flag)


def render_table(reports, statistic_rows=("bias", "mc_se")) -> str:
    """CSV rendering in the layout of the reference tables: one pair of lines
    (bias, MC s.e.) per misspecification row, one column per estimator."""
    reports = list(reports)
    if not reports:
        return ""
    estimators = reports[0].config.estimators
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scenario", "statistic", *(ESTIMATOR_LABELS[k] for k in estimators)])
    names = {"bias": "bias", "mc_se": "MC s.e.", "sd": "SD", "median_abs_error": "median abs error",
             "coverage": "coverage", "failures": "failures"}
    for rep in reports:
        for i, stat in enumerate(statistic_rows):
            row = [rep.config.label if i == 0 else "", names.get(stat, stat)]
            for k in estimators:
                v = getattr(rep.summary(k), stat)
                row.append("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)))
            w.writerow(row)
    return out.getvalue()


def table_configs(scenario: str, n: int, replicates: int, seed: int, estimators=None, **kwargs):
    """One ScenarioConfig per row of the reference table for ``scenario``."""
    if estimators is None:
        estimators = ("ym", "ye", "em", "triply") if scenario == "S3" else (
            "ym", "ye", "em", "triply", "dag1", "dag2")
    return [ScenarioConfig(scenario, n, replicates, seed, row, tuple(estimators), **kwargs)
            for row in TABLE_ROWS[scenario]]
