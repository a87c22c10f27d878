import math

import numpy as np
import pytest

from conftest import random_discrete
from mrmediation.design import saturated_specs
from mrmediation.errors import ConfigError, ConvergenceError, MediationError, PreconditionError
from mrmediation.estimators import theta_triply
from mrmediation.inference import (
    bootstrap,
    component_influence,
    delta_method_scale,
    effect_reports,
    eif_values,
    eif_variance,
    sandwich_variance,
)
from mrmediation.nuisance import NuisanceFit, fit_nuisances
from mrmediation.pipeline import effect_pipeline
from mrmediation.simulation import generate_s3, misspecified_specs, replicate_rng


def test_influence_has_mean_zero(s3_data):
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    theta = theta_triply(s3_data, fit)
    assert abs(eif_values(s3_data, fit, "theta0", theta).mean) < 1e-10
    assert np.max(np.abs(component_influence(s3_data, fit).mean(axis=0))) < 1e-10


def test_eif_centring_value_shifts_mean(s3_data):
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    theta = theta_triply(s3_data, fit)
    assert eif_values(s3_data, fit, "theta0", theta - 0.1).mean == pytest.approx(0.1)
    with pytest.raises(ValueError):
        eif_values(s3_data, fit, "NDE", 0.3)


def test_zero_correction_is_plugin(s3_data):
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    a = sandwich_variance(s3_data, fit, "NDE", zero_correction=True).variance
    assert a == pytest.approx(eif_variance(s3_data, fit, "NDE").variance, rel=1e-12)


@pytest.mark.parametrize("misspecify", [(), ("M",)])
def test_sandwich_matches_monte_carlo_spread(misspecify):
    # oracle: the spread of the estimator over independent datasets
    specs = misspecified_specs("S3", misspecify)
    est, ses = [], []
    for r in range(150):
        d = generate_s3(500, replicate_rng(4242, r))
        fit = fit_nuisances(d, specs)
        rep = effect_reports(d, fit, ["NDE"])[0]
        est.append(rep.point)
        ses.append(rep.se)
    assert np.mean(ses) == pytest.approx(np.std(est, ddof=1), rel=0.2)


def test_ratio_intervals_are_log_symmetric():
    rng = np.random.default_rng(1)
    infl = rng.normal(size=(400, 3)) * 0.3
    rep = delta_method_scale((0.5, 0.3, 0.7), infl, "NDE", "risk_ratio")
    assert rep.ci_low * rep.ci_high == pytest.approx(rep.point**2)
    diff = delta_method_scale((0.5, 0.3, 0.7), infl, "NDE", "difference")
    z = 1.959963984540054
    assert diff.ci_high - diff.point == pytest.approx(z * diff.se)


def test_bootstrap_is_deterministic_and_order_free(s3_data, rng):
    pipe = effect_pipeline(misspecified_specs("S3"), "triply", ["NDE"])
    a = bootstrap(s3_data, pipe, B=60, seed=5)
    b = bootstrap(s3_data.take(rng.permutation(s3_data.n)), pipe, B=60, seed=5, workers=3)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    c = bootstrap(s3_data, pipe, B=60, seed=6)
    assert not np.array_equal(a.estimates, c.estimates)


def test_bootstrap_needs_enough_replicates(s3_data):
    with pytest.raises(ConfigError):
        bootstrap(s3_data, lambda d: 0.0, B=10)


def test_bootstrap_drops_failures(s3_data):
    calls = iter(range(1000))

    def flaky(d):
        if next(calls) % 4 == 0:
            raise MediationError("boom")
        return float(d.y.mean())

    with pytest.warns(RuntimeWarning):
        res = bootstrap(s3_data, flaky, B=80, seed=1)
    assert res.failures == 20 and res.replicates == 60


def test_bootstrap_se_close_to_sandwich(s3_data):
    specs = misspecified_specs("S3")
    fit = fit_nuisances(s3_data, specs)
    sand = sandwich_variance(s3_data, fit, "NDE").se
    boot = bootstrap(s3_data, effect_pipeline(specs, "triply", ["NDE"]), B=200, seed=3)
    assert boot.se[0] == pytest.approx(sand, rel=0.25)


def test_dag_kinds_need_bootstrap(s3_data):
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    with pytest.raises(PreconditionError):
        effect_reports(s3_data, fit, ["NDE"], theta_kind="dag2")


def test_singular_jacobian_raises(s3_data, monkeypatch):
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    q = fit.coefficients.size
    monkeypatch.setattr(NuisanceFit, "score_jacobian", lambda self, d: np.zeros((q, q)))
    with pytest.raises(ConvergenceError, match="bootstrap"):
        sandwich_variance(s3_data, fit, "NDE")


def test_saturated_binary_reports(rng):
    d = random_discrete(rng, binary_y=True)
    fit = fit_nuisances(d, saturated_specs(d.x_names, outcome_link="logit"))
    reps = effect_reports(d, fit, ["NDE", "NIE", "total"], scale="risk_ratio")
    for r in reps:
        assert r.ci_low <= r.point <= r.ci_high and math.isfinite(r.se)
