import itertools

import numpy as np
import pytest

from conftest import random_discrete
from mrmediation.data import MediationDataset
from mrmediation.design import saturated_specs
from mrmediation.errors import ConfigError
from mrmediation.estimators import theta_rows
from mrmediation.inference import effect_reports
from mrmediation.nuisance import NuisanceValues, fit_nuisances
from mrmediation.sensitivity import (
    SelectionFunction,
    constant,
    eta_tilde,
    eta_tilde_from_values,
    exposure_asymmetric,
    make_grid,
    mediator_linear,
    sensitivity_curve,
    sensitivity_rows,
    theta_doubly_sens,
    weighting_rows,
    zero_function,
)
from mrmediation.simulation import generate_s3, misspecified_specs, replicate_rng


def _random_t(rng, p):
    """Selection function depending on e, m and x through random coefficients."""
    coef = rng.normal(size=(2, 2, p + 1))

    def ev(e, m, x):
        return coef[e, m, 0] + x @ coef[e, m, 1:]
    return SelectionFunction("random", (1.0,), ev)


def _enumerable_law(rng, p=2):
    """All (x, e, m) cells with true conditional means and cell probabilities."""
    xs = np.array(list(itertools.product((0, 1), repeat=p)), dtype=float)
    px = rng.dirichlet(np.ones(len(xs)))
    fe1 = rng.uniform(0.2, 0.8, len(xs))
    fm1 = rng.uniform(0.2, 0.8, (2, len(xs)))
    mu = rng.normal(size=(2, len(xs), 2))
    rows, prob = [], []
    for j, e, m in itertools.product(range(len(xs)), (0, 1), (0, 1)):
        rows.append((j, e, m))
        pe = fe1[j] if e else 1 - fe1[j]
        pm = fm1[e, j] if m else 1 - fm1[e, j]
        prob.append(px[j] * pe * pm)
    rows = np.array(rows)
    j, e, m = rows.T
    d = MediationDataset(mu[e, j, m], e, m, xs[j], tuple(f"x{i + 1}" for i in range(p)))
    fm = np.stack([np.stack([1 - fm1[ee, j], fm1[ee, j]], axis=-1) for ee in (0, 1)])
    fe = np.vstack([1 - fe1[j], fe1[j]])
    v = NuisanceValues(mu[:, j, :], fm, fe, np.log(fe))
    law = dict(xs=xs, px=px, fe1=fe1, fm1=fm1, mu=mu)
    return d, v, np.array(prob), law


def _representation_sum(law, t):
    """Population value as the sum over x and m of the bias-corrected regression."""
    total = 0.0
    for j, x in enumerate(law["xs"]):
        for m in (0, 1):
            f0 = law["fm1"][0, j] if m else 1 - law["fm1"][0, j]
            f1 = law["fm1"][1, j] if m else 1 - law["fm1"][1, j]
            t1 = t.evaluate(1, m, x[None])[0]
            t0 = t.evaluate(0, m, x[None])[0]
            total += law["px"][j] * (law["mu"][1, j, m] - t1 * (1 - f1) + t0 * (1 - f0)) * f0
    return total


def test_two_population_representations_agree():
    rng = np.random.default_rng(8)
    for _ in range(50):
        d, v, prob, law = _enumerable_law(rng)
        t = _random_t(rng, d.p)
        expected = _representation_sum(law, t)
        assert prob @ weighting_rows(d, v, t) == pytest.approx(expected, abs=1e-10)
        assert prob @ sensitivity_rows(d, v, t) == pytest.approx(expected, abs=1e-10)


def test_zero_function_leaves_eta_unchanged():
    rng = np.random.default_rng(9)
    for _ in range(50):
        d = random_discrete(rng)
        fit = fit_nuisances(d, saturated_specs(d.x_names))
        v = fit.values(d)
        np.testing.assert_array_equal(eta_tilde_from_values(v, d.x, zero_function()), v.eta(1, 0))
        np.testing.assert_array_equal(eta_tilde_from_values(v, d.x, constant(0.0)), v.eta(1, 0))
        np.testing.assert_array_equal(sensitivity_rows(d, v, zero_function()), theta_rows("doubly", d, v)[0])


def test_estimate_is_affine_in_t():
    rng = np.random.default_rng(10)
    for _ in range(50):
        d = random_discrete(rng)
        fit = fit_nuisances(d, saturated_specs(d.x_names))
        t1, t2 = _random_t(rng, d.p), _random_t(rng, d.p)
        a, b = rng.normal(size=2)
        combo = SelectionFunction("combo", (1.0,), lambda e, m, x: a * t1.evaluate(e, m, x) + b * t2.evaluate(e, m, x))
        lhs = theta_doubly_sens(d, fit, combo)
        base = theta_doubly_sens(d, fit, zero_function())
        rhs = base + a * (theta_doubly_sens(d, fit, t1) - base) + b * (theta_doubly_sens(d, fit, t2) - base)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_constant_shift_formula(s3_data):
    # with t = lam the regression moves by lam * sum_m {f(m|1) - f(m|0)} f(m|0)
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    v = fit.values(s3_data)
    slope = np.mean(np.sum(((1 - v.fm[0]) - (1 - v.fm[1])) * v.fm[0], axis=-1))
    assert theta_doubly_sens(s3_data, fit, constant(2.0)) - theta_doubly_sens(s3_data, fit, zero_function()) \
        == pytest.approx(2.0 * slope, abs=1e-12)


def test_families_evaluate():
    x = np.zeros((3, 2))
    assert np.all(exposure_asymmetric(0.5, -1.0).evaluate(1, 0, x) == -1.0)
    assert np.all(exposure_asymmetric(0.5, -1.0).evaluate(0, 1, x) == 0.5)
    assert np.all(mediator_linear(1.0, 2.0).evaluate(1, 1, x) == 2.0)
    assert np.all(mediator_linear(1.0, 2.0).evaluate(1, 0, x) == 0.0)


def test_eta_tilde_scalar(s3_data):
    fit = fit_nuisances(s3_data, misspecified_specs("S3"))
    assert isinstance(eta_tilde(s3_data.x[0], fit, constant(1.0)), float)
    assert eta_tilde(s3_data.x[:4], fit, constant(1.0)).shape == (4,)


def test_grid_validation():
    assert [t.lam for t in make_grid("constant", [-1, 0, 1])] == [(-1.0,), (0.0,), (1.0,)]
    assert make_grid("mediator_linear", [0, 1])[1].lam == (1.0, 1.0)
    with pytest.raises(ConfigError):
        make_grid("constant", [])
    with pytest.raises(ConfigError):
        make_grid("constant", [1, 2])
    with pytest.raises(ConfigError):
        make_grid("quadratic", [0])


def test_curve_rows_and_zero_row():
    d = generate_s3(400, replicate_rng(77, 0))
    specs = misspecified_specs("S3")
    res = sensitivity_curve(d, specs, make_grid("constant", [-1, 0, 1]), B=60, seed=2)
    pts = [r.point for r in res.reports]
    assert len(pts) == 3
    assert pts[2] - pts[1] == pytest.approx(pts[1] - pts[0], abs=1e-12)
    fit = fit_nuisances(d, specs)
    assert pts[1] == effect_reports(d, fit, ["NDE"], theta_kind="doubly")[0].point
    for r in res.reports:
        assert r.ci_low <= r.point <= r.ci_high
    with pytest.raises(ConfigError):
        sensitivity_curve(d, specs, [constant(1.0)], B=60)
