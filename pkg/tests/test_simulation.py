import numpy as np
import pytest

from mrmediation.errors import ConfigError
from mrmediation.simulation import (
    ScenarioConfig,
    generate_s3,
    generate_s6,
    misspecified_specs,
    render_table,
    replicate_rng,
    run_mc,
    table_configs,
    true_effects,
)


def test_replicate_streams_are_keyed():
    a = replicate_rng(1, 5).random(4)
    np.testing.assert_array_equal(a, replicate_rng(1, 5).random(4))
    assert not np.array_equal(a, replicate_rng(1, 6).random(4))
    assert not np.array_equal(a, replicate_rng(2, 5).random(4))


def test_s3_generator_shapes_and_moments():
    d = generate_s3(200000, replicate_rng(0, 0))
    assert d.x_names == ("x1", "x2", "x3")
    assert d.x[:, 0].mean() == pytest.approx(0.4, abs=0.005)
    assert set(np.unique(d.x[:, 1])) == {0.0, 1.0}
    assert 0.05 < d.e.mean() < 0.95


def test_s6_generator_keeps_latent_z():
    d = generate_s6(500, replicate_rng(0, 1))
    assert d.latent["z"].shape == (500, 4)
    assert d.p == 4 and "z" not in d.x_names


@pytest.mark.parametrize("scenario", ["S3", "S6"])
def test_quadrature_truth_matches_monte_carlo(scenario):
    q = true_effects(scenario, method="quadrature")
    mc = true_effects(scenario, oracle_replicates=1_000_000, seed=3)
    for key in ("theta0", "delta0", "delta1"):
        assert q.get(key) == pytest.approx(mc.get(key), abs=5 * mc.oracle_se + 1e-3)
    assert q.NDE == pytest.approx(q.theta0 - q.delta0)
    assert q.NIE == pytest.approx(q.delta1 - q.theta0)


def test_s6_direct_effect_is_one():
    assert true_effects("S6", method="quadrature").NDE == pytest.approx(1.0, abs=1e-12)


def test_brute_force_counterfactual_s3_truth():
    # simulate Y(1, M(0)) directly from the structural equations
    from mrmediation.simulation import _s3_mediator_prob, _s3_outcome_mean, _s3_x3_mean
    rng = np.random.default_rng(12)
    n = 2_000_000
    x1 = (rng.random(n) < 0.4).astype(float)
    x2 = (rng.random(n) < 0.3 + 0.4 * x1).astype(float)
    x3 = _s3_x3_mean(x1, x2) + rng.standard_normal(n)
    m0 = (rng.random(n) < _s3_mediator_prob(x1, x2, x3, 0)).astype(float)
    y10 = _s3_outcome_mean(x1, x2, x3, 1, m0) + rng.standard_normal(n)
    y00 = _s3_outcome_mean(x1, x2, x3, 0, m0) + rng.standard_normal(n)
    diff = y10 - y00
    q = true_effects("S3", method="quadrature")
    assert diff.mean() == pytest.approx(q.NDE, abs=5 * diff.std() / np.sqrt(n))


def test_misspecified_specs_drop_the_right_pieces():
    right = misspecified_specs("S3")
    wrong = misspecified_specs("S3", ("Y", "M", "E"))
    assert ("x1", "x3") in right.propensity.terms and ("x1", "x3") not in wrong.propensity.terms
    assert wrong.mediator.link == "cloglog"
    assert ("e", "m") in right.outcome.terms and ("e", "m") not in wrong.outcome.terms
    assert misspecified_specs("S6").outcome.transform == "kang_schafer_z"
    assert misspecified_specs("S6", ("Y",)).outcome.transform == "identity"


def test_config_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(scenario="S9")
    with pytest.raises(ConfigError):
        ScenarioConfig(misspecify=("Q",))
    with pytest.raises(ConfigError):
        ScenarioConfig(estimators=("nope",))
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"scenario": "S3", "colour": 1})
    cfg = ScenarioConfig.from_dict({"scenario": "S6", "misspecify": ["M", "E"]})
    assert cfg.misspecify == ("E", "M") and cfg.target == "theta0"
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def test_parallel_equals_serial():
    cfg = ScenarioConfig("S3", 300, 12, 99, ("M",), ("ym", "em", "triply", "dag2"))
    a = run_mc(cfg, workers=1)
    b = run_mc(cfg, workers=3)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    assert render_table([a]) == render_table([b])


def test_single_replicate_smoke():
    rep = run_mc(ScenarioConfig("S3", 300, 1, 1))
    for s in rep.summaries:
        assert s.successes == 1 and s.mc_se == 0.0


def test_table_layout_and_coverage():
    reports = [run_mc(c) for c in table_configs("S3", 300, 5, 1, coverage=True)]
    lines = render_table(reports, ("bias", "mc_se", "coverage")).splitlines()
    assert lines[0] == "scenario,statistic,M_ym,M_ye,M_em,M_union"
    assert [row.split(",")[0] for row in lines[1::3]] == ["All correct", "Y wrong", "M wrong", "E wrong"]
    assert reports[0].summary("triply").coverage is not None


def test_table_rows_for_s6():
    labels = [c.label for c in table_configs("S6", 200, 1, 1)]
    assert labels[0] == "All correct" and labels[-1] == "Y,E,M wrong"
    assert labels[4:7] == ["Y,E wrong", "Y,M wrong", "E,M wrong"]
    assert len(labels) == 8
