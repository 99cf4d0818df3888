import numpy as np
import pytest

import rieszselect as rs
from rieszselect.errors import TrainError
from rieszselect.estimators import AteEstimate, PropensityModel, dr_estimate, fit_logistic, plugin_alpha_short

from conftest import mar_truth


# ---------------------------------------------------------------------------
# logistic solver
# ---------------------------------------------------------------------------


def test_logistic_independent_labels_gives_label_mean():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4000, 3))
    y = rng.random(4000) < 0.3
    model = fit_logistic(x, y.astype(int))
    probs = model.predict_proba(x)
    assert np.max(np.abs(probs - y.mean())) < 0.05
    assert abs(probs.mean() - y.mean()) < 1e-6  # score equation at the optimum


def test_logistic_perfect_separation_stays_bounded():
    x = np.concatenate([np.linspace(-2, -1, 50), np.linspace(1, 2, 50)])
    y = (x > 0).astype(int)
    model = fit_logistic(x, y)  # penalty bounds the fit; no error
    assert np.all(np.isfinite(model.coef))
    assert np.max(np.abs(model.coef)) < 1e6


def test_logistic_recovers_generating_probabilities():
    rng = np.random.default_rng(3)
    n = 10_000
    x = rng.standard_normal((n, 2))
    logit = 0.5 + x @ np.array([1.0, -0.7])
    p = 1 / (1 + np.exp(-logit))
    y = (rng.random(n) < p).astype(int)
    model = fit_logistic(x, y)
    rmse = float(np.sqrt(np.mean((model.predict_proba(x) - p) ** 2)))
    assert rmse < 0.03


def test_logistic_weights_replicate_duplication():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    dup = fit_logistic(np.vstack([x, x[:1]]), np.append(y, 0))
    wtd = fit_logistic(x, y, weights=np.array([2.0, 1.0, 1.0, 1.0]))
    assert np.allclose(dup.coef, wtd.coef, atol=1e-6)


def test_logistic_needs_both_classes():
    with pytest.raises(TrainError):
        fit_logistic(np.arange(5.0), np.ones(5))


# ---------------------------------------------------------------------------
# plug-in weights
# ---------------------------------------------------------------------------


def test_plugin_alpha_basic_values():
    assert plugin_alpha_short(0.5, 1.0, 1.0, 1, 1) == pytest.approx(2.0)
    assert plugin_alpha_short(0.5, 1.0, 1.0, 0, 1) == pytest.approx(-2.0)
    assert plugin_alpha_short(0.5, 1.0, 1.0, 1, 0) == 0.0
    assert plugin_alpha_short(0.25, 0.5, 0.9, 1, 1) == pytest.approx(8.0)


def test_plugin_alpha_matches_oracle_tables(oracle_pair):
    data, tables = oracle_pair
    xi = np.array([tables.x_index_of(row) for row in data.x[:500]])
    vals = plugin_alpha_short(
        tables.p1[xi], tables.pi_s[1, xi], tables.pi_s[0, xi], data.d[:500], data.s[:500]
    )
    expected = np.array(
        [
            s * tables.alpha_s_value(d, i)
            for d, s, i in zip(data.d[:500], data.s[:500], xi)
        ]
    )
    assert np.allclose(vals, expected, rtol=1e-12)


def test_clipping_monotone():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2000, 1)) * 3
    y = (rng.random(2000) < 1 / (1 + np.exp(-3 * x[:, 0]))).astype(int)
    rates = []
    for clip in (0.001, 0.01, 0.1):
        pm = PropensityModel("logistic", "treatment", clip=clip).fit(x, y)
        pm.predict(x)
        rates.append(pm.n_clipped)
    assert rates[0] <= rates[1] <= rates[2]


# ---------------------------------------------------------------------------
# estimate internals
# ---------------------------------------------------------------------------


def test_ate_estimate_invariants():
    scores = np.array([0.5, 1.5, 2.0, -1.0, 1.0])
    est = AteEstimate.from_scores(scores, "FR", level=0.9)
    assert est.theta == pytest.approx(scores.mean(), abs=0)
    assert est.se == pytest.approx(scores.std(ddof=1) / np.sqrt(5))
    half = est.theta - est.ci_low
    assert est.ci_high - est.theta == pytest.approx(half)
    assert half == pytest.approx(1.6448536269514722 * est.se)


def fully_observed_dataset(n=4000, seed=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1.0, size=(n, 3))
    z = x @ np.array([0.8, 0.2, 0.0])
    d = (z + rng.standard_normal(n) > 0).astype(int)
    y = 1.0 * d + z + rng.standard_normal(n)
    return rs.Dataset(
        y=np.ma.masked_array(y, mask=np.zeros(n, dtype=bool)),
        d=d,
        s=np.ones(n, dtype=int),
        x=x,
        covariate_names=("x1", "x2", "x3"),
    )


def test_fully_observed_ssm_reduces_to_irm():
    data = fully_observed_dataset()
    folds = rs.make_folds(data, 2, seed=5)
    irm, _ = rs.estimate_irm_with_nuisances(
        data, folds, rs.IrmLearners(outcome="linear", propensity="logistic", seed=0)
    )
    ssm, _ = rs.estimate_ssm_with_nuisances(
        data,
        folds,
        rs.SsmLearners(outcome="linear", treatment="logistic", normalize_ipw=False, seed=0),
    )
    assert np.allclose(irm.per_obs_scores, ssm.per_obs_scores, atol=1e-10)
    assert abs(irm.theta - 1.0) < 2 * irm.se
    fr = rs.estimate_fr(data, folds, None, rs.ForestConfig(n_trees=24, max_depth=8, seed=0))
    assert abs(fr.theta - 1.0) < 3 * fr.se


def test_irm_is_biased_down_on_mar():
    data = rs.gen_mar(rs.MarDgpConfig(n=20_000, seed=31))
    folds = rs.make_folds(data, 2, seed=1)
    est = rs.estimate_irm(data, folds, rs.IrmLearners(outcome="linear"))
    assert 0.6 < est.theta < 0.85


def selection_blind_target(tables):
    """Enumerated estimand of the selection-blind baseline: E[pi_s * g_s contrast]."""
    return float(
        np.sum(tables.x_probs * (tables.pi_s[1] * tables.g_s[1] - tables.pi_s[0] * tables.g_s[0]))
    )


def test_irm_oracle_score_matches_enumerated_target():
    data, tables = rs.gen_confounded(rs.example_confounded_config(n=60_000, seed=12))
    xi = np.array([tables.x_index_of(row) for row in data.x])
    mu1 = tables.pi_s[1, xi] * tables.g_s[1, xi]
    mu0 = tables.pi_s[0, xi] * tables.g_s[0, xi]
    p1 = tables.p1[xi]
    sy = data.sy
    d = data.d.astype(float)
    scores = mu1 - mu0 + d * (sy - mu1) / p1 - (1 - d) * (sy - mu0) / (1 - p1)
    target = selection_blind_target(tables)
    se = scores.std(ddof=1) / np.sqrt(data.n)
    assert abs(scores.mean() - target) < 3 * se


def test_ssm_oracle_score_matches_theta_s():
    data, tables = rs.gen_confounded(rs.example_confounded_config(n=60_000, seed=13))
    xi = np.array([tables.x_index_of(row) for row in data.x])
    mu = tables.g_s[data.d, xi]
    w1 = np.where(data.d == 1, data.s / (tables.p1[xi] * tables.pi_s[1, xi]), 0.0)
    w0 = np.where(data.d == 0, data.s / ((1 - tables.p1[xi]) * tables.pi_s[0, xi]), 0.0)
    scores = w1 * (data.sy - mu) + tables.g_s[1, xi] - (w0 * (data.sy - mu) + tables.g_s[0, xi])
    se = scores.std(ddof=1) / np.sqrt(data.n)
    assert abs(scores.mean() - tables.theta_s) < 3 * se


def test_ssm_pipeline_recovers_theta_s_on_discrete_design():
    data, tables = rs.gen_confounded(rs.example_confounded_config(n=20_000, seed=14))
    folds = rs.make_folds(data, 2, seed=2)
    est = rs.estimate_ssm(data, folds, rs.SsmLearners(outcome="linear"))
    assert abs(est.theta - tables.theta_s) < 4 * est.se


def test_ssm_on_mar_near_truth():
    data = rs.gen_mar(rs.MarDgpConfig(n=4000, seed=8))
    folds = rs.make_folds(data, 2, seed=3)
    est = rs.estimate_ssm(data, folds, rs.SsmLearners(outcome="linear"))
    assert 0.85 < est.theta < 1.15


def test_fr_on_mar_within_band():
    data = rs.gen_mar(rs.MarDgpConfig(n=4000, seed=9))
    folds = rs.make_folds(data, 2, seed=4)
    est = rs.estimate_fr(data, folds, None, rs.ForestConfig(n_trees=48, max_depth=10, seed=0))
    assert 0.9 < est.theta < 1.25
    assert est.nuisance_diag["forest"]["n_trees"] == 48


def test_dr_estimate_exact_g_any_alpha():
    # with the true outcome regression, any bounded weighting function leaves
    # only mean-zero noise in the correction term
    data = rs.gen_mar(rs.MarDgpConfig(n=40_000, seed=21))
    truth = mar_truth(data)
    rng = np.random.default_rng(5)
    alpha_junk = data.s * np.sin(3.0 * truth["index"]) * rng.choice([0.5, 2.0], data.n)
    est = dr_estimate(data, truth["g1"], truth["g0"], alpha_junk)
    assert abs(est.theta - 1.0) < 3 * est.se


def test_dr_estimate_exact_alpha_any_g():
    data = rs.gen_mar(rs.MarDgpConfig(n=40_000, seed=22))
    truth = mar_truth(data)
    alpha = plugin_alpha_short(truth["p1"], truth["pis1"], truth["pis0"], data.d, data.s)
    g1_junk = 0.4 * np.cos(2.0 * truth["index"]) + 0.7
    g0_junk = np.tanh(truth["index"]) - 0.2
    est = dr_estimate(data, g1_junk, g0_junk, alpha)
    assert abs(est.theta - 1.0) < 3 * est.se


def test_dr_estimate_exact_alpha_any_g_confounded(oracle_pair):
    data, tables = rs.gen_confounded(rs.example_confounded_config(n=80_000, seed=23))
    xi = np.array([tables.x_index_of(row) for row in data.x])
    alpha = plugin_alpha_short(
        tables.p1[xi], tables.pi_s[1, xi], tables.pi_s[0, xi], data.d, data.s
    )
    g1_junk = 0.3 + 0.1 * data.x[:, 0]
    g0_junk = np.full(data.n, -0.4)
    est = dr_estimate(data, g1_junk, g0_junk, alpha)
    assert abs(est.theta - tables.theta_s) < 3 * est.se


def test_off_selected_rows_contribute_only_contrast():
    data = rs.gen_mar(rs.MarDgpConfig(n=500, seed=2))
    g1 = np.ones(data.n)
    g0 = np.zeros(data.n)
    alpha = np.where(data.s == 1, 2.0, 0.0)
    est = dr_estimate(data, g1, g0, alpha)
    off = data.s == 0
    assert np.allclose(est.per_obs_scores[off], 1.0)


# ---------------------------------------------------------------------------
# representer check
# ---------------------------------------------------------------------------


def test_representer_check_zero_function(mar_small):
    lhs, rhs = rs.representer_check(np.zeros(mar_small.n), lambda d, x, s: np.zeros(len(x)), mar_small)
    assert lhs == 0.0 and rhs == 0.0


def test_representer_check_constant_on_selected(oracle_pair):
    data, tables = oracle_pair
    xi = np.array([tables.x_index_of(row) for row in data.x])
    alpha = plugin_alpha_short(
        tables.p1[xi], tables.pi_s[1, xi], tables.pi_s[0, xi], data.d, data.s
    )
    lhs, rhs = rs.representer_check(alpha, lambda d, x, s: np.asarray(s, dtype=float), data)
    assert rhs == 0.0
    per_obs = alpha * data.s
    assert abs(lhs) < 3 * per_obs.std(ddof=1) / np.sqrt(data.n)


def test_representer_check_treated_indicator():
    data, tables = rs.gen_confounded(rs.example_confounded_config(n=100_000, seed=17))
    xi = np.array([tables.x_index_of(row) for row in data.x])
    alpha = plugin_alpha_short(
        tables.p1[xi], tables.pi_s[1, xi], tables.pi_s[0, xi], data.d, data.s
    )

    def g(d, x, s):
        return np.asarray(d, dtype=float) * np.asarray(s, dtype=float)

    lhs, rhs = rs.representer_check(alpha, g, data)
    diff = alpha * g(data.d, data.x, data.s) - (np.ones(data.n) - 0.0)
    se = diff.std(ddof=1) / np.sqrt(data.n)
    assert rhs == pytest.approx(1.0)
    assert abs(lhs - rhs) < 3 * se


def test_mar_ssm_se_uses_ddof_one():
    data = rs.gen_mar(rs.MarDgpConfig(n=1000, seed=4))
    folds = rs.make_folds(data, 2, seed=0)
    est = rs.estimate_ssm(data, folds, rs.SsmLearners(outcome="linear"))
    assert est.se == pytest.approx(est.per_obs_scores.std(ddof=1) / np.sqrt(data.n))
