import numpy as np
import pytest

import rieszselect as rs
from rieszselect.errors import ConfigError
from rieszselect.normals import norm_cdf


def test_mar_selection_rate_matches_closed_form():
    # p=1, beta=0: D is a fair coin and P(S=1) = (Phi(0) + Phi(1))/2
    cfg = rs.MarDgpConfig(n=100_000, p=1, beta0=(0.0,), seed=11)
    data = rs.gen_mar(cfg)
    expected = 0.5 * (norm_cdf(0.0) + norm_cdf(1.0))
    mc_se = np.sqrt(expected * (1 - expected) / cfg.n)
    assert abs(data.s.mean() - expected) < 3 * mc_se


def test_mar_tiny_sigma_fair_coin():
    cfg = rs.MarDgpConfig(n=50_000, p=2, beta0=(5.0, -2.0), sigma_x=1e-12, seed=4)
    data = rs.gen_mar(cfg)
    assert abs(data.d.mean() - 0.5) < 3 * np.sqrt(0.25 / cfg.n)


def test_mar_deterministic():
    a = rs.gen_mar(rs.MarDgpConfig(n=500, seed=77))
    b = rs.gen_mar(rs.MarDgpConfig(n=500, seed=77))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.d, b.d) and np.array_equal(a.s, b.s)
    assert np.array_equal(np.ma.filled(a.y, 0.0), np.ma.filled(b.y, 0.0))


def test_mar_moments_at_scale():
    cfg = rs.MarDgpConfig(n=100_000, seed=5)
    data = rs.gen_mar(cfg)
    n, p = data.n, data.p
    assert abs(data.x.mean()) < 3 * np.sqrt(cfg.sigma_x / (n * p))
    assert abs(data.x.var() - cfg.sigma_x) < 3 * cfg.sigma_x * np.sqrt(2.0 / (n * p))
    # on the selected sample, y = d + index + u
    z = data.x @ cfg.beta
    sel = data.s == 1
    resid = data.y_observed - (data.d[sel] + z[sel])
    assert abs(resid.mean()) < 3 / np.sqrt(sel.sum())
    assert abs(resid.var() - 1.0) < 3 * np.sqrt(2.0 / sel.sum())


def test_mar_config_validation():
    with pytest.raises(ConfigError):
        rs.MarDgpConfig(n=0)
    with pytest.raises(ConfigError):
        rs.MarDgpConfig(n=10, sigma_x=0.0)
    with pytest.raises(ConfigError):
        rs.MarDgpConfig(n=10, p=2, beta0=(1.0,))


def brute_force_tables(cfg):
    """Independent enumeration by plain loops over the finite support."""
    xp = cfg.x_probs
    ap = cfg.a_probs
    nx, na = len(xp), len(ap)
    p1 = cfg.treat_probs
    pi0 = cfg.sel_probs
    g0 = cfg.outcome_means

    pi_s = [[sum(ap[j] * pi0[d][i][j] for j in range(na)) for i in range(nx)] for d in (0, 1)]
    g_s = [
        [
            sum(ap[j] * pi0[d][i][j] * g0[d][i][j] for j in range(na)) / pi_s[d][i]
            for i in range(nx)
        ]
        for d in (0, 1)
    ]
    theta_0 = sum(
        xp[i] * ap[j] * (g0[1][i][j] - g0[0][i][j]) for i in range(nx) for j in range(na)
    )
    theta_s = sum(xp[i] * (g_s[1][i] - g_s[0][i]) for i in range(nx))

    def pd(d, i):
        return p1[i] if d == 1 else 1.0 - p1[i]

    def alpha0(d, i, j):
        v = 1.0 / (pd(d, i) * pi0[d][i][j])
        return v if d == 1 else -v

    def alphas(d, i):
        v = 1.0 / (pd(d, i) * pi_s[d][i])
        return v if d == 1 else -v

    e_cross = 0.0
    e_a0_sq = 0.0
    e_as_sq = 0.0
    e_adiff_sq = 0.0
    e_gdiff_sq_sel = 0.0
    p_s1 = 0.0
    for i in range(nx):
        for j in range(na):
            w_xa = xp[i] * ap[j]
            for d in (0, 1):
                w_sel = w_xa * pd(d, i) * pi0[d][i][j]
                gd = g0[d][i][j] - g_s[d][i]
                e_cross += w_sel * gd * (alpha0(d, i, j) - alphas(d, i))
                e_adiff_sq += w_sel * (alpha0(d, i, j) - alphas(d, i)) ** 2
                e_gdiff_sq_sel += w_sel * gd * gd
                p_s1 += w_sel
            e_a0_sq += w_xa * (1.0 / (p1[i] * pi0[1][i][j]) + 1.0 / ((1 - p1[i]) * pi0[0][i][j]))
        e_as_sq += xp[i] * (1.0 / (p1[i] * pi_s[1][i]) + 1.0 / ((1 - p1[i]) * pi_s[0][i]))
    return {
        "theta_0": theta_0,
        "theta_s": theta_s,
        "e_cross": e_cross,
        "e_alpha0_sq": e_a0_sq,
        "e_alphas_sq": e_as_sq,
        "e_alpha_diff_sq": e_adiff_sq,
        "e_g_diff_sq_sel": e_gdiff_sq_sel / p_s1,
        "p_s1": p_s1,
    }


def test_confounded_enumeration_matches_brute_force():
    cfg = rs.example_confounded_config(n=10)
    tables = rs.enumerate_tables(cfg)
    ref = brute_force_tables(cfg)
    for key, val in ref.items():
        assert abs(getattr(tables, key) - val) < 1e-14, key


def test_bias_identity_exact(oracle_pair):
    _, tables = oracle_pair
    assert abs((tables.theta_0 - tables.theta_s) - tables.e_cross) < 1e-12
    # Pythagorean projection identity
    assert abs(tables.e_alpha_diff_sq - (tables.e_alpha0_sq - tables.e_alphas_sq)) < 1e-12
    assert tables.e_alpha0_sq >= tables.e_alphas_sq


def test_selection_constant_in_a_gives_zero_bias():
    cfg = rs.example_confounded_config(n=10)
    flat_sel = tuple(
        tuple(tuple(0.6 for _ in cell) for cell in row) for row in cfg.sel_probs
    )
    tables = rs.enumerate_tables(
        rs.ConfoundedDgpConfig(
            n=10,
            x_levels=cfg.x_levels,
            x_probs=cfg.x_probs,
            a_levels=cfg.a_levels,
            a_probs=cfg.a_probs,
            treat_probs=cfg.treat_probs,
            sel_probs=flat_sel,
            outcome_means=cfg.outcome_means,
            noise_sd=cfg.noise_sd,
        )
    )
    assert abs(tables.theta_0 - tables.theta_s) < 1e-14


def test_outcome_constant_in_a_gives_zero_bias():
    cfg = rs.example_confounded_config(n=10)
    flat_out = (((0.3, 0.3), (0.7, 0.7)), ((1.1, 1.1), (1.9, 1.9)))
    tables = rs.enumerate_tables(
        rs.ConfoundedDgpConfig(
            n=10,
            x_levels=cfg.x_levels,
            x_probs=cfg.x_probs,
            a_levels=cfg.a_levels,
            a_probs=cfg.a_probs,
            treat_probs=cfg.treat_probs,
            sel_probs=cfg.sel_probs,
            outcome_means=flat_out,
            noise_sd=0.0,
        )
    )
    assert abs(tables.theta_0 - tables.theta_s) < 1e-14


def test_confounded_sampling_matches_tables():
    data, tables = rs.gen_confounded(rs.example_confounded_config(n=200_000, seed=8))
    assert abs(data.s.mean() - tables.p_s1) < 3 * np.sqrt(tables.p_s1 * (1 - tables.p_s1) / data.n)
    # empirical second moment of the exact plug-in weights matches the closed form
    xi = np.array([tables.x_index_of(row) for row in data.x[:5000]])
    alpha = np.array(
        [
            tables.alpha_s_value(d, i) * s
            for d, s, i in zip(data.d[:5000], data.s[:5000], xi)
        ]
    )
    se = alpha.size ** -0.5 * np.std(alpha**2)
    assert abs(np.mean(alpha**2) - tables.e_alphas_sq) < 3 * se


def test_confounded_deterministic():
    a, _ = rs.gen_confounded(rs.example_confounded_config(n=300, seed=21))
    b, _ = rs.gen_confounded(rs.example_confounded_config(n=300, seed=21))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.d, b.d)


def test_confounded_config_validation():
    cfg = rs.example_confounded_config(n=10)
    with pytest.raises(ConfigError):
        rs.ConfoundedDgpConfig(
            n=10,
            x_levels=cfg.x_levels,
            x_probs=(0.5, 0.4),  # does not sum to one
            treat_probs=cfg.treat_probs,
            sel_probs=cfg.sel_probs,
            outcome_means=cfg.outcome_means,
        )
    with pytest.raises(ConfigError):
        rs.ConfoundedDgpConfig(
            n=10,
            x_levels=cfg.x_levels,
            x_probs=cfg.x_probs,
            treat_probs=(0.3, 1.0),  # boundary probability
            sel_probs=cfg.sel_probs,
            outcome_means=cfg.outcome_means,
        )
