import numpy as np
import pytest

import rieszselect as rs
from rieszselect.benchmark import BenchmarkConfig, benchmark_group, benchmark_groups
from rieszselect.errors import GroupError
from rieszselect.forest import ForestConfig

FAST = BenchmarkConfig(forest=ForestConfig(n_trees=16, max_depth=6, min_leaf=15, seed=5))


@pytest.fixture(scope="module")
def noise_covariate_data():
    # x3 enters nothing: beta weight zero in outcome, treatment, and selection
    return rs.gen_mar(rs.MarDgpConfig(n=2500, p=3, beta0=(0.55, 0.2, 0.0), sigma_x=2.0, seed=19))


def test_noise_group_metrics_near_zero(noise_covariate_data):
    data = noise_covariate_data
    folds = rs.make_folds(data, 2, seed=3)
    res = benchmark_group(data, folds, [2], FAST, name="noise")
    assert abs(res.gy) < 0.05
    assert abs(res.gs) < 0.08
    assert abs(res.delta_theta) < 0.25
    assert res.k == 1 and res.group == "noise"
    assert res.delta_theta == res.theta_minus_j - res.theta_full
    for key in ("negative_gy", "negative_gs", "eta2_full"):
        assert key in res.diagnostics


def test_informative_group_moves_metrics(noise_covariate_data):
    data = noise_covariate_data
    folds = rs.make_folds(data, 2, seed=3)
    strong = benchmark_group(data, folds, [0], FAST)
    weak = benchmark_group(data, folds, [2], FAST)
    assert strong.gy > max(weak.gy, 0.02)
    assert strong.gs > weak.gs


def test_benchmark_deterministic(noise_covariate_data):
    data = noise_covariate_data
    folds = rs.make_folds(data, 2, seed=3)
    a = benchmark_group(data, folds, [1], FAST)
    b = benchmark_group(data, folds, [1], FAST)
    assert a.to_dict() == b.to_dict()


def test_collinear_copy_adds_nothing():
    base = rs.gen_mar(rs.MarDgpConfig(n=2500, p=2, beta0=(0.55, 0.2), sigma_x=2.0, seed=23))
    x = np.column_stack([base.x, base.x[:, 0]])  # exact copy of x1
    data = rs.Dataset(
        y=base.y, d=base.d, s=base.s, x=x, covariate_names=("x1", "x2", "x1copy")
    )
    folds = rs.make_folds(data, 2, seed=4)
    res = benchmark_group(data, folds, [2], FAST)
    assert abs(res.gy) < 0.05
    assert abs(res.delta_theta) < 0.25


def selection_driver_config(n, seed):
    # two binary covariates; the second drives selection (strongly, by arm)
    # and the treatment-effect slope, the first only shifts the level
    levels = ((0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0))
    sel = (
        # d = 0 rows: x levels, a levels
        ((0.6, 0.6), (0.6, 0.6), (0.6, 0.6), (0.6, 0.6)),
        ((0.15, 0.15), (0.95, 0.95), (0.15, 0.15), (0.95, 0.95)),
    )
    out = (
        ((0.0, 0.0), (0.0, 0.0), (0.5, 0.5), (0.5, 0.5)),
        ((1.0, 1.0), (4.0, 4.0), (1.5, 1.5), (4.5, 4.5)),
    )
    return rs.ConfoundedDgpConfig(
        n=n,
        x_levels=levels,
        x_probs=(0.25, 0.25, 0.25, 0.25),
        treat_probs=(0.5, 0.5, 0.5, 0.5),
        sel_probs=sel,
        outcome_means=out,
        noise_sd=0.3,
        seed=seed,
        covariate_names=("x1", "x2"),
    )


def coarsened_theta(tables):
    """Short-model target when x2 is dropped, enumerated independently."""
    # joint selected-sample weights over (d, x-level)
    nx = tables.x_probs.size
    theta = 0.0
    for x1 in (0.0, 1.0):
        px1 = sum(tables.x_probs[i] for i in range(nx) if tables.x_levels[i][0] == x1)
        means = {}
        for d in (0, 1):
            num = 0.0
            den = 0.0
            for i in range(nx):
                if tables.x_levels[i][0] != x1:
                    continue
                pd = tables.p1[i] if d == 1 else 1 - tables.p1[i]
                w = tables.x_probs[i] * pd * tables.pi_s[d, i]
                num += w * tables.g_s[d, i]
                den += w
            means[d] = num / den
        theta += px1 * (means[1] - means[0])
    return theta


def test_selection_driving_group_direction_matches_enumeration():
    data, tables = rs.gen_confounded(selection_driver_config(6000, seed=2))
    folds = rs.make_folds(data, 2, seed=1)
    res = benchmark_group(data, folds, [1], FAST, name="x2")
    gap = coarsened_theta(tables) - tables.theta_s
    assert abs(gap) > 0.5  # the design is built to make the gap material
    assert np.sign(res.delta_theta) == np.sign(gap)
    assert abs(res.delta_theta - gap) < 0.5
    assert res.gs > 0.1


def test_group_validation(noise_covariate_data):
    folds = rs.make_folds(noise_covariate_data, 2, seed=0)
    with pytest.raises(GroupError):
        benchmark_group(noise_covariate_data, folds, [], FAST)
    with pytest.raises(GroupError):
        benchmark_group(noise_covariate_data, folds, [7], FAST)
    with pytest.raises(GroupError):
        benchmark_group(noise_covariate_data, folds, [0, 1, 2], FAST)
    with pytest.raises(GroupError):
        benchmark_groups(noise_covariate_data, folds, None, FAST)  # no named groups


def test_benchmark_groups_uses_dataset_groups(noise_covariate_data):
    data = rs.Dataset(
        y=noise_covariate_data.y,
        d=noise_covariate_data.d,
        s=noise_covariate_data.s,
        x=noise_covariate_data.x,
        covariate_names=noise_covariate_data.covariate_names,
        groups={"main": (0,), "noise": (2,)},
    )
    folds = rs.make_folds(data, 2, seed=3)
    results = benchmark_groups(data, folds, None, FAST)
    assert [r.group for r in results] == ["main", "noise"]
