import numpy as np
import pytest

import rieszselect as rs


@pytest.fixture(scope="session")
def mar_small():
    """A modest MAR sample shared by structural tests."""
    return rs.gen_mar(rs.MarDgpConfig(n=800, seed=42))


@pytest.fixture(scope="session")
def mar_folds(mar_small):
    return rs.make_folds(mar_small, 2, seed=7)


@pytest.fixture(scope="session")
def oracle_pair():
    """Confounded discrete sample with its exact tables."""
    return rs.gen_confounded(rs.example_confounded_config(n=4000, seed=3))


def mar_truth(data, theta0=1.0, beta=None):
    """Closed-form nuisances of the MAR design at the sample's covariates."""
    from rieszselect.normals import norm_cdf

    beta = rs.dgp.default_beta(data.p) if beta is None else np.asarray(beta)
    z = data.x @ beta
    return {
        "index": z,
        "g1": theta0 + z,
        "g0": z,
        "p1": norm_cdf(z),
        "pis1": norm_cdf(1.0 + z),
        "pis0": norm_cdf(z),
    }
