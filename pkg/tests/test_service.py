import numpy as np
import pytest
from starlette.testclient import TestClient

import rieszselect as rs
from rieszselect.service import app
from rieszselect.service.schemas import DatasetPayload


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["version"] == rs.__version__


def test_simulate_mar_deterministic(client):
    req = {"n": 120, "p": 2, "theta0": 1.0, "sigma_x": 1.5, "seed": 3}
    a = client.post("/simulate/mar", json=req)
    b = client.post("/simulate/mar", json=req)
    assert a.status_code == 200
    assert a.json() == b.json()
    payload = DatasetPayload(**a.json()["dataset"])
    data = payload.to_dataset()
    assert data.n == 120 and data.p == 2
    assert a.json()["truth"]["beta0"] == [0.4, 0.1]


def test_simulate_confounded_carries_oracle(client):
    cfg = rs.example_confounded_config(n=200, seed=1)
    req = {
        "n": 200,
        "x_levels": [list(v) for v in cfg.x_levels],
        "x_probs": list(cfg.x_probs),
        "treat_probs": list(cfg.treat_probs),
        "sel_probs": [[list(c) for c in row] for row in cfg.sel_probs],
        "outcome_means": [[list(c) for c in row] for row in cfg.outcome_means],
        "noise_sd": cfg.noise_sd,
        "seed": 1,
    }
    body = client.post("/simulate/confounded", json=req).json()
    tables = rs.enumerate_tables(cfg)
    assert body["truth"]["oracle"]["theta_s"] == pytest.approx(tables.theta_s)


def test_estimate_matches_library(client):
    data = rs.gen_mar(rs.MarDgpConfig(n=400, seed=9))
    payload = DatasetPayload.from_dataset(data).model_dump()
    req = {
        "dataset": payload,
        "method": "irm",
        "folds": 2,
        "seed": 4,
        "learners": {"irm_outcome": "linear"},
        "include_scores": True,
    }
    body = client.post("/estimate", json=req).json()
    folds = rs.make_folds(data, 2, seed=4)
    direct = rs.estimate_irm(data, folds, rs.IrmLearners(outcome="linear", seed=4))
    assert body["theta"] == pytest.approx(direct.theta, rel=1e-12)
    assert body["se"] == pytest.approx(direct.se, rel=1e-12)
    assert len(body["per_obs_scores"]) == data.n
    assert body["method"] == "IRM"


def test_estimate_fr_with_nuisance_payload(client):
    data = rs.gen_mar(rs.MarDgpConfig(n=300, seed=2))
    req = {
        "dataset": DatasetPayload.from_dataset(data).model_dump(),
        "method": "fr",
        "folds": 2,
        "seed": 0,
        "forest": {"n_trees": 6, "max_depth": 4},
        "include_nuisance": True,
    }
    body = client.post("/estimate", json=req).json()
    nuis = body["nuisance"]
    assert len(nuis["alpha"]) == data.n
    assert nuis["p1"] is not None and nuis["alpha_plugin"] is not None
    # weighting head vanishes off the selected sample
    alpha = np.array(nuis["alpha"])
    assert np.all(alpha[data.s == 0] == 0.0)


def test_domain_error_becomes_422(client):
    data = rs.gen_mar(rs.MarDgpConfig(n=40, seed=2))
    req = {"dataset": DatasetPayload.from_dataset(data).model_dump(), "folds": 30, "seed": 0}
    resp = client.post("/estimate", json=req)
    assert resp.status_code == 422
    assert "error" in resp.json()


def test_malformed_body_rejected(client):
    assert client.post("/estimate", json={"method": "fr"}).status_code == 422


def test_calibrate_endpoint(client):
    req = {"p1": [0.5], "pis1": [0.5], "pis0": [0.5], "mu2_grid": [0.0, 0.2], "b_draws": 300, "seed": 0}
    body = client.post("/sensitivity/calibrate", json=req).json()
    assert body["cs2"][0] == pytest.approx(0.0, abs=1e-12)
    assert body["cs2"][1] > 0


def test_sensitivity_endpoint(client):
    req = {
        "theta_s": 1.0,
        "se_s": 0.1,
        "residuals": [0.5, -0.5, 1.0],
        "alpha_s_values": [2.0, -2.0, 0.0, 2.0],
        "cy2": [0.05],
        "rho": [1.0],
        "cs2": [0.1],
        "contour_resolution": 5,
    }
    body = client.post("/sensitivity", json=req).json()
    assert body["report"]["s2"] > 0
    assert len(body["report"]["grid"]) == 1
    assert len(body["contour"]) == 25


def test_study_endpoint_smoke(client):
    req = {
        "mar": {"n": 300, "seed": 0},
        "methods": ["IRM"],
        "reps": 2,
        "sample_sizes": [300],
        "base_seed": 7,
        "learners": {"irm_outcome": "linear"},
    }
    body = client.post("/study", json=req).json()
    assert body["summary"]["theta0"] == 1.0
    assert len(body["summary"]["cells"]) == 1
    assert "IRM" in body["table"]


def test_study_requires_exactly_one_dgp(client):
    resp = client.post("/study", json={"methods": ["IRM"], "reps": 1, "sample_sizes": [100]})
    assert resp.status_code == 422
