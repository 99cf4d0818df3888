"""FastAPI compute service wrapping the estimation library.

Endpoints are stateless and deterministic given their request bodies: the
same request always yields the same response, so clients may cache or replay
freely. File handling stays on the client side; requests carry data inline.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..benchmark import BenchmarkConfig, benchmark_groups
from ..data import make_folds
from ..dgp import gen_confounded, gen_mar
from ..errors import RieszSelectError
from ..estimators import (
    estimate_fr_with_nuisances,
    estimate_irm_with_nuisances,
    estimate_ssm_with_nuisances,
)
from ..mc import McConfig, run_mc, summarize
from ..sensitivity import SensitivityInputs, calibrate_quasi_gaussian, contour_grid, sensitivity_report
from . import schemas as S

app = FastAPI(title="rieszselect", version=__version__)


@app.exception_handler(RieszSelectError)
async def _domain_error(request: Request, exc: RieszSelectError) -> JSONResponse:
    return JSONResponse(
        status_code=422,
        content={"error": type(exc).__name__, "detail": str(exc)},
    )


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/simulate/mar", response_model=S.SimResponse)
def simulate_mar(req: S.MarSimRequest) -> S.SimResponse:
    cfg = req.to_config()
    data = gen_mar(cfg)
    return S.SimResponse(dataset=S.DatasetPayload.from_dataset(data), truth=cfg.truth())


@app.post("/simulate/confounded", response_model=S.SimResponse)
def simulate_confounded(req: S.ConfoundedSimRequest) -> S.SimResponse:
    cfg = req.to_config()
    data, tables = gen_confounded(cfg)
    truth = {"design": "confounded", "n": cfg.n, "seed": cfg.seed, "noise_sd": cfg.noise_sd}
    truth["oracle"] = tables.to_dict()
    return S.SimResponse(dataset=S.DatasetPayload.from_dataset(data), truth=truth)


@app.post("/estimate", response_model=S.EstimateResponse, response_model_exclude_none=True)
def estimate(req: S.EstimateRequest) -> S.EstimateResponse:
    data = req.dataset.to_dataset()
    folds = make_folds(data, req.folds, req.seed)
    fcfg = req.forest.to_config(req.seed)
    if req.method == "irm":
        est, nus = estimate_irm_with_nuisances(data, folds, req.learners.irm(req.seed), req.level)
    elif req.method == "ssm":
        est, nus = estimate_ssm_with_nuisances(data, folds, req.learners.ssm(req.seed, fcfg), req.level)
    else:
        est, nus, _ = estimate_fr_with_nuisances(data, folds, None, fcfg, req.level, req.learners.clip)
    nuisance = None
    if req.include_nuisance:
        nuisance = S.NuisancePayload(
            fold=[int(v) for v in folds.assignment],
            g1=nus.g1.tolist(),
            g0=nus.g0.tolist(),
            g_at_d=nus.g_at_d.tolist(),
            alpha=nus.alpha.tolist(),
            p1=None if nus.p1 is None else nus.p1.tolist(),
            pis1=None if nus.pis1 is None else nus.pis1.tolist(),
            pis0=None if nus.pis0 is None else nus.pis0.tolist(),
            alpha_plugin=None if nus.alpha_plugin is None else nus.alpha_plugin.tolist(),
        )
    return S.EstimateResponse(
        theta=est.theta,
        se=est.se,
        ci_low=est.ci_low,
        ci_high=est.ci_high,
        level=est.level,
        method=est.method,
        n=data.n,
        folds=req.folds,
        seed=req.seed,
        nuisance_diag=est.nuisance_diag,
        per_obs_scores=est.per_obs_scores.tolist() if req.include_scores else None,
        nuisance=nuisance,
    )


@app.post("/sensitivity", response_model=S.SensitivityResponse, response_model_exclude_none=True)
def sensitivity(req: S.SensitivityRequest) -> S.SensitivityResponse:
    inputs = SensitivityInputs(
        residuals=req.residuals,
        alpha_s_values=req.alpha_s_values,
        theta_s=req.theta_s,
        se_s=req.se_s,
        n=len(req.alpha_s_values),
    )
    report = sensitivity_report(
        inputs,
        cy2_values=req.cy2,
        rho_values=req.rho,
        mu2_values=req.mu2,
        cs2_values=req.cs2,
        p1=req.p1,
        pis1=req.pis1,
        pis0=req.pis0,
        b_draws=req.b_draws,
        seed=req.seed,
        level=req.level,
    )
    contour = None
    if req.contour_resolution > 1:
        curve = None
        if "calibration" in report and req.p1 is not None:
            curve = calibrate_quasi_gaussian(
                req.p1, req.pis1, req.pis0, None, req.b_draws, req.seed
            )
        grid = contour_grid(
            report["s2"],
            req.theta_s,
            (0.0, req.cy2_max),
            (0.0, req.eta_s2_max),
            req.contour_resolution,
            calibration=curve,
        )
        contour = grid.rows()
    return S.SensitivityResponse(report=report, contour=contour)


@app.post("/sensitivity/calibrate")
def calibrate(req: S.CalibrateRequest) -> dict:
    curve = calibrate_quasi_gaussian(
        req.p1, req.pis1, req.pis0, req.mu2_grid, req.b_draws, req.seed
    )
    return curve.to_dict()


@app.post("/benchmark", response_model=S.BenchmarkResponse)
def benchmark(req: S.BenchmarkRequest) -> S.BenchmarkResponse:
    data = req.dataset.to_dataset()
    folds = make_folds(data, req.folds, req.seed)
    cfg = BenchmarkConfig(forest=req.forest.to_config(req.seed), level=req.level)
    groups = None
    if req.groups:
        idx = {c: i for i, c in enumerate(data.covariate_names)}
        groups = {g: tuple(idx[c] for c in cols) for g, cols in req.groups.items()}
    results = benchmark_groups(data, folds, groups, cfg)
    return S.BenchmarkResponse(results=[r.to_dict() for r in results])


@app.post("/study", response_model=S.StudyResponse)
def study(req: S.StudyRequest) -> S.StudyResponse:
    if (req.mar is None) == (req.confounded is None):
        return JSONResponse(
            status_code=422,
            content={"error": "ConfigError", "detail": "give exactly one of mar/confounded"},
        )
    dgp = req.mar.to_config() if req.mar is not None else req.confounded.to_config()
    fcfg = req.forest.to_config(req.base_seed)
    cfg = McConfig(
        dgp=dgp,
        methods=tuple(req.methods),
        reps=req.reps,
        sample_sizes=tuple(req.sample_sizes),
        base_seed=req.base_seed,
        k_folds=req.folds,
        level=req.level,
        irm=req.learners.irm(req.base_seed),
        ssm=req.learners.ssm(req.base_seed, fcfg),
        fr=fcfg,
        workers=req.workers,
    )
    summary = run_mc(cfg)
    return S.StudyResponse(summary=summary.to_dict(include_raw=req.include_raw), table=summarize(summary))
