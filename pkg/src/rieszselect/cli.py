"""Command-line client for the rieszselect service.

By default the CLI runs the service in-process (no server needed); pass
--server to point at a running instance instead. File I/O stays local:
requests carry data inline and responses are written as canonical JSON/CSV
(sorted keys, repr floats, no timestamps), so identical invocations produce
byte-identical outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import httpx

from .data import ColumnSchema, load_csv, write_csv
from .service.schemas import DatasetPayload


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from starlette.testclient import TestClient

    from .service import app

    return TestClient(app, base_url="http://service.local")


def _post(client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        raise click.ClickException(f"service error {resp.status_code}: {resp.text}")
    return resp.json()


def _write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv_rows(path: str | Path, header: list[str], rows) -> None:
    import csv as _csv

    with Path(path).open("w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _dataset_payload(data_path: str, y: str, d: str, s: str, drop: tuple[str, ...], groups: str | None) -> dict:
    data = load_csv(data_path, ColumnSchema(y=y, d=d, s=s, drop=drop), groups_path=groups)
    return DatasetPayload.from_dataset(data).model_dump()


_forest_params = [
    click.option("--trees", default=100, show_default=True, help="Trees per forest."),
    click.option("--min-leaf", default=10, show_default=True),
    click.option("--max-depth", default=10, show_default=True),
    click.option("--subsample", default=0.5, show_default=True),
    click.option("--mtry", default=None, type=int),
    click.option("--ridge", default=None, type=float),
    click.option("--honest/--no-honest", default=False, show_default=True),
    click.option("--multitask-weight", default=0.5, show_default=True),
    click.option("--feature-map", default="arm-intercept", show_default=True,
                 type=click.Choice(["arm-linear", "arm-intercept"])),
    click.option("--g-leaf", default="arm-linear", show_default=True,
                 type=click.Choice(["match", "arm-linear"])),
    click.option("--max-thresholds", default=32, show_default=True),
    click.option("--min-arm-selected", default=2, show_default=True),
    click.option("--leaf-ridge-fraction", default=0.01, show_default=True),
    click.option("--min-gain", default=0.0, show_default=True),
    click.option("--workers", default=1, show_default=True),
]


def forest_options(fn):
    for opt in reversed(_forest_params):
        fn = opt(fn)
    return fn


def _forest_payload(kw: dict) -> dict:
    return {
        "n_trees": kw["trees"],
        "min_leaf": kw["min_leaf"],
        "max_depth": kw["max_depth"],
        "subsample_fraction": kw["subsample"],
        "mtry": kw["mtry"],
        "ridge": kw["ridge"],
        "honest": kw["honest"],
        "multitask_weight": kw["multitask_weight"],
        "feature_map": kw["feature_map"],
        "g_leaf": kw["g_leaf"],
        "max_thresholds": kw["max_thresholds"],
        "min_arm_selected": kw["min_arm_selected"],
        "leaf_ridge_fraction": kw["leaf_ridge_fraction"],
        "min_gain": kw["min_gain"],
        "workers": kw["workers"],
    }


@click.group()
@click.option("--server", default=None, envvar="RIESZSELECT_SERVER",
              help="Base URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Treatment-effect estimation under sample selection."""
    ctx.obj = {"server": server}


@main.command()
@click.option("--kind", type=click.Choice(["mar", "confounded"]), default="mar", show_default=True)
@click.option("--n", default=1000, show_default=True)
@click.option("--p", default=5, show_default=True)
@click.option("--theta0", default=1.0, show_default=True)
@click.option("--sigma-x", default=2.0, show_default=True, help="Covariate variance.")
@click.option("--beta0", default=None, help="Comma-separated coefficients (default 0.4/j^2).")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="JSON table spec for the confounded design.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--truth-out", default=None, type=click.Path(),
              help="Sidecar JSON of true parameters [default: OUT + .truth.json].")
@click.pass_context
def simulate(ctx, kind, n, p, theta0, sigma_x, beta0, config_path, seed, out, truth_out):
    """Generate a synthetic dataset and write it as CSV plus a truth sidecar."""
    client = make_client(ctx.obj["server"])
    if kind == "mar":
        payload = {"n": n, "p": p, "theta0": theta0, "sigma_x": sigma_x, "seed": seed}
        if beta0:
            payload["beta0"] = [float(v) for v in beta0.split(",")]
        body = _post(client, "/simulate/mar", payload)
    else:
        if not config_path:
            raise click.ClickException("--config is required for the confounded design")
        payload = json.loads(Path(config_path).read_text())
        payload.setdefault("n", n)
        payload.setdefault("seed", seed)
        body = _post(client, "/simulate/confounded", payload)
    data = DatasetPayload(**body["dataset"]).to_dataset()
    write_csv(data, out)
    _write_json(truth_out or f"{out}.truth.json", body["truth"])
    click.echo(f"wrote {out} (n={data.n}, p={data.p})")


_data_params = [
    click.option("--data", "data_path", required=True, type=click.Path(exists=True)),
    click.option("--y", default="y", show_default=True, help="Outcome column."),
    click.option("--d", default="d", show_default=True, help="Treatment column."),
    click.option("--s", default="s", show_default=True, help="Selection column."),
    click.option("--drop", multiple=True, help="Columns to exclude from the covariates."),
    click.option("--groups", default=None, type=click.Path(exists=True),
                 help="JSON file mapping group name -> covariate columns."),
]


def data_options(fn):
    for opt in reversed(_data_params):
        fn = opt(fn)
    return fn


@main.command()
@data_options
@click.option("--method", type=click.Choice(["irm", "ssm", "fr"]), default="fr", show_default=True)
@click.option("--folds", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--level", default=0.95, show_default=True)
@click.option("--clip", default=0.01, show_default=True)
@click.option("--irm-outcome", type=click.Choice(["linear", "rf"]), default="rf", show_default=True)
@click.option("--irm-propensity", type=click.Choice(["logistic", "rf"]), default="logistic", show_default=True)
@click.option("--ssm-outcome", type=click.Choice(["forest", "linear"]), default="forest", show_default=True)
@click.option("--ssm-treatment", type=click.Choice(["logistic", "rf"]), default="logistic", show_default=True)
@click.option("--ssm-selection", type=click.Choice(["logistic", "rf"]), default="logistic", show_default=True)
@click.option("--normalize-ipw/--no-normalize-ipw", default=True, show_default=True)
@forest_options
@click.option("--out", required=True, type=click.Path(), help="JSON report path.")
@click.option("--scores-out", default=None, type=click.Path(), help="Per-observation score CSV.")
@click.option("--nuisance-out", default=None, type=click.Path(), help="Nuisance prediction CSV.")
@click.pass_context
def estimate(ctx, data_path, y, d, s, drop, groups, method, folds, seed, level, clip,
             irm_outcome, irm_propensity, ssm_outcome, ssm_treatment, ssm_selection,
             normalize_ipw, out, scores_out, nuisance_out, **forest_kw):
    """Estimate the ATE and write a JSON report."""
    client = make_client(ctx.obj["server"])
    payload = {
        "dataset": _dataset_payload(data_path, y, d, s, drop, groups),
        "method": method,
        "folds": folds,
        "seed": seed,
        "level": level,
        "forest": _forest_payload(forest_kw),
        "learners": {
            "irm_outcome": irm_outcome,
            "irm_propensity": irm_propensity,
            "ssm_outcome": ssm_outcome,
            "ssm_treatment": ssm_treatment,
            "ssm_selection": ssm_selection,
            "normalize_ipw": normalize_ipw,
            "clip": clip,
        },
        "include_scores": scores_out is not None,
        "include_nuisance": nuisance_out is not None,
    }
    body = _post(client, "/estimate", payload)
    scores = body.pop("per_obs_scores", None)
    nuis = body.pop("nuisance", None)
    _write_json(out, body)
    if scores_out:
        _write_csv_rows(scores_out, ["row", "score"], [(i, v) for i, v in enumerate(scores)])
    if nuisance_out:
        ds = payload["dataset"]
        header = ["row", "fold", "y", "d", "s", "g1", "g0", "g_at_d", "alpha",
                  "alpha_plugin", "p1", "pis1", "pis0"]
        rows = []
        for i in range(len(ds["d"])):
            rows.append(
                (
                    i,
                    nuis["fold"][i],
                    ds["y"][i],
                    ds["d"][i],
                    ds["s"][i],
                    nuis["g1"][i],
                    nuis["g0"][i],
                    nuis["g_at_d"][i],
                    nuis["alpha"][i],
                    (nuis.get("alpha_plugin") or nuis["alpha"])[i],
                    (nuis.get("p1") or [None] * len(ds["d"]))[i],
                    (nuis.get("pis1") or [None] * len(ds["d"]))[i],
                    (nuis.get("pis0") or [None] * len(ds["d"]))[i],
                )
            )
        _write_csv_rows(nuisance_out, header, rows)
    click.echo(f"{body['method']}: theta={body['theta']:.6g} se={body['se']:.4g} "
               f"ci=[{body['ci_low']:.6g}, {body['ci_high']:.6g}]")


def _read_nuisance_csv(path: str):
    import csv as _csv

    cols: dict[str, list] = {}
    with Path(path).open(newline="") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            for k, v in row.items():
                cols.setdefault(k, []).append(v)

    def fcol(name, required=True):
        if name not in cols:
            if required:
                raise click.ClickException(f"nuisance CSV lacks column {name!r}")
            return None
        vals = cols[name]
        if any(v == "" for v in vals):
            return None
        return [float(v) for v in vals]

    s = [int(float(v)) for v in cols["s"]]
    g_at_d = fcol("g_at_d")
    yvals = [float(v) if v != "" else None for v in cols["y"]]
    residuals = [yv - g for yv, g, sv in zip(yvals, g_at_d, s) if sv == 1]
    return {
        "residuals": residuals,
        "alpha_s_values": fcol("alpha_plugin"),
        "p1": fcol("p1", required=False),
        "pis1": fcol("pis1", required=False),
        "pis0": fcol("pis0", required=False),
    }


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True),
              help="Estimate JSON report.")
@click.option("--nuisance", "nuisance_path", required=True, type=click.Path(exists=True),
              help="Nuisance prediction CSV from `estimate`.")
@click.option("--cy2", multiple=True, type=float, default=(0.05,), show_default=True)
@click.option("--rho", multiple=True, type=float, default=(1.0,), show_default=True)
@click.option("--cs2", multiple=True, type=float)
@click.option("--mu2", multiple=True, type=float,
              help="Latent partial R^2 values, mapped through the probit calibration.")
@click.option("--b-draws", default=10000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--grid", "grid_resolution", default=0, show_default=True,
              help="Contour grid resolution (0 disables).")
@click.option("--cy2-max", default=0.3, show_default=True)
@click.option("--eta-max", default=0.3, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--grid-out", default=None, type=click.Path(), help="Contour CSV path.")
@click.pass_context
def sensitivity(ctx, report_path, nuisance_path, cy2, rho, cs2, mu2, b_draws, seed,
                grid_resolution, cy2_max, eta_max, out, grid_out):
    """Bias bounds, robustness value, and calibration from an estimate report."""
    client = make_client(ctx.obj["server"])
    report = json.loads(Path(report_path).read_text())
    nuis = _read_nuisance_csv(nuisance_path)
    payload = {
        "theta_s": report["theta"],
        "se_s": report["se"],
        "cy2": list(cy2),
        "rho": list(rho),
        "cs2": list(cs2),
        "mu2": list(mu2),
        "b_draws": b_draws,
        "seed": seed,
        "level": report.get("level", 0.95),
        "contour_resolution": grid_resolution if grid_out else 0,
        "cy2_max": cy2_max,
        "eta_s2_max": eta_max,
        **nuis,
    }
    body = _post(client, "/sensitivity", payload)
    _write_json(out, body["report"])
    if grid_out:
        rows = [(r["cy2"], r["eta_s2"], r["cs2"], r["bound"], r["flips_sign"])
                for r in body.get("contour") or []]
        _write_csv_rows(grid_out, ["cy2", "eta_s2", "cs2", "bound", "flips_sign"], rows)
    rep = body["report"]
    click.echo(f"S2={rep['s2']:.6g} RV={rep['robustness_value']:.4g} "
               f"({len(rep['grid'])} grid points)")


@main.command()
@data_options
@click.option("--folds", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--level", default=0.95, show_default=True)
@forest_options
@click.option("--out", required=True, type=click.Path(), help="CSV table path.")
@click.option("--json-out", default=None, type=click.Path())
@click.pass_context
def benchmark(ctx, data_path, y, d, s, drop, groups, folds, seed, level, out, json_out, **forest_kw):
    """Drop covariate groups, refit, and report gain metrics."""
    if not groups:
        raise click.ClickException("--groups is required for benchmarking")
    client = make_client(ctx.obj["server"])
    ds = _dataset_payload(data_path, y, d, s, drop, groups)
    payload = {
        "dataset": ds,
        "groups": ds.get("groups"),
        "folds": folds,
        "seed": seed,
        "level": level,
        "forest": _forest_payload(forest_kw),
    }
    body = _post(client, "/benchmark", payload)
    header = ["group", "k", "theta_full", "theta_minus_j", "delta_theta",
              "abs_gy", "abs_gs", "abs_rho", "gy", "gs", "rho_j",
              "negative_gy", "negative_gs"]
    rows = []
    for r in body["results"]:
        rows.append(
            (
                r["group"], r["k"], r["theta_full"], r["theta_minus_j"], r["delta_theta"],
                abs(r["gy"]), abs(r["gs"]), abs(r["rho_j"]), r["gy"], r["gs"], r["rho_j"],
                r["diagnostics"]["negative_gy"], r["diagnostics"]["negative_gs"],
            )
        )
    _write_csv_rows(out, header, rows)
    if json_out:
        _write_json(json_out, body["results"])
    click.echo(f"benchmarked {len(rows)} group(s) -> {out}")


@main.command("simulate-study")
@click.option("--kind", type=click.Choice(["mar", "confounded"]), default="mar", show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="JSON DGP spec (required for confounded; optional overrides for mar).")
@click.option("--reps", default=50, show_default=True)
@click.option("--sizes", multiple=True, type=int, default=(1000, 4000), show_default=True)
@click.option("--methods", multiple=True, type=click.Choice(["IRM", "SSM", "FR"]),
              default=("IRM", "SSM", "FR"), show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--folds", default=2, show_default=True)
@click.option("--irm-outcome", type=click.Choice(["linear", "rf"]), default="rf", show_default=True)
@click.option("--ssm-outcome", type=click.Choice(["forest", "linear"]), default="forest", show_default=True)
@click.option("--clip", default=0.01, show_default=True)
@click.option("--study-workers", default=1, show_default=True)
@forest_options
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.pass_context
def simulate_study(ctx, kind, config_path, reps, sizes, methods, seed, folds,
                   irm_outcome, ssm_outcome, clip, study_workers, out_dir, **forest_kw):
    """Monte-Carlo comparison of the estimators; writes summary and raw results."""
    client = make_client(ctx.obj["server"])
    overrides = json.loads(Path(config_path).read_text()) if config_path else {}
    payload = {
        "methods": list(methods),
        "reps": reps,
        "sample_sizes": list(sizes),
        "base_seed": seed,
        "folds": folds,
        "forest": _forest_payload(forest_kw),
        "learners": {"irm_outcome": irm_outcome, "ssm_outcome": ssm_outcome, "clip": clip},
        "workers": study_workers,
        "include_raw": True,
    }
    if kind == "mar":
        payload["mar"] = {"n": 1000, "seed": seed, **overrides}
    else:
        if not config_path:
            raise click.ClickException("--config is required for the confounded design")
        payload["confounded"] = {"n": 1000, "seed": seed, **overrides}
    body = _post(client, "/study", payload)
    outp = Path(out_dir)
    outp.mkdir(parents=True, exist_ok=True)
    summary = body["summary"]
    raw = summary.pop("raw", [])
    _write_json(outp / "summary.json", summary)
    (outp / "summary.txt").write_text(body["table"])
    _write_csv_rows(
        outp / "reps.csv",
        ["method", "n", "rep", "theta", "se", "ci_low", "ci_high", "error"],
        [(r["method"], r["n"], r["rep"], r["theta"], r["se"], r["ci_low"], r["ci_high"],
          r["error"] or "") for r in raw],
    )
    click.echo(body["table"])


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
