"""Monte-Carlo replication studies comparing the three estimators."""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import make_folds
from .dgp import ConfoundedDgpConfig, MarDgpConfig, enumerate_tables, gen_confounded, gen_mar
from .errors import ConfigError, McError, RieszSelectError
from .estimators import IrmLearners, SsmLearners, estimate_fr, estimate_irm, estimate_ssm
from .forest import ForestConfig

__all__ = ["McConfig", "RepRecord", "CellSummary", "McSummary", "run_mc", "summarize"]

_METHODS = ("IRM", "SSM", "FR")


@dataclass(frozen=True)
class McConfig:
    """Study design: a DGP, the methods to run, sizes, and replication count."""

    dgp: MarDgpConfig | ConfoundedDgpConfig
    methods: tuple[str, ...] = _METHODS
    reps: int = 50
    sample_sizes: tuple[int, ...] = (1000, 4000)
    base_seed: int = 0
    k_folds: int = 2
    level: float = 0.95
    irm: IrmLearners = IrmLearners()
    ssm: SsmLearners = SsmLearners()
    fr: ForestConfig = ForestConfig()
    fr_fmap: str | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.sample_sizes or any(n <= 0 for n in self.sample_sizes):
            raise ConfigError("sample sizes must be positive")
        bad = [m for m in self.methods if m not in _METHODS]
        if bad:
            raise ConfigError(f"methods must be a subset of {_METHODS}, got {bad}")

    def theta0(self) -> float:
        if isinstance(self.dgp, MarDgpConfig):
            return float(self.dgp.theta0)
        return float(enumerate_tables(self.dgp).theta_0)


@dataclass(frozen=True)
class RepRecord:
    method: str
    n: int
    rep: int
    theta: float | None
    se: float | None
    ci_low: float | None
    ci_high: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n": self.n,
            "rep": self.rep,
            "theta": self.theta,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "error": self.error,
        }


@dataclass(frozen=True)
class CellSummary:
    method: str
    n: int
    mean_ate: float
    mean_se: float
    mae: float
    coverage: float
    n_ok: int
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n": self.n,
            "mean_ate": self.mean_ate,
            "mean_se": self.mean_se,
            "mae": self.mae,
            "coverage": self.coverage,
            "reps": self.n_ok,
            "failures": self.n_failed,
        }


@dataclass(frozen=True)
class McSummary:
    theta0: float
    cells: tuple[CellSummary, ...]
    raw: tuple[RepRecord, ...]

    def cell(self, method: str, n: int) -> CellSummary:
        for c in self.cells:
            if c.method == method and c.n == n:
                return c
        raise KeyError(f"no cell ({method}, {n})")

    def to_dict(self, include_raw: bool = True) -> dict:
        out = {"theta0": self.theta0, "cells": [c.to_dict() for c in self.cells]}
        if include_raw:
            out["raw"] = [r.to_dict() for r in self.raw]
        return out


def _seed_ints(base_seed: int, rep: int, n: int, count: int) -> list[int]:
    ss = np.random.SeedSequence([int(base_seed), int(rep), int(n)])
    return [int(v) for v in ss.generate_state(count, dtype=np.uint32)]


def _run_one(cfg: McConfig, rep: int, n: int) -> list[RepRecord]:
    data_seed, fold_seed, est_seed = _seed_ints(cfg.base_seed, rep, n, 3)
    try:
        if isinstance(cfg.dgp, MarDgpConfig):
            data = gen_mar(replace(cfg.dgp, n=n, seed=data_seed))
        else:
            data, _ = gen_confounded(replace(cfg.dgp, n=n, seed=data_seed))
        folds = make_folds(data, cfg.k_folds, fold_seed)
    except RieszSelectError as exc:
        return [
            RepRecord(m, n, rep, None, None, None, None, f"{type(exc).__name__}: {exc}")
            for m in cfg.methods
        ]
    records = []
    for method in cfg.methods:
        try:
            if method == "IRM":
                est = estimate_irm(data, folds, replace(cfg.irm, seed=est_seed), cfg.level)
            elif method == "SSM":
                est = estimate_ssm(data, folds, replace(cfg.ssm, seed=est_seed), cfg.level)
            else:
                est = estimate_fr(data, folds, cfg.fr_fmap, replace(cfg.fr, seed=est_seed), cfg.level)
            records.append(RepRecord(method, n, rep, est.theta, est.se, est.ci_low, est.ci_high))
        except RieszSelectError as exc:
            records.append(
                RepRecord(method, n, rep, None, None, None, None, f"{type(exc).__name__}: {exc}")
            )
    return records


def run_mc(cfg: McConfig) -> McSummary:
    """Run the study; deterministic for any worker count.

    Per-replication seeds derive from (base_seed, rep, n); all methods in one
    replication share the generated dataset. Failed replications are recorded
    and excluded from cell means; a cell aborts the study if more than 10% of
    its replications fail.
    """
    jobs = [(rep, n) for n in cfg.sample_sizes for rep in range(cfg.reps)]
    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda rn: _run_one(cfg, rn[0], rn[1]), jobs))
    else:
        results = [_run_one(cfg, rep, n) for rep, n in jobs]
    raw = [rec for group in results for rec in group]
    order = {m: i for i, m in enumerate(cfg.methods)}
    raw.sort(key=lambda r: (r.n, order[r.method], r.rep))

    theta0 = cfg.theta0()
    cells = []
    for n in cfg.sample_sizes:
        for method in cfg.methods:
            recs = [r for r in raw if r.n == n and r.method == method]
            ok = [r for r in recs if not r.failed]
            n_fail = len(recs) - len(ok)
            if n_fail > 0.10 * len(recs):
                raise McError(
                    f"cell ({method}, n={n}): {n_fail}/{len(recs)} replications failed"
                )
            thetas = np.array([r.theta for r in ok])
            ses = np.array([r.se for r in ok])
            cover = np.array([r.ci_low <= theta0 <= r.ci_high for r in ok])
            cells.append(
                CellSummary(
                    method=method,
                    n=n,
                    mean_ate=float(thetas.mean()),
                    mean_se=float(ses.mean()),
                    mae=float(np.abs(thetas - theta0).mean()),
                    coverage=float(cover.mean()),
                    n_ok=len(ok),
                    n_failed=n_fail,
                )
            )
    return McSummary(theta0=theta0, cells=tuple(cells), raw=tuple(raw))


def summarize(summary: McSummary) -> str:
    """Aligned text table of the per-cell summaries."""
    header = f"{'method':<8}{'n':>8}{'ate':>10}{'se':>10}{'mae':>10}{'coverage':>10}{'reps':>6}{'fail':>6}"
    lines = [f"theta0 = {summary.theta0:.6g}", header, "-" * len(header)]
    for c in summary.cells:
        lines.append(
            f"{c.method:<8}{c.n:>8}{c.mean_ate:>10.4f}{c.mean_se:>10.4f}"
            f"{c.mae:>10.4f}{c.coverage:>10.3f}{c.n_ok:>6}{c.n_failed:>6}"
        )
    return "\n".join(lines) + "\n"
