"""Pydantic request/response models for the compute service."""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..data import Dataset
from ..dgp import ConfoundedDgpConfig, MarDgpConfig
from ..estimators import IrmLearners, RfParams, SsmLearners
from ..forest import ForestConfig


class DatasetPayload(BaseModel):
    """Wire form of an observed sample; y entries are null where s=0."""

    covariate_names: list[str]
    y: list[Optional[float]]
    d: list[int]
    s: list[int]
    x: list[list[float]]
    groups: Optional[dict[str, list[str]]] = None

    @classmethod
    def from_dataset(cls, data: Dataset) -> "DatasetPayload":
        mask = np.ma.getmaskarray(data.y)
        yd = np.ma.getdata(data.y)
        groups = None
        if data.groups:
            groups = {
                g: [data.covariate_names[i] for i in idx] for g, idx in data.groups.items()
            }
        return cls(
            covariate_names=list(data.covariate_names),
            y=[None if m else float(v) for v, m in zip(yd, mask)],
            d=[int(v) for v in data.d],
            s=[int(v) for v in data.s],
            x=[[float(v) for v in row] for row in data.x],
            groups=groups,
        )

    def to_dataset(self) -> Dataset:
        y = np.array([0.0 if v is None else float(v) for v in self.y])
        mask = np.array([v is None for v in self.y])
        groups = None
        if self.groups:
            idx = {c: i for i, c in enumerate(self.covariate_names)}
            groups = {g: tuple(idx[c] for c in cols) for g, cols in self.groups.items()}
        return Dataset(
            y=np.ma.masked_array(y, mask=mask),
            d=np.asarray(self.d),
            s=np.asarray(self.s),
            x=np.asarray(self.x, dtype=float),
            covariate_names=tuple(self.covariate_names),
            groups=groups,
        )


class MarSimRequest(BaseModel):
    n: int
    p: int = 5
    theta0: float = 1.0
    beta0: Optional[list[float]] = None
    sigma_x: float = 2.0
    seed: int = 0

    def to_config(self) -> MarDgpConfig:
        return MarDgpConfig(
            n=self.n,
            p=self.p,
            theta0=self.theta0,
            beta0=None if self.beta0 is None else tuple(self.beta0),
            sigma_x=self.sigma_x,
            seed=self.seed,
        )


class ConfoundedSimRequest(BaseModel):
    n: int
    x_levels: list[list[float]]
    x_probs: list[float]
    a_levels: list[float] = [-1.0, 1.0]
    a_probs: list[float] = [0.5, 0.5]
    treat_probs: list[float]
    sel_probs: list[list[list[float]]]
    outcome_means: list[list[list[float]]]
    noise_sd: float = 0.0
    seed: int = 0

    def to_config(self) -> ConfoundedDgpConfig:
        return ConfoundedDgpConfig(
            n=self.n,
            x_levels=tuple(tuple(v) for v in self.x_levels),
            x_probs=tuple(self.x_probs),
            a_levels=tuple(self.a_levels),
            a_probs=tuple(self.a_probs),
            treat_probs=tuple(self.treat_probs),
            sel_probs=tuple(tuple(tuple(c) for c in row) for row in self.sel_probs),
            outcome_means=tuple(tuple(tuple(c) for c in row) for row in self.outcome_means),
            noise_sd=self.noise_sd,
            seed=self.seed,
        )


class SimResponse(BaseModel):
    dataset: DatasetPayload
    truth: dict


class ForestOptions(BaseModel):
    n_trees: int = 100
    min_leaf: int = 10
    max_depth: int = 10
    subsample_fraction: float = 0.5
    mtry: Optional[int] = None
    ridge: Optional[float] = None
    honest: bool = False
    multitask_weight: float = 0.5
    feature_map: str = "arm-intercept"
    g_leaf: str = "arm-linear"
    max_thresholds: int = 32
    min_arm_selected: int = 2
    leaf_ridge_fraction: float = 0.01
    min_gain: float = 0.0
    workers: int = 1

    def to_config(self, seed: int) -> ForestConfig:
        return ForestConfig(seed=seed, **self.model_dump())


class RfOptions(BaseModel):
    n_estimators: int = 200
    max_depth: Optional[int] = 20
    min_samples_leaf: int = 5
    max_features: str = "sqrt"

    def to_params(self) -> RfParams:
        return RfParams(**self.model_dump())


class LearnerOptions(BaseModel):
    irm_outcome: Literal["linear", "rf"] = "rf"
    irm_propensity: Literal["logistic", "rf"] = "logistic"
    ssm_outcome: Literal["forest", "linear"] = "forest"
    ssm_treatment: Literal["logistic", "rf"] = "logistic"
    ssm_selection: Literal["logistic", "rf"] = "logistic"
    normalize_ipw: bool = True
    clip: float = 0.01
    rf: RfOptions = Field(default_factory=RfOptions)

    def irm(self, seed: int) -> IrmLearners:
        return IrmLearners(
            outcome=self.irm_outcome,
            propensity=self.irm_propensity,
            clip=self.clip,
            rf=self.rf.to_params(),
            seed=seed,
        )

    def ssm(self, seed: int, forest: ForestConfig) -> SsmLearners:
        return SsmLearners(
            outcome=self.ssm_outcome,
            treatment=self.ssm_treatment,
            selection=self.ssm_selection,
            clip=self.clip,
            normalize_ipw=self.normalize_ipw,
            forest=forest,
            rf=self.rf.to_params(),
            seed=seed,
        )


class EstimateRequest(BaseModel):
    dataset: DatasetPayload
    method: Literal["irm", "ssm", "fr"] = "fr"
    folds: int = 2
    seed: int = 0
    level: float = 0.95
    forest: ForestOptions = Field(default_factory=ForestOptions)
    learners: LearnerOptions = Field(default_factory=LearnerOptions)
    include_scores: bool = False
    include_nuisance: bool = False


class NuisancePayload(BaseModel):
    fold: list[int]
    g1: list[float]
    g0: list[float]
    g_at_d: list[float]
    alpha: list[float]
    p1: Optional[list[float]] = None
    pis1: Optional[list[float]] = None
    pis0: Optional[list[float]] = None
    alpha_plugin: Optional[list[float]] = None


class EstimateResponse(BaseModel):
    theta: float
    se: float
    ci_low: float
    ci_high: float
    level: float
    method: str
    n: int
    folds: int
    seed: int
    nuisance_diag: dict
    per_obs_scores: Optional[list[float]] = None
    nuisance: Optional[NuisancePayload] = None


class SensitivityRequest(BaseModel):
    theta_s: float
    se_s: float
    residuals: list[float]
    alpha_s_values: list[float]
    cy2: list[float] = [0.05]
    rho: list[float] = [1.0]
    cs2: list[float] = []
    mu2: list[float] = []
    p1: Optional[list[float]] = None
    pis1: Optional[list[float]] = None
    pis0: Optional[list[float]] = None
    b_draws: int = 10000
    seed: int = 0
    level: float = 0.95
    contour_resolution: int = 0  # 0 disables the contour grid
    cy2_max: float = 0.3
    eta_s2_max: float = 0.3


class SensitivityResponse(BaseModel):
    report: dict
    contour: Optional[list[dict]] = None


class CalibrateRequest(BaseModel):
    p1: list[float]
    pis1: list[float]
    pis0: list[float]
    mu2_grid: Optional[list[float]] = None
    b_draws: int = 10000
    seed: int = 0


class BenchmarkRequest(BaseModel):
    dataset: DatasetPayload
    groups: Optional[dict[str, list[str]]] = None
    folds: int = 2
    seed: int = 0
    forest: ForestOptions = Field(default_factory=ForestOptions)
    level: float = 0.95


class BenchmarkResponse(BaseModel):
    results: list[dict]


class StudyRequest(BaseModel):
    mar: Optional[MarSimRequest] = None
    confounded: Optional[ConfoundedSimRequest] = None
    methods: list[Literal["IRM", "SSM", "FR"]] = ["IRM", "SSM", "FR"]
    reps: int = 50
    sample_sizes: list[int] = [1000, 4000]
    base_seed: int = 0
    folds: int = 2
    level: float = 0.95
    forest: ForestOptions = Field(default_factory=ForestOptions)
    learners: LearnerOptions = Field(default_factory=LearnerOptions)
    workers: int = 1
    include_raw: bool = True


class StudyResponse(BaseModel):
    summary: dict
    table: str
