"""ATE estimators: selection-blind baseline, efficient-score route, and the
doubly-robust forest route, plus the nuisance learners they share.

All three routes are cross-fitted over a FoldPlan and return an AteEstimate
whose point estimate is exactly the mean of its per-observation scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Dataset, FoldPlan
from .errors import ConfigError, SeparationError, TrainError
from .forest import ForestConfig, MomentForest, fit as fit_forests
from .normals import norm_quantile_two_sided

__all__ = [
    "LogisticModel",
    "fit_logistic",
    "PropensityModel",
    "RfParams",
    "plugin_alpha_short",
    "AteEstimate",
    "NuisanceFit",
    "IrmLearners",
    "SsmLearners",
    "estimate_irm",
    "estimate_ssm",
    "estimate_fr",
    "estimate_fr_with_nuisances",
    "estimate_ssm_with_nuisances",
    "estimate_irm_with_nuisances",
    "dr_estimate",
    "representer_check",
    "fit_propensity_pair",
]


# ---------------------------------------------------------------------------
# nuisance learners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticModel:
    """Logistic fit via iteratively reweighted least squares.

    coef[0] is the intercept; the small L2 penalty keeps coefficients finite
    under perfect separation (documented behavior: no error is raised).
    """

    coef: np.ndarray
    n_iter: int
    converged: bool

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        z = self.coef[0] + x @ self.coef[1:]
        return 1.0 / (1.0 + np.exp(-z))


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    l2: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LogisticModel:
    """Maximize the (weighted) Bernoulli likelihood with an L2 penalty.

    Raises SeparationError only if a Newton step diverges past 1e6, which
    the penalty prevents for any finite data.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ConfigError("labels must be binary 0/1")
    if y.min() == y.max():
        raise TrainError("both classes must be present")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    a = np.column_stack([np.ones(x.shape[0]), x])
    k = a.shape[1]
    beta = np.zeros(k)
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        z = a @ beta
        p = 1.0 / (1.0 + np.exp(-z))
        wt = w * p * (1.0 - p)
        grad = a.T @ (w * (y - p)) - l2 * beta
        hess = (a * wt[:, None]).T @ a + l2 * np.eye(k)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e6:
            raise SeparationError("logistic fit diverged; data may be perfectly separated")
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    return LogisticModel(coef=beta, n_iter=n_iter, converged=converged)


@dataclass(frozen=True)
class RfParams:
    """scikit-learn random forest settings for the baseline nuisances."""

    n_estimators: int = 200
    max_depth: int | None = 20
    min_samples_leaf: int = 5
    max_features: str | int | float = "sqrt"

    def kwargs(self, seed: int) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "max_features": self.max_features,
            "random_state": seed,
        }


class PropensityModel:
    """A fitted probability model with a clipping floor.

    kind is "logistic" (in-repo IRLS) or "probability-forest"
    (scikit-learn RandomForestClassifier); predictions are clipped into
    [clip, 1 - clip] and clip activations are tracked for diagnostics.
    """

    def __init__(self, kind: str, target: str, clip: float = 0.01, rf: RfParams = RfParams(), seed: int = 0):
        if not 0.0 < clip < 0.5:
            raise ConfigError("clip must be in (0, 0.5)")
        if kind not in ("logistic", "probability-forest"):
            raise ConfigError(f"unknown propensity kind {kind!r}")
        self.kind = kind
        self.target = target
        self.clip = clip
        self.rf = rf
        self.seed = seed
        self._model = None
        self.n_clipped = 0
        self.n_pred = 0
        self.prob_min = np.inf
        self.prob_max = -np.inf

    def fit(self, x: np.ndarray, labels: np.ndarray) -> "PropensityModel":
        if self.kind == "logistic":
            self._model = fit_logistic(x, labels)
        else:
            from sklearn.ensemble import RandomForestClassifier

            m = RandomForestClassifier(**self.rf.kwargs(self.seed))
            m.fit(np.asarray(x, dtype=float), np.asarray(labels, dtype=int))
            self._model = m
        return self

    def raw_proba(self, x: np.ndarray) -> np.ndarray:
        if self._model is None:
            raise TrainError("propensity model is not fitted")
        if self.kind == "logistic":
            return self._model.predict_proba(x)
        proba = self._model.predict_proba(np.asarray(x, dtype=float))
        classes = list(self._model.classes_)
        if 1 in classes:
            return proba[:, classes.index(1)]
        return np.zeros(x.shape[0])

    def predict(self, x: np.ndarray) -> np.ndarray:
        raw = self.raw_proba(x)
        clipped = np.clip(raw, self.clip, 1.0 - self.clip)
        self.n_clipped += int(np.sum(raw != clipped))
        self.n_pred += raw.size
        self.prob_min = min(self.prob_min, float(raw.min()))
        self.prob_max = max(self.prob_max, float(raw.max()))
        return clipped

    def diag(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "clip": self.clip,
            "clip_rate": (self.n_clipped / self.n_pred) if self.n_pred else 0.0,
            "prob_min": None if self.n_pred == 0 else self.prob_min,
            "prob_max": None if self.n_pred == 0 else self.prob_max,
        }


def _ols_fit(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    a = np.column_stack([np.ones(x.shape[0]), np.asarray(x, dtype=float)])
    coef, *_ = np.linalg.lstsq(a, np.asarray(y, dtype=float), rcond=None)
    return coef


def _ols_predict(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    return coef[0] + np.asarray(x, dtype=float) @ coef[1:]


def plugin_alpha_short(p1, pi_s1, pi_s0, d, s):
    """Closed-form plug-in weight: 1{d=1}s/(p1*pi_s1) - 1{d=0}s/((1-p1)*pi_s0)."""
    p1 = np.asarray(p1, dtype=float)
    d = np.asarray(d)
    s = np.asarray(s, dtype=float)
    pos = np.where(d == 1, s / (p1 * np.asarray(pi_s1, dtype=float)), 0.0)
    neg = np.where(d == 0, s / ((1.0 - p1) * np.asarray(pi_s0, dtype=float)), 0.0)
    out = pos - neg
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AteEstimate:
    """Point estimate with influence-function inference.

    theta is exactly the mean of per_obs_scores and
    se = sd(per_obs_scores, ddof=1)/sqrt(n).
    """

    theta: float
    se: float
    ci_low: float
    ci_high: float
    level: float
    method: str
    per_obs_scores: np.ndarray
    nuisance_diag: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores: np.ndarray, method: str, level: float = 0.95, diag: dict | None = None):
        scores = np.asarray(scores, dtype=float)
        theta = float(scores.mean())
        se = float(scores.std(ddof=1) / np.sqrt(scores.size))
        z = norm_quantile_two_sided(level)
        return cls(
            theta=theta,
            se=se,
            ci_low=theta - z * se,
            ci_high=theta + z * se,
            level=level,
            method=method,
            per_obs_scores=scores,
            nuisance_diag=diag or {},
        )

    def to_dict(self, include_scores: bool = False) -> dict:
        out = {
            "theta": self.theta,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "method": self.method,
            "n": int(self.per_obs_scores.size),
            "nuisance_diag": self.nuisance_diag,
        }
        if include_scores:
            out["per_obs_scores"] = self.per_obs_scores.tolist()
        return out


@dataclass
class NuisanceFit:
    """Per-observation out-of-fold nuisance predictions.

    g1/g0/g_at_d are outcome-regression values; alpha is the method's
    weighting function at the observed (d, x, s); alpha_plugin is the
    unnormalized inverse-probability plug-in used by the sensitivity
    moments; p1/pis1/pis0 are clipped probability predictions.
    """

    folds: FoldPlan
    g1: np.ndarray
    g0: np.ndarray
    g_at_d: np.ndarray
    alpha: np.ndarray
    p1: np.ndarray | None = None
    pis1: np.ndarray | None = None
    pis0: np.ndarray | None = None
    alpha_plugin: np.ndarray | None = None
    diag: dict = field(default_factory=dict)

    def residuals_selected(self, data: Dataset) -> np.ndarray:
        sel = data.s == 1
        return data.sy[sel] - self.g_at_d[sel]


def _fold_sizes(folds: FoldPlan) -> list[int]:
    return [int((folds.assignment == f).sum()) for f in range(folds.k)]


def fit_propensity_pair(
    data: Dataset,
    folds: FoldPlan,
    treatment_kind: str = "logistic",
    selection_kind: str = "logistic",
    clip: float = 0.01,
    rf: RfParams = RfParams(),
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Cross-fitted treatment and selection probabilities (p1, pis1, pis0)."""
    n = data.n
    p1 = np.empty(n)
    pis1 = np.empty(n)
    pis0 = np.empty(n)
    treat = PropensityModel(treatment_kind, "treatment", clip, rf, seed)
    sel = PropensityModel(selection_kind, "selection", clip, rf, seed + 1)
    forced = False
    for f in range(folds.k):
        tr, ev = folds.train_rows(f), folds.fold_rows(f)
        tm = PropensityModel(treatment_kind, "treatment", clip, rf, seed)
        tm.fit(data.x[tr], data.d[tr])
        p1[ev] = tm.predict(data.x[ev])
        if np.all(data.s[tr] == 1):
            # fully observed training outcomes: selection probability is one
            forced = True
            pis1[ev] = 1.0
            pis0[ev] = 1.0
            sm = PropensityModel(selection_kind, "selection", clip, rf, seed + 1)
        else:
            sm = PropensityModel(selection_kind, "selection", clip, rf, seed + 1)
            sm.fit(np.column_stack([data.x[tr], data.d[tr]]), data.s[tr])
            pis1[ev] = sm.predict(np.column_stack([data.x[ev], np.ones(ev.size)]))
            pis0[ev] = sm.predict(np.column_stack([data.x[ev], np.zeros(ev.size)]))
        treat.n_clipped += tm.n_clipped
        treat.n_pred += tm.n_pred
        treat.prob_min = min(treat.prob_min, tm.prob_min)
        treat.prob_max = max(treat.prob_max, tm.prob_max)
        sel.n_clipped += sm.n_clipped
        sel.n_pred += sm.n_pred
        sel.prob_min = min(sel.prob_min, sm.prob_min)
        sel.prob_max = max(sel.prob_max, sm.prob_max)
    diag = {"treatment": treat.diag(), "selection": sel.diag(), "fold_sizes": _fold_sizes(folds)}
    if forced:
        diag["selection"]["forced_to_one"] = True
    return p1, pis1, pis0, diag


@dataclass(frozen=True)
class IrmLearners:
    """Learners for the selection-blind baseline (fit on Y := S*Y)."""

    outcome: str = "rf"  # "linear" | "rf"
    propensity: str = "logistic"  # "logistic" | "rf"
    clip: float = 0.01
    rf: RfParams = RfParams()
    seed: int = 0


def estimate_irm_with_nuisances(
    data: Dataset, folds: FoldPlan, learners: IrmLearners = IrmLearners(), level: float = 0.95
) -> tuple[AteEstimate, NuisanceFit]:
    """AIPW that ignores the selection mechanism entirely.

    The outcome is taken as S*Y on all rows (missing outcomes enter as
    zeros), which is what "not adjusting for selection" means operationally;
    this baseline is deliberately biased whenever selection depends on
    treatment or covariates.
    """
    sy = data.sy
    n = data.n
    mu1 = np.empty(n)
    mu0 = np.empty(n)
    p1 = np.empty(n)
    prop_kind = "logistic" if learners.propensity == "logistic" else "probability-forest"
    pm_diag = None
    for f in range(folds.k):
        tr, ev = folds.train_rows(f), folds.fold_rows(f)
        for arm, out in ((1, mu1), (0, mu0)):
            rows = tr[data.d[tr] == arm]
            if rows.size < 2:
                raise TrainError(f"arm {arm} has too few training rows in fold {f}")
            if learners.outcome == "linear":
                coef = _ols_fit(data.x[rows], sy[rows])
                out[ev] = _ols_predict(coef, data.x[ev])
            elif learners.outcome == "rf":
                from sklearn.ensemble import RandomForestRegressor

                m = RandomForestRegressor(**learners.rf.kwargs(learners.seed + arm))
                m.fit(data.x[rows], sy[rows])
                out[ev] = m.predict(data.x[ev])
            else:
                raise ConfigError(f"unknown outcome learner {learners.outcome!r}")
        pm = PropensityModel(prop_kind, "treatment", learners.clip, learners.rf, learners.seed)
        pm.fit(data.x[tr], data.d[tr])
        p1[ev] = pm.predict(data.x[ev])
        pm_diag = pm.diag() if pm_diag is None else pm_diag

    d = data.d.astype(float)
    scores = mu1 - mu0 + d * (sy - mu1) / p1 - (1.0 - d) * (sy - mu0) / (1.0 - p1)
    diag = {"learners": {"outcome": learners.outcome, "propensity": learners.propensity},
            "treatment": pm_diag, "fold_sizes": _fold_sizes(folds)}
    est = AteEstimate.from_scores(scores, "IRM", level, diag)
    mu_at_d = np.where(data.d == 1, mu1, mu0)
    alpha = d / p1 - (1.0 - d) / (1.0 - p1)
    nus = NuisanceFit(folds=folds, g1=mu1, g0=mu0, g_at_d=mu_at_d, alpha=alpha, p1=p1, diag=diag)
    return est, nus


def estimate_irm(data, folds, learners: IrmLearners = IrmLearners(), level: float = 0.95) -> AteEstimate:
    return estimate_irm_with_nuisances(data, folds, learners, level)[0]


@dataclass(frozen=True)
class SsmLearners:
    """Learners for the efficient-score route."""

    outcome: str = "forest"  # "forest" | "linear"
    treatment: str = "logistic"  # "logistic" | "rf"
    selection: str = "logistic"
    clip: float = 0.01
    normalize_ipw: bool = True
    forest: ForestConfig = ForestConfig()
    fmap: str | None = None
    rf: RfParams = RfParams()
    seed: int = 0


def estimate_ssm_with_nuisances(
    data: Dataset, folds: FoldPlan, learners: SsmLearners = SsmLearners(), level: float = 0.95
) -> tuple[AteEstimate, NuisanceFit]:
    """Cross-fitted efficient score phi_1 - phi_0 with

    phi_d = 1{D=d} S (Y - mu_d(X)) / (p_d(X) pi_s(d, X)) + mu_d(X),

    with the inverse-probability weights rescaled to mean one per arm within
    each evaluation fold when normalize_ipw is on.
    """
    n = data.n
    sy = data.sy
    mu1 = np.empty(n)
    mu0 = np.empty(n)
    if learners.outcome == "forest":
        cfg = replace_seed(learners.forest, learners.seed)
        forests = fit_forests(data, folds, learners.fmap, cfg)
        for f in range(folds.k):
            ev = folds.fold_rows(f)
            mu1[ev] = forests[f].predict_g(1, data.x[ev])
            mu0[ev] = forests[f].predict_g(0, data.x[ev])
    elif learners.outcome == "linear":
        for f in range(folds.k):
            tr, ev = folds.train_rows(f), folds.fold_rows(f)
            for arm, out in ((1, mu1), (0, mu0)):
                rows = tr[(data.d[tr] == arm) & (data.s[tr] == 1)]
                if rows.size < 2:
                    raise TrainError(f"arm {arm} has too few selected training rows in fold {f}")
                coef = _ols_fit(data.x[rows], sy[rows])
                out[ev] = _ols_predict(coef, data.x[ev])
    else:
        raise ConfigError(f"unknown outcome learner {learners.outcome!r}")

    p1, pis1, pis0, pdiag = fit_propensity_pair(
        data,
        folds,
        "logistic" if learners.treatment == "logistic" else "probability-forest",
        "logistic" if learners.selection == "logistic" else "probability-forest",
        learners.clip,
        learners.rf,
        learners.seed,
    )

    d = data.d.astype(float)
    s = data.s.astype(float)
    w1 = d * s / (p1 * pis1)
    w0 = (1.0 - d) * s / ((1.0 - p1) * pis0)
    if learners.normalize_ipw:
        for f in range(folds.k):
            ev = folds.fold_rows(f)
            m1, m0 = w1[ev].mean(), w0[ev].mean()
            if m1 <= 0 or m0 <= 0:
                raise TrainError(f"fold {f} has no selected rows in one arm")
            w1[ev] = w1[ev] / m1
            w0[ev] = w0[ev] / m0
    scores = w1 * (sy - mu1) + mu1 - (w0 * (sy - mu0) + mu0)
    diag = {
        "learners": {"outcome": learners.outcome, "treatment": learners.treatment, "selection": learners.selection},
        "normalize_ipw": learners.normalize_ipw,
        **pdiag,
    }
    est = AteEstimate.from_scores(scores, "SSM", level, diag)
    mu_at_d = np.where(data.d == 1, mu1, mu0)
    alpha_plugin = plugin_alpha_short(p1, pis1, pis0, data.d, data.s)
    nus = NuisanceFit(
        folds=folds, g1=mu1, g0=mu0, g_at_d=mu_at_d, alpha=alpha_plugin,
        p1=p1, pis1=pis1, pis0=pis0, alpha_plugin=alpha_plugin, diag=diag,
    )
    return est, nus


def estimate_ssm(data, folds, learners: SsmLearners = SsmLearners(), level: float = 0.95) -> AteEstimate:
    return estimate_ssm_with_nuisances(data, folds, learners, level)[0]


def replace_seed(cfg: ForestConfig, seed: int) -> ForestConfig:
    return cfg if cfg.seed == seed else replace(cfg, seed=seed)


def dr_estimate(
    data: Dataset,
    g1: np.ndarray,
    g0: np.ndarray,
    alpha: np.ndarray,
    method: str = "FR",
    level: float = 0.95,
    diag: dict | None = None,
) -> AteEstimate:
    """Doubly-robust score from given nuisance values.

    score_i = g1_i - g0_i + alpha_i * s_i * (y_i - g_{d_i}); unselected rows
    contribute only the regression contrast.
    """
    g_at_d = np.where(data.d == 1, g1, g0)
    scores = (g1 - g0) + np.asarray(alpha) * data.s * (data.sy - g_at_d)
    return AteEstimate.from_scores(scores, method, level, diag)


def estimate_fr_with_nuisances(
    data: Dataset,
    folds: FoldPlan,
    fmap: str | None = None,
    cfg: ForestConfig = ForestConfig(),
    level: float = 0.95,
    propensity_clip: float = 0.01,
) -> tuple[AteEstimate, NuisanceFit, list[MomentForest]]:
    """Forest-based doubly-robust estimate with out-of-fold heads.

    Also fits cross-fitted logistic propensities so downstream sensitivity
    analysis has plug-in weights and probability inputs available.
    """
    forests = fit_forests(data, folds, fmap, cfg)
    n = data.n
    g1 = np.empty(n)
    g0 = np.empty(n)
    alpha = np.empty(n)
    for f in range(folds.k):
        ev = folds.fold_rows(f)
        g1[ev] = forests[f].predict_g(1, data.x[ev])
        g0[ev] = forests[f].predict_g(0, data.x[ev])
        alpha[ev] = forests[f].predict_alpha(data.d[ev], data.x[ev], data.s[ev])
    p1, pis1, pis0, pdiag = fit_propensity_pair(data, folds, clip=propensity_clip, seed=cfg.seed)
    diag = {"forest": {"n_trees": cfg.n_trees, "feature_map": cfg.feature_map}, **pdiag}
    est = dr_estimate(data, g1, g0, alpha, "FR", level, diag)
    g_at_d = np.where(data.d == 1, g1, g0)
    nus = NuisanceFit(
        folds=folds, g1=g1, g0=g0, g_at_d=g_at_d, alpha=alpha,
        p1=p1, pis1=pis1, pis0=pis0,
        alpha_plugin=plugin_alpha_short(p1, pis1, pis0, data.d, data.s),
        diag=diag,
    )
    return est, nus, forests


def estimate_fr(
    data, folds, fmap: str | None = None, cfg: ForestConfig = ForestConfig(), level: float = 0.95
) -> AteEstimate:
    return estimate_fr_with_nuisances(data, folds, fmap, cfg, level)[0]


def representer_check(
    alpha_hat: np.ndarray | Callable,
    g_test: Callable,
    data: Dataset,
) -> tuple[float, float]:
    """Empirical two sides of E[alpha * g] = E[g(1,x,1) - g(0,x,1)].

    alpha_hat is either a per-observation array or a callable (d, x, s).
    """
    if callable(alpha_hat):
        a = np.asarray(alpha_hat(data.d, data.x, data.s), dtype=float)
    else:
        a = np.asarray(alpha_hat, dtype=float)
    gz = np.asarray(g_test(data.d, data.x, data.s), dtype=float)
    ones = np.ones(data.n, dtype=np.int64)
    lhs = float(np.mean(a * gz))
    rhs = float(np.mean(g_test(ones, data.x, ones) - g_test(np.zeros_like(ones), data.x, ones)))
    return lhs, rhs
