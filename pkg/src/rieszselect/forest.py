"""Generalized random forest for local moment problems.

Each node of each tree solves the linear system J(node) beta = M(node), where
J is the mean outer product of the feature-map rows and M is the mean moment
vector; the weighting head predicts <r(d, x, s), beta(leaf)>. Splits are
chosen on covariates only, maximizing the aggregate child criterion
sum_child |child| * beta' J beta (equivalently, minimizing the local moment
loss). In multitask mode the criterion is mixed with an arm-wise
variance-reduction criterion for the regression head, which shares the tree
structure and stores its own leaf coefficients.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, FoldPlan
from .errors import ConfigError, SingularNodeError, TrainError
from .features import ArmInterceptMap, ArmLinearMap, FeatureMap, make_map, map_from_dict

__all__ = ["ForestConfig", "NodeSolution", "MomentForest", "solve_node", "split_score", "fit"]

_RESIDUAL_TOL = 1e-10
_MAX_ESCALATIONS = 6


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters; defaults are recorded in every serialized model.

    ridge=None uses the per-node default 1e-6 * trace(J)/dim (with an
    absolute 1e-6 fallback when the node carries no selected rows) and
    escalates tenfold up to six times if the system stays numerically
    singular. multitask_weight is the weight on the regression criterion
    (0 = pure weighting criterion, 1 = pure regression).

    g_leaf selects the regression-head leaf basis: "match" reuses the
    feature map's arm basis; "arm-linear" fits arm-wise linear leaf models
    even under the intercept-only map (model-tree style; split scoring
    always uses the arm-wise means criterion).

    min_arm_selected keeps every child of every split with at least this
    many selected rows per treatment arm, so leaf systems stay nonsingular
    and leaf weights stay bounded by leaf size; without it a leaf that
    loses one arm solves against the ridge alone and predicts weights of
    order 1/ridge.

    leaf_ridge_fraction stabilizes leaf solutions: leaf systems use at
    least this fraction of trace(J)/dim as ridge. Affine feature maps are
    near-collinear inside narrow leaves (the scaled covariate barely
    varies), and a purely relative 1e-6 ridge then amplifies the near-null
    moment component into predictions orders of magnitude too large; one
    percent of the mean eigenvalue shrinks those directions while leaving
    well-identified ones essentially untouched. Split scoring is not
    affected.

    min_gain gates splitting: a node splits only when the best candidate
    improves the node's own criterion value by this relative margin.
    Zero reproduces the always-split behavior; small positive values stop
    coin-flip splits on uninformative covariates (both criterion parts
    weakly increase under any split, so pure-noise features otherwise win
    occasionally and inflate out-of-fold error).
    """

    n_trees: int = 100
    min_leaf: int = 10
    max_depth: int = 10
    subsample_fraction: float = 0.5
    mtry: int | None = None
    ridge: float | None = None
    honest: bool = False
    multitask_weight: float = 0.5
    seed: int = 0
    feature_map: str = "arm-intercept"
    g_leaf: str = "arm-linear"
    max_thresholds: int = 32
    min_arm_selected: int = 2
    leaf_ridge_fraction: float = 0.01
    min_gain: float = 0.0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.min_leaf < 1 or self.max_depth < 0:
            raise ConfigError("n_trees, min_leaf must be >= 1 and max_depth >= 0")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ConfigError("subsample_fraction must be in (0, 1]")
        if not 0.0 <= self.multitask_weight <= 1.0:
            raise ConfigError("multitask_weight must be in [0, 1]")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.g_leaf not in ("match", "arm-linear"):
            raise ConfigError("g_leaf must be 'match' or 'arm-linear'")
        if self.max_thresholds < 2:
            raise ConfigError("max_thresholds must be >= 2")
        if self.min_arm_selected < 0:
            raise ConfigError("min_arm_selected must be >= 0")
        if self.leaf_ridge_fraction < 0:
            raise ConfigError("leaf_ridge_fraction must be >= 0")
        if self.min_gain < 0:
            raise ConfigError("min_gain must be >= 0")

    def to_dict(self) -> dict:
        # workers is runtime parallelism, not model identity
        return {
            "n_trees": self.n_trees,
            "min_leaf": self.min_leaf,
            "max_depth": self.max_depth,
            "subsample_fraction": self.subsample_fraction,
            "mtry": self.mtry,
            "ridge": self.ridge,
            "honest": self.honest,
            "multitask_weight": self.multitask_weight,
            "seed": self.seed,
            "feature_map": self.feature_map,
            "g_leaf": self.g_leaf,
            "max_thresholds": self.max_thresholds,
            "min_arm_selected": self.min_arm_selected,
            "leaf_ridge_fraction": self.leaf_ridge_fraction,
            "min_gain": self.min_gain,
        }


@dataclass(frozen=True)
class NodeSolution:
    """Local system and its ridge-stabilized solution."""

    j: np.ndarray
    m: np.ndarray
    beta: np.ndarray
    count: int
    ridge_used: float

    def __post_init__(self) -> None:
        resid = self.j @ self.beta + self.ridge_used * self.beta - self.m
        scale = max(1.0, float(np.linalg.norm(self.m)))
        if not np.all(np.isfinite(self.beta)) or np.linalg.norm(resid) > 1e-8 * scale:
            raise SingularNodeError("node solution does not satisfy its linear system")


def _base_ridge(j: np.ndarray, dim: int, cfg_ridge: float | None) -> float:
    if cfg_ridge is not None:
        return float(cfg_ridge)
    tr = float(np.trace(j)) / dim
    return 1e-6 * tr if tr > 0 else 1e-6


def _solve_schedule(j: np.ndarray, m: np.ndarray, base: float) -> tuple[np.ndarray, float]:
    """Solve (J + rho I) beta = M, escalating rho tenfold until stable."""
    dim = j.shape[0]
    eye = np.eye(dim)
    scale = max(1.0, float(np.linalg.norm(m)))
    rho = base
    for attempt in range(_MAX_ESCALATIONS + 1):
        try:
            beta = np.linalg.solve(j + rho * eye, m)
        except np.linalg.LinAlgError:
            beta = None
        if beta is not None and np.all(np.isfinite(beta)):
            resid = j @ beta + rho * beta - m
            if np.linalg.norm(resid) <= _RESIDUAL_TOL * scale:
                return beta, rho
        rho = (base if base > 0 else 1e-6) * 10.0 ** (attempt + 1)
    raise SingularNodeError(f"system stayed singular after {_MAX_ESCALATIONS} ridge escalations")


def solve_node(
    rows: Sequence[int] | np.ndarray,
    data: Dataset,
    fmap: FeatureMap,
    ridge: float | None = None,
    weights: np.ndarray | None = None,
) -> NodeSolution:
    """Solve the local moment system on the given rows.

    J is the (weighted) mean of r r', M the mean moment vector; the count
    reported is the number of rows (weights only reweight the means).
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("rows must be non-empty")
    r = fmap.eval_rows(data.d[rows], data.x[rows], data.s[rows])
    mom = fmap.moment_rows(data.x[rows])
    if weights is None:
        w = np.ones(rows.size)
    else:
        w = np.asarray(weights, dtype=float)
    wsum = w.sum()
    j = (r * w[:, None]).T @ r / wsum
    m = (mom * w[:, None]).sum(axis=0) / wsum
    beta, used = _solve_schedule(j, m, _base_ridge(j, fmap.dim, ridge))
    return NodeSolution(j=j, m=m, beta=beta, count=int(rows.size), ridge_used=used)


def _batch_child_scores(
    j: np.ndarray, m: np.ndarray, counts: np.ndarray, cfg_ridge: float | None, blocks
) -> np.ndarray:
    """count * beta' J beta for a batch of child systems (k, dim, dim)."""
    k, dim = m.shape
    tr = np.trace(j, axis1=1, axis2=2) / dim
    if cfg_ridge is not None:
        rho = np.full(k, float(cfg_ridge))
    else:
        rho = np.where(tr > 0, 1e-6 * tr, 1e-6)
    quad = np.zeros(k)
    ok = np.ones(k, dtype=bool)
    groups = blocks if blocks is not None else (tuple(range(dim)),)
    for b in groups:
        idx = np.asarray(b, dtype=np.int64)
        jb = j[:, idx[:, None], idx[None, :]]
        mb = m[:, idx]
        a = jb + rho[:, None, None] * np.eye(idx.size)
        try:
            beta = np.linalg.solve(a, mb[..., None])[..., 0]
        except np.linalg.LinAlgError:
            ok[:] = False
            break
        resid = np.einsum("kij,kj->ki", a, beta) - mb
        scale = np.maximum(1.0, np.linalg.norm(mb, axis=1))
        ok &= np.isfinite(beta).all(axis=1)
        ok &= np.linalg.norm(resid, axis=1) <= _RESIDUAL_TOL * scale
        quad += np.einsum("ki,kij,kj->k", beta, jb, beta)
    out = np.where(ok, counts * quad, np.nan)
    bad = np.flatnonzero(~ok)
    for i in bad:  # rare: fall back to the full escalation schedule
        try:
            base = _base_ridge(j[i], dim, cfg_ridge)
            beta, _ = _solve_schedule(j[i], m[i], base)
            out[i] = counts[i] * float(beta @ j[i] @ beta)
        except SingularNodeError:
            out[i] = -np.inf
    return out


def _reg_explained(c1, y1, c0, y0):
    """Arm-wise explained sum of squares under per-arm means."""
    e1 = np.where(c1 > 0, y1 * y1 / np.maximum(c1, 1), 0.0)
    e0 = np.where(c0 > 0, y0 * y0 / np.maximum(c0, 1), 0.0)
    return e1 + e0


class _NodeStats:
    """Per-row arrays a tree needs, precomputed once per forest."""

    def __init__(self, data: Dataset, rows: np.ndarray, fmap: FeatureMap):
        self.x = data.x[rows]
        self.d = data.d[rows]
        self.s = data.s[rows]
        self.r = fmap.eval_rows(self.d, self.x, self.s)
        self.mom = fmap.moment_rows(self.x)
        sy = data.sy[rows]
        self.s1d1 = ((self.s == 1) & (self.d == 1)).astype(float)
        self.s1d0 = ((self.s == 1) & (self.d == 0)).astype(float)
        self.y1 = sy * self.s1d1
        self.y0 = sy * self.s1d0
        self.sy = sy
        self.rows = rows  # positions into the original dataset
        self.fast = isinstance(fmap, ArmInterceptMap)
        self.blocks = fmap.blocks
        self.dim = fmap.dim


def _candidate_boundaries(vals_sorted: np.ndarray, min_leaf: int, max_thresholds: int) -> np.ndarray:
    m = vals_sorted.size
    lo, hi = min_leaf - 1, m - min_leaf - 1
    if hi < lo:
        return np.empty(0, dtype=np.int64)
    diffs = np.diff(vals_sorted[lo : hi + 2])
    cand = lo + np.flatnonzero(diffs > 0)
    if cand.size > max_thresholds:
        pick = np.unique(np.linspace(0, cand.size - 1, max_thresholds).astype(np.int64))
        cand = cand[pick]
    return cand


def _score_boundaries(stats: _NodeStats, sub: np.ndarray, cand: np.ndarray, cfg: ForestConfig):
    """Vector of split scores for the given sorted order and boundaries."""
    m = sub.size
    n_l = (cand + 1).astype(float)
    n_r = m - n_l
    w = cfg.multitask_weight

    c1 = np.cumsum(stats.s1d1[sub])
    c0 = np.cumsum(stats.s1d0[sub])
    c1_l, c0_l = c1[cand], c0[cand]
    c1_r, c0_r = c1[-1] - c1_l, c0[-1] - c0_l

    if stats.fast:
        # J = diag(c1, c0)/n and M = [1, -1]: closed form for count * beta'Jbeta
        def side(c1s, c0s, n):
            tr = (c1s + c0s) / (2.0 * n)
            rho = np.full_like(tr, float(cfg.ridge)) if cfg.ridge is not None else np.where(tr > 0, 1e-6 * tr, 1e-6)
            m1, m0 = c1s / n, c0s / n
            return n * (m1 / (m1 + rho) ** 2 + m0 / (m0 + rho) ** 2)

        riesz = side(c1_l, c0_l, n_l) + side(c1_r, c0_r, n_r)
    else:
        r_s = stats.r[sub]
        mom_s = stats.mom[sub]
        outer = r_s[:, :, None] * r_s[:, None, :]
        cum_j = np.cumsum(outer, axis=0)
        cum_m = np.cumsum(mom_s, axis=0)
        j_l = cum_j[cand] / n_l[:, None, None]
        m_l = cum_m[cand] / n_l[:, None]
        j_r = (cum_j[-1] - cum_j[cand]) / n_r[:, None, None]
        m_r = (cum_m[-1] - cum_m[cand]) / n_r[:, None]
        riesz = _batch_child_scores(j_l, m_l, n_l, cfg.ridge, stats.blocks) + _batch_child_scores(
            j_r, m_r, n_r, cfg.ridge, stats.blocks
        )

    if w > 0.0:
        y1 = np.cumsum(stats.y1[sub])
        y0 = np.cumsum(stats.y0[sub])
        reg = _reg_explained(c1_l, y1[cand], c0_l, y0[cand]) + _reg_explained(
            c1_r, y1[-1] - y1[cand], c0_r, y0[-1] - y0[cand]
        )
        score = (1.0 - w) * riesz + w * reg
    else:
        score = riesz
    k = cfg.min_arm_selected
    if k > 0:
        feasible = (c1_l >= k) & (c0_l >= k) & (c1_r >= k) & (c0_r >= k)
        score = np.where(feasible, score, -np.inf)
    return score


def split_score(
    parent_rows: Sequence[int] | np.ndarray,
    candidate_split: tuple[int, float],
    data: Dataset,
    fmap: FeatureMap,
    ridge: float | None = None,
    min_leaf: int = 1,
    multitask_weight: float = 0.0,
) -> float:
    """Score one candidate split of the parent rows; -inf when infeasible.

    Returns sum over the two children of count * beta' J beta (to be
    maximized); with multitask_weight w > 0, the convex combination
    (1-w) * that + w * (arm-wise explained sum of squares of the outcome).
    """
    rows = np.asarray(parent_rows, dtype=np.int64)
    feat, thr = candidate_split
    left = rows[data.x[rows, feat] <= thr]
    right = rows[data.x[rows, feat] > thr]
    if left.size < min_leaf or right.size < min_leaf:
        return -np.inf

    def child(rows_c):
        r = fmap.eval_rows(data.d[rows_c], data.x[rows_c], data.s[rows_c])
        mom = fmap.moment_rows(data.x[rows_c])
        j = r.T @ r / rows_c.size
        m = mom.mean(axis=0)
        beta, _ = _solve_schedule(j, m, _base_ridge(j, fmap.dim, ridge))
        riesz = rows_c.size * float(beta @ j @ beta)
        sel1 = (data.s[rows_c] == 1) & (data.d[rows_c] == 1)
        sel0 = (data.s[rows_c] == 1) & (data.d[rows_c] == 0)
        sy = data.sy[rows_c]
        reg = float(
            _reg_explained(
                np.array(sel1.sum(), dtype=float),
                np.array(sy[sel1].sum()),
                np.array(sel0.sum(), dtype=float),
                np.array(sy[sel0].sum()),
            )
        )
        return riesz, reg

    rz_l, rg_l = child(left)
    rz_r, rg_r = child(right)
    w = multitask_weight
    return float((1.0 - w) * (rz_l + rz_r) + w * (rg_l + rg_r)) if w > 0 else float(rz_l + rz_r)


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "count", "leaf_payload")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.count: list[int] = []
        self.leaf_payload: dict[int, dict] = {}

    def add_node(self, count: int) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.count.append(count)
        return len(self.feature) - 1

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.count = np.asarray(self.count, dtype=np.int64)
        return self

    def route(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return node
            idx = np.flatnonzero(active)
            f = feat[idx]
            goes_left = x[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(goes_left, self.left[node[idx]], self.right[node[idx]])


def _leaf_base(j: np.ndarray, dim: int, cfg: ForestConfig) -> float:
    base = _base_ridge(j, dim, cfg.ridge)
    return max(base, cfg.leaf_ridge_fraction * float(np.trace(j)) / dim)


def _solve_leaf(stats: _NodeStats, sub: np.ndarray, g_rows: np.ndarray, g_basis: np.ndarray, cfg: ForestConfig):
    """Alpha and regression coefficients for one leaf."""
    r = stats.r[sub]
    j = r.T @ r / sub.size
    m = stats.mom[sub].mean(axis=0)
    beta, used = _solve_schedule(j, m, _leaf_base(j, stats.dim, cfg))

    sel = sub[stats.s[sub] == 1]
    gdim = g_basis.shape[1]
    if sel.size == 0:
        g_coef = np.zeros(gdim)
        g_ridge = 0.0
    else:
        g = g_basis[sel]
        jg = g.T @ g / sel.size
        mg = (g * stats.sy[sel][:, None]).sum(axis=0) / sel.size
        g_coef, g_ridge = _solve_schedule(jg, mg, _leaf_base(jg, gdim, cfg))
    return {
        "beta": beta,
        "ridge": used,
        "j": j,
        "m": m,
        "count": int(sub.size),
        "g_coef": g_coef,
        "g_ridge": g_ridge,
        "g_count": int(sel.size),
    }


def _node_baseline(stats: _NodeStats, rows: np.ndarray, cfg: ForestConfig) -> float:
    """The node's own criterion value: what a no-split leaf already scores."""
    n = rows.size
    w = cfg.multitask_weight
    c1 = float(stats.s1d1[rows].sum())
    c0 = float(stats.s1d0[rows].sum())
    if stats.fast:
        tr = (c1 + c0) / (2.0 * n)
        rho = float(cfg.ridge) if cfg.ridge is not None else (1e-6 * tr if tr > 0 else 1e-6)
        m1, m0 = c1 / n, c0 / n
        riesz = n * (m1 / (m1 + rho) ** 2 + m0 / (m0 + rho) ** 2)
    else:
        r = stats.r[rows]
        j = r.T @ r / n
        m = stats.mom[rows].mean(axis=0)
        try:
            beta, _ = _solve_schedule(j, m, _base_ridge(j, stats.dim, cfg.ridge))
            riesz = n * float(beta @ j @ beta)
        except SingularNodeError:
            riesz = 0.0
    if w == 0.0:
        return riesz
    y1 = float(stats.y1[rows].sum())
    y0 = float(stats.y0[rows].sum())
    reg = float(_reg_explained(np.array(c1), np.array(y1), np.array(c0), np.array(y0)))
    return (1.0 - w) * riesz + w * reg


def _arms_covered(stats: _NodeStats, rows: np.ndarray) -> bool:
    """True when the rows include a selected observation from each arm."""
    return rows.size > 0 and stats.s1d1[rows].any() and stats.s1d0[rows].any()


def _grow_tree(stats: _NodeStats, g_basis: np.ndarray, cfg: ForestConfig, seed_seq) -> _Tree:
    rng = np.random.default_rng(seed_seq)
    n = stats.rows.size
    n_sub = max(2 * cfg.min_leaf, int(round(cfg.subsample_fraction * n)))
    n_sub = min(n_sub, n)
    sub = np.sort(rng.choice(n, size=n_sub, replace=False))
    if cfg.honest:
        perm = rng.permutation(n_sub)
        half = n_sub // 2
        struct, est = np.sort(sub[perm[:half]]), np.sort(sub[perm[half:]])
    else:
        struct, est = sub, sub

    p = stats.x.shape[1]
    tree = _Tree()
    root = tree.add_node(struct.size)
    root_fb = est if _arms_covered(stats, est) else np.arange(n)
    # stack entries: (node_id, struct_rows, est_rows, fallback_est_rows, depth)
    stack = [(root, struct, est, root_fb, 0)]
    while stack:
        node_id, s_rows, e_rows, fb_rows, depth = stack.pop()
        best_score, best_feat, best_thr = -np.inf, -1, np.nan
        gate = -np.inf
        if cfg.min_gain > 0:
            gate = _node_baseline(stats, s_rows, cfg) * (1.0 + cfg.min_gain)
        if depth < cfg.max_depth and s_rows.size >= 2 * cfg.min_leaf:
            if cfg.mtry is not None and cfg.mtry < p:
                feats = np.sort(rng.choice(p, size=cfg.mtry, replace=False))
            else:
                feats = np.arange(p)
            for f in feats:
                vals = stats.x[s_rows, f]
                order = np.argsort(vals, kind="stable")
                cand = _candidate_boundaries(vals[order], cfg.min_leaf, cfg.max_thresholds)
                if cand.size == 0:
                    continue
                scores = _score_boundaries(stats, s_rows[order], cand, cfg)
                scores = np.where(np.isfinite(scores), scores, -np.inf)
                k = int(np.argmax(scores))
                if scores[k] > best_score:
                    vs = vals[order]
                    best_score, best_feat = float(scores[k]), int(f)
                    best_thr = 0.5 * (vs[cand[k]] + vs[cand[k] + 1])
        if best_feat >= 0 and cfg.min_gain > 0 and best_score <= gate:
            best_feat = -1
        if best_feat >= 0:
            tree.feature[node_id] = best_feat
            tree.threshold[node_id] = best_thr
            sl = s_rows[stats.x[s_rows, best_feat] <= best_thr]
            sr = s_rows[stats.x[s_rows, best_feat] > best_thr]
            el = e_rows[stats.x[e_rows, best_feat] <= best_thr]
            er = e_rows[stats.x[e_rows, best_feat] > best_thr]
            fb_l = el if _arms_covered(stats, el) else fb_rows
            fb_r = er if _arms_covered(stats, er) else fb_rows
            right_id = tree.add_node(sr.size)
            left_id = tree.add_node(sl.size)
            tree.left[node_id] = left_id
            tree.right[node_id] = right_id
            stack.append((right_id, sr, er, fb_r, depth + 1))
            stack.append((left_id, sl, el, fb_l, depth + 1))
        else:
            leaf_rows = e_rows if _arms_covered(stats, e_rows) else fb_rows
            tree.leaf_payload[node_id] = _solve_leaf(stats, leaf_rows, leaf_rows, g_basis, cfg)
    return tree.finalize()


class MomentForest:
    """A fitted ensemble serving both the weighting and regression heads."""

    VERSION = 1

    def __init__(self, trees, fmap: FeatureMap, g_map: FeatureMap, cfg: ForestConfig, p: int):
        self.trees = trees
        self.fmap = fmap
        self.g_map = g_map
        self.cfg = cfg
        self.p = p
        dim = fmap.dim
        gdim = g_map.dim
        self._alpha_beta = []
        self._g_coef = []
        for t in self.trees:
            ab = np.zeros((t.feature.size, dim))
            gc = np.zeros((t.feature.size, gdim))
            for nid, payload in t.leaf_payload.items():
                ab[nid] = payload["beta"]
                gc[nid] = payload["g_coef"]
            self._alpha_beta.append(ab)
            self._g_coef.append(gc)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_alpha(self, d, x, s) -> np.ndarray:
        """Mean over trees of <r(d, x, s), beta(leaf)>; exactly 0 when s=0."""
        x = self.fmap.check_x(np.asarray(x, dtype=float), self.p)
        d = np.broadcast_to(np.asarray(d, dtype=np.int64).reshape(-1), (x.shape[0],))
        s = np.broadcast_to(np.asarray(s, dtype=np.int64).reshape(-1), (x.shape[0],))
        r = self.fmap.eval_rows(d, x, s)
        acc = np.zeros(x.shape[0])
        for t, ab in zip(self.trees, self._alpha_beta):
            leaves = t.route(x)
            acc += np.einsum("ij,ij->i", r, ab[leaves])
        return acc / self.n_trees

    def predict_g(self, d, x) -> np.ndarray:
        """Mean over trees of the leaf regression value at (d, x, s=1)."""
        x = self.g_map.check_x(np.asarray(x, dtype=float), self.p)
        d = np.broadcast_to(np.asarray(d, dtype=np.int64).reshape(-1), (x.shape[0],))
        ones = np.ones(x.shape[0], dtype=np.int64)
        g = self.g_map.eval_rows(d, x, ones)
        acc = np.zeros(x.shape[0])
        for t, gc in zip(self.trees, self._g_coef):
            leaves = t.route(x)
            acc += np.einsum("ij,ij->i", g, gc[leaves])
        return acc / self.n_trees

    def leaf_solutions(self) -> list[dict]:
        out = []
        for ti, t in enumerate(self.trees):
            for nid, payload in sorted(t.leaf_payload.items()):
                out.append({"tree": ti, "node": nid, **payload})
        return out

    def split_features_used(self) -> set[int]:
        used: set[int] = set()
        for t in self.trees:
            used.update(int(f) for f in t.feature[t.feature >= 0])
        return used

    def to_dict(self) -> dict:
        trees = []
        for t in self.trees:
            leaves = {
                str(nid): {
                    "beta": payload["beta"].tolist(),
                    "ridge": payload["ridge"],
                    "j": payload["j"].tolist(),
                    "m": payload["m"].tolist(),
                    "count": payload["count"],
                    "g_coef": payload["g_coef"].tolist(),
                    "g_ridge": payload["g_ridge"],
                    "g_count": payload["g_count"],
                }
                for nid, payload in sorted(t.leaf_payload.items())
            }
            trees.append(
                {
                    "feature": t.feature.tolist(),
                    "threshold": [None if np.isnan(v) else v for v in t.threshold.tolist()],
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "count": t.count.tolist(),
                    "leaves": leaves,
                }
            )
        return {
            "version": self.VERSION,
            "p": self.p,
            "config": self.cfg.to_dict(),
            "feature_map": self.fmap.to_dict(),
            "g_map": self.g_map.to_dict(),
            "trees": trees,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "MomentForest":
        if spec.get("version") != cls.VERSION:
            raise ConfigError(f"unsupported forest version {spec.get('version')!r}")
        cfg = ForestConfig(**spec["config"])
        fmap = map_from_dict(spec["feature_map"])
        g_map = map_from_dict(spec["g_map"])
        trees = []
        for tspec in spec["trees"]:
            t = _Tree()
            t.feature = np.asarray(tspec["feature"], dtype=np.int64)
            t.threshold = np.asarray(
                [np.nan if v is None else v for v in tspec["threshold"]], dtype=float
            )
            t.left = np.asarray(tspec["left"], dtype=np.int64)
            t.right = np.asarray(tspec["right"], dtype=np.int64)
            t.count = np.asarray(tspec["count"], dtype=np.int64)
            t.leaf_payload = {
                int(nid): {
                    "beta": np.asarray(p["beta"]),
                    "ridge": p["ridge"],
                    "j": np.asarray(p["j"]),
                    "m": np.asarray(p["m"]),
                    "count": p["count"],
                    "g_coef": np.asarray(p["g_coef"]),
                    "g_ridge": p["g_ridge"],
                    "g_count": p["g_count"],
                }
                for nid, p in tspec["leaves"].items()
            }
            trees.append(t)
        return cls(trees, fmap, g_map, cfg, p=int(spec["p"]))


def _fit_single(data: Dataset, rows: np.ndarray, fmap_spec, cfg: ForestConfig, seed_entropy) -> MomentForest:
    rows = np.asarray(rows, dtype=np.int64)
    d_train, s_train = data.d[rows], data.s[rows]
    if 0 not in d_train or 1 not in d_train:
        raise TrainError("training rows must contain both treatment arms")
    n_s1 = int((s_train == 1).sum())
    if n_s1 < cfg.min_leaf:
        raise TrainError(f"only {n_s1} selected training rows; need at least min_leaf={cfg.min_leaf}")

    x_train = data.x[rows]
    if isinstance(fmap_spec, FeatureMap):
        fmap = fmap_spec
    else:
        fmap = make_map(fmap_spec or cfg.feature_map, x_train)
    if cfg.g_leaf == "arm-linear" and not isinstance(fmap, ArmLinearMap):
        g_map: FeatureMap = ArmLinearMap.fit(x_train)
    else:
        g_map = fmap

    stats = _NodeStats(data, rows, fmap)
    ones = np.ones(rows.size, dtype=np.int64)
    g_basis = g_map.eval_rows(stats.d, stats.x, ones)

    seeds = [np.random.SeedSequence(list(seed_entropy) + [t]) for t in range(cfg.n_trees)]
    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            trees = list(pool.map(lambda sq: _grow_tree(stats, g_basis, cfg, sq), seeds))
    else:
        trees = [_grow_tree(stats, g_basis, cfg, sq) for sq in seeds]
    return MomentForest(trees, fmap, g_map, cfg, p=data.p)


def fit(
    data: Dataset,
    folds: FoldPlan,
    fmap: str | FeatureMap | None = None,
    cfg: ForestConfig = ForestConfig(),
) -> list[MomentForest]:
    """Train one multitask forest per fold, each on the out-of-fold rows.

    The regression head uses only selected rows; the weighting head uses all
    rows. Deterministic given (cfg.seed, folds) for any worker count.
    """
    forests = []
    for f in range(folds.k):
        rows = folds.train_rows(f)
        forests.append(_fit_single(data, rows, fmap, cfg, seed_entropy=(cfg.seed, f)))
    return forests


def fit_full(data: Dataset, fmap: str | FeatureMap | None = None, cfg: ForestConfig = ForestConfig()) -> MomentForest:
    """Train a single forest on all rows (no cross-fitting)."""
    return _fit_single(data, np.arange(data.n), fmap, cfg, seed_entropy=(cfg.seed,))
