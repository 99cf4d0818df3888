"""Synthetic data generators.

Two designs: a conditional missing-at-random design with a latent-index
selection equation (used by the Monte-Carlo studies), and a fully discrete
confounded design whose latent factor has finite support, so every long/short
quantity — regressions, representers, bias factors — is enumerable exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError

__all__ = [
    "MarDgpConfig",
    "ConfoundedDgpConfig",
    "OracleTables",
    "gen_mar",
    "gen_confounded",
    "default_beta",
    "example_confounded_config",
]


def default_beta(p: int) -> np.ndarray:
    """Decaying coefficient profile 0.4/j^2 (keeps rates interior)."""
    return 0.4 / np.arange(1, p + 1, dtype=float) ** 2


@dataclass(frozen=True)
class MarDgpConfig:
    """Missing-at-random design.

    Y = theta0*D + X'beta0 + u,  S = 1{D + X'beta0 + v > 0},
    D = 1{X'beta0 + w > 0},  X ~ N(0, sigma_x * I), u, v, w iid N(0,1).
    ``sigma_x`` is the covariate variance. ``beta0`` defaults to 0.4/j^2.
    """

    n: int
    p: int = 5
    theta0: float = 1.0
    beta0: tuple[float, ...] | None = None
    sigma_x: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1:
            raise ConfigError("n and p must be positive")
        if self.sigma_x <= 0:
            raise ConfigError("sigma_x must be positive")
        if self.beta0 is not None and len(self.beta0) != self.p:
            raise ConfigError("beta0 must have length p")

    @property
    def beta(self) -> np.ndarray:
        if self.beta0 is None:
            return default_beta(self.p)
        return np.asarray(self.beta0, dtype=float)

    def truth(self) -> dict:
        """Self-describing record of the generating parameters."""
        return {
            "design": "mar",
            "n": self.n,
            "p": self.p,
            "theta0": self.theta0,
            "beta0": [float(b) for b in self.beta],
            "sigma_x": self.sigma_x,
            "seed": self.seed,
        }


def gen_mar(cfg: MarDgpConfig) -> Dataset:
    """Draw one sample from the MAR design; deterministic given the seed.

    One stream per random variable (x, w, u, v), split from the config seed,
    so the output does not depend on evaluation order.
    """
    ss = np.random.SeedSequence(cfg.seed)
    sx, sw, su, sv = (np.random.default_rng(c) for c in ss.spawn(4))
    x = sx.normal(0.0, np.sqrt(cfg.sigma_x), size=(cfg.n, cfg.p))
    index = x @ cfg.beta
    d = (index + sw.standard_normal(cfg.n) > 0).astype(np.int64)
    s = (d + index + sv.standard_normal(cfg.n) > 0).astype(np.int64)
    y = cfg.theta0 * d + index + su.standard_normal(cfg.n)
    names = tuple(f"x{j + 1}" for j in range(cfg.p))
    return Dataset(
        y=np.ma.masked_array(np.where(s == 1, y, 0.0), mask=(s == 0)),
        d=d,
        s=s,
        x=x,
        covariate_names=names,
    )


@dataclass(frozen=True)
class ConfoundedDgpConfig:
    """Discrete design with a latent selection confounder A.

    ``x_levels`` lists the support of the covariate vector (each level is a
    tuple of floats) with probabilities ``x_probs``; A is independent of X
    with support ``a_levels``/``a_probs``. Treatment depends on X only
    (``treat_probs[i] = P(D=1 | X = level i)``), selection on (D, X, A)
    (``sel_probs[d][i][j]``), and the outcome mean on (D, X, A)
    (``outcome_means[d][i][j]``). All probabilities must be in (0, 1), so
    overlap holds by construction.
    """

    n: int
    x_levels: tuple[tuple[float, ...], ...]
    x_probs: tuple[float, ...]
    a_levels: tuple[float, ...] = (-1.0, 1.0)
    a_probs: tuple[float, ...] = (0.5, 0.5)
    treat_probs: tuple[float, ...] = ()
    sel_probs: tuple = ()  # shape (2, nx, na)
    outcome_means: tuple = ()  # shape (2, nx, na)
    noise_sd: float = 0.0
    seed: int = 0
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        nx, na = len(self.x_levels), len(self.a_levels)
        if self.n < 1 or nx == 0 or na == 0:
            raise ConfigError("n, x_levels, a_levels must be non-empty")
        dims = {len(lv) for lv in self.x_levels}
        if len(dims) != 1:
            raise ConfigError("all x levels must have the same dimension")
        for name, probs, m in (("x_probs", self.x_probs, nx), ("a_probs", self.a_probs, na)):
            if len(probs) != m:
                raise ConfigError(f"{name} must have length {m}")
            if abs(sum(probs) - 1.0) > 1e-12 or min(probs) <= 0:
                raise ConfigError(f"{name} must be positive and sum to 1")
        if len(self.treat_probs) != nx:
            raise ConfigError("treat_probs must give one entry per x level")
        for t in (self.sel_probs, self.outcome_means):
            if len(t) != 2 or any(len(row) != nx for row in t) or any(
                len(cell) != na for row in t for cell in row
            ):
                raise ConfigError("sel_probs/outcome_means must be complete (2, nx, na) tables")
        for v in list(self.treat_probs) + [q for row in self.sel_probs for cell in row for q in cell]:
            if not 0.0 < v < 1.0:
                raise ConfigError(f"probability {v} outside (0, 1)")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")

    @property
    def x_dim(self) -> int:
        return len(self.x_levels[0])

    def arrays(self):
        xlv = np.asarray(self.x_levels, dtype=float)
        return (
            xlv,
            np.asarray(self.x_probs, dtype=float),
            np.asarray(self.a_levels, dtype=float),
            np.asarray(self.a_probs, dtype=float),
            np.asarray(self.treat_probs, dtype=float),
            np.asarray(self.sel_probs, dtype=float),
            np.asarray(self.outcome_means, dtype=float),
        )


@dataclass(frozen=True)
class OracleTables:
    """Exact population quantities, enumerated over the finite support.

    Expectation conventions: representer moments are over the full joint
    law (representers vanish off the selected rows); the residual moments
    ``e_g_diff_sq_sel`` and ``resid_var_sel`` condition on S=1, where the
    outcome exists. ``rho`` is (theta_0 - theta_s)/B so the five-factor
    decomposition is exact.
    """

    x_levels: np.ndarray
    x_probs: np.ndarray
    a_levels: np.ndarray
    a_probs: np.ndarray
    p1: np.ndarray  # (nx,)
    pi0: np.ndarray  # (2, nx, na)
    pi_s: np.ndarray  # (2, nx)
    g0: np.ndarray  # (2, nx, na)
    g_s: np.ndarray  # (2, nx)
    theta_0: float
    theta_s: float
    e_alpha0_sq: float
    e_alphas_sq: float
    e_alpha_diff_sq: float
    e_cross: float  # E[(g0-gs)(alpha0-alphas)]
    e_g_diff_sq_sel: float  # E[(g0-gs)^2 | S=1]
    resid_var_sel: float  # E[(Y-gs)^2 | S=1]
    p_s1: float
    s2: float = field(init=False)
    cy2: float = field(init=False)
    cs2: float = field(init=False)
    bias_bound: float = field(init=False)
    rho: float = field(init=False)

    def __post_init__(self) -> None:
        s2 = self.resid_var_sel * self.e_alphas_sq
        cy2 = self.e_g_diff_sq_sel / self.resid_var_sel if self.resid_var_sel > 0 else 0.0
        cs2 = self.e_alpha_diff_sq / self.e_alphas_sq
        b = np.sqrt(max(self.e_g_diff_sq_sel * self.e_alpha_diff_sq, 0.0))
        rho = (self.theta_0 - self.theta_s) / b if b > 0 else 0.0
        object.__setattr__(self, "s2", float(s2))
        object.__setattr__(self, "cy2", float(cy2))
        object.__setattr__(self, "cs2", float(cs2))
        object.__setattr__(self, "bias_bound", float(b))
        object.__setattr__(self, "rho", float(rho))

    def alpha_s_value(self, d: int, x_index: int) -> float:
        """alpha_s on a selected row at the given treatment and x level."""
        if d == 1:
            return 1.0 / (self.p1[x_index] * self.pi_s[1, x_index])
        return -1.0 / ((1.0 - self.p1[x_index]) * self.pi_s[0, x_index])

    def alpha_0_value(self, d: int, x_index: int, a_index: int) -> float:
        if d == 1:
            return 1.0 / (self.p1[x_index] * self.pi0[1, x_index, a_index])
        return -1.0 / ((1.0 - self.p1[x_index]) * self.pi0[0, x_index, a_index])

    def x_index_of(self, xrow: Sequence[float]) -> int:
        for i, lv in enumerate(self.x_levels):
            if np.array_equal(np.asarray(xrow, dtype=float), lv):
                return i
        raise KeyError(f"x value {xrow!r} not on the support")

    def to_dict(self) -> dict:
        return {
            "x_levels": self.x_levels.tolist(),
            "x_probs": self.x_probs.tolist(),
            "a_levels": self.a_levels.tolist(),
            "a_probs": self.a_probs.tolist(),
            "p1": self.p1.tolist(),
            "pi0": self.pi0.tolist(),
            "pi_s": self.pi_s.tolist(),
            "g0": self.g0.tolist(),
            "g_s": self.g_s.tolist(),
            "theta_0": self.theta_0,
            "theta_s": self.theta_s,
            "e_alpha0_sq": self.e_alpha0_sq,
            "e_alphas_sq": self.e_alphas_sq,
            "e_alpha_diff_sq": self.e_alpha_diff_sq,
            "e_cross": self.e_cross,
            "e_g_diff_sq_sel": self.e_g_diff_sq_sel,
            "resid_var_sel": self.resid_var_sel,
            "p_s1": self.p_s1,
            "s2": self.s2,
            "cy2": self.cy2,
            "cs2": self.cs2,
            "bias_bound": self.bias_bound,
            "rho": self.rho,
        }


def enumerate_tables(cfg: ConfoundedDgpConfig) -> OracleTables:
    """Enumerate all long/short population quantities for the discrete design."""
    xlv, xp, alv, ap, p1, pi0, g0 = cfg.arrays()
    nx, na = xp.size, ap.size

    # pi_s(d, x) = sum_a P(a) pi0(d, x, a)   (A independent of D given X)
    pi_s = np.einsum("dxa,a->dx", pi0, ap)
    # P(A=a | D=d, X=x, S=1) and the short regression
    p_a_given = pi0 * ap[None, None, :] / pi_s[:, :, None]
    g_s = np.einsum("dxa,dxa->dx", g0, p_a_given)

    theta_0 = float(np.einsum("x,a,xa->", xp, ap, g0[1] - g0[0]))
    theta_s = float(xp @ (g_s[1] - g_s[0]))

    p0 = 1.0 - p1
    e_alpha0_sq = float(
        np.einsum("x,a,xa->", xp, ap, 1.0 / (p1[:, None] * pi0[1]))
        + np.einsum("x,a,xa->", xp, ap, 1.0 / (p0[:, None] * pi0[0]))
    )
    e_alphas_sq = float(xp @ (1.0 / (p1 * pi_s[1]) + 1.0 / (p0 * pi_s[0])))

    # joint weights over (d, x, a) on the selected event; representers carry S
    w_sel = np.stack([p0[:, None] * pi0[0], p1[:, None] * pi0[1]]) * (xp[None, :, None] * ap[None, None, :])
    alpha0 = np.stack([-1.0 / (p0[:, None] * pi0[0]), 1.0 / (p1[:, None] * pi0[1])])
    alphas = np.stack([-1.0 / (p0 * pi_s[0]), 1.0 / (p1 * pi_s[1])])[:, :, None]
    gdiff = np.stack([g0[0] - g_s[0][:, None], g0[1] - g_s[1][:, None]])

    e_alpha_diff_sq = float(np.sum(w_sel * (alpha0 - alphas) ** 2))
    e_cross = float(np.sum(w_sel * gdiff * (alpha0 - alphas)))
    p_s1 = float(np.sum(w_sel))
    e_g_diff_sq_sel = float(np.sum(w_sel * gdiff**2) / p_s1)
    resid_var_sel = e_g_diff_sq_sel + cfg.noise_sd**2

    return OracleTables(
        x_levels=xlv,
        x_probs=xp,
        a_levels=alv,
        a_probs=ap,
        p1=p1,
        pi0=pi0,
        pi_s=pi_s,
        g0=g0,
        g_s=g_s,
        theta_0=theta_0,
        theta_s=theta_s,
        e_alpha0_sq=e_alpha0_sq,
        e_alphas_sq=e_alphas_sq,
        e_alpha_diff_sq=e_alpha_diff_sq,
        e_cross=e_cross,
        e_g_diff_sq_sel=e_g_diff_sq_sel,
        resid_var_sel=resid_var_sel,
        p_s1=p_s1,
    )


def gen_confounded(cfg: ConfoundedDgpConfig) -> tuple[Dataset, OracleTables]:
    """Sample the discrete confounded design and return it with exact tables."""
    tables = enumerate_tables(cfg)
    ss = np.random.SeedSequence(cfg.seed)
    sx, sa, sd, ssel, snoise = (np.random.default_rng(c) for c in ss.spawn(5))
    xi = sx.choice(tables.x_probs.size, size=cfg.n, p=tables.x_probs)
    ai = sa.choice(tables.a_probs.size, size=cfg.n, p=tables.a_probs)
    d = (sd.random(cfg.n) < tables.p1[xi]).astype(np.int64)
    s = (ssel.random(cfg.n) < tables.pi0[d, xi, ai]).astype(np.int64)
    y = tables.g0[d, xi, ai] + cfg.noise_sd * snoise.standard_normal(cfg.n)
    x = tables.x_levels[xi]
    names = cfg.covariate_names or tuple(f"x{j + 1}" for j in range(cfg.x_dim))
    data = Dataset(
        y=np.ma.masked_array(np.where(s == 1, y, 0.0), mask=(s == 0)),
        d=d,
        s=s,
        x=x,
        covariate_names=names,
    )
    return data, tables


def example_confounded_config(n: int = 2000, seed: int = 0) -> ConfoundedDgpConfig:
    """A 2-level X, 2-level A instance with genuinely nonzero selection bias."""
    return ConfoundedDgpConfig(
        n=n,
        x_levels=((0.0,), (1.0,)),
        x_probs=(0.6, 0.4),
        a_levels=(-1.0, 1.0),
        a_probs=(0.5, 0.5),
        treat_probs=(0.35, 0.65),
        sel_probs=(
            ((0.55, 0.85), (0.45, 0.75)),  # d = 0: rows x, cols a
            ((0.70, 0.95), (0.60, 0.90)),  # d = 1
        ),
        outcome_means=(
            ((0.0, 1.0), (0.5, 2.0)),  # d = 0
            ((1.5, 2.0), (2.5, 3.5)),  # d = 1
        ),
        noise_sd=0.5,
        seed=seed,
    )
