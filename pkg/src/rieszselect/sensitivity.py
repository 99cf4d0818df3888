"""Omitted-variable-bias calculus for selection confounding.

The short-model estimate theta_s differs from the target by at most
|rho| * sqrt(S2 * CY2 * CS2), where S2 is identified from residuals and
plug-in weights, CY2 is the share of residual outcome variation a latent
confounder could explain, and CS2 the relative inflation of the weighting
function's second moment. The probit latent-index device maps an
interpretable latent partial R^2 (mu2) to CS2 by Monte-Carlo integration
over standard-normal confounder draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .normals import norm_cdf, norm_ppf, norm_quantile_two_sided

__all__ = [
    "SensitivityInputs",
    "SensitivityGridPoint",
    "CalibrationCurve",
    "ContourGrid",
    "scale_factor",
    "bias_bound",
    "robustness_value",
    "calibrate_quasi_gaussian",
    "pi0_draw_means",
    "adjusted_interval",
    "contour_grid",
    "grid_point",
    "sensitivity_report",
]

PI0_FLOOR = 1e-12
_CHUNK_TERMS = 2_000_000  # draws are chunked so n * b never materializes at once


@dataclass(frozen=True)
class SensitivityInputs:
    """Observable ingredients of the bias bound.

    residuals are (y - g_s) on the selected rows only; alpha_s_values are the
    unnormalized plug-in weights for all n rows (zero off-selection), so their
    mean square estimates the full-population second moment.
    """

    residuals: np.ndarray
    alpha_s_values: np.ndarray
    theta_s: float
    se_s: float
    n: int

    def __post_init__(self) -> None:
        r = np.asarray(self.residuals, dtype=float)
        a = np.asarray(self.alpha_s_values, dtype=float)
        if a.size != self.n:
            raise ConfigError("alpha_s_values must have one entry per observation")
        if r.size > self.n or r.size == 0:
            raise ConfigError("residuals must cover the selected rows (1..n entries)")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(a))):
            raise ConfigError("inputs must be finite")
        object.__setattr__(self, "residuals", r)
        object.__setattr__(self, "alpha_s_values", a)


def scale_factor(inputs: SensitivityInputs) -> float:
    """S2 = mean(residual^2) * mean(alpha_s^2)."""
    if inputs.n < 2:
        raise ConfigError("need at least two observations")
    return float(np.mean(inputs.residuals**2) * np.mean(inputs.alpha_s_values**2))


def bias_bound(s2: float, cy2: float, cs2: float, rho: float) -> float:
    """|rho| * sqrt(s2 * cy2 * cs2)."""
    if s2 < 0:
        raise DomainError("s2 must be non-negative")
    if not 0.0 <= cy2 < 1.0:
        raise DomainError("cy2 must lie in [0, 1)")
    if cs2 < 0:
        raise DomainError("cs2 must be non-negative")
    if abs(rho) > 1.0:
        raise DomainError("rho must lie in [-1, 1]")
    return abs(rho) * float(np.sqrt(s2 * cy2 * cs2))


def robustness_value(theta_s: float, s2: float) -> float:
    """Equal-strength confounding r that exactly explains away theta_s.

    Solves s2 * r * (r / (1 - r)) = theta_s^2 with rho = 1 (cy2 = r and
    cs2 = r/(1-r)); the positive root of r^2 + a r - a with a = theta_s^2/s2.
    """
    if s2 <= 0:
        raise DomainError("s2 must be positive")
    a = theta_s**2 / s2
    if a == 0.0:
        return 0.0
    # cancellation-free form of (-a + sqrt(a^2 + 4a))/2
    return float(2.0 * a / (a + np.sqrt(a * a + 4.0 * a)))


@dataclass(frozen=True)
class SensitivityGridPoint:
    cy2: float
    cs2: float
    rho: float
    mu2: float | None
    bias: float
    theta_low: float
    theta_high: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return {
            "cy2": self.cy2,
            "cs2": self.cs2,
            "rho": self.rho,
            "mu2": self.mu2,
            "bias_bound": self.bias,
            "theta_low": self.theta_low,
            "theta_high": self.theta_high,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


def grid_point(
    theta_s: float,
    se_s: float,
    s2: float,
    cy2: float,
    cs2: float,
    rho: float,
    level: float = 0.95,
    mu2: float | None = None,
) -> SensitivityGridPoint:
    b = bias_bound(s2, cy2, cs2, rho)
    z = norm_quantile_two_sided(level)
    return SensitivityGridPoint(
        cy2=cy2,
        cs2=cs2,
        rho=rho,
        mu2=mu2,
        bias=b,
        theta_low=theta_s - b,
        theta_high=theta_s + b,
        ci_low=theta_s - b - z * se_s,
        ci_high=theta_s + b + z * se_s,
    )


def adjusted_interval(theta_s: float, se_s: float, point: SensitivityGridPoint, level: float = 0.95) -> tuple[float, float]:
    """Confounding-adjusted interval: the CI widened by the bias bound."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must be in (0, 1)")
    z = norm_quantile_two_sided(level)
    return (theta_s - point.bias - z * se_s, theta_s + point.bias + z * se_s)


# ---------------------------------------------------------------------------
# quasi-Gaussian calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationCurve:
    """mu2 -> CS2 map from the probit latent-index device.

    Numerical caveat: for mu2 >= 0.5 the unfloored second moment
    E[alpha_0^2(mu2)] is not finite (the integrand's Gaussian tail wins), so
    reported values there depend on the probability floor and the draw count;
    mc_se reflects only the sampling noise of the floored estimator.
    """

    mu2_grid: np.ndarray
    cs2_values: np.ndarray
    r2_values: np.ndarray
    e_alpha0_sq: np.ndarray
    e_alphas_sq: float
    mc_draws: int
    mc_se: np.ndarray
    floor_hits: np.ndarray

    def cs2_at(self, mu2: float | np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(mu2, dtype=float), self.mu2_grid, self.cs2_values)

    def to_dict(self) -> dict:
        return {
            "mu2_grid": self.mu2_grid.tolist(),
            "cs2": self.cs2_values.tolist(),
            "r2": self.r2_values.tolist(),
            "e_alpha0_sq": self.e_alpha0_sq.tolist(),
            "e_alphas_sq": self.e_alphas_sq,
            "mc_draws": self.mc_draws,
            "mc_se": self.mc_se.tolist(),
            "floor_hits": self.floor_hits.tolist(),
        }


def _validate_probs(name: str, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size == 0 or not np.all((p > 0.0) & (p < 1.0)):
        raise ConfigError(f"{name} must be probabilities strictly inside (0, 1)")
    return p


def _pi0_from_h(h: np.ndarray, a: np.ndarray, mu2: float) -> np.ndarray:
    return norm_cdf((h - np.sqrt(mu2) * a) / np.sqrt(1.0 - mu2))


def calibrate_quasi_gaussian(
    p1_hat: np.ndarray,
    pis1_hat: np.ndarray,
    pis0_hat: np.ndarray,
    mu2_grid: Sequence[float] | None = None,
    b_draws: int = 10_000,
    seed: int = 0,
) -> CalibrationCurve:
    """Monte-Carlo map from the latent partial R^2 to CS2.

    For each grid value: h(d, x_i) = Phi^{-1}(pis_hat(d, x_i)); draw
    A_i^(b) ~ N(0,1); form pi0^(b) = Phi((h - sqrt(mu2) A)/sqrt(1-mu2)),
    floored at 1e-12; average the inverse-probability sums over (i, b); and
    report CS2 = E[alpha_0^2]/E[alpha_s^2] - 1 with its R^2 twin. Each grid
    point uses its own derived stream, so results do not depend on
    evaluation order or parallel scheduling.
    """
    p1 = _validate_probs("p1_hat", p1_hat)
    pis1 = _validate_probs("pis1_hat", pis1_hat)
    pis0 = _validate_probs("pis0_hat", pis0_hat)
    if not (p1.size == pis1.size == pis0.size):
        raise ConfigError("probability vectors must share a length")
    if b_draws < 100:
        raise ConfigError("b_draws must be at least 100")
    if mu2_grid is None:
        mu2_grid = np.arange(0.0, 0.951, 0.05)
    grid = np.asarray(mu2_grid, dtype=float)
    if grid.size == 0 or np.any((grid < 0.0) | (grid > 0.99)):
        raise ConfigError("mu2 grid values must lie in [0, 0.99]")

    n = p1.size
    p0 = 1.0 - p1
    e_alphas = float(np.mean(1.0 / (p1 * pis1) + 1.0 / (p0 * pis0)))
    h1 = norm_ppf(pis1)
    h0 = norm_ppf(pis0)

    e_a0 = np.empty(grid.size)
    se_a0 = np.empty(grid.size)
    floor_hits = np.zeros(grid.size, dtype=np.int64)
    for gi, mu2 in enumerate(grid):
        if mu2 == 0.0:
            e_a0[gi] = e_alphas
            se_a0[gi] = 0.0
            continue
        # streams keyed by the mu2 value itself: grid points are independent of
        # ordering, parallel scheduling, and which other points were requested
        key = int(np.float64(mu2).view(np.uint64))
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CA1, key]))
        chunk = max(1, min(b_draws, _CHUNK_TERMS // n))
        total = 0.0
        total_sq = 0.0
        hits = 0
        done = 0
        while done < b_draws:
            b = min(chunk, b_draws - done)
            a = rng.standard_normal((b, n))
            pi0_1 = _pi0_from_h(h1[None, :], a, mu2)
            pi0_0 = _pi0_from_h(h0[None, :], a, mu2)
            hits += int(np.sum(pi0_1 < PI0_FLOOR)) + int(np.sum(pi0_0 < PI0_FLOOR))
            terms = 1.0 / (p1[None, :] * np.maximum(pi0_1, PI0_FLOOR)) + 1.0 / (
                p0[None, :] * np.maximum(pi0_0, PI0_FLOOR)
            )
            if not np.all(np.isfinite(terms)):
                raise NumericalError(f"non-finite weighting terms at mu2={mu2}")
            total += float(terms.sum())
            total_sq += float((terms * terms).sum())
            done += b
        m = b_draws * n
        mean = total / m
        var = max(total_sq / m - mean * mean, 0.0) * m / max(m - 1, 1)
        e_a0[gi] = mean
        se_a0[gi] = float(np.sqrt(var / m))
        floor_hits[gi] = hits

    cs2 = e_a0 / e_alphas - 1.0
    r2 = e_alphas / e_a0
    return CalibrationCurve(
        mu2_grid=grid,
        cs2_values=cs2,
        r2_values=r2,
        e_alpha0_sq=e_a0,
        e_alphas_sq=e_alphas,
        mc_draws=int(b_draws),
        mc_se=se_a0 / e_alphas,
        floor_hits=floor_hits,
    )


def pi0_draw_means(
    pis_hat: np.ndarray, mu2: float, b_draws: int = 10_000, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point mean and MC standard error of pi0 draws at one mu2 value.

    Coherence diagnostic: the mixture identity makes these means converge to
    pis_hat itself.
    """
    pis = _validate_probs("pis_hat", pis_hat)
    h = norm_ppf(pis)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0DE]))
    n = pis.size
    sums = np.zeros(n)
    sq = np.zeros(n)
    chunk = max(1, _CHUNK_TERMS // n)
    done = 0
    while done < b_draws:
        b = min(chunk, b_draws - done)
        a = rng.standard_normal((b, n))
        pi0 = _pi0_from_h(h[None, :], a, mu2) if mu2 > 0 else np.broadcast_to(norm_cdf(h), (b, n))
        sums += pi0.sum(axis=0)
        sq += (pi0 * pi0).sum(axis=0)
        done += b
    mean = sums / b_draws
    var = np.maximum(sq / b_draws - mean**2, 0.0) * b_draws / max(b_draws - 1, 1)
    return mean, np.sqrt(var / b_draws)


# ---------------------------------------------------------------------------
# contour grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContourGrid:
    """Worst-case (rho=1) bias bounds over outcome/selection sensitivity axes."""

    cy2_values: np.ndarray
    eta_s2_values: np.ndarray
    cs2_values: np.ndarray
    bounds: np.ndarray  # (len(cy2), len(eta))
    flips_sign: np.ndarray
    theta_s: float

    def rows(self) -> list[dict]:
        out = []
        for i, cy2 in enumerate(self.cy2_values):
            for j, eta in enumerate(self.eta_s2_values):
                out.append(
                    {
                        "cy2": float(cy2),
                        "eta_s2": float(eta),
                        "cs2": float(self.cs2_values[j]),
                        "bound": float(self.bounds[i, j]),
                        "flips_sign": bool(self.flips_sign[i, j]),
                    }
                )
        return out


def contour_grid(
    s2: float,
    theta_s: float,
    cy2_range: tuple[float, float] = (0.0, 0.3),
    eta_s2_range: tuple[float, float] = (0.0, 0.3),
    resolution: int = 25,
    calibration: CalibrationCurve | None = None,
) -> ContourGrid:
    """Bias-bound surface with the sign-flip level set marked.

    Without a calibration curve the selection axis is read as
    1 - R^2_{alpha_0 ~ alpha_s} and mapped cs2 = eta/(1 - eta); with one, the
    axis is mu2 and is interpolated through the curve.
    """
    for name, (lo, hi) in (("cy2_range", cy2_range), ("eta_s2_range", eta_s2_range)):
        if not (0.0 <= lo <= hi <= 0.99):
            raise DomainError(f"{name} must be within [0, 0.99]")
    if resolution < 2:
        raise DomainError("resolution must be at least 2")
    cy2_vals = np.linspace(cy2_range[0], cy2_range[1], resolution)
    eta_vals = np.linspace(eta_s2_range[0], eta_s2_range[1], resolution)
    if calibration is None:
        cs2_vals = eta_vals / (1.0 - eta_vals)
    else:
        cs2_vals = calibration.cs2_at(eta_vals)
    bounds = np.sqrt(np.maximum(s2 * np.outer(cy2_vals, cs2_vals), 0.0))
    return ContourGrid(
        cy2_values=cy2_vals,
        eta_s2_values=eta_vals,
        cs2_values=cs2_vals,
        bounds=bounds,
        flips_sign=bounds >= abs(theta_s),
        theta_s=theta_s,
    )


def sensitivity_report(
    inputs: SensitivityInputs,
    cy2_values: Sequence[float] = (0.05,),
    rho_values: Sequence[float] = (1.0,),
    mu2_values: Sequence[float] = (),
    cs2_values: Sequence[float] = (),
    p1: np.ndarray | None = None,
    pis1: np.ndarray | None = None,
    pis0: np.ndarray | None = None,
    b_draws: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
) -> dict:
    """Assemble the full report: S2, RV, grid points, calibration curve.

    Selection strength can be given directly (cs2_values) or on the latent
    scale (mu2_values, which requires the probability inputs for the
    calibration step); with neither, the grid is evaluated at the
    robustness-value strength.
    """
    s2 = scale_factor(inputs)
    rv = robustness_value(inputs.theta_s, s2) if s2 > 0 else 0.0
    curve = None
    sel: list[tuple[float, float | None]] = [(float(c), None) for c in cs2_values]
    if len(mu2_values) > 0:
        if p1 is None or pis1 is None or pis0 is None:
            raise ConfigError("mu2 values require p1/pis1/pis0 probability inputs")
        curve = calibrate_quasi_gaussian(p1, pis1, pis0, list(mu2_values), b_draws, seed)
        sel += [(float(c), float(m)) for c, m in zip(curve.cs2_values, curve.mu2_grid)]
    if not sel:
        sel = [(robustness_value(inputs.theta_s, s2) / (1 - rv), None)] if 0 < rv < 1 else [(0.0, None)]
    points = [
        grid_point(inputs.theta_s, inputs.se_s, s2, cy2, cs2, rho, level, mu2)
        for cy2 in cy2_values
        for cs2, mu2 in sel
        for rho in rho_values
    ]
    report = {
        "theta_s": inputs.theta_s,
        "se_s": inputs.se_s,
        "n": inputs.n,
        "s2": s2,
        "mean_sq_residual": float(np.mean(inputs.residuals**2)),
        "mean_sq_alpha": float(np.mean(inputs.alpha_s_values**2)),
        "robustness_value": rv,
        "level": level,
        "grid": [pt.to_dict() for pt in points],
    }
    if curve is not None:
        report["calibration"] = curve.to_dict()
    return report
