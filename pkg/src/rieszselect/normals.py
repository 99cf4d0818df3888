"""Standard-normal CDF and quantile used throughout the package.

Backed by scipy.special's Cephes routines (``ndtr``/``ndtri``), whose rational
approximations are accurate to well below the 1e-12 absolute tolerance this
package requires for probit calibration; the accuracy contract is enforced by
a tabulated-value test.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = ["norm_cdf", "norm_ppf", "norm_quantile_two_sided"]


def norm_cdf(x):
    """Phi(x), elementwise."""
    return ndtr(x)


def norm_ppf(q):
    """Phi^{-1}(q), elementwise; q must lie in (0, 1)."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise ValueError("norm_ppf requires probabilities strictly inside (0, 1)")
    out = ndtri(q)
    return float(out) if out.ndim == 0 else out


def norm_quantile_two_sided(level: float) -> float:
    """z such that Phi(z) - Phi(-z) = level, e.g. 1.959963... for 0.95."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must be in (0, 1)")
    return float(ndtri(0.5 + level / 2.0))
