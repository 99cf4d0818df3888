"""Feature maps for the local moment forest.

A feature map r(d, x, s) defines the leaf-local basis of the weighting
function a(z) = <r(z), beta(x)>. Maps must vanish on unselected rows
(r(d, x, 0) = 0), which forces the learned weights to zero off the selected
sample, and must expose the moment vector m(x) = r(1, x, 1) - r(0, x, 1).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = ["FeatureMap", "ArmInterceptMap", "ArmLinearMap", "make_map", "map_from_dict"]


class FeatureMap:
    """Base class; subclasses fill in dim, blocks, and the row builders."""

    name: str = "base"
    dim: int = 0
    #: index groups whose cross products vanish identically (block-diagonal J)
    blocks: tuple[tuple[int, ...], ...] | None = None

    def eval_rows(self, d: np.ndarray, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def moment_rows(self, x: np.ndarray) -> np.ndarray:
        """r(1, x, 1) - r(0, x, 1), per row."""
        n = x.shape[0]
        ones = np.ones(n, dtype=np.int64)
        return self.eval_rows(ones, x, ones) - self.eval_rows(np.zeros(n, dtype=np.int64), x, ones)

    def check_x(self, x: np.ndarray, p: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != p:
            raise DimensionError(f"expected {p} covariates, got {x.shape[1]}")
        return x

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params()}


class ArmInterceptMap(FeatureMap):
    """r(d, x, s) = s * [d, 1-d]: one intercept per treatment arm (dim 2)."""

    name = "arm-intercept"
    dim = 2
    blocks = ((0,), (1,))

    def __init__(self, p: int):
        self.p = int(p)

    def eval_rows(self, d, x, s):
        x = self.check_x(x, self.p)
        d = np.asarray(d, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        out = np.empty((x.shape[0], 2))
        out[:, 0] = s * d
        out[:, 1] = s * (1.0 - d)
        return out

    def params(self):
        return {"p": self.p}


class ArmLinearMap(FeatureMap):
    """r(d, x, s) = s * [d, 1-d, d*xt, (1-d)*xt] with xt min-max scaled to [-1, 1].

    Layout: [d, 1-d, d*xt_1..d*xt_p, (1-d)*xt_1..(1-d)*xt_p]; the two arm
    blocks are orthogonal by construction, so J is block-diagonal. The
    centered target interval keeps the linear columns roughly orthogonal to
    the arm intercepts, which a [0, 1] scaling would not.
    """

    name = "arm-linear"

    def __init__(self, mins: Sequence[float], maxs: Sequence[float]):
        self.mins = np.asarray(mins, dtype=float)
        self.maxs = np.asarray(maxs, dtype=float)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise ConfigError("mins and maxs must be 1-d and equal length")
        self.p = self.mins.size
        self.dim = 2 * (self.p + 1)
        span = self.maxs - self.mins
        self._span = np.where(span > 0, span, 1.0)
        b1 = (0,) + tuple(range(2, 2 + self.p))
        b0 = (1,) + tuple(range(2 + self.p, 2 + 2 * self.p))
        self.blocks = (b1, b0)

    @classmethod
    def fit(cls, x: np.ndarray) -> "ArmLinearMap":
        x = np.asarray(x, dtype=float)
        return cls(x.min(axis=0), x.max(axis=0))

    def scale(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.mins) / self._span - 1.0

    def eval_rows(self, d, x, s):
        x = self.check_x(x, self.p)
        d = np.asarray(d, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        xt = self.scale(x)
        out = np.zeros((x.shape[0], self.dim))
        out[:, 0] = d
        out[:, 1] = 1.0 - d
        out[:, 2 : 2 + self.p] = d[:, None] * xt
        out[:, 2 + self.p :] = (1.0 - d)[:, None] * xt
        return out * s[:, None]

    def params(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}


def make_map(name: str, x_train: np.ndarray) -> FeatureMap:
    """Build a feature map of the given kind, fitting any scaler on x_train."""
    if name == "arm-intercept":
        return ArmInterceptMap(p=np.asarray(x_train).shape[1])
    if name == "arm-linear":
        return ArmLinearMap.fit(x_train)
    raise ConfigError(f"unknown feature map {name!r}")


def map_from_dict(spec: dict) -> FeatureMap:
    name = spec.get("name")
    if name == "arm-intercept":
        return ArmInterceptMap(p=int(spec["p"]))
    if name == "arm-linear":
        return ArmLinearMap(mins=spec["mins"], maxs=spec["maxs"])
    raise ConfigError(f"unknown feature map spec {spec!r}")
