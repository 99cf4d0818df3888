"""Observed-data representation, CSV ingestion, and cross-fitting folds.

The observed sample is (Y, D, S, X) with Y defined only where the selection
indicator S is 1. Missing outcomes are kept as an explicit mask (never a
sentinel float), so the invariant "Y missing iff S=0" is checked structurally
at construction time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, ParseError, SchemaError, StratificationError

__all__ = ["Dataset", "FoldPlan", "ColumnSchema", "load_csv", "write_csv", "make_folds", "load_groups"]

_MISSING_TOKENS = ("", "NA")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable observed sample.

    Parameters
    ----------
    y : masked array of shape (n,)
        Outcome; masked exactly where ``s == 0``.
    d, s : int arrays of shape (n,)
        Binary treatment and selection indicators.
    x : float array of shape (n, p)
        Covariate matrix, finite entries only.
    covariate_names : unique labels, one per column of ``x``.
    groups : optional named, disjoint partition of covariate indices.
    y_name, d_name, s_name : column labels used on CSV round trips.
    column_order : original CSV column order, kept for bit-faithful writes.
    """

    y: np.ma.MaskedArray
    d: np.ndarray
    s: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...]
    groups: dict[str, tuple[int, ...]] | None = None
    y_name: str = "y"
    d_name: str = "d"
    s_name: str = "s"
    column_order: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=np.int64)
        s = np.asarray(self.s, dtype=np.int64)
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise ConsistencyError("x must be a 2-d matrix")
        n = x.shape[0]
        if not (d.shape == s.shape == (n,)):
            raise ConsistencyError("y, d, s, x must share the leading dimension")
        y = self.y
        if not isinstance(y, np.ma.MaskedArray):
            y = np.ma.masked_invalid(np.asarray(y, dtype=float))
        y = np.ma.masked_array(np.ma.getdata(y).astype(float), mask=np.ma.getmaskarray(y).copy())
        if y.shape != (n,):
            raise ConsistencyError("y must have shape (n,)")
        for name, col in ((self.d_name, d), (self.s_name, s)):
            vals = np.unique(col)
            if not np.all(np.isin(vals, (0, 1))):
                raise ConsistencyError(f"column {name!r} must be binary 0/1")
        if np.unique(d).size < 2:
            raise ConsistencyError(f"degenerate column {self.d_name!r}: both arms required")
        # s may be all ones (fully observed outcomes) but never all zeros
        if not np.any(s == 1):
            raise ConsistencyError(f"degenerate column {self.s_name!r}: no selected rows")
        mask = np.ma.getmaskarray(y)
        if np.any(mask != (s == 0)):
            bad = int(np.argmax(mask != (s == 0)))
            raise ConsistencyError(f"row {bad}: outcome must be present exactly where {self.s_name}=1")
        if not np.all(np.isfinite(np.ma.getdata(y)[s == 1])):
            raise ConsistencyError("observed outcomes must be finite")
        if not np.all(np.isfinite(x)):
            raise ConsistencyError("covariates contain NaN or Inf")
        if len(self.covariate_names) != x.shape[1]:
            raise ConsistencyError("covariate_names must match the number of columns")
        if len(set(self.covariate_names)) != len(self.covariate_names):
            raise ConsistencyError("covariate_names must be unique")
        if self.groups is not None:
            seen: set[int] = set()
            for gname, idx in self.groups.items():
                for i in idx:
                    if not 0 <= int(i) < x.shape[1]:
                        raise ConsistencyError(f"group {gname!r}: index {i} out of range")
                    if int(i) in seen:
                        raise ConsistencyError(f"group {gname!r}: index {i} appears in two groups")
                    seen.add(int(i))
        # normalize + freeze so instances are safe to share across threads
        np.ma.getdata(y).flags.writeable = False
        np.ma.getmaskarray(y).flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", _freeze(d))
        object.__setattr__(self, "s", _freeze(s))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.groups is not None:
            object.__setattr__(
                self, "groups", {k: tuple(int(i) for i in v) for k, v in self.groups.items()}
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def sy(self) -> np.ndarray:
        """S*Y: the outcome with unobserved entries filled by zero."""
        return np.ma.filled(self.y, 0.0)

    @property
    def y_observed(self) -> np.ndarray:
        """Outcome values on the selected rows, in row order."""
        return np.ma.getdata(self.y)[self.s == 1]

    def drop_covariates(self, indices: Sequence[int]) -> "Dataset":
        """Return a copy without the given covariate columns (groups are dropped)."""
        drop = {int(i) for i in indices}
        keep = [j for j in range(self.p) if j not in drop]
        if not keep:
            from .errors import GroupError

            raise GroupError("dropping these columns would leave no covariates")
        return Dataset(
            y=self.y,
            d=self.d,
            s=self.s,
            x=self.x[:, keep],
            covariate_names=tuple(self.covariate_names[j] for j in keep),
            groups=None,
            y_name=self.y_name,
            d_name=self.d_name,
            s_name=self.s_name,
        )


@dataclass(frozen=True)
class FoldPlan:
    """A stratified partition of rows into k cross-fitting folds."""

    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1 or self.k < 2:
            raise StratificationError("fold plan needs k >= 2 and a 1-d assignment")
        if a.min() < 0 or a.max() >= self.k:
            raise StratificationError("fold ids must lie in [0, k)")
        counts = np.bincount(a, minlength=self.k)
        if np.any(counts == 0):
            raise StratificationError("every fold must be non-empty")
        object.__setattr__(self, "assignment", _freeze(a))

    def fold_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV column names to roles; everything else is a covariate."""

    y: str
    d: str
    s: str
    drop: tuple[str, ...] = field(default_factory=tuple)


def _parse_float(token: str, path: str, line: int, col: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{path}:{line}: column {col!r}: cannot parse {token!r} as a number")


def _parse_binary(token: str, path: str, line: int, col: str) -> int:
    v = _parse_float(token, path, line, col)
    if v not in (0.0, 1.0):
        raise ParseError(f"{path}:{line}: column {col!r}: expected 0/1, got {token!r}")
    return int(v)


def load_csv(path: str | Path, schema: ColumnSchema, groups_path: str | Path | None = None) -> Dataset:
    """Load and validate an observed sample from a headered CSV file.

    Outcome cells may be empty or "NA" only on rows with s=0; any other
    inconsistency raises ConsistencyError.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        roles = {schema.y: "y", schema.d: "d", schema.s: "s"}
        if len(roles) != 3:
            raise SchemaError("outcome, treatment, and selection columns must be distinct")
        for col, role in roles.items():
            if header.count(col) == 0:
                raise SchemaError(f"{role} column {col!r} not found in header")
            if header.count(col) > 1:
                raise SchemaError(f"column {col!r} appears more than once")
        dropped = set(schema.drop)
        cov_names = [c for c in header if c not in roles and c not in dropped]
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column names in header")
        iy, id_, is_ = header.index(schema.y), header.index(schema.d), header.index(schema.s)
        cov_idx = [header.index(c) for c in cov_names]

        y_vals: list[float] = []
        y_mask: list[bool] = []
        d_vals: list[int] = []
        s_vals: list[int] = []
        x_rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            d = _parse_binary(row[id_], str(path), line_no, schema.d)
            s = _parse_binary(row[is_], str(path), line_no, schema.s)
            ytok = row[iy].strip()
            if ytok in _MISSING_TOKENS:
                if s == 1:
                    raise ConsistencyError(f"{path}:{line_no}: outcome missing on a row with {schema.s}=1")
                y_vals.append(0.0)
                y_mask.append(True)
            else:
                if s == 0:
                    raise ConsistencyError(f"{path}:{line_no}: outcome present on a row with {schema.s}=0")
                y_vals.append(_parse_float(ytok, str(path), line_no, schema.y))
                y_mask.append(False)
            d_vals.append(d)
            s_vals.append(s)
            x_rows.append([_parse_float(row[j], str(path), line_no, header[j]) for j in cov_idx])

    if not d_vals:
        raise ParseError(f"{path}: no data rows")
    x = np.asarray(x_rows, dtype=float).reshape(len(d_vals), len(cov_names))
    groups = None
    if groups_path is not None:
        groups = load_groups(groups_path, cov_names)
    return Dataset(
        y=np.ma.masked_array(np.asarray(y_vals), mask=np.asarray(y_mask)),
        d=np.asarray(d_vals),
        s=np.asarray(s_vals),
        x=x,
        covariate_names=tuple(cov_names),
        groups=groups,
        y_name=schema.y,
        d_name=schema.d,
        s_name=schema.s,
        column_order=tuple(header),
    )


def load_groups(path: str | Path, covariate_names: Sequence[str]) -> dict[str, tuple[int, ...]]:
    """Read a JSON mapping of group name -> list of covariate column names."""
    with Path(path).open() as fh:
        raw = json.load(fh)
    if not isinstance(raw, Mapping):
        raise SchemaError("groups file must map group names to lists of column names")
    name_to_idx = {c: i for i, c in enumerate(covariate_names)}
    groups: dict[str, tuple[int, ...]] = {}
    for gname, cols in raw.items():
        idx = []
        for c in cols:
            if c not in name_to_idx:
                raise SchemaError(f"group {gname!r}: unknown covariate {c!r}")
            idx.append(name_to_idx[c])
        groups[str(gname)] = tuple(idx)
    return groups


def _fmt(v: float) -> str:
    # 17 significant digits round-trips any double
    return format(float(v), ".17g")


def write_csv(data: Dataset, path: str | Path) -> None:
    """Write the dataset back to CSV (missing outcomes as empty cells)."""
    header = list(data.column_order) if data.column_order else [data.y_name, data.d_name, data.s_name, *data.covariate_names]
    cols: dict[str, np.ndarray] = {data.d_name: data.d, data.s_name: data.s}
    for j, cname in enumerate(data.covariate_names):
        cols[cname] = data.x[:, j]
    mask = np.ma.getmaskarray(data.y)
    ydata = np.ma.getdata(data.y)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = []
            for c in header:
                if c == data.y_name:
                    row.append("" if mask[i] else _fmt(ydata[i]))
                elif c in (data.d_name, data.s_name):
                    row.append(str(int(cols[c][i])))
                else:
                    row.append(_fmt(cols[c][i]))
            writer.writerow(row)


def make_folds(data: Dataset, k: int, seed: int) -> FoldPlan:
    """Assign rows to k folds, stratified by the (d, s) cell.

    Within each cell the shuffled rows are dealt into chunks whose sizes
    differ by at most one, so cell proportions are preserved per fold.
    Deterministic given the seed.
    """
    if k < 2:
        raise ConfigError("k must be at least 2")
    if k > data.n // 4:
        raise ConfigError(f"k={k} too large for n={data.n} (need k <= n/4)")
    rng = np.random.default_rng(np.random.SeedSequence([np.uint32(seed), 0x8C5F]))
    assignment = np.full(data.n, -1, dtype=np.int64)
    for dval in (0, 1):
        for sval in (0, 1):
            rows = np.flatnonzero((data.d == dval) & (data.s == sval))
            if rows.size == 0:
                if sval == 1:
                    raise StratificationError(f"no rows with d={dval}, s=1; folds cannot cover both arms")
                continue
            if rows.size < k:
                raise StratificationError(
                    f"(d={dval}, s={sval}) cell has {rows.size} rows; need at least k={k}"
                )
            perm = rows[rng.permutation(rows.size)]
            fold_order = rng.permutation(k)  # which folds absorb the remainder
            base, rem = divmod(perm.size, k)
            start = 0
            for pos, f in enumerate(fold_order):
                size = base + (1 if pos < rem else 0)
                assignment[perm[start : start + size]] = f
                start += size
    return FoldPlan(k=k, assignment=assignment, seed=seed)
