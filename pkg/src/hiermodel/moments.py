"""Data ingestion and sufficient statistics (group means, SSCP, covariance)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataTable",
    "GroupMoments",
    "PooledMoments",
    "ingest_csv",
    "group_moments",
    "pool",
    "moments_from_summary",
    "load_summary_json",
    "correlation_matrix",
]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class DataTable:
    """Numeric columns plus optional group and cluster label columns.

    ``data`` has one row per observation and one column per entry of
    ``column_names``. Label columns are kept as string arrays so that codes
    like ``"0"``/``"1"`` and names like ``"male"`` are handled alike.
    """

    column_names: tuple[str, ...]
    data: np.ndarray
    group_column: str | None = None
    group_labels: np.ndarray | None = None
    cluster_column: str | None = None
    cluster_labels: np.ndarray | None = None
    n_dropped: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != len(self.column_names):
            raise DataError(
                f"data shape {data.shape} does not match {len(self.column_names)} columns"
            )
        if not np.all(np.isfinite(data)):
            raise DataError("numeric cells must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        for col, attr in ((self.group_column, "group_labels"), (self.cluster_column, "cluster_labels")):
            labels = getattr(self, attr)
            if col is None:
                continue
            if labels is None or len(labels) != data.shape[0]:
                raise DataError(f"label column {col!r} must have one label per row")
            labels = np.asarray(labels).astype(str)
            if np.any(labels == ""):
                raise DataError(f"label column {col!r} contains missing labels")
            object.__setattr__(self, attr, labels)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self._index(name)]

    def select(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            raise DataError("empty variable list")
        return self.data[:, [self._index(n) for n in names]]

    def labels(self, name: str) -> np.ndarray:
        if name == self.group_column:
            return self.group_labels
        if name == self.cluster_column:
            return self.cluster_labels
        if name in self.column_names:
            col = self.column(name)
            as_int = col.astype(np.int64)
            return np.where(col == as_int, as_int.astype(str), col.astype(str))
        raise DataError(f"unknown column {name!r}")

    def _index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = list(self.column_names)
        extra = [c for c in (self.group_column, self.cluster_column) if c is not None]
        w.writerow(extra + header)
        for i, row in enumerate(self.data):
            lab = []
            if self.group_column is not None:
                lab.append(self.group_labels[i])
            if self.cluster_column is not None:
                lab.append(self.cluster_labels[i])
            w.writerow(lab + [_cell(v) for v in row])
        return buf.getvalue()


def _cell(v) -> str:
    v = float(v)
    # integral values print without ".0" so numeric codes read back as labels
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


@dataclass(frozen=True)
class GroupMoments:
    label: str
    n: int
    mean: np.ndarray
    within_sscp: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise DataError(f"group {self.label!r} has n = {self.n}")
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        sscp = np.atleast_2d(np.asarray(self.within_sscp, dtype=np.float64))
        if sscp.shape != (mean.size, mean.size):
            raise DataError(f"SSCP shape {sscp.shape} does not match {mean.size} means")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "within_sscp", 0.5 * (sscp + sscp.T))

    @property
    def sd(self) -> np.ndarray:
        if self.n < 2:
            return np.full(self.mean.size, np.nan)
        return np.sqrt(np.diag(self.within_sscp) / (self.n - 1))


@dataclass(frozen=True)
class PooledMoments:
    variables: tuple[str, ...]
    n_total: int
    grand_mean: np.ndarray
    total_sscp: np.ndarray
    covariance: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "grand_mean", np.asarray(self.grand_mean, dtype=np.float64))
        t = np.asarray(self.total_sscp, dtype=np.float64)
        object.__setattr__(self, "total_sscp", 0.5 * (t + t.T))
        if self.n_total < 2:
            raise DataError("need at least two observations for a covariance")
        object.__setattr__(self, "covariance", self.total_sscp / (self.n_total - 1))

    @property
    def correlation(self) -> np.ndarray:
        return correlation_matrix(self)

    def subset(self, names: Sequence[str]) -> "PooledMoments":
        idx = [self.variables.index(v) for v in names]
        return PooledMoments(
            tuple(names), self.n_total, self.grand_mean[idx], self.total_sscp[np.ix_(idx, idx)]
        )


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        val = float(cell)
    except ValueError:
        raise DataError(f"row {row}: column {col!r} is not numeric: {cell!r}") from None
    if not math.isfinite(val):
        raise DataError(f"row {row}: column {col!r} is not finite: {cell!r}")
    return val


def ingest_csv(
    source,
    numeric: Iterable[str] | None = None,
    group: str | None = None,
    cluster: str | None = None,
) -> DataTable:
    """Read a CSV into a :class:`DataTable`.

    Parameters
    ----------
    source : path, str, bytes or file object
        Comma-separated UTF-8 text with a header row.
    numeric : iterable of str, optional
        Columns to parse as numbers. Defaults to every column that is not the
        group or cluster column.
    group, cluster : str, optional
        Label columns.

    Rows with an empty numeric cell are dropped (listwise deletion) and
    counted in ``n_dropped``. Any other unparseable cell raises
    :class:`DataError` naming the row (1-based, header excluded) and column.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV: header row missing") from None
    label_cols = [c for c in (group, cluster) if c is not None]
    if numeric is None:
        numeric = [h for h in header if h not in label_cols]
    numeric = list(numeric)
    for name in numeric + label_cols:
        if name not in header:
            raise DataError(f"unknown column {name!r}; header has {header}")
    num_idx = [header.index(n) for n in numeric]
    g_idx = header.index(group) if group is not None else None
    c_idx = header.index(cluster) if cluster is not None else None

    rows, glabs, clabs = [], [], []
    dropped = 0
    for r, record in enumerate(reader, start=1):
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(record)}")
        cells = [record[i].strip() for i in num_idx]
        if any(c == "" for c in cells):
            dropped += 1
            continue
        rows.append([_parse_float(c, r, numeric[k]) for k, c in enumerate(cells)])
        for idx, name, out in ((g_idx, group, glabs), (c_idx, cluster, clabs)):
            if idx is None:
                continue
            lab = record[idx].strip()
            if not lab:
                raise DataError(f"row {r}: missing label in column {name!r}")
            out.append(lab)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(numeric))
    return DataTable(
        tuple(numeric),
        data,
        group_column=group,
        group_labels=np.array(glabs) if group is not None else None,
        cluster_column=cluster,
        cluster_labels=np.array(clabs) if cluster is not None else None,
        n_dropped=dropped,
    )


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if hasattr(source, "read"):
        raw = source.read()
        return raw.decode("utf-8") if isinstance(raw, bytes) else raw
    if isinstance(source, str) and "\n" in source:
        return source
    with open(source, encoding="utf-8", newline="") as fh:
        return fh.read()


def group_moments(table: DataTable, group: str, vars: Sequence[str]) -> list[GroupMoments]:
    """Count, mean vector and within-group SSCP for each distinct label.

    Groups come back in sorted label order.
    """
    y = table.select(vars)
    labels = table.labels(group)
    out = []
    for lab in sorted(set(labels.tolist())):
        rows = y[labels == lab]
        mean = rows.mean(axis=0)
        dev = rows - mean
        out.append(GroupMoments(lab, rows.shape[0], mean, dev.T @ dev))
    return out


def pool(groups: Sequence[GroupMoments], variables: Sequence[str] | None = None) -> PooledMoments:
    """Combine group moments into total-sample moments."""
    if not groups:
        raise DataError("need at least one group")
    p = groups[0].mean.size
    if any(g.mean.size != p for g in groups):
        raise DataError("groups have different numbers of variables")
    n = np.array([g.n for g in groups], dtype=np.float64)
    means = np.vstack([g.mean for g in groups])
    grand = n @ means / n.sum()
    dev = means - grand
    between = (dev * n[:, None]).T @ dev
    within = sum(g.within_sscp for g in groups)
    if variables is None:
        variables = tuple(f"y{i + 1}" for i in range(p))
    return PooledMoments(tuple(variables), int(n.sum()), grand, within + between)


def moments_from_summary(
    groups: Sequence[tuple],
    within_sscp,
    variables: Sequence[str] | None = None,
    labels: Sequence[str] | None = None,
) -> tuple[list[GroupMoments], PooledMoments]:
    """Rebuild group and pooled moments from published summaries.

    ``groups`` holds ``(n, mean_vector)`` pairs and ``within_sscp`` is the
    pooled within-groups SSCP. Only the pooled matrix is known, so each group
    is assigned the share ``(n_g - 1) / (N - k)`` of it; the sum over groups,
    and hence every pooled quantity, is exact.
    """
    if not groups:
        raise DataError("need at least one group")
    w = np.atleast_2d(np.asarray(within_sscp, dtype=np.float64))
    if w.shape[0] != w.shape[1] or not np.allclose(w, w.T, rtol=1e-10, atol=1e-8):
        raise DataError("within SSCP must be a symmetric square matrix")
    ns = [int(n) for n, _ in groups]
    means = [np.atleast_1d(np.asarray(m, dtype=np.float64)) for _, m in groups]
    for m in means:
        if m.size != w.shape[0]:
            raise DataError(f"mean vector of length {m.size} does not match {w.shape[0]}x{w.shape[0]} SSCP")
    df_w = sum(ns) - len(ns)
    if labels is None:
        labels = [str(i) for i in range(len(ns))]
    gms = []
    for lab, n, m in zip(labels, ns, means):
        share = (n - 1) / df_w if df_w > 0 else 0.0
        gms.append(GroupMoments(str(lab), n, m, w * share))
    return gms, pool(gms, variables)


def load_summary_json(source) -> tuple[list[GroupMoments], PooledMoments]:
    """Parse the summary-moments JSON format.

    ``{"variables": [...], "groups": [{"label", "n", "mean": [...]}],
    "within_sscp": [[...]]}``. A group may also carry its own
    ``"within_sscp"``; when every group does, those are used directly.
    """
    doc = json.loads(_read_text(source))
    try:
        variables = list(doc["variables"])
        groups = doc["groups"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"summary JSON missing field: {exc}") from None
    if all("within_sscp" in g for g in groups):
        gms = [GroupMoments(str(g["label"]), int(g["n"]), g["mean"], g["within_sscp"]) for g in groups]
        return gms, pool(gms, variables)
    if "within_sscp" not in doc:
        raise DataError("summary JSON needs a pooled 'within_sscp' matrix")
    return moments_from_summary(
        [(g["n"], g["mean"]) for g in groups],
        doc["within_sscp"],
        variables=variables,
        labels=[str(g.get("label", i)) for i, g in enumerate(groups)],
    )


def correlation_matrix(pooled: PooledMoments) -> np.ndarray:
    cov = pooled.covariance
    var = np.diag(cov)
    bad = [v for v, s in zip(pooled.variables, var) if not s > 0]
    if bad:
        raise DataError(f"zero-variance variable(s): {', '.join(bad)}")
    sd = np.sqrt(var)
    r = cov / np.outer(sd, sd)
    np.fill_diagonal(r, 1.0)
    return np.clip(r, -1.0, 1.0)
