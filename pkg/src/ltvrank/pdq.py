"""Position-debiased quantile labels.

Slide times are re-expressed as within-page-group empirical-CDF positions:
each group gets an isofrequency threshold table with an explicit starting
index for the censored zero mass, and every impression's label is
``(B + S_k) / T`` where ``B`` counts the strictly positive thresholds the
slide time strictly exceeds.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset, fmt_real, session_slide_times, DEFAULT_CAP_Q

#: Default quantization granularity.
DEFAULT_T = 50

#: Fixed page-group boundaries: 0 / 1-2 / 3-5 / 6-9 / 10-15 / 16-29 / 30+.
TABLE4_BOUNDARIES: tuple[tuple[int, int | None], ...] = (
    (0, 1), (1, 3), (3, 6), (6, 10), (10, 16), (16, 30), (30, None),
)


@dataclass(frozen=True)
class PageGroupSpec:
    """Disjoint, exhaustive half-open page-index ranges; ``hi=None`` = open end."""

    ranges: tuple[tuple[int, int | None], ...]

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("at least one page group required")
        expect = 0
        for i, (lo, hi) in enumerate(self.ranges):
            if lo != expect:
                raise ValueError(f"group {i} starts at {lo}, expected {expect}")
            if hi is None:
                if i != len(self.ranges) - 1:
                    raise ValueError("only the last group may be unbounded")
            else:
                if hi <= lo:
                    raise ValueError(f"group {i} range ({lo},{hi}) is empty")
                expect = hi
        if self.ranges[-1][1] is not None:
            raise ValueError("last group must be unbounded to cover all pages")

    @property
    def n_groups(self) -> int:
        return len(self.ranges)

    def group_of(self, page_index: int) -> int:
        if page_index < 0:
            raise ValueError(f"page_index must be >= 0, got {page_index}")
        for k, (lo, hi) in enumerate(self.ranges):
            if lo <= page_index and (hi is None or page_index < hi):
                return k
        raise AssertionError("exhaustive ranges cannot miss")

    def group_array(self, page_indices: np.ndarray) -> np.ndarray:
        """Vectorized group lookup."""
        edges = np.array([lo for lo, _ in self.ranges[1:]], dtype=np.int64)
        return np.searchsorted(edges, page_indices, side="right")


@dataclass(frozen=True)
class QuantileTable:
    """Isofrequency thresholds for one page group, with zero starting index."""

    group: int
    T: int
    thresholds: tuple[float, ...]   # non-decreasing, length T
    S_k: int                        # number of leading zero thresholds

    def __post_init__(self):
        if len(self.thresholds) != self.T:
            raise ValueError(f"need {self.T} thresholds, got {len(self.thresholds)}")
        arr = np.asarray(self.thresholds)
        if np.any(np.diff(arr) < 0):
            raise ValueError("thresholds must be non-decreasing")
        leading_zeros = int(np.sum(np.cumsum(arr != 0.0) == 0))
        if self.S_k != leading_zeros:
            raise ValueError(f"S_k={self.S_k} but table has {leading_zeros} leading zeros")


def fit_page_groups(dataset: Dataset, M: int = 7, mode: str = "table4") -> PageGroupSpec:
    """Partition page indices into M groups.

    ``table4`` returns the fixed 7-group boundaries. ``isofrequency`` picks
    M boundaries so per-range impression counts are as equal as whole pages
    allow.
    """
    if dataset.n_records() == 0:
        raise ValueError("dataset is empty")
    if mode == "table4":
        return PageGroupSpec(ranges=TABLE4_BOUNDARIES)
    if mode != "isofrequency":
        raise ValueError(f"unknown mode {mode!r}")
    pages = np.fromiter((r.page_index for r in dataset.iter_records()), dtype=np.int64)
    distinct = np.unique(pages)
    if M > len(distinct):
        raise ValueError(f"M={M} exceeds {len(distinct)} distinct page indices")
    if M == 1:
        return PageGroupSpec(ranges=((0, None),))
    counts = np.bincount(pages)
    total = counts.sum()
    cum = np.cumsum(counts)
    boundaries = [0]
    for k in range(1, M):
        target = total * k / M
        # first page index whose cumulative count reaches the target
        b = int(np.searchsorted(cum, target)) + 1
        b = max(b, boundaries[-1] + 1)
        boundaries.append(b)
    ranges = []
    for i in range(M):
        lo = boundaries[i]
        hi = boundaries[i + 1] if i + 1 < M else None
        ranges.append((lo, hi))
    return PageGroupSpec(ranges=tuple(ranges))


def fit_quantile_table(slide_times, T: int = DEFAULT_T, group: int = 0) -> QuantileTable:
    """Empirical j/T-quantiles via the order statistic at ceil(n*j/T).

    Requires at least T samples. S_k is the count of leading zero
    thresholds (the censored zero mass).
    """
    s = np.sort(np.asarray(slide_times, dtype=np.float64))
    n = len(s)
    if n < T:
        raise ValueError(f"need at least T={T} samples, got {n}")
    if np.any(s < 0):
        raise ValueError("slide times must be non-negative")
    js = np.arange(1, T + 1)
    ranks = np.ceil(n * js / T).astype(np.int64) - 1
    thresholds = s[ranks]
    S_k = int(np.sum(np.cumsum(thresholds != 0.0) == 0))
    return QuantileTable(group=group, T=T, thresholds=tuple(float(x) for x in thresholds),
                         S_k=S_k)


def bucketize(s: float, table: QuantileTable) -> int:
    """Count of strictly positive thresholds strictly below s."""
    if s < 0:
        raise ValueError(f"slide time must be >= 0, got {s}")
    arr = np.asarray(table.thresholds)
    return int(np.sum((arr > 0.0) & (arr < s)))


def quantile_label(s: float, table: QuantileTable) -> float:
    """Within-group quantile label: (B + S_k) / T, in [0, 1]."""
    return (bucketize(s, table) + table.S_k) / table.T


def quantile_labels(s: np.ndarray, table: QuantileTable) -> np.ndarray:
    """Vectorized quantile_label."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("slide times must be >= 0")
    pos = np.asarray([t for t in table.thresholds if t > 0.0])
    if len(pos) == 0:
        b = np.zeros(len(s), dtype=np.int64)
    else:
        b = np.searchsorted(pos, s, side="left")
    return (b + table.S_k) / table.T


def fit_tables(dataset: Dataset, spec: PageGroupSpec, T: int = DEFAULT_T,
               Q: float = DEFAULT_CAP_Q) -> dict[int, QuantileTable]:
    """Fit one quantile table per page group from a dataset's slide times.

    A group too sparse to estimate T quantiles (fewer than T samples but at
    least one) inherits the nearest shallower group's table, so every
    observed page maps to a usable table.
    """
    by_group: dict[int, list[float]] = {k: [] for k in range(spec.n_groups)}
    for sess in dataset.sessions:
        st = session_slide_times(sess, Q=Q)
        for r, s in zip(sess.records, st):
            by_group[spec.group_of(r.page_index)].append(float(s))
    tables: dict[int, QuantileTable] = {}
    for k, values in sorted(by_group.items()):
        if len(values) >= T:
            tables[k] = fit_quantile_table(values, T=T, group=k)
        elif values:
            donors = [g for g in tables if g < k]
            if donors:
                donor = tables[max(donors)]
                tables[k] = QuantileTable(group=k, T=donor.T,
                                          thresholds=donor.thresholds,
                                          S_k=donor.S_k)
    return tables


def build_pdq_labels(dataset: Dataset, spec: PageGroupSpec,
                     tables: dict[int, QuantileTable],
                     Q: float = DEFAULT_CAP_Q) -> list[np.ndarray]:
    """Per-session arrays of PDQ labels, in dataset order.

    Raises if any impression maps to a group without a fitted table.
    """
    out = []
    for sess in dataset.sessions:
        st = session_slide_times(sess, Q=Q)
        labels = np.empty(len(sess.records), dtype=np.float64)
        for i, r in enumerate(sess.records):
            k = spec.group_of(r.page_index)
            table = tables.get(k)
            if table is None:
                raise KeyError(f"no quantile table fitted for page group {k} "
                               f"(page {r.page_index}, session {sess.session_id})")
            labels[i] = quantile_label(float(st[i]), table)
        out.append(labels)
    return out


# ---------------------------------------------------------------------------
# Sidecar persistence (group, T, S_k, thresholds)
# ---------------------------------------------------------------------------

def save_tables(path, spec: PageGroupSpec, tables: dict[int, QuantileTable],
                meta: str | None = None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#ltvrank-quantile-tables v1\n")
        if meta:
            fh.write(f"#meta {meta}\n")
        ranges = ",".join(f"{lo}:{'inf' if hi is None else hi}" for lo, hi in spec.ranges)
        fh.write(f"G\t{ranges}\n")
        for k in sorted(tables):
            t = tables[k]
            th = ",".join(fmt_real(x) for x in t.thresholds)
            fh.write(f"Q\t{k}\t{t.T}\t{t.S_k}\t{th}\n")
    os.replace(tmp, path)


def load_tables(path) -> tuple[PageGroupSpec, dict[int, QuantileTable]]:
    spec = None
    tables: dict[int, QuantileTable] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "#ltvrank-quantile-tables v1":
            raise ValueError(f"{path}: bad header {header!r}")
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "G":
                ranges = []
                for item in parts[1].split(","):
                    lo, hi = item.split(":")
                    ranges.append((int(lo), None if hi == "inf" else int(hi)))
                spec = PageGroupSpec(ranges=tuple(ranges))
            elif parts[0] == "Q":
                k, T, S_k = int(parts[1]), int(parts[2]), int(parts[3])
                thresholds = tuple(float(x) for x in parts[4].split(","))
                tables[k] = QuantileTable(group=k, T=T, thresholds=thresholds, S_k=S_k)
            else:
                raise ValueError(f"{path}: unknown record tag {parts[0]!r}")
    if spec is None:
        raise ValueError(f"{path}: missing group spec line")
    return spec, tables
