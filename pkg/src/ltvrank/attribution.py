"""Multi-dimensional within-session attribution.

For every ordered pair (j, i) with i > j in a session, seven binary
sub-dimension flags are computed (adjacency, collection linkage, retrieval
source, v2v similarity, multimodal similarity, author, category) and
combined either by sign (binary mode) or by a sigmoid of learnable weights
(learned mode). The attributed slide time replaces the raw suffix sum with
a strength-weighted one.

``pair_flags`` is the per-pair reference implementation; the session-level
matrix helpers are the vectorized production path and must agree with it
exactly (tests enforce this).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Dataset, Session, fmt_real, DEFAULT_CAP_Q

FLAG_NAMES = ("pos", "col", "rec", "v2v", "mm", "auth", "cat")


@dataclass
class AttributionConfig:
    v2v_threshold: float = 0.5
    mm_threshold: float = 0.9
    adjacency_window: int = 6
    mode: str = "binary"                      # "binary" | "learned"
    weights: dict[str, float] = field(default_factory=lambda: {d: 0.0 for d in FLAG_NAMES})

    def validate(self) -> None:
        if not 0.0 <= self.v2v_threshold <= 1.0:
            raise ValueError(f"v2v_threshold must be in [0,1], got {self.v2v_threshold}")
        if not 0.0 <= self.mm_threshold <= 1.0:
            raise ValueError(f"mm_threshold must be in [0,1], got {self.mm_threshold}")
        if self.adjacency_window < 0:
            raise ValueError(f"adjacency_window must be >= 0, got {self.adjacency_window}")
        if self.mode not in ("binary", "learned"):
            raise ValueError(f"mode must be binary or learned, got {self.mode!r}")
        missing = set(FLAG_NAMES) - set(self.weights)
        if missing:
            raise ValueError(f"missing weights for dimensions: {sorted(missing)}")

    def weight_vector(self) -> np.ndarray:
        return np.array([self.weights[d] for d in FLAG_NAMES])


@dataclass(frozen=True)
class AttributionStrength:
    j: int
    i: int
    flags: dict[str, int]
    c_ji: float


def _v2v_hit(a, b, threshold: float) -> bool:
    for vid, score in a.v2v_neighbors:
        if vid == b.video_id and score > threshold:
            return True
    return False


def pair_flags(session: Session, j: int, i: int, config: AttributionConfig) -> dict[str, int]:
    """Seven binary sub-dimension flags for the ordered pair (j, i)."""
    if i <= j:
        raise ValueError(f"need j < i, got j={j}, i={i}")
    rj = session.records[j]
    ri = session.records[i]
    w = config.adjacency_window
    pos = 1 if (i - j) <= w else 0
    # Collection linkage rides on the adjacency window: i shares a collection
    # with some other record inside j's window.
    col = 0
    if ri.collection_id is not None:
        hi = min(len(session.records), j + w + 1)
        for m in range(j + 1, hi):
            if m == i:
                continue
            if session.records[m].collection_id == ri.collection_id:
                col = 1
                break
    rec = 1 if rj.retrieval_source_id == ri.retrieval_source_id else 0
    v2v = 1 if (_v2v_hit(rj, ri, config.v2v_threshold)
                or _v2v_hit(ri, rj, config.v2v_threshold)) else 0
    cos = float(rj.embedding_array() @ ri.embedding_array())
    mm = 1 if cos > config.mm_threshold else 0
    auth = 1 if rj.author_id == ri.author_id else 0
    cat = 1 if rj.category_id == ri.category_id else 0
    return {"pos": pos, "col": col, "rec": rec, "v2v": v2v, "mm": mm,
            "auth": auth, "cat": cat}


def combine_strength(flags: dict[str, int], config: AttributionConfig) -> float:
    """Binary mode: sgn of the flag sum. Learned mode: sigmoid of weighted sum."""
    if config.mode == "binary":
        return 1.0 if sum(flags.values()) > 0 else 0.0
    z = sum(config.weights[d] * flags[d] for d in FLAG_NAMES)
    return float(1.0 / (1.0 + np.exp(-z)))


def pair_strength(session: Session, j: int, i: int, config: AttributionConfig) -> AttributionStrength:
    flags = pair_flags(session, j, i, config)
    return AttributionStrength(j=j, i=i, flags=flags, c_ji=combine_strength(flags, config))


def session_flag_matrices(session: Session, config: AttributionConfig) -> dict[str, np.ndarray]:
    """Boolean (n, n) flag matrices over ordered pairs; entry [j, i] is set
    only for i > j (strict upper triangle)."""
    n = len(session.records)
    recs = session.records
    idx = np.arange(n)
    upper = idx[None, :] > idx[:, None]
    w = config.adjacency_window

    pos = upper & ((idx[None, :] - idx[:, None]) <= w)

    auth = np.array([r.author_id for r in recs])
    cat = np.array([r.category_id for r in recs])
    src = np.array([r.retrieval_source_id for r in recs])
    emb = np.stack([r.embedding_array() for r in recs])
    cos = emb @ emb.T

    v2v = np.zeros((n, n), dtype=bool)
    vid_index: dict[int, list[int]] = {}
    for i, r in enumerate(recs):
        vid_index.setdefault(r.video_id, []).append(i)
    for i, r in enumerate(recs):
        for vid, score in r.v2v_neighbors:
            if score > config.v2v_threshold and vid in vid_index:
                for other in vid_index[vid]:
                    v2v[i, other] = True
                    v2v[other, i] = True

    col = np.zeros((n, n), dtype=bool)
    col_groups: dict[int, list[int]] = {}
    for i, r in enumerate(recs):
        if r.collection_id is not None:
            col_groups.setdefault(r.collection_id, []).append(i)
    for positions in col_groups.values():
        for m in positions:
            for i in positions:
                if i == m:
                    continue
                lo = max(0, m - w)
                col[lo:m, i] = True

    return {
        "pos": pos,
        "col": col & upper,
        "rec": (src[:, None] == src[None, :]) & upper,
        "v2v": v2v & upper,
        "mm": (cos > config.mm_threshold) & upper,
        "auth": (auth[:, None] == auth[None, :]) & upper,
        "cat": (cat[:, None] == cat[None, :]) & upper,
    }


def session_strength_matrix(session: Session, config: AttributionConfig) -> np.ndarray:
    """Upper-triangular matrix of c_ji (row j, column i; zero elsewhere)."""
    flags = session_flag_matrices(session, config)
    n = len(session.records)
    idx = np.arange(n)
    upper = idx[None, :] > idx[:, None]
    if config.mode == "binary":
        any_flag = np.zeros((n, n), dtype=bool)
        for d in FLAG_NAMES:
            any_flag |= flags[d]
        return np.where(any_flag, 1.0, 0.0)
    z = np.zeros((n, n), dtype=np.float64)
    for d in FLAG_NAMES:
        z += config.weights[d] * flags[d]
    return np.where(upper, 1.0 / (1.0 + np.exp(-z)), 0.0)


def attributed_slide_time(session: Session, j: int, config: AttributionConfig,
                          Q: float = DEFAULT_CAP_Q) -> float:
    """Strength-weighted downstream watch-time sum, capped at Q.

    The per-position contributions are reduced with numpy's pairwise
    summation so the result is bitwise identical to the session-level
    vectorized path in binary mode.
    """
    n = len(session.records)
    contrib = np.zeros(n)
    for i in range(j + 1, n):
        c = combine_strength(pair_flags(session, j, i, config), config)
        contrib[i] = c * session.records[i].watch_time
    return float(min(contrib.sum(), float(Q)))


def session_attributed_slide_times(session: Session, config: AttributionConfig,
                                   Q: float = DEFAULT_CAP_Q) -> np.ndarray:
    """attributed_slide_time for every position, sharing pair computations."""
    t = np.array([r.watch_time for r in session.records])
    totals = (session_strength_matrix(session, config) * t[None, :]).sum(axis=1)
    return np.minimum(totals, float(Q))


def table1_diagnostics(dataset: Dataset, config: AttributionConfig) -> dict[str, tuple[float, float]]:
    """Per-dimension (S_ratio, V_ratio).

    S_ratio: share of total downstream watch time over all (j, i) pairs
    carried by pairs with the flag set. V_ratio: share of pairs flagged.
    """
    if dataset.n_records() == 0:
        raise ValueError("dataset is empty")
    total_time = 0.0
    total_pairs = 0
    time_by_dim = {d: 0.0 for d in FLAG_NAMES}
    pairs_by_dim = {d: 0 for d in FLAG_NAMES}
    for sess in dataset.sessions:
        n = len(sess.records)
        if n < 2:
            continue
        t = np.array([r.watch_time for r in sess.records])
        # every pair (j, i) contributes t_i once
        pair_time = t * np.arange(n)  # t_i counted i times (one per predecessor)
        total_time += float(pair_time.sum())
        total_pairs += n * (n - 1) // 2
        flags = session_flag_matrices(sess, config)
        for d in FLAG_NAMES:
            m = flags[d]
            pairs_by_dim[d] += int(m.sum())
            time_by_dim[d] += float((m * t[None, :]).sum())
    if total_pairs == 0:
        raise ValueError("dataset has no (j, i) pairs")
    out = {}
    for d in FLAG_NAMES:
        s_ratio = time_by_dim[d] / total_time if total_time > 0 else 0.0
        v_ratio = pairs_by_dim[d] / total_pairs
        out[d] = (s_ratio, v_ratio)
    return out


def save_diagnostics(path, diag: dict[str, tuple[float, float]],
                     meta: str | None = None) -> None:
    """Plot-ready diagnostics table: dimension, S_ratio, V_ratio."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#ltvrank-attribution-diagnostics v1\n")
        if meta:
            fh.write(f"#meta {meta}\n")
        fh.write("dimension\ts_ratio\tv_ratio\n")
        for d in FLAG_NAMES:
            s, v = diag[d]
            fh.write(f"{d}\t{fmt_real(s)}\t{fmt_real(v)}\n")
    os.replace(tmp, path)
