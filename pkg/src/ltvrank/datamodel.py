"""Canonical impression/session records, dataset container, and the
line-delimited on-disk format shared by every other module.

The file format is tab-separated, one record per line, UTF-8, ``\\n``
terminated. Integers are base-10; reals use Python ``repr`` (shortest
round-trip form), so ``load(save(D)) == D`` holds bit-exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

#: Feed pages return four videos each.
RECORDS_PER_PAGE = 4

#: Default cap Q on a video's influence over subsequent watch time (seconds).
DEFAULT_CAP_Q = 300.0


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed; names the line and field."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def fmt_real(x: float) -> str:
    """Serialize a real with shortest round-trip precision."""
    return repr(float(x))


@dataclass(frozen=True)
class ImpressionRecord:
    """One video exposure: ids, position, timing, engagement, content."""

    user_id: int
    video_id: int
    author_id: int
    category_id: int
    retrieval_source_id: int
    collection_id: int | None
    session_id: int
    day: int
    page_index: int
    position_in_page: int
    global_position: int
    watch_time: float
    content_embedding: tuple[float, ...]
    v2v_neighbors: tuple[tuple[int, float], ...]
    revisit_flag: int

    def embedding_array(self) -> np.ndarray:
        return np.asarray(self.content_embedding, dtype=np.float64)


@dataclass(frozen=True)
class Session:
    """An ordered, non-empty run of impressions sharing session/user/day."""

    session_id: int
    user_id: int
    day: int
    records: tuple[ImpressionRecord, ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class Dataset:
    """Ordered collection of sessions. Immutable by convention after load."""

    sessions: list[Session] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sessions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.sessions == other.sessions

    def iter_records(self) -> Iterator[ImpressionRecord]:
        for sess in self.sessions:
            yield from sess.records

    def n_records(self) -> int:
        return sum(len(s) for s in self.sessions)


@dataclass
class LabeledExample:
    """Per-impression training labels derived from one session log."""

    session_id: int
    index: int  # position of the impression within its session
    slide_time: float
    pdq_label: float
    attributed_slide_time: float
    watch_time_label: float
    completion_label: float
    interaction_label: float
    author_ltv: float | None = None


def validate_session(session: Session) -> list[str]:
    """Check every record-level and session-level invariant.

    Returns an empty list iff the session is well formed; each violation
    is a human-readable string naming the record and field.
    """
    violations: list[str] = []
    if len(session.records) == 0:
        return [f"session {session.session_id}: empty session"]
    per_page: dict[int, int] = {}
    prev_global = None
    prev_page = None
    for idx, r in enumerate(session.records):
        where = f"session {session.session_id} record {idx}"
        if r.session_id != session.session_id:
            violations.append(f"{where}: session_id {r.session_id} != {session.session_id}")
        if r.user_id != session.user_id:
            violations.append(f"{where}: user_id {r.user_id} != {session.user_id}")
        if r.day != session.day:
            violations.append(f"{where}: day {r.day} != {session.day}")
        if not (math.isfinite(r.watch_time) and r.watch_time >= 0):
            violations.append(f"{where}: watch_time {r.watch_time} must be finite and >= 0")
        if r.position_in_page not in (0, 1, 2, 3):
            violations.append(f"{where}: position_in_page {r.position_in_page} not in [0,3]")
        if r.page_index < 0:
            violations.append(f"{where}: page_index {r.page_index} < 0")
        if r.day < 0:
            violations.append(f"{where}: day {r.day} < 0")
        if r.revisit_flag not in (0, 1):
            violations.append(f"{where}: revisit_flag {r.revisit_flag} not 0/1")
        if prev_global is not None and r.global_position <= prev_global:
            violations.append(f"{where}: global_position {r.global_position} not strictly increasing")
        if prev_page is not None and r.page_index < prev_page:
            violations.append(f"{where}: page_index {r.page_index} decreased")
        prev_global = r.global_position
        prev_page = r.page_index
        per_page[r.page_index] = per_page.get(r.page_index, 0) + 1
        norm = float(np.linalg.norm(r.embedding_array()))
        if abs(norm - 1.0) > 1e-6:
            violations.append(f"{where}: content_embedding norm {norm:.8f} not within 1e-6 of 1")
        for vid, score in r.v2v_neighbors:
            if not (0.0 <= score <= 1.0):
                violations.append(f"{where}: v2v score {score} for video {vid} not in [0,1]")
    for page, count in sorted(per_page.items()):
        if count > RECORDS_PER_PAGE:
            violations.append(
                f"session {session.session_id} page {page}: {count} records exceed "
                f"{RECORDS_PER_PAGE} per page"
            )
    return violations


def compute_slide_time(session: Session, j: int, Q: float = DEFAULT_CAP_Q) -> float:
    """Capped suffix watch-time sum: min(sum of watch times after j, Q).

    The last record of a session has slide time 0 (empty suffix).
    """
    if not 0 <= j < len(session.records):
        raise IndexError(f"record index {j} out of range for session of length {len(session.records)}")
    if Q <= 0:
        raise ValueError(f"cap Q must be positive, got {Q}")
    total = 0.0
    for r in session.records[j + 1:]:
        total += r.watch_time
        if total >= Q:
            return float(Q)
    return min(total, float(Q))


def session_slide_times(session: Session, Q: float = DEFAULT_CAP_Q) -> np.ndarray:
    """Slide time for every position of one session, vectorized."""
    t = np.array([r.watch_time for r in session.records], dtype=np.float64)
    suffix = np.concatenate([np.cumsum(t[::-1])[::-1][1:], [0.0]])
    return np.minimum(suffix, float(Q))


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------

_HEADER = "#ltvrank-dataset v1"


def _fmt_record(r: ImpressionRecord) -> str:
    emb = ",".join(fmt_real(x) for x in r.content_embedding)
    v2v = ",".join(f"{vid}:{fmt_real(score)}" for vid, score in r.v2v_neighbors)
    col = "-" if r.collection_id is None else str(r.collection_id)
    return "\t".join([
        str(r.user_id), str(r.video_id), str(r.author_id), str(r.category_id),
        str(r.retrieval_source_id), col, str(r.session_id), str(r.day),
        str(r.page_index), str(r.position_in_page), str(r.global_position),
        fmt_real(r.watch_time), emb, v2v, str(r.revisit_flag),
    ])


def _parse_record(path, line_no: int, line: str) -> ImpressionRecord:
    parts = line.split("\t")
    if len(parts) != 15:
        raise DatasetFormatError(path, line_no, f"expected 15 fields, got {len(parts)}")
    try:
        emb = tuple(float(x) for x in parts[12].split(",")) if parts[12] else ()
        v2v = []
        if parts[13]:
            for item in parts[13].split(","):
                vid, score = item.split(":")
                v2v.append((int(vid), float(score)))
        return ImpressionRecord(
            user_id=int(parts[0]), video_id=int(parts[1]), author_id=int(parts[2]),
            category_id=int(parts[3]), retrieval_source_id=int(parts[4]),
            collection_id=None if parts[5] == "-" else int(parts[5]),
            session_id=int(parts[6]), day=int(parts[7]), page_index=int(parts[8]),
            position_in_page=int(parts[9]), global_position=int(parts[10]),
            watch_time=float(parts[11]), content_embedding=emb,
            v2v_neighbors=tuple(v2v), revisit_flag=int(parts[14]),
        )
    except (ValueError, IndexError) as exc:
        raise DatasetFormatError(path, line_no, f"malformed field: {exc}") from None


def save_dataset(path, dataset: Dataset, meta: str | None = None) -> None:
    """Write a dataset atomically (temp file then rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_HEADER + "\n")
        if meta:
            fh.write(f"#meta {meta}\n")
        for sess in dataset.sessions:
            for r in sess.records:
                fh.write(_fmt_record(r) + "\n")
    os.replace(tmp, path)


def load_dataset(path) -> Dataset:
    """Load a dataset, grouping consecutive records by session_id."""
    sessions: list[Session] = []
    current: list[ImpressionRecord] = []

    def flush():
        if current:
            first = current[0]
            sessions.append(Session(
                session_id=first.session_id, user_id=first.user_id,
                day=first.day, records=tuple(current),
            ))
            current.clear()

    with open(path, "r", encoding="utf-8") as fh:
        first_line = fh.readline()
        if first_line.rstrip("\n") != _HEADER:
            raise DatasetFormatError(path, 1, f"bad header {first_line.rstrip()!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.endswith("\n"):
                raise DatasetFormatError(path, line_no, "truncated record (missing newline)")
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            rec = _parse_record(path, line_no, line)
            if current and rec.session_id != current[0].session_id:
                flush()
            current.append(rec)
    flush()
    return Dataset(sessions=sessions)


def save_labeled(path, examples: Sequence[LabeledExample], meta: str | None = None) -> None:
    """Write labeled examples in the same line-delimited style."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#ltvrank-labeled v1\n")
        if meta:
            fh.write(f"#meta {meta}\n")
        for e in examples:
            auth = "-" if e.author_ltv is None else fmt_real(e.author_ltv)
            fh.write("\t".join([
                str(e.session_id), str(e.index), fmt_real(e.slide_time),
                fmt_real(e.pdq_label), fmt_real(e.attributed_slide_time),
                fmt_real(e.watch_time_label), fmt_real(e.completion_label),
                fmt_real(e.interaction_label), auth,
            ]) + "\n")
    os.replace(tmp, path)


def load_labeled(path) -> list[LabeledExample]:
    out: list[LabeledExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "#ltvrank-labeled v1":
            raise DatasetFormatError(path, 1, f"bad header {header!r}")
        for line_no, line in enumerate(fh, start=2):
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 9:
                raise DatasetFormatError(path, line_no, f"expected 9 fields, got {len(parts)}")
            try:
                out.append(LabeledExample(
                    session_id=int(parts[0]), index=int(parts[1]),
                    slide_time=float(parts[2]), pdq_label=float(parts[3]),
                    attributed_slide_time=float(parts[4]),
                    watch_time_label=float(parts[5]),
                    completion_label=float(parts[6]),
                    interaction_label=float(parts[7]),
                    author_ltv=None if parts[8] == "-" else float(parts[8]),
                ))
            except ValueError as exc:
                raise DatasetFormatError(path, line_no, f"malformed field: {exc}") from None
    return out
