"""Synthetic multi-day session log generator with planted ground truth.

Every downstream claim in this package is checked against structure the
generator plants on purpose:

* position bias arises mechanistically: a user's latent activity drives both
  session depth and engagement scale, so deep pages are reached only by
  heavy watchers;
* watch times are zero-inflated gamma draws, scaled by latent video quality
  and user-author affinity;
* a causal channel adds explicit contributions from recent related
  impressions (same category / same author / near-duplicate embeddings) to a
  successor's watch time, bookkept exactly so attribution can be audited;
* users revisit preferred authors across days, populating revisit_flag.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .datamodel import Dataset, ImpressionRecord, Session, fmt_real


@dataclass
class GenConfig:
    n_users: int = 5000
    n_videos: int = 20000
    n_authors: int = 500
    n_categories: int = 40
    n_days: int = 10
    n_retrieval_sources: int = 8
    n_collections: int = 400
    embedding_dim: int = 16
    activity_shape: float = 1.2          # gamma shape of per-user activity, mean 1
    zero_watch_prob: float = 0.35
    watch_gamma_shape: float = 0.9
    watch_gamma_scale: float = 6.0
    author_affinity_strength: float = 1.0
    category_carryover_strength: float = 1.0
    carryover_scale: float = 30.0        # mean seconds of one planted contribution
    carryover_window: int = 6
    position_bias_strength: float = 1.0
    promotion_strength: float = 1.0      # how strongly placement follows promotion
    promotion_noise: float = 0.5
    revisit_base_prob: float = 0.15
    base_pages: float = 2.0              # mean pages/session for a unit-activity user
    max_pages: int = 60
    session_prob: float = 1.0
    pref_watch_prob: float = 0.2         # chance an impression comes from a preferred author
    n_preferred_authors: int = 3
    v2v_top_k: int = 4
    mm_sim_threshold: float = 0.9        # embedding cosine above this plants a causal link
    embedding_noise: float = 0.55
    seed: int = 0

    def validate(self) -> None:
        counts = ["n_users", "n_videos", "n_authors", "n_categories", "n_days",
                  "n_retrieval_sources", "n_collections", "embedding_dim",
                  "n_preferred_authors", "max_pages"]
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        probs = ["zero_watch_prob", "revisit_base_prob", "session_prob", "pref_watch_prob"]
        for name in probs:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        positives = ["activity_shape", "watch_gamma_shape", "watch_gamma_scale",
                     "carryover_scale", "base_pages"]
        for name in positives:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        nonneg = ["author_affinity_strength", "category_carryover_strength",
                  "position_bias_strength", "carryover_window",
                  "promotion_strength", "promotion_noise"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass
class GroundTruth:
    """Planted latents and per-impression causal bookkeeping."""

    user_activity: np.ndarray                    # (n_users,)
    user_revisit_prob: np.ndarray                # (n_users,)
    user_affinity: list[dict[int, float]]        # author_id -> affinity level
    video_author: np.ndarray                     # (n_videos,)
    video_category: np.ndarray
    video_collection: np.ndarray                 # -1 for none
    video_quality: np.ndarray
    video_promotion: np.ndarray                  # placement score, independent of quality
    author_quality: np.ndarray
    # (session_id, index) -> (base_watch, ((gap_back, contribution), ...))
    contributions: dict[tuple[int, int], tuple[float, tuple[tuple[int, float], ...]]] = field(
        default_factory=dict)

    def affinity(self, user_id: int, author_id: int) -> float:
        return self.user_affinity[user_id].get(int(author_id), 0.0)

    def planted_outgoing(self, session: Session) -> np.ndarray:
        """Total planted causal contribution each impression made to its successors."""
        out = np.zeros(len(session.records), dtype=np.float64)
        for i in range(len(session.records)):
            _, contribs = self.contributions[(session.session_id, i)]
            for gap, value in contribs:
                out[i - gap] += value
        return out

    def reconstruct_watch(self, session: Session, i: int) -> float:
        """base + planted contributions, summed in generation order."""
        base, contribs = self.contributions[(session.session_id, i)]
        total = base
        for _, value in contribs:
            total += value
        return total


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _build_latents(cfg: GenConfig, rng: np.random.Generator):
    author_quality = rng.lognormal(mean=0.0, sigma=0.8, size=cfg.n_authors)
    author_p = author_quality / author_quality.sum()
    video_author = rng.choice(cfg.n_authors, size=cfg.n_videos, p=author_p)
    video_category = rng.integers(0, cfg.n_categories, size=cfg.n_videos)
    video_collection = np.where(
        rng.random(cfg.n_videos) < 0.3,
        rng.integers(0, cfg.n_collections, size=cfg.n_videos),
        -1,
    )
    video_quality = rng.lognormal(mean=0.0, sigma=0.4, size=cfg.n_videos)
    # promotion drives where the feed places a video inside a session; it is
    # drawn independently of quality, the confound PDQ labels neutralize
    video_promotion = rng.lognormal(mean=0.0, sigma=1.0, size=cfg.n_videos)
    centers = _unit_rows(rng.normal(size=(cfg.n_categories, cfg.embedding_dim)))
    emb = centers[video_category] + cfg.embedding_noise * rng.normal(
        size=(cfg.n_videos, cfg.embedding_dim))
    emb = _unit_rows(emb)
    return (author_quality, video_author, video_category, video_collection,
            video_quality, video_promotion, emb)


def _build_v2v(cfg: GenConfig, rng: np.random.Generator,
               video_category: np.ndarray, emb: np.ndarray) -> list[tuple[tuple[int, float], ...]]:
    """Top-k noisy cosine neighbors, searched within each category cluster."""
    neighbors: list[tuple[tuple[int, float], ...]] = [()] * len(emb)
    for cat in range(cfg.n_categories):
        idx = np.flatnonzero(video_category == cat)
        if len(idx) < 2:
            continue
        sims = emb[idx] @ emb[idx].T
        sims += 0.05 * rng.normal(size=sims.shape)
        np.fill_diagonal(sims, -np.inf)
        k = min(cfg.v2v_top_k, len(idx) - 1)
        top = np.argsort(-sims, axis=1)[:, :k]
        for row, vi in enumerate(idx):
            pairs = []
            for col in top[row]:
                score = float(np.clip(sims[row, col], 0.0, 1.0))
                if score > 0.0:
                    pairs.append((int(idx[col]), score))
            neighbors[vi] = tuple(pairs)
    return neighbors


def generate(config: GenConfig) -> tuple[Dataset, GroundTruth]:
    """Generate a multi-day session log and its planted ground truth.

    Deterministic given ``config.seed``; each user draws from an independent
    sub-seed, so per-user generation order does not affect the output.
    """
    cfg = config
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    global_ss, users_ss = root.spawn(2)
    rng = np.random.default_rng(global_ss)

    (author_quality, video_author, video_category, video_collection,
     video_quality, video_promotion, emb) = _build_latents(cfg, rng)
    v2v = _build_v2v(cfg, rng, video_category, emb)
    emb_tuples = [tuple(float(x) for x in emb[v]) for v in range(cfg.n_videos)]

    user_activity = rng.gamma(cfg.activity_shape, 1.0 / cfg.activity_shape,
                              size=cfg.n_users)
    pop = video_quality / video_quality.sum()
    videos_by_author: list[np.ndarray] = [
        np.flatnonzero(video_author == a) for a in range(cfg.n_authors)
    ]
    author_p = author_quality / author_quality.sum()

    gt = GroundTruth(
        user_activity=user_activity,
        user_revisit_prob=np.zeros(cfg.n_users),
        user_affinity=[{} for _ in range(cfg.n_users)],
        video_author=video_author, video_category=video_category,
        video_collection=video_collection, video_quality=video_quality,
        video_promotion=video_promotion, author_quality=author_quality,
    )

    sessions: list[Session] = []
    user_seeds = users_ss.spawn(cfg.n_users)
    for user in range(cfg.n_users):
        urng = np.random.default_rng(user_seeds[user])
        n_pref = min(cfg.n_preferred_authors, cfg.n_authors)
        pref_authors = urng.choice(cfg.n_authors, size=n_pref, replace=False, p=author_p)
        pref_aff = urng.uniform(0.5, 1.5, size=n_pref)
        gt.user_affinity[user] = {int(a): float(v) for a, v in zip(pref_authors, pref_aff)}
        mean_aff = float(np.mean(pref_aff))
        p_rev = float(np.clip(
            cfg.revisit_base_prob + 0.3 * cfg.author_affinity_strength * mean_aff, 0.0, 1.0))
        gt.user_revisit_prob[user] = p_rev
        pref_videos = np.concatenate([videos_by_author[a] for a in pref_authors]) \
            if n_pref else np.array([], dtype=int)

        for day in range(cfg.n_days):
            if urng.random() >= cfg.session_prob:
                continue
            session_id = user * cfg.n_days + day
            revisit = 1 if (day > 0 and urng.random() < p_rev) else 0
            sessions.append(_generate_session(
                cfg, gt, urng, user, day, session_id, revisit,
                user_activity[user], pref_videos, pop,
                video_author, video_category, video_collection,
                video_quality, video_promotion, emb, emb_tuples, v2v))

    sessions.sort(key=lambda s: s.session_id)
    return Dataset(sessions=sessions), gt


def _generate_session(cfg, gt, urng, user, day, session_id, revisit, activity,
                      pref_videos, pop, video_author, video_category,
                      video_collection, video_quality, video_promotion,
                      emb, emb_tuples, v2v) -> Session:
    mean_pages = cfg.base_pages * (1.0 + cfg.position_bias_strength * activity)
    pages = int(urng.geometric(1.0 / max(mean_pages, 1.0)))
    pages = min(max(pages, 1), cfg.max_pages)
    n = pages * 4

    if len(pref_videos) > 0:
        from_pref = urng.random(n) < cfg.pref_watch_prob
    else:
        from_pref = np.zeros(n, dtype=bool)
    vids = urng.choice(len(pop), size=n, p=pop)
    n_pref = int(from_pref.sum())
    if n_pref:
        vids[from_pref] = pref_videos[urng.integers(0, len(pref_videos), size=n_pref)]

    if cfg.promotion_strength > 0:
        # the feed surfaces heavily promoted videos first, regardless of
        # their quality; this plants the position confound on the item side
        placement = cfg.promotion_strength * np.log(video_promotion[vids])
        placement += cfg.promotion_noise * urng.normal(size=n)
        vids = vids[np.argsort(-placement, kind="stable")]

    authors = video_author[vids]
    cats = video_category[vids]
    aff = np.array([gt.user_affinity[user].get(int(a), 0.0) for a in authors])
    engagement = 1.0 + cfg.position_bias_strength * activity

    zero_p = np.where(aff > 0, cfg.zero_watch_prob * 0.5, cfg.zero_watch_prob)
    watched = urng.random(n) >= zero_p
    base = urng.gamma(cfg.watch_gamma_shape, cfg.watch_gamma_scale, size=n)
    base *= video_quality[vids] * (1.0 + cfg.author_affinity_strength * aff) * engagement
    base = np.where(watched, base, 0.0)

    sess_emb = emb[vids]
    watch = base.copy()
    contrib_lists: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    if cfg.category_carryover_strength > 0 and cfg.carryover_window > 0:
        for i in range(1, n):
            if base[i] <= 0:
                continue
            lo = max(0, i - cfg.carryover_window)
            for j in range(lo, i):
                if watch[j] <= 0:
                    continue
                related = (cats[j] == cats[i] or authors[j] == authors[i]
                           or float(sess_emb[j] @ sess_emb[i]) > cfg.mm_sim_threshold)
                if not related:
                    continue
                value = cfg.category_carryover_strength * urng.exponential(cfg.carryover_scale)
                contrib_lists[i].append((i - j, float(value)))
        for i in range(n):
            total = base[i]
            for _, value in contrib_lists[i]:
                total += value
            watch[i] = total

    retrieval = urng.integers(0, cfg.n_retrieval_sources, size=n)
    records = []
    for i in range(n):
        v = int(vids[i])
        col = int(video_collection[v])
        records.append(ImpressionRecord(
            user_id=user, video_id=v, author_id=int(authors[i]),
            category_id=int(cats[i]), retrieval_source_id=int(retrieval[i]),
            collection_id=None if col < 0 else col,
            session_id=session_id, day=day, page_index=i // 4,
            position_in_page=i % 4, global_position=i,
            watch_time=float(watch[i]), content_embedding=emb_tuples[v],
            v2v_neighbors=v2v[v], revisit_flag=revisit,
        ))
        gt.contributions[(session_id, i)] = (float(base[i]), tuple(contrib_lists[i]))
    return Session(session_id=session_id, user_id=user, day=day, records=tuple(records))


def empirical_zero_fraction(dataset: Dataset, pages: tuple[int, int | None],
                            field_name: str = "slide_time") -> float:
    """Fraction of impressions in a page range whose value is zero.

    ``pages`` is a half-open ``(lo, hi)`` range of page indices; ``hi=None``
    means unbounded. ``field_name`` selects slide_time (default) or
    watch_time.
    """
    from .datamodel import session_slide_times

    lo, hi = pages
    total = 0
    zeros = 0
    for sess in dataset.sessions:
        if field_name == "slide_time":
            values = session_slide_times(sess, Q=np.inf)
        elif field_name == "watch_time":
            values = np.array([r.watch_time for r in sess.records])
        else:
            raise ValueError(f"unknown field {field_name!r}")
        for r, v in zip(sess.records, values):
            if lo <= r.page_index and (hi is None or r.page_index < hi):
                total += 1
                zeros += int(v == 0.0)
    if total == 0:
        raise ValueError(f"no impressions in page range {pages}")
    return zeros / total


# ---------------------------------------------------------------------------
# Ground-truth sidecar persistence
# ---------------------------------------------------------------------------

def save_ground_truth(path, gt: GroundTruth, meta: str | None = None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#ltvrank-groundtruth v1\n")
        if meta:
            fh.write(f"#meta {meta}\n")
        for u in range(len(gt.user_activity)):
            affs = ",".join(f"{a}:{fmt_real(v)}" for a, v in sorted(gt.user_affinity[u].items()))
            fh.write(f"U\t{u}\t{fmt_real(gt.user_activity[u])}\t"
                     f"{fmt_real(gt.user_revisit_prob[u])}\t{affs}\n")
        for v in range(len(gt.video_author)):
            fh.write(f"V\t{v}\t{gt.video_author[v]}\t{gt.video_category[v]}\t"
                     f"{gt.video_collection[v]}\t{fmt_real(gt.video_quality[v])}\t"
                     f"{fmt_real(gt.video_promotion[v])}\n")
        for a in range(len(gt.author_quality)):
            fh.write(f"A\t{a}\t{fmt_real(gt.author_quality[a])}\n")
        for (sid, idx), (base, contribs) in sorted(gt.contributions.items()):
            cstr = ",".join(f"{gap}:{fmt_real(val)}" for gap, val in contribs)
            fh.write(f"C\t{sid}\t{idx}\t{fmt_real(base)}\t{cstr}\n")
    os.replace(tmp, path)


def load_ground_truth(path) -> GroundTruth:
    users: list[tuple[float, float, dict[int, float]]] = []
    videos: list[tuple[int, int, int, float, float]] = []
    authors: list[float] = []
    contributions: dict[tuple[int, int], tuple[float, tuple[tuple[int, float], ...]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "#ltvrank-groundtruth v1":
            raise ValueError(f"{path}: bad header {header!r}")
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            tag = parts[0]
            if tag == "U":
                affs = {}
                if parts[4]:
                    for item in parts[4].split(","):
                        a, v = item.split(":")
                        affs[int(a)] = float(v)
                users.append((float(parts[2]), float(parts[3]), affs))
            elif tag == "V":
                videos.append((int(parts[2]), int(parts[3]), int(parts[4]),
                               float(parts[5]), float(parts[6])))
            elif tag == "A":
                authors.append(float(parts[2]))
            elif tag == "C":
                contribs = []
                if parts[4]:
                    for item in parts[4].split(","):
                        gap, val = item.split(":")
                        contribs.append((int(gap), float(val)))
                contributions[(int(parts[1]), int(parts[2]))] = (float(parts[3]), tuple(contribs))
            else:
                raise ValueError(f"{path}: unknown record tag {tag!r}")
    return GroundTruth(
        user_activity=np.array([u[0] for u in users]),
        user_revisit_prob=np.array([u[1] for u in users]),
        user_affinity=[u[2] for u in users],
        video_author=np.array([v[0] for v in videos], dtype=int),
        video_category=np.array([v[1] for v in videos], dtype=int),
        video_collection=np.array([v[2] for v in videos], dtype=int),
        video_quality=np.array([v[3] for v in videos]),
        video_promotion=np.array([v[4] for v in videos]),
        author_quality=np.array(authors),
        contributions=contributions,
    )
