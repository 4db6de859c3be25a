"""Length-collapse diagnostics over embeddings and ranked runs from any source."""

from collections import defaultdict
from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import check_count, check_positive

__all__ = [
    "BucketSpec",
    "EmbeddingRecord",
    "RankingRun",
    "RecordError",
    "centroid_distance_by_bucket",
    "cosine_lower_bound",
    "length_cohorts",
    "mean_rank_of_longest",
    "pairwise_cosine_by_bucket",
    "ranking_position_histogram",
]

OUT_OF_RANGE = "out_of_range"


class RecordError(ValueError):
    """A record that cannot enter a statistic; ``record_id`` names it."""

    def __init__(self, message, record_id=None):
        super().__init__(message)
        self.record_id = record_id


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    length: int
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float)
        if vec.ndim != 1 or vec.size == 0:
            raise RecordError(f"record {self.id!r}: vector must be a non-empty list", self.id)
        if not np.all(np.isfinite(vec)):
            raise RecordError(f"record {self.id!r}: vector has non-finite entries", self.id)
        if isinstance(self.length, bool) or not isinstance(self.length, (int, np.integer)):
            raise RecordError(f"record {self.id!r}: length must be an integer", self.id)
        if self.length < 1:
            raise RecordError(f"record {self.id!r}: length must be >= 1", self.id)
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class BucketSpec:
    """Half-open length intervals ``[edges[i], edges[i+1])``."""

    edges: tuple

    def __post_init__(self):
        edges = tuple(self.edges)
        if len(edges) < 2:
            raise ValueError("a bucket spec needs at least two edges")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"bucket edges must be strictly increasing, got {edges}")
        object.__setattr__(self, "edges", edges)

    def __len__(self):
        return len(self.edges) - 1

    def intervals(self):
        return list(zip(self.edges, self.edges[1:]))

    def assign(self, length):
        """Index of the bucket holding ``length``, or ``None`` if out of range."""
        if length < self.edges[0] or length >= self.edges[-1]:
            return None
        lo, hi = 0, len(self.edges) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if length >= self.edges[mid]:
                lo = mid
            else:
                hi = mid
        return lo


def _check_dataset(records):
    records = list(records)
    if not records:
        raise ValueError("empty embedding dataset")
    dim = records[0].vector.size
    for rec in records:
        if rec.vector.size != dim:
            raise RecordError(
                f"record {rec.id!r} has dimension {rec.vector.size}, expected {dim}", rec.id
            )
    return records


def _group(records, buckets):
    groups = defaultdict(list)
    for rec in records:
        groups[buckets.assign(rec.length)].append(rec)
    labels = [(i, lo, hi) for i, (lo, hi) in enumerate(buckets.intervals())]
    labels.append((None, OUT_OF_RANGE, OUT_OF_RANGE))
    return groups, labels


def pairwise_cosine_by_bucket(records, buckets):
    """Mean and std of ``cos(u, v)`` over unordered within-bucket pairs.

    Buckets with fewer than two records are reported with ``count`` and NaN
    statistics. A trailing ``out_of_range`` row collects lengths outside the
    edges. Zero vectors raise :class:`RecordError`.
    """
    records = _check_dataset(records)
    for rec in records:
        if not np.any(rec.vector):
            raise RecordError(f"record {rec.id!r} is a zero vector", rec.id)
    groups, labels = _group(records, buckets)
    rows = []
    for key, lo, hi in labels:
        members = groups.get(key, [])
        row = {"bucket_lo": lo, "bucket_hi": hi, "count": len(members), "pairs": 0,
               "mean_cos": math.nan, "std_cos": math.nan}
        if key is None and not members:
            continue
        if len(members) >= 2:
            v = np.stack([r.vector for r in members])
            u = v / np.linalg.norm(v, axis=1, keepdims=True)
            c = (u @ u.T)[np.triu_indices(len(members), k=1)]
            c = np.clip(c, -1.0, 1.0)
            row.update(pairs=int(c.size), mean_cos=float(c.mean()), std_cos=float(c.std()))
        rows.append(row)
    return rows


def centroid_distance_by_bucket(records, buckets):
    """Mean Euclidean distance to the dataset centroid, per bucket.

    The centroid is the mean over every record, in or out of range.
    """
    records = _check_dataset(records)
    centroid = np.stack([r.vector for r in records]).mean(axis=0)
    groups, labels = _group(records, buckets)
    rows = []
    for key, lo, hi in labels:
        members = groups.get(key, [])
        if key is None and not members:
            continue
        dist = math.nan
        if members:
            v = np.stack([r.vector for r in members])
            dist = float(np.linalg.norm(v - centroid, axis=1).mean())
        rows.append({"bucket_lo": lo, "bucket_hi": hi, "count": len(members),
                     "mean_distance": dist})
    return rows


@dataclass
class RankingRun:
    """Ranked lists per query, relevance judgments and document lengths.

    ``ranked[qid]`` is the list of ``(doc_id, score)`` in rank order (rank 1
    first). ``qrels[qid]`` is the set of relevant doc ids.
    """

    ranked: dict
    qrels: dict
    doc_lengths: dict = field(default_factory=dict)

    def __post_init__(self):
        for qid, docs in self.ranked.items():
            scores = [s for _, s in docs]
            for i, (a, b) in enumerate(zip(scores, scores[1:]), start=1):
                if b > a + 1e-9:
                    raise ValueError(
                        f"query {qid!r}: score at rank {i + 1} exceeds score at rank {i}"
                    )

    def relevant_pairs(self):
        """Every ``(qid, doc_id)`` judgment with a positive label, in sorted order."""
        return sorted((q, d) for q, docs in self.qrels.items() for d in docs)

    def rank_of(self, qid, doc_id):
        """1-based rank and list length, or ``(None, length)`` if unranked."""
        docs = self.ranked.get(qid, [])
        for i, (d, _) in enumerate(docs, start=1):
            if d == doc_id:
                return i, len(docs)
        return None, len(docs)


def length_cohorts(run, percentile):
    """Shortest and longest ``ceil(percentile * N)`` relevant judgments.

    Ties in length break on doc id, then query id.
    """
    if not (0.0 < percentile <= 0.5):
        raise ValueError(f"percentile must lie in (0, 0.5], got {percentile}")
    pairs = run.relevant_pairs()
    missing = sorted({d for _, d in pairs if d not in run.doc_lengths})
    if missing:
        raise RecordError(f"no length for relevant docs: {missing[:5]}", missing[0])
    ordered = sorted(pairs, key=lambda qd: (run.doc_lengths[qd[1]], qd[1], qd[0]))
    if not ordered:
        return [], []
    k = max(1, math.ceil(percentile * len(ordered)))
    return ordered[:k], ordered[-k:]


def _histogram(run, cohort, bins):
    counts = [0] * bins
    unranked = 0
    for qid, doc in cohort:
        rank, total = run.rank_of(qid, doc)
        if rank is None:
            unranked += 1
            continue
        # normalized rank r/L in (0, 1], bins are (i/bins, (i+1)/bins]
        counts[-(-rank * bins // total) - 1] += 1
    edges = [(i / bins, (i + 1) / bins) for i in range(bins)]
    return {"bins": [(lo, hi, c) for (lo, hi), c in zip(edges, counts)],
            "unranked": unranked, "size": len(cohort)}


def ranking_position_histogram(run, percentile=0.2, bins=10):
    """Normalized-rank histograms for the shortest and longest relevant documents."""
    bins = check_count(bins, "bins")
    short, long_ = length_cohorts(run, percentile)
    return {"short": _histogram(run, short, bins), "long": _histogram(run, long_, bins)}


def mean_rank_of_longest(run, percentile=0.2):
    """Mean raw rank of the ranked members of the longest-length cohort (NaN if none)."""
    _, long_ = length_cohorts(run, percentile)
    ranks = [r for r, _ in (run.rank_of(q, d) for q, d in long_) if r is not None]
    return float(np.mean(ranks)) if ranks else math.nan


def cosine_lower_bound(alpha, alpha1, alpha2):
    """``alpha^2 / (sqrt(alpha^2 + alpha1^2) sqrt(alpha^2 + alpha2^2))``.

    Lower bound on the cosine of two embeddings sharing DC magnitude
    ``alpha`` whose HC spectra peak at ``alpha1`` and ``alpha2``.
    """
    alpha = check_positive(alpha, "alpha")
    for name, v in (("alpha1", alpha1), ("alpha2", alpha2)):
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"{name} must be finite and non-negative, got {v!r}")
    a2 = alpha * alpha
    return a2 / (math.sqrt(a2 + alpha1 * alpha1) * math.sqrt(a2 + alpha2 * alpha2))
