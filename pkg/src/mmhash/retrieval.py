"""Exhaustive Hamming-scan retrieval and the ranking quality metrics.

Rankings sort by Hamming distance with ties broken by ascending sample id,
so results are total orders and bit-reproducible. Average precision for a
ranked list of R results is

    AP = sum_{r=1..R} P(r) * rel(r) / max(1, #relevant retrieved in top R)

with P(r) the precision among the first r results and rel(r) the 0/1
relevance at rank r. The normalization can be switched off to obtain the
bare sum (`unnormalized=True`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidValue
from .hashing import CodeMatrix, HashCode, hamming_cross, hamming_to_many

__all__ = [
    "HashIndex",
    "RankedResult",
    "query",
    "precision_at",
    "average_precision",
    "mean_average_precision",
    "evaluate_retrieval",
    "EvaluationReport",
    "write_report_csv",
    "minimum_hash_length",
]


@dataclass(eq=False)
class HashIndex:
    """Immutable searchable collection of codes with ids and optional
    label sets (used as relevance ground truth)."""

    codes: CodeMatrix
    ids: np.ndarray = None
    labels: list | None = None

    def __post_init__(self):
        n = len(self.codes)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (n,):
            raise DimensionMismatch(f"{self.ids.shape[0]} ids for {n} codes")
        if len(np.unique(self.ids)) != n:
            raise InvalidValue("ids must be unique")
        if self.labels is not None:
            self.labels = [frozenset(s) for s in self.labels]
            if len(self.labels) != n:
                raise InvalidValue(f"{len(self.labels)} label sets for {n} codes")

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def m(self) -> int:
        return self.codes.m


@dataclass(eq=False)
class RankedResult:
    """Retrieved ids with their distances, sorted by (distance, id)."""

    ids: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.distances = np.asarray(self.distances, dtype=np.int64)
        if self.ids.shape != self.distances.shape or self.ids.ndim != 1:
            raise DimensionMismatch("ids and distances must be equal-length 1-d arrays")
        if self.distances.size > 1:
            d, i = self.distances, self.ids
            if np.any(d[1:] < d[:-1]):
                raise InvalidValue("distances must be non-decreasing")
            ties = d[1:] == d[:-1]
            if np.any(ties & (i[1:] <= i[:-1])):
                raise InvalidValue("ties must be ordered by ascending id")

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.distances.tolist()))


def query(index: HashIndex, q: HashCode, k: int) -> RankedResult:
    """Top-k exhaustive Hamming scan of the index."""
    if len(index) == 0:
        raise InvalidValue("cannot query an empty index")
    if k < 1:
        raise InvalidValue(f"k must be at least 1, got {k}")
    dists = hamming_to_many(q, index.codes)
    order = np.lexsort((index.ids, dists))
    take = order[: min(k, len(index))]
    return RankedResult(ids=index.ids[take], distances=dists[take])


def _relevance_flags(ids: np.ndarray, relevance) -> np.ndarray:
    if isinstance(relevance, dict):
        return np.array([bool(relevance.get(int(i), False)) for i in ids])
    rel = set(relevance)
    return np.array([int(i) in rel for i in ids])


def precision_at(result: RankedResult, relevance, r: int) -> float:
    """Fraction of relevant items among the first r results."""
    if not 1 <= r <= len(result):
        raise InvalidValue(f"r must be in 1..{len(result)}, got {r}")
    flags = _relevance_flags(result.ids[:r], relevance)
    return float(flags.sum()) / r


def average_precision(result: RankedResult, relevance, unnormalized: bool = False) -> float:
    if len(result) == 0:
        raise InvalidValue("cannot score an empty result")
    flags = _relevance_flags(result.ids, relevance)
    hits = np.cumsum(flags)
    ranks = np.arange(1, len(result) + 1)
    raw = float(np.sum((hits / ranks)[flags]))
    if unnormalized:
        return raw
    return raw / max(1, int(hits[-1]))


def mean_average_precision(results, relevances, unnormalized: bool = False) -> float:
    """Mean of per-query average precision; queries and their relevance sets
    are paired by position."""
    results = list(results)
    relevances = list(relevances)
    if not results:
        raise InvalidValue("need at least one query")
    if len(results) != len(relevances):
        raise DimensionMismatch(
            f"{len(results)} results but {len(relevances)} relevance sets"
        )
    aps = [average_precision(res, rel, unnormalized) for res, rel in zip(results, relevances)]
    return float(np.mean(aps))


@dataclass
class EvaluationReport:
    """Aggregate retrieval quality plus the per-query rows behind it."""

    map: float
    precision_at_k: dict
    rows: list  # (query_id, ap, p@1, p@5, p@10)


def evaluate_retrieval(
    index: HashIndex,
    query_codes: CodeMatrix,
    query_labels,
    query_ids=None,
    exclude_self: bool = False,
    unnormalized: bool = False,
    ks=(1, 5, 10),
) -> EvaluationReport:
    """Rank the whole index for every query and score against label overlap.

    A database item is relevant to a query when their label sets intersect.
    With exclude_self, a database item whose id equals the query id is
    dropped from that query's ranking (for querying an index with itself).
    Precision@k columns use k clipped to the ranking length.
    """
    if index.labels is None:
        raise InvalidValue("index has no labels to evaluate against")
    if len(index) == 0:
        raise InvalidValue("cannot evaluate against an empty index")
    n_q = len(query_codes)
    if n_q == 0:
        raise InvalidValue("need at least one query")
    query_labels = [frozenset(s) for s in query_labels]
    if len(query_labels) != n_q:
        raise InvalidValue(f"{len(query_labels)} label sets for {n_q} queries")
    if query_ids is None:
        query_ids = np.arange(n_q, dtype=np.int64)
    query_ids = np.asarray(query_ids, dtype=np.int64)

    dists = hamming_cross(query_codes, index.codes)
    # Composite sort key: distance first, ascending id second.
    id_span = int(index.ids.max()) - int(index.ids.min()) + 1
    key = dists * id_span + (index.ids - index.ids.min())[None, :]
    order = np.argsort(key, axis=1, kind="stable")

    rel_matrix = _label_overlap(query_labels, index.labels)

    rows = []
    aps = []
    p_at = {k: [] for k in ks}
    for qi in range(n_q):
        ranked = order[qi]
        if exclude_self:
            ranked = ranked[index.ids[ranked] != query_ids[qi]]
        if ranked.size == 0:
            raise InvalidValue("ranking is empty after self-exclusion")
        flags = rel_matrix[qi, ranked]
        hits = np.cumsum(flags)
        ranks = np.arange(1, ranked.size + 1)
        raw = float(np.sum((hits / ranks)[flags]))
        ap = raw if unnormalized else raw / max(1, int(hits[-1]))
        aps.append(ap)
        row = [int(query_ids[qi]), ap]
        for k in ks:
            kk = min(k, ranked.size)
            pk = float(hits[kk - 1]) / kk
            p_at[k].append(pk)
            row.append(pk)
        rows.append(tuple(row))
    return EvaluationReport(
        map=float(np.mean(aps)),
        precision_at_k={k: float(np.mean(v)) for k, v in p_at.items()},
        rows=rows,
    )


def _label_overlap(labels_a, labels_b) -> np.ndarray:
    """Boolean matrix: entry (i, j) true when the label sets intersect."""
    vocab = {}
    for s in labels_a:
        for lab in s:
            vocab.setdefault(lab, len(vocab))
    for s in labels_b:
        for lab in s:
            vocab.setdefault(lab, len(vocab))
    n_words = max(1, (len(vocab) + 63) // 64)

    def pack(labels):
        out = np.zeros((len(labels), n_words), dtype=np.uint64)
        for i, s in enumerate(labels):
            for lab in s:
                bit = vocab[lab]
                out[i, bit // 64] |= np.uint64(1) << np.uint64(bit % 64)
        return out

    wa = pack(labels_a)
    wb = pack(labels_b)
    return np.bitwise_and(wa[:, None, :], wb[None, :, :]).any(axis=2)


def write_report_csv(path, report: EvaluationReport) -> None:
    """Per-query rows as `query_id,ap,p_at_1,p_at_5,p_at_10`."""
    with open(path, "w") as fh:
        fh.write("query_id,ap,p_at_1,p_at_5,p_at_10\n")
        for row in report.rows:
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n" % row)


def minimum_hash_length(n_classes: int) -> int:
    """Smallest m that can in principle give every class its own code;
    practical embeddings typically need 5 to 10 times more bits."""
    if n_classes < 1:
        raise InvalidValue("need at least one class")
    return max(1, math.ceil(math.log2(n_classes)))
