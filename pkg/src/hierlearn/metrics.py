"""Evaluation measures: plain accuracy, hierarchy agreement of learned
representatives, and hierarchy-informed prediction/retrieval quality.

Conventions, also recorded in report metadata:

* per-class correlations exclude the diagonal entry of both matrices
  (it is a forced tie at zero);
* Spearman ties get average ranks;
* correlations are clamped to +/-(1 - 1e-7) before the arctanh pooling
  so perfect rows stay finite;
* retrieval lists exclude the query item itself.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConstantRow, KTooLarge, MissingK, ShapeMismatch
from .hierarchy import ClassDistanceMatrix, HierarchyTree, distance_matrices
from .proxy import compute_prototypes, pairwise_representative_distances

FISHER_CLAMP = 1.0 - 1e-7


def thread_count() -> int:
    """Worker cap for per-query metric loops (HIERLEARN_THREADS)."""
    value = os.environ.get("HIERLEARN_THREADS", "")
    if value.strip():
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return os.cpu_count() or 1


# -- ranking-based measures ---------------------------------------------------

def _check_ranked(ranked, labels, k: int):
    ranked = np.asarray(ranked, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if ranked.ndim != 2 or labels.shape != (ranked.shape[0],):
        raise ShapeMismatch(f"ranked {ranked.shape} vs labels {labels.shape}")
    if k < 1 or k > ranked.shape[1]:
        raise KTooLarge(f"k={k} but ranked lists have {ranked.shape[1]} entries")
    return ranked, labels


def topk_accuracy(ranked, labels, k: int) -> float:
    """Fraction of samples whose label is among the first k ranked classes."""
    ranked, labels = _check_ranked(ranked, labels, k)
    hits = np.any(ranked[:, :k] == labels[:, None], axis=1)
    return float(np.mean(hits))


def ahd(ranked, labels, d_h: np.ndarray, k: int) -> float:
    """Mean (over samples and their top-k predictions) tree distance
    between the labeled class and each predicted class."""
    ranked, labels = _check_ranked(ranked, labels, k)
    d_h = np.asarray(d_h, dtype=np.float64)
    dists = d_h[labels[:, None], ranked[:, :k]]
    return float(np.mean(dists))


def h_correct_set(label: int, d_h: np.ndarray, k: int) -> np.ndarray:
    """Smallest tree-distance neighborhood of `label` holding >= k classes.

    Grows the distance threshold over the sorted distinct distances from
    the label (starting at 0, the label itself) and returns the member
    class indices. Ties at the final threshold may push the size past k.
    """
    row = d_h[label]
    if k > row.size:
        raise KTooLarge(f"k={k} but only {row.size} classes exist")
    for eps in np.unique(row):
        members = np.flatnonzero(row <= eps)
        if members.size >= k:
            return members
    return np.arange(row.size)


def hp_at_k(ranked, labels, d_h: np.ndarray, k: int) -> float:
    """Mean fraction of the top-k predictions inside the label's smallest
    >=k-class tree neighborhood; the denominator stays k even when ties
    enlarge the neighborhood."""
    ranked, labels = _check_ranked(ranked, labels, k)
    d_h = np.asarray(d_h, dtype=np.float64)
    sets = {c: set(h_correct_set(c, d_h, k).tolist()) for c in np.unique(labels)}
    total = 0.0
    for row, label in zip(ranked[:, :k], labels):
        good = sets[int(label)]
        total += sum(1 for c in row if int(c) in good) / k
    return total / len(labels)


# -- retrieval-based measures -------------------------------------------------

def retrieval_lists(embeds: np.ndarray, labels) -> list[np.ndarray]:
    """Per query: classes of all *other* items, sorted by ascending
    embedding distance (ties broken by item index)."""
    embeds = np.asarray(embeds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = embeds.shape[0]
    sq = np.sum(embeds * embeds, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (embeds @ embeds.T)
    np.clip(d2, 0.0, None, out=d2)
    lists = []
    index = np.arange(n)
    for i in range(n):
        others = index[index != i]
        order = others[np.argsort(d2[i, others], kind="stable")]
        lists.append(labels[order])
    return lists


def hs_at_k(query_label: int, retrieved_classes, s_h: np.ndarray, k: int) -> float:
    """Retrieved-similarity mass in the top k, relative to the best
    achievable reordering of the whole retrieval list."""
    retrieved = np.asarray(retrieved_classes, dtype=np.intp)
    if k < 1 or k > retrieved.size:
        raise KTooLarge(f"k={k} but retrieval list has {retrieved.size} items")
    sims = np.asarray(s_h, dtype=np.float64)[query_label, retrieved]
    numer = float(np.sum(sims[:k]))
    denom = float(np.sum(np.sort(sims)[::-1][:k]))
    return numer / denom


def hs_curve(query_label: int, retrieved_classes, s_h: np.ndarray, k_max: int) -> np.ndarray:
    """HS@k for k = 1..k_max in one pass (cumulative sums)."""
    retrieved = np.asarray(retrieved_classes, dtype=np.intp)
    if k_max < 1 or k_max > retrieved.size:
        raise KTooLarge(f"k_max={k_max} but retrieval list has {retrieved.size} items")
    sims = np.asarray(s_h, dtype=np.float64)[query_label, retrieved]
    numer = np.cumsum(sims)[:k_max]
    denom = np.cumsum(np.sort(sims)[::-1])[:k_max]
    return numer / denom


def ahs_at_K(per_query_hs: np.ndarray) -> float:
    """Mean over k=1..K of the dataset-mean HS@k (unit-step area under
    the HS curve, normalized by K). Expects a (queries, K) array."""
    hs = np.asarray(per_query_hs, dtype=np.float64)
    if hs.ndim != 2 or hs.shape[1] < 1:
        raise MissingK(f"need a (queries, K) array with K >= 1, got {hs.shape}")
    if not np.all(np.isfinite(hs)):
        raise MissingK("HS values contain missing entries")
    return float(np.mean(hs))


# -- representative-agreement measures ----------------------------------------

def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average-rank ties."""
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.sum(rx * rx)) * float(np.sum(ry * ry)))
    if denom == 0.0:
        raise ConstantRow("rank variance is zero")
    return float(np.sum(rx * ry) / denom)


def mean_correlation(d_l: ClassDistanceMatrix, d_h: ClassDistanceMatrix) -> float:
    """Fisher-pooled per-class Spearman correlation of two class-distance
    matrices: correlate each class's row (diagonal excluded), arctanh,
    average, tanh back."""
    if d_l.labels != d_h.labels:
        raise ShapeMismatch("matrices have different label orderings")
    n = len(d_l.labels)
    if n < 3:
        raise ConstantRow(f"need at least 3 classes, got {n}")
    keep = ~np.eye(n, dtype=bool)
    z_values = []
    for i in range(n):
        row_l = d_l.values[i][keep[i]]
        row_h = d_h.values[i][keep[i]]
        try:
            r = spearman(row_l, row_h)
        except ConstantRow:
            raise ConstantRow(f"class {d_l.labels[i]!r} has a constant distance row") from None
        r = min(max(r, -FISHER_CLAMP), FISHER_CLAMP)
        z_values.append(math.atanh(r))
    return math.tanh(float(np.mean(z_values)))


# -- the full report ----------------------------------------------------------

@dataclass
class MetricsReport:
    top1: Optional[float]
    top5: Optional[float]
    mean_corr_proxy: Optional[float]
    mean_corr_prototype: Optional[float]
    ahd_k1: Optional[float]
    ahd_k5: Optional[float]
    hp_at_5: Optional[float]
    hs_at_50: Optional[float]
    hs_at_250: Optional[float]
    ahs_at_250: Optional[float]
    mean_corr_proxy_living: Optional[float] = None
    mean_corr_prototype_living: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "top1": self.top1,
            "top5": self.top5,
            "mean_corr_proxy": self.mean_corr_proxy,
            "mean_corr_prototype": self.mean_corr_prototype,
            "ahd_k1": self.ahd_k1,
            "ahd_k5": self.ahd_k5,
            "hp_at_5": self.hp_at_5,
            "hs_at_50": self.hs_at_50,
            "hs_at_250": self.hs_at_250,
            "ahs_at_250": self.ahs_at_250,
            "mean_corr_proxy_living": self.mean_corr_proxy_living,
            "mean_corr_prototype_living": self.mean_corr_prototype_living,
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        meta = data.pop("metadata", {})
        return cls(metadata=meta, **data)


def _submatrix(matrix: ClassDistanceMatrix, labels: list[str]) -> ClassDistanceMatrix:
    idx = [matrix.labels.index(lbl) for lbl in labels]
    return ClassDistanceMatrix(tuple(labels), matrix.values[np.ix_(idx, idx)])


def _safe_mean_correlation(d_l, d_h) -> Optional[float]:
    try:
        return mean_correlation(d_l, d_h)
    except ConstantRow:
        return None


def full_report(
    checkpoint,
    test_split,
    tree: HierarchyTree,
    train_split,
    living_classes=None,
    beta: float = 1.0,
) -> MetricsReport:
    """Evaluate a trained checkpoint on a test split.

    The checkpoint must provide embed_unit / confidences /
    proxy_matrix_for_eval (see trainer.Checkpoint). Prototypes come
    from the training split; retrieval runs within the test split.
    Measures that need more classes or retrieval items than exist are
    reported as null.
    """
    d_h_mat, _, s_h_mat = distance_matrices(tree, beta)
    d_h = d_h_mat.values
    s_h = s_h_mat.values
    num_classes = tree.num_classes

    test_labels = test_split.label_indices(tree)
    ranked, _ = checkpoint_rankings(checkpoint, test_split.features)

    top1 = topk_accuracy(ranked, test_labels, 1)
    top5 = topk_accuracy(ranked, test_labels, 5) if num_classes >= 5 else None
    ahd1 = ahd(ranked, test_labels, d_h, 1)
    ahd5 = ahd(ranked, test_labels, d_h, 5) if num_classes >= 5 else None
    hp5 = hp_at_k(ranked, test_labels, d_h, 5) if num_classes >= 5 else None

    # representative agreement
    from .proxy import ProxySet  # local import keeps module deps one-way

    proxy_reps = ProxySet(tree.class_ids, checkpoint.proxy_matrix_for_eval(), "fixed")
    d_l_proxy = pairwise_representative_distances(proxy_reps)
    mc_proxy = _safe_mean_correlation(d_l_proxy, d_h_mat)

    train_embeds = checkpoint.embed_unit(train_split.features)
    train_labels = train_split.label_indices(tree)
    prototypes = compute_prototypes(train_embeds, train_labels, tree.class_ids)
    if np.all(prototypes.present):
        d_l_proto = pairwise_representative_distances(prototypes)
        mc_proto = _safe_mean_correlation(d_l_proto, d_h_mat)
    else:
        d_l_proto = None
        mc_proto = None

    mc_proxy_living = None
    mc_proto_living = None
    if living_classes is not None:
        living = [c for c in tree.class_ids if c in set(living_classes)]
        d_h_living = _submatrix(d_h_mat, living)
        mc_proxy_living = _safe_mean_correlation(_submatrix(d_l_proxy, living), d_h_living)
        if d_l_proto is not None:
            mc_proto_living = _safe_mean_correlation(_submatrix(d_l_proto, living), d_h_living)

    # retrieval within the test split
    test_embeds = checkpoint.embed_unit(test_split.features)
    lists = retrieval_lists(test_embeds, test_labels)
    list_len = len(test_split) - 1

    def hs_mean(k: int) -> Optional[float]:
        if k > list_len:
            return None
        values = _parallel_map(
            lambda i: hs_at_k(int(test_labels[i]), lists[i], s_h, k),
            len(lists),
        )
        return float(np.mean(values))

    hs50 = hs_mean(50)
    hs250 = hs_mean(250)
    if 250 <= list_len:
        curves = _parallel_map(
            lambda i: hs_curve(int(test_labels[i]), lists[i], s_h, 250),
            len(lists),
        )
        ahs250 = ahs_at_K(np.stack(curves))
    else:
        ahs250 = None

    meta = dict(checkpoint.metadata)
    meta.update(
        num_classes=num_classes,
        test_items=len(test_split),
        retrieval_excludes_query=True,
        correlation_excludes_diagonal=True,
        living_filter=sorted(living_classes) if living_classes is not None else None,
    )
    return MetricsReport(
        top1=top1,
        top5=top5,
        mean_corr_proxy=mc_proxy,
        mean_corr_prototype=mc_proto,
        ahd_k1=ahd1,
        ahd_k5=ahd5,
        hp_at_5=hp5,
        hs_at_50=hs50,
        hs_at_250=hs250,
        ahs_at_250=ahs250,
        mean_corr_proxy_living=mc_proxy_living,
        mean_corr_prototype_living=mc_proto_living,
        metadata=meta,
    )


def checkpoint_rankings(checkpoint, features):
    """Full class ranking per input: confidences sorted descending with
    index ties broken ascending (deterministic)."""
    conf = checkpoint.confidences(features)
    order = np.argsort(-conf, axis=1, kind="stable")
    return order, np.take_along_axis(conf, order, axis=1)


def _parallel_map(fn, count: int) -> list:
    """Index-ordered map, threaded when allowed; results are assembled
    positionally so the schedule cannot change the output."""
    workers = min(thread_count(), count) or 1
    if workers <= 1 or count < 64:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))
