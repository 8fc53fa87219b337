"""Class hierarchies and the distance/similarity matrices derived from them.

A hierarchy is a rooted tree over class nodes. The distance between two
classes is the number of edges on the unique tree path between them.
That edge count maps onto the unit sphere via a bounded transform, and
the transform in turn defines a similarity in (0, 1]:

    d_T = sqrt(2) * d_H / (beta + d_H)        (bounded above by sqrt(2))
    s_H = 1 - d_T**2 / 2                      (cosine of unit vectors at
                                               chord distance d_T)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    CycleDetected,
    DuplicateId,
    MultipleRoots,
    NegativeDistance,
    OrphanNode,
    OutOfRange,
    SchemaError,
    UnknownClass,
)

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class HierarchyTree:
    """Rooted tree over class nodes.

    ids/parents are aligned by node index, in file order. leaf_classes
    lists the node indices that carry data classes (the leaves), also in
    file order; this ordering defines class indices everywhere else.
    """

    ids: tuple[str, ...]
    parents: tuple[Optional[int], ...]
    root: int
    leaf_classes: tuple[int, ...]

    @property
    def class_ids(self) -> tuple[str, ...]:
        return tuple(self.ids[i] for i in self.leaf_classes)

    @property
    def num_classes(self) -> int:
        return len(self.leaf_classes)

    def node_index(self, node_id: str) -> int:
        try:
            return self.ids.index(node_id)
        except ValueError:
            raise UnknownClass(f"unknown node id {node_id!r}") from None

    def class_index(self, class_id: str) -> int:
        idx = self.node_index(class_id)
        if idx not in self.leaf_classes:
            raise UnknownClass(f"{class_id!r} is not a leaf class")
        return self.leaf_classes.index(idx)

    def depth(self, node: int) -> int:
        d = 0
        while self.parents[node] is not None:
            node = self.parents[node]
            d += 1
        return d


def parse_hierarchy(text: str) -> HierarchyTree:
    """Parse a CSV edge list (header ``id,parent``) into a validated tree.

    The root row has an empty parent field. Classes are the leaf nodes,
    ordered by first appearance in the file.
    """
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row and any(field.strip() for field in row)]
    if not rows:
        raise SchemaError("empty hierarchy document")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["id", "parent"]:
        raise SchemaError(f"expected header 'id,parent', got {','.join(rows[0])!r}")
    if len(rows) == 1:
        raise SchemaError("hierarchy has a header but no nodes")

    ids: list[str] = []
    parent_ids: list[Optional[str]] = []
    index: dict[str, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise SchemaError(f"line {lineno}: expected 2 fields, got {len(row)}")
        node_id = row[0].strip()
        parent = row[1].strip()
        if not node_id:
            raise SchemaError(f"line {lineno}: empty node id")
        if node_id in index:
            raise DuplicateId(f"line {lineno}: duplicate node id {node_id!r}")
        index[node_id] = len(ids)
        ids.append(node_id)
        parent_ids.append(parent if parent else None)

    roots = [i for i, p in enumerate(parent_ids) if p is None]
    if len(roots) > 1:
        raise MultipleRoots(f"nodes {[ids[i] for i in roots]} all have an empty parent")
    if not roots:
        raise CycleDetected("no root row; the parent relation must contain a cycle")
    root = roots[0]

    parents: list[Optional[int]] = []
    for i, p in enumerate(parent_ids):
        if p is None:
            parents.append(None)
            continue
        if p not in index:
            raise OrphanNode(f"node {ids[i]!r} references undefined parent {p!r}")
        if index[p] == i:
            raise CycleDetected(f"node {ids[i]!r} is its own parent")
        parents.append(index[p])

    # every node must reach the root without revisiting a node
    for start in range(len(ids)):
        seen = {start}
        node = start
        while parents[node] is not None:
            node = parents[node]
            if node in seen:
                raise CycleDetected(f"cycle through node {ids[node]!r}")
            seen.add(node)
        if node != root:
            raise CycleDetected(f"node {ids[start]!r} does not reach the root")

    has_children = [False] * len(ids)
    for p in parents:
        if p is not None:
            has_children[p] = True
    leaves = tuple(i for i in range(len(ids)) if not has_children[i])
    return HierarchyTree(tuple(ids), tuple(parents), root, leaves)


def serialize_hierarchy(tree: HierarchyTree) -> str:
    """Inverse of parse_hierarchy (stable node order)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", "parent"])
    for i, node_id in enumerate(tree.ids):
        p = tree.parents[i]
        writer.writerow([node_id, "" if p is None else tree.ids[p]])
    return out.getvalue()


def _ancestor_depths(tree: HierarchyTree, node: int) -> dict[int, int]:
    depths = {}
    depth = tree.depth(node)
    while True:
        depths[node] = depth
        parent = tree.parents[node]
        if parent is None:
            return depths
        node = parent
        depth -= 1


def hierarchical_distance(tree: HierarchyTree, a: str, b: str) -> int:
    """Edge count of the tree path between two leaf classes."""
    ia = tree.leaf_classes[tree.class_index(a)]
    ib = tree.leaf_classes[tree.class_index(b)]
    if ia == ib:
        return 0
    depths_a = _ancestor_depths(tree, ia)
    node = ib
    depth_b = tree.depth(ib)
    while node not in depths_a:
        node = tree.parents[node]
        depth_b -= 1
    lca_depth = depths_a[node]
    return (tree.depth(ia) - lca_depth) + (tree.depth(ib) - lca_depth)


def transformed_distance(d_h, beta: float = 1.0):
    """Map a hierarchical distance into [0, sqrt(2)) via sqrt(2)*d/(beta+d)."""
    if beta <= 0:
        raise OutOfRange(f"beta must be positive, got {beta}")
    d = np.asarray(d_h, dtype=np.float64)
    if np.any(d < 0):
        raise NegativeDistance("hierarchical distance must be non-negative")
    out = SQRT2 * d / (beta + d)
    return float(out) if np.isscalar(d_h) or d.ndim == 0 else out


def hierarchical_similarity(d_t):
    """Similarity 1 - d_T**2/2 of two classes at transformed distance d_T."""
    d = np.asarray(d_t, dtype=np.float64)
    if np.any(d < 0) or np.any(d >= SQRT2):
        raise OutOfRange("transformed distance must lie in [0, sqrt(2))")
    out = 1.0 - d * d / 2.0
    return float(out) if np.isscalar(d_t) or d.ndim == 0 else out


@dataclass(frozen=True)
class ClassDistanceMatrix:
    """Square matrix over classes with an explicit label ordering."""

    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.labels), len(self.labels)):
            raise SchemaError(f"matrix shape {v.shape} does not match {len(self.labels)} labels")
        object.__setattr__(self, "values", v)

    def to_csv(self, digits: int = 9) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow([""] + list(self.labels))
        for label, row in zip(self.labels, self.values):
            writer.writerow([label] + [f"{x:.{digits}g}" for x in row])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ClassDistanceMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows:
            raise SchemaError("empty matrix document")
        labels = tuple(rows[0][1:])
        values = []
        for row in rows[1:]:
            if len(row) != len(labels) + 1:
                raise SchemaError(f"matrix row for {row[0]!r} has {len(row) - 1} values")
            values.append([float(x) for x in row[1:]])
        if tuple(r[0] for r in rows[1:]) != labels:
            raise SchemaError("matrix row labels do not match column labels")
        return cls(labels, np.array(values, dtype=np.float64))


def distance_matrices(tree: HierarchyTree, beta: float = 1.0):
    """All-pairs (D_H, D_T, S_H) over the tree's classes, shared ordering."""
    labels = tree.class_ids
    n = len(labels)
    d_h = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = hierarchical_distance(tree, labels[i], labels[j])
            d_h[i, j] = d_h[j, i] = d
    d_t = transformed_distance(d_h, beta)
    s_h = hierarchical_similarity(d_t)
    return (
        ClassDistanceMatrix(labels, d_h),
        ClassDistanceMatrix(labels, d_t),
        ClassDistanceMatrix(labels, s_h),
    )
