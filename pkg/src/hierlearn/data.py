"""Dataset ingestion, deterministic stratified splits, and a synthetic
hierarchical generator.

The generator grows a balanced tree and diffuses class means down it
(child mean = parent mean + level-scaled Gaussian), so input-space
geometry mirrors the tree and hierarchical inference is measurable at
desk scale.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DuplicateId,
    EmptyDataset,
    NonFiniteFeature,
    SchemaError,
    TooManyClasses,
    UnknownClass,
)
from .hierarchy import HierarchyTree, parse_hierarchy

MAX_SYNTHETIC_CLASSES = 4096


@dataclass(frozen=True)
class Dataset:
    ids: tuple[str, ...]
    classes: tuple[str, ...]          # class id per item
    features: np.ndarray              # (n, d_I) float64

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != len(self.ids) or len(self.classes) != len(self.ids):
            raise SchemaError("ids, classes and features are misaligned")
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            tuple(self.ids[i] for i in idx),
            tuple(self.classes[i] for i in idx),
            self.features[idx],
        )

    def label_indices(self, tree: HierarchyTree) -> np.ndarray:
        order = {cid: i for i, cid in enumerate(tree.class_ids)}
        return np.array([order[c] for c in self.classes], dtype=np.intp)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f <= 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise SchemaError(f"split fractions {fracs} must be positive and sum to 1")


def load_dataset(text: str, tree: HierarchyTree) -> Dataset:
    """Parse a dataset CSV (header ``id,class,f0,...``) against a hierarchy."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise SchemaError("empty dataset document")
    header = rows[0]
    if header[:2] != ["id", "class"] or len(header) < 3:
        raise SchemaError("expected header 'id,class,f0,...'")
    expected = [f"f{i}" for i in range(len(header) - 2)]
    if header[2:] != expected:
        raise SchemaError(f"feature columns must be f0..f{len(header) - 3}")
    dim = len(expected)

    known = set(tree.class_ids)
    ids: list[str] = []
    classes: list[str] = []
    feats = np.empty((len(rows) - 1, dim))
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 2:
            raise SchemaError(f"line {lineno}: expected {dim + 2} fields, got {len(row)}")
        item_id, class_id = row[0], row[1]
        if item_id in seen:
            raise DuplicateId(f"line {lineno}: duplicate item id {item_id!r}")
        seen.add(item_id)
        if class_id not in known:
            raise UnknownClass(f"line {lineno}: class {class_id!r} not in hierarchy")
        try:
            values = np.array([float(x) for x in row[2:]], dtype=np.float64)
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if not np.all(np.isfinite(values)):
            raise NonFiniteFeature(f"line {lineno}: non-finite feature value")
        ids.append(item_id)
        classes.append(class_id)
        feats[lineno - 2] = values
    if not ids:
        raise EmptyDataset("dataset has a header but no rows")
    return Dataset(tuple(ids), tuple(classes), feats)


def save_dataset(dataset: Dataset) -> str:
    """Inverse of load_dataset; 17 significant digits round-trip exactly."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", "class"] + [f"f{i}" for i in range(dataset.dim)])
    for item_id, class_id, row in zip(dataset.ids, dataset.classes, dataset.features):
        writer.writerow([item_id, class_id] + [f"{x:.17g}" for x in row])
    return out.getvalue()


def _allocate(n: int, fracs: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder allocation of n items to three fractions."""
    exact = [n * f for f in fracs]
    counts = [int(np.floor(e)) for e in exact]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in range(remainder):
        counts[order[i]] += 1
    if counts[0] == 0:
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[0] += 1
    return tuple(counts)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic per-class (stratified) partition.

    Classes with fewer than 3 items go entirely to the training split,
    with a warning: rare classes must stay trainable.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    by_class: dict[str, list[int]] = {}
    for i, c in enumerate(dataset.classes):
        by_class.setdefault(c, []).append(i)

    train_idx: list[int] = []
    val_idx: list[int] = []
    test_idx: list[int] = []
    for c in sorted(by_class):
        indices = np.array(by_class[c], dtype=np.intp)
        indices = indices[rng.permutation(len(indices))]
        if len(indices) < 3:
            warnings.warn(f"class {c!r} has {len(indices)} item(s); assigning all to train")
            train_idx.extend(indices.tolist())
            continue
        n_train, n_val, _ = _allocate(len(indices), (spec.train, spec.val, spec.test))
        train_idx.extend(indices[:n_train].tolist())
        val_idx.extend(indices[n_train:n_train + n_val].tolist())
        test_idx.extend(indices[n_train + n_val:].tolist())
    return (
        dataset.subset(sorted(train_idx)),
        dataset.subset(sorted(val_idx)),
        dataset.subset(sorted(test_idx)),
    )


def generate_synthetic(
    branching: int,
    depth: int,
    input_dim: int,
    per_class: int,
    sigma_schedule=None,
    noise_sigma: float = 0.3,
    seed: int = 0,
) -> tuple[Dataset, HierarchyTree]:
    """Balanced tree of branching^depth classes with diffused class means.

    sigma_schedule gives the diffusion scale per level (root->leaf); the
    default halves 2.0 at each level. Samples are drawn around each leaf
    mean with isotropic noise_sigma.
    """
    if branching < 2 or depth < 2:
        raise SchemaError(f"need branching >= 2 and depth >= 2, got {branching}/{depth}")
    num_classes = branching ** depth
    if num_classes > MAX_SYNTHETIC_CLASSES:
        raise TooManyClasses(f"{num_classes} classes exceeds cap {MAX_SYNTHETIC_CLASSES}")
    if sigma_schedule is None:
        sigma_schedule = [2.0 * 0.5 ** level for level in range(depth)]
    sigma_schedule = [float(s) for s in sigma_schedule]
    if len(sigma_schedule) != depth:
        raise SchemaError(f"sigma_schedule needs {depth} values, got {len(sigma_schedule)}")

    rng = np.random.default_rng(seed)
    lines = ["id,parent", "root,"]
    means = {(): np.zeros(input_dim)}
    frontier: list[tuple[tuple[int, ...], str]] = [((), "root")]
    leaf_ids: list[str] = []
    for level in range(depth):
        sigma = sigma_schedule[level]
        next_frontier = []
        for path, parent_id in frontier:
            for child in range(branching):
                child_path = path + (child,)
                name = "c" + "".join(str(p) for p in child_path)
                if level == depth - 1:
                    leaf_ids.append(name)
                lines.append(f"{name},{parent_id}")
                means[child_path] = means[path] + sigma * rng.standard_normal(input_dim)
                next_frontier.append((child_path, name))
        frontier = next_frontier

    tree = parse_hierarchy("\n".join(lines) + "\n")
    ids: list[str] = []
    classes: list[str] = []
    feats = np.empty((num_classes * per_class, input_dim))
    row = 0
    for leaf_path, leaf_id in frontier:
        mean = means[leaf_path]
        for i in range(per_class):
            ids.append(f"{leaf_id}_{i:04d}")
            classes.append(leaf_id)
            feats[row] = mean + noise_sigma * rng.standard_normal(input_dim)
            row += 1
    return Dataset(tuple(ids), tuple(classes), feats), tree
