"""Training orchestration: heads x options, with best-validation selection.

One run is strictly sequential and fully determined by its seed. Every
stochastic choice (model init, proxy init, stress-placement init, epoch
shuffling) draws from a child of the run's seed sequence.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from ._linalg import normalize_rows, normalize_rows_vjp
from .data import Dataset
from .errors import ConfigConflict, KTooLarge, NoConvergence
from .heads import (
    HeadConfig,
    corr_loss,
    cross_entropy_loss,
    head_probs,
    plain_softmax_probs,
)
from .hierarchy import HierarchyTree, distance_matrices
from .metrics import checkpoint_rankings, mean_correlation, topk_accuracy
from .model import EmbedderModel
from .optim import AdamState, adam_step
from .proxy import (
    ProxySet,
    compute_prototypes,
    ema_update,
    mds_place,
    pairwise_representative_distances,
)
from .scale import ScaleState, dynamic_scale_update, init_scale_state

HEADS = ("softmax", "normface", "proxydr", "corr")
OPTIONS = ("ema", "dynamic", "mds")


@dataclass(frozen=True)
class TrainConfig:
    head: str
    options: tuple[str, ...] = ()
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-4
    scale: float = 10.0
    alpha: float = 0.001
    beta: float = 1.0
    seed: int = 0
    input_dim: int = 2
    embed_dim: int = 2
    arch: str = "linear"
    hidden_dim: int = 64
    mds_lr: float = 1e-3
    mds_iters: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(sorted(set(self.options))))
        if self.head not in HEADS:
            raise ConfigConflict(f"unknown head {self.head!r}")
        bad = [o for o in self.options if o not in OPTIONS]
        if bad:
            raise ConfigConflict(f"unknown options {bad}")
        if self.head == "corr" and "mds" not in self.options:
            raise ConfigConflict("the corr head requires the mds option (fixed proxies)")
        if "ema" in self.options and "mds" in self.options:
            raise ConfigConflict("ema and mds are mutually exclusive: fixed proxies never move")
        if "dynamic" in self.options and self.head in ("softmax", "corr"):
            raise ConfigConflict(f"the dynamic option does not apply to the {self.head} head")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigConflict("epochs and batch_size must be positive")
        if self.scale <= 0 or self.lr <= 0 or not 0 < self.alpha < 1 or self.beta <= 0:
            raise ConfigConflict("scale, lr, beta must be positive and alpha in (0, 1)")

    def config_hash(self) -> str:
        """Digest of everything except the seed; groups repeat runs."""
        payload = asdict(self)
        payload.pop("seed")
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)
    selected_epoch: int = 0

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"


@dataclass
class Checkpoint:
    model: EmbedderModel
    head: HeadConfig
    classes: tuple[str, ...]
    proxies: Optional[ProxySet] = None
    weights: Optional[np.ndarray] = None     # plain softmax head
    biases: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def embed_unit(self, features) -> np.ndarray:
        return self.model.forward(features).unit

    def confidences(self, features) -> np.ndarray:
        """Per-class confidence scores. Probabilities for the probabilistic
        heads; cosines to the fixed representatives for the corr head
        (a monotone ranking surrogate, noted in run metadata)."""
        cache = self.model.forward(features)
        if self.head.kind == "softmax":
            return np.atleast_2d(plain_softmax_probs(cache.raw, self.weights, self.biases).probs)
        if self.head.kind == "corr":
            return np.atleast_2d(cache.unit @ self.proxies.matrix.T)
        return np.atleast_2d(head_probs(self.head, cache.unit, self.proxies).probs)

    def proxy_matrix_for_eval(self) -> np.ndarray:
        """Unit-row class representatives; the softmax head's weight rows
        are normalized post hoc (it has no spherical proxies of its own)."""
        if self.head.kind == "softmax":
            rows, _ = normalize_rows(self.weights)
            return rows
        return self.proxies.matrix

    def to_json(self) -> str:
        payload = {
            "format_version": 1,
            "arch": {
                "kind": self.model.arch,
                "input_dim": self.model.input_dim,
                "embed_dim": self.model.embed_dim,
                "hidden_dim": self.model.hidden_dim,
            },
            "params": {k: v.tolist() for k, v in self.model.params.items()},
            "head": {"kind": self.head.kind, "scale": self.head.scale},
            "classes": list(self.classes),
            "proxies": None if self.proxies is None else {
                "policy": self.proxies.policy,
                "matrix": self.proxies.matrix.tolist(),
            },
            "softmax": None if self.weights is None else {
                "weights": self.weights.tolist(),
                "biases": self.biases.tolist(),
            },
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        data = json.loads(text)
        if data.get("format_version") != 1:
            raise ConfigConflict(f"unsupported checkpoint version {data.get('format_version')}")
        arch = data["arch"]
        model = EmbedderModel(
            arch["kind"],
            {k: np.array(v, dtype=np.float64) for k, v in data["params"].items()},
            arch["input_dim"],
            arch["embed_dim"],
            arch["hidden_dim"],
        )
        head = HeadConfig(data["head"]["kind"], data["head"]["scale"], arch["embed_dim"])
        proxies = None
        if data["proxies"] is not None:
            proxies = ProxySet(
                tuple(data["classes"]),
                np.array(data["proxies"]["matrix"], dtype=np.float64),
                data["proxies"]["policy"],
            )
        weights = biases = None
        if data["softmax"] is not None:
            weights = np.array(data["softmax"]["weights"], dtype=np.float64)
            biases = np.array(data["softmax"]["biases"], dtype=np.float64)
        return cls(model, head, tuple(data["classes"]), proxies, weights, biases,
                   data.get("metadata", {}))


def _init_proxies(config: TrainConfig, tree: HierarchyTree, seeds) -> ProxySet:
    if "mds" in config.options:
        _, d_t, _ = distance_matrices(tree, config.beta)
        proxies, _ = mds_place(d_t, config.embed_dim, config.mds_lr,
                               config.mds_iters, seed=seeds["mds"])
        return proxies
    policy = "ema" if "ema" in config.options else "gradient"
    return ProxySet.random(tree.class_ids, config.embed_dim, policy, seed=seeds["proxy"])


def _child_seeds(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(4)
    return {
        "model": children[0],
        "proxy": int(children[1].generate_state(1)[0]),
        "shuffle": children[2],
        "mds": int(children[3].generate_state(1)[0]),
    }


def _dynamic_batch_stats(kind: str, unit_embeds, proxies, labels, s):
    """Per-sample true-class angles and partition-tail estimates."""
    cos = np.clip(unit_embeds @ proxies.matrix.T, -1.0, 1.0)
    theta = np.arccos(cos)
    n = np.arange(len(labels))
    theta_true = theta[n, labels]
    mask = np.ones_like(cos, dtype=bool)
    mask[n, labels] = False
    if kind == "normface":
        bx = np.sum(np.where(mask, np.exp(s * cos), 0.0), axis=1)
    else:  # proxydr: the curvature algebra measures distance as the angle
        safe = np.maximum(theta, 1e-9)
        bx = np.sum(np.where(mask, safe ** (-s), 0.0), axis=1)
    return theta_true, bx


def train(config: TrainConfig, train_split: Dataset, val_split: Dataset,
          tree: HierarchyTree) -> tuple[Checkpoint, TrainTrace]:
    """Run the configured training and return the best-validation
    checkpoint plus the per-epoch trace."""
    if len(train_split) == 0 or len(val_split) == 0:
        raise ConfigConflict("train and validation splits must be non-empty")
    if train_split.dim != config.input_dim:
        raise ConfigConflict(
            f"config.input_dim={config.input_dim} but data has {train_split.dim} features")
    seeds = _child_seeds(config.seed)
    model = EmbedderModel.create(config.arch, config.input_dim, config.embed_dim,
                                 config.hidden_dim, seed=seeds["model"])
    classes = tree.class_ids
    k = len(classes)
    y_train = train_split.label_indices(tree)
    y_val = val_split.label_indices(tree)

    weights = biases = None
    proxies = None
    proxy_opt = None
    if config.head == "softmax":
        rng = np.random.default_rng(seeds["proxy"])
        bound = 1.0 / math.sqrt(config.embed_dim)
        weights = rng.uniform(-bound, bound, size=(k, config.embed_dim))
        biases = rng.uniform(-bound, bound, size=k)
        w_opt = AdamState(lr=config.lr)
        b_opt = AdamState(lr=config.lr)
    else:
        proxies = _init_proxies(config, tree, seeds)
        if proxies.policy == "gradient":
            proxy_opt = AdamState(lr=config.lr)

    scale_state: Optional[ScaleState] = None
    if "dynamic" in config.options:
        try:
            scale_state = init_scale_state(config.head, k)
        except NoConvergence:
            warnings.warn(
                f"static scale init has no root for {k} classes; starting from s={config.scale}")
            scale_state = init_scale_state(config.head, k, s=config.scale)

    model_opts = {name: AdamState(lr=config.lr) for name in model.param_names()}
    shuffle_rng = np.random.default_rng(seeds["shuffle"])
    d_h_mat, _, _ = distance_matrices(tree, config.beta)

    trace = TrainTrace()
    best = None  # (top1, epoch, checkpoint)
    n = len(train_split)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            x = train_split.features[batch]
            y = y_train[batch]
            cache = model.forward(x)
            current_s = scale_state.s if scale_state is not None else config.scale

            if config.head == "softmax":
                out = plain_softmax_probs(cache.raw, weights, biases)
                loss, grads = cross_entropy_loss(out, y)
                model_grads = model.backward(cache, grad_raw=grads.d_features)
                weights = adam_step(w_opt, weights, grads.d_weights)
                biases = adam_step(b_opt, biases, grads.d_biases)
            elif config.head == "corr":
                loss, d_embed = corr_loss(cache.unit, y, proxies)
                model_grads = model.backward(cache, grad_unit=d_embed)
            else:
                head = HeadConfig(config.head, current_s, config.embed_dim)
                out = head_probs(head, cache.unit, proxies)
                loss, grads = cross_entropy_loss(out, y)
                model_grads = model.backward(cache, grad_unit=grads.d_embed)
                if proxies.policy == "gradient":
                    raw_grad = normalize_rows_vjp(
                        proxies.matrix, np.ones(k), grads.d_proxies)
                    stepped = adam_step(proxy_opt, proxies.matrix, raw_grad)
                    rows, _ = normalize_rows(stepped)
                    proxies = ProxySet(classes, rows, "gradient")

            for name in model.param_names():
                model.params[name] = adam_step(
                    model_opts[name], model.params[name], model_grads[name])

            if "ema" in config.options:
                proxies = ema_update(proxies, cache.unit, y, config.alpha)
            if scale_state is not None:
                thetas, bxs = _dynamic_batch_stats(
                    config.head, cache.unit, proxies, y, current_s)
                scale_state = dynamic_scale_update(scale_state, thetas, bxs)
            loss_sum += loss * len(batch)

        checkpoint = Checkpoint(
            model=model.copy(),
            head=HeadConfig(config.head,
                            scale_state.s if scale_state is not None else config.scale,
                            config.embed_dim),
            classes=classes,
            proxies=None if proxies is None else ProxySet(
                classes, proxies.matrix.copy(), proxies.policy),
            weights=None if weights is None else weights.copy(),
            biases=None if biases is None else biases.copy(),
        )
        ranked, _ = checkpoint_rankings(checkpoint, val_split.features)
        val_top1 = topk_accuracy(ranked, y_val, 1)
        mc_proxy, mc_proto = _epoch_correlations(checkpoint, train_split, y_train, d_h_mat)
        trace.records.append({
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "val_top1": val_top1,
            "scale": checkpoint.head.scale,
            "mean_corr_proxy": mc_proxy,
            "mean_corr_prototype": mc_proto,
        })
        if best is None or val_top1 > best[0]:
            best = (val_top1, epoch, checkpoint)

    trace.selected_epoch = best[1]
    best_checkpoint = best[2]
    best_checkpoint.metadata = {
        "config": asdict(config),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "selected_epoch": best[1],
        "val_top1": best[0],
    }
    return best_checkpoint, trace


def _epoch_correlations(checkpoint, train_split, y_train, d_h_mat):
    from .metrics import _safe_mean_correlation  # shared null-on-degenerate rule

    proxy_reps = ProxySet(checkpoint.classes, checkpoint.proxy_matrix_for_eval(), "fixed")
    mc_proxy = _safe_mean_correlation(
        pairwise_representative_distances(proxy_reps), d_h_mat)
    prototypes = compute_prototypes(
        checkpoint.embed_unit(train_split.features), y_train, checkpoint.classes)
    if np.all(prototypes.present):
        mc_proto = _safe_mean_correlation(
            pairwise_representative_distances(prototypes), d_h_mat)
    else:
        mc_proto = None
    return mc_proxy, mc_proto


def predict_topk(checkpoint: Checkpoint, inputs, k: int):
    """Top-k classes with confidences, ties broken by ascending class index."""
    if k < 1 or k > len(checkpoint.classes):
        raise KTooLarge(f"k={k} with {len(checkpoint.classes)} classes")
    ranked, conf = checkpoint_rankings(checkpoint, inputs)
    return ranked[:, :k], conf[:, :k]
