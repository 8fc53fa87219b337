"""Command-line front door.

Every command writes a manifest next to its outputs recording the full
configuration, the input digests, and the output digests; re-running
with the same inputs and flags reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import glob as globlib
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import SplitSpec, generate_synthetic, load_dataset, save_dataset, split
from .errors import HierLearnError, MixedConfigs, SchemaError
from .hierarchy import distance_matrices, parse_hierarchy, serialize_hierarchy
from .metrics import MetricsReport, full_report
from .proxy import mds_place, representatives_to_csv
from .trainer import Checkpoint, TrainConfig, train

REPORT_METRICS = (
    "top1", "top5", "mean_corr_proxy", "mean_corr_prototype",
    "ahd_k1", "ahd_k5", "hp_at_5", "hs_at_50", "hs_at_250", "ahs_at_250",
    "mean_corr_proxy_living", "mean_corr_prototype_living",
)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: dict[str, Path], outputs: list[Path]):
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "inputs": {name: _sha256(p) for name, p in sorted(inputs.items())},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_distances(args) -> None:
    tree = parse_hierarchy(Path(args.hierarchy).read_text())
    d_h, d_t, s_h = distance_matrices(tree, args.beta)
    out = Path(args.out)
    files = []
    for name, matrix in (("d_h", d_h), ("d_t", d_t), ("s_h", s_h)):
        path = out / f"{name}.csv"
        _write(path, matrix.to_csv())
        files.append(path)
    _write_manifest(out, "distances", {"beta": args.beta, "seed": None},
                    {"hierarchy": Path(args.hierarchy)}, files)


def cmd_mds(args) -> None:
    tree = parse_hierarchy(Path(args.hierarchy).read_text())
    _, d_t, _ = distance_matrices(tree, args.beta)
    proxies, trace = mds_place(d_t, args.dim, args.lr, args.iters, args.seed)
    out = Path(args.out)
    proxy_path = out / "proxies.csv"
    _write(proxy_path, representatives_to_csv(proxies))
    stress_path = out / "stress.csv"
    lines = ["iteration,stress"] + [f"{i},{v:.17g}" for i, v in enumerate(trace)]
    _write(stress_path, "\n".join(lines) + "\n")
    config = {"dim": args.dim, "beta": args.beta, "lr": args.lr,
              "iters": args.iters, "seed": args.seed}
    _write_manifest(out, "mds", config, {"hierarchy": Path(args.hierarchy)},
                    [proxy_path, stress_path])


def _train_config(args, input_dim: int) -> TrainConfig:
    options = tuple(o.strip() for o in args.options.split(",") if o.strip()) \
        if args.options else ()
    return TrainConfig(
        head=args.model,
        options=options,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        scale=args.scale,
        alpha=args.alpha,
        beta=args.beta,
        seed=args.seed,
        input_dim=input_dim,
        embed_dim=args.embed_dim,
        arch=args.arch,
        hidden_dim=args.hidden_dim,
    )


def cmd_train(args) -> None:
    tree = parse_hierarchy(Path(args.hierarchy).read_text())
    dataset = load_dataset(Path(args.data).read_text(), tree)
    config = _train_config(args, dataset.dim)
    spec = SplitSpec(seed=config.seed)
    train_split, val_split, _ = split(dataset, spec)
    checkpoint, trace = train(config, train_split, val_split, tree)
    checkpoint.metadata["split"] = {
        "train": spec.train, "val": spec.val, "test": spec.test, "seed": spec.seed,
    }

    out = Path(args.out)
    ckpt_path = out / "checkpoint.json"
    _write(ckpt_path, checkpoint.to_json())
    trace_path = out / "trace.jsonl"
    _write(trace_path, trace.to_jsonl())
    from dataclasses import asdict

    _write_manifest(out, "train", asdict(config),
                    {"data": Path(args.data), "hierarchy": Path(args.hierarchy)},
                    [ckpt_path, trace_path])


def cmd_eval(args) -> None:
    tree = parse_hierarchy(Path(args.hierarchy).read_text())
    dataset = load_dataset(Path(args.data).read_text(), tree)
    checkpoint = Checkpoint.from_json(Path(args.checkpoint).read_text())
    if tuple(checkpoint.classes) != tree.class_ids:
        raise SchemaError("checkpoint classes do not match the hierarchy's class set")
    split_info = checkpoint.metadata.get("split", {})
    spec = SplitSpec(
        train=split_info.get("train", 0.7),
        val=split_info.get("val", 0.1),
        test=split_info.get("test", 0.2),
        seed=split_info.get("seed", checkpoint.metadata.get("seed", 0)),
    )
    train_split, _, test_split = split(dataset, spec)
    living = None
    if args.living_classes:
        living = [line.strip() for line in Path(args.living_classes).read_text().splitlines()
                  if line.strip()]
    report = full_report(checkpoint, test_split, tree, train_split, living_classes=living)

    report_path = Path(args.report)
    _write(report_path, report.to_json())
    inputs = {"checkpoint": Path(args.checkpoint), "data": Path(args.data),
              "hierarchy": Path(args.hierarchy)}
    if args.living_classes:
        inputs["living_classes"] = Path(args.living_classes)
    _write_manifest(report_path.parent, "eval",
                    {"seed": spec.seed, "split": dataclasses_dict(spec)},
                    inputs, [report_path])


def dataclasses_dict(obj) -> dict:
    from dataclasses import asdict

    return asdict(obj)


def cmd_synth(args) -> None:
    dataset, tree = generate_synthetic(
        args.branching, args.depth, args.dim, args.per_class, seed=args.seed)
    out = Path(args.out)
    data_path = out / "dataset.csv"
    _write(data_path, save_dataset(dataset))
    tree_path = out / "hierarchy.csv"
    _write(tree_path, serialize_hierarchy(tree))
    config = {"branching": args.branching, "depth": args.depth, "dim": args.dim,
              "per_class": args.per_class, "seed": args.seed}
    _write_manifest(out, "synth", config, {}, [data_path, tree_path])


def cmd_aggregate(args) -> None:
    paths = sorted(globlib.glob(args.reports))
    if not paths:
        raise SchemaError(f"no reports match {args.reports!r}")
    groups: dict[str, list[tuple[str, MetricsReport]]] = {}
    for path in paths:
        report = MetricsReport.from_json(Path(path).read_text())
        key = report.metadata.get("config_hash", "unknown")
        groups.setdefault(key, []).append((path, report))

    result = []
    for key in sorted(groups):
        members = groups[key]
        counts = {r.metadata.get("num_classes") for _, r in members}
        if len(counts) > 1:
            raise MixedConfigs(f"group {key}: reports disagree on class count {sorted(counts)}")
        metrics = {}
        for name in REPORT_METRICS:
            values = [getattr(r, name) for _, r in members]
            if any(v is None for v in values):
                metrics[name] = {"mean": None, "ci95_half_width": None, "n": len(values)}
                continue
            arr = np.asarray(values, dtype=np.float64)
            mean = float(np.mean(arr))
            if len(arr) >= 2:
                half = float(1.96 * np.std(arr, ddof=1) / np.sqrt(len(arr)))
            else:
                half = None
            metrics[name] = {"mean": mean, "ci95_half_width": half, "n": len(arr)}
        result.append({
            "config_hash": key,
            "reports": [p for p, _ in members],
            "seeds": [r.metadata.get("seed") for _, r in members],
            "metrics": metrics,
        })

    payload = {"ci_method": "normal approximation, 1.96 * sample std / sqrt(n)",
               "groups": result}
    out = Path(args.out)
    _write(out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_manifest(out.parent, "aggregate", {"reports": args.reports, "seed": None},
                    {}, [out])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierlearn",
        description="Hierarchy-aware classification-based metric learning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distances", help="export tree / transformed / similarity matrices")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_distances)

    p = sub.add_parser("mds", help="place fixed proxies by stress minimization")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mds)

    p = sub.add_parser("train", help="train a model; writes checkpoint + trace")
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--model", required=True, choices=["softmax", "normface", "proxydr", "corr"])
    p.add_argument("--options", default="", help="comma-separated subset of ema,dynamic,mds")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--scale", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--arch", choices=["linear", "mlp"], default="linear")
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes a metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--living-classes", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic hierarchical dataset")
    p.add_argument("--branching", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("aggregate", help="pool reports across seeds: mean + 95 percent CI")
    p.add_argument("--reports", required=True, help="glob over report JSON files")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_aggregate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except HierLearnError as exc:
        print(f"hierlearn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hierlearn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
