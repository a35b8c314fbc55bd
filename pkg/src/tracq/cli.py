"""Command-line entry point: generate / train / eval / infer / ablate /
compare-baselines, with config snapshots and reproducible run manifests."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, RunManifest, config_to_ini, load_config, with_seed)
from .data import load_dataset, quantize_raster
from .experiments import (ABLATION_SUITES, compare_baselines, evaluate_model,
                          make_datasets, train_variant)
from .metrics import format_metrics_table
from .nn import TrainingError
from .registry import check_config_compatible, load_model, save_model
from .data import save_dataset


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "from_manifest", None):
        manifest = RunManifest.load(args.from_manifest)
        cfg = load_config(None) if not manifest.config_ini else _config_from_text(manifest.config_ini)
        seed = manifest.seeds.get("seed")
        return with_seed(cfg, seed)
    cfg = load_config(args.config)
    return with_seed(cfg, getattr(args, "seed", None))


def _config_from_text(text: str) -> ExperimentConfig:
    from .config import config_from_ini
    return config_from_ini(text)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _manifest(command: str, cfg: ExperimentConfig, args_dict: dict, seeds: dict) -> RunManifest:
    return RunManifest(command=command, config_ini=config_to_ini(cfg),
                       args=args_dict, seeds=seeds)


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    train_path = out / "train.jsonl"
    val_path = out / "val.jsonl"
    if (train_path.exists() or val_path.exists()) and not args.force:
        print(f"error: {out} already holds datasets (use --force to overwrite)", file=sys.stderr)
        return 2
    started = time.perf_counter()
    train_ds, val_ds = make_datasets(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train_path, train_ds)
    save_dataset(val_path, val_ds)
    manifest = _manifest("generate", cfg, {"out": str(out)}, {"seed": cfg.data.seed})
    manifest.timings = {"wall_s": time.perf_counter() - started}
    manifest.results = {"train_scenes": len(train_ds), "val_scenes": len(val_ds),
                        "train_path": str(train_path), "val_path": str(val_path)}
    manifest.save(out / "manifest.json")
    print(f"wrote {len(train_ds)} train + {len(val_ds)} val scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.dataset) if args.dataset else make_datasets(cfg)[0]
    started = time.perf_counter()
    try:
        final_path, history = train_variant(cfg.selector, cfg, cfg.train.seed, dataset, out)
    except TrainingError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return 3
    with open(out / "losses.jsonl", "w") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    manifest = _manifest("train", cfg, {"out": str(out), "dataset": args.dataset},
                         {"seed": cfg.train.seed})
    manifest.timings = {"wall_s": time.perf_counter() - started}
    manifest.results = {"checkpoint": str(final_path), "steps": len(history),
                        "final_loss": history[-1]["total"] if history else None}
    manifest.save(out / "manifest.json")
    print(f"trained {cfg.selector} (seed {cfg.train.seed}) -> {final_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    model, meta = load_model(args.checkpoint)
    if args.config:
        check_config_compatible(cfg.model, meta)
    dataset = load_dataset(args.dataset)
    k_values = [int(k) for k in args.K] if args.K else list(cfg.eval.k_values)
    started = time.perf_counter()
    report, stats = evaluate_model(model, dataset, k_values, cfg.eval.iou_threshold,
                                   k=args.k, timed=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = report.to_json()
    metrics["parameters"] = stats["parameters"]
    candidate_k = args.k if args.k is not None else model.cfg.tuples_per_predicate
    metrics["predictions_per_image"] = int(candidate_k * model.cfg.n_predicate_queries)
    _write(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    table = format_metrics_table(report, dataset.world.predicate_class_names, extra_rows={
        "#params": str(stats["parameters"]),
        "inference median s/img": f"{stats['inference_time_median_s']:.4f}",
        "inference mean s/img": f"{stats['inference_time_mean_s']:.4f}",
    })
    _write(out / "table.txt", table)
    manifest = _manifest("eval", cfg, {"checkpoint": args.checkpoint, "dataset": args.dataset,
                                       "out": str(out), "k": args.k, "K": k_values}, {})
    manifest.timings = {"wall_s": time.perf_counter() - started,
                        "inference_time_median_s": stats["inference_time_median_s"],
                        "inference_time_mean_s": stats["inference_time_mean_s"]}
    manifest.metrics = metrics
    manifest.save(out / "manifest.json")
    print(table)
    return 0


def _load_image(spec: str, index: int | None):
    """Image input: dataset.jsonl[:idx], a .npy raster, or a .png file."""
    path_part, _, suffix = spec.partition(":")
    path = Path(path_part)
    if path.suffix == ".jsonl":
        idx = index if index is not None else (int(suffix) if suffix else 0)
        dataset = load_dataset(path)
        if not (0 <= idx < len(dataset.records)):
            raise ValueError(f"record index {idx} out of range for {len(dataset.records)} scenes")
        return dataset.records[idx].raster
    if path.suffix == ".npy":
        return quantize_raster(np.clip(np.load(path).astype(np.float64), 0.0, 1.0))
    if path.suffix == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise RuntimeError("png input needs Pillow (pip install pillow)") from exc
        raster = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        return raster
    raise ValueError(f"unsupported image input {spec!r} (use .jsonl[:idx], .npy or .png)")


def cmd_infer(args) -> int:
    model, _ = load_model(args.checkpoint)
    image = _load_image(args.image, args.index)
    started = time.perf_counter()
    graph = model.predict_graph(image, k=args.k, m=args.m)
    elapsed = time.perf_counter() - started
    payload = {"nodes": [t.to_json() for t in graph], "count": len(graph)}
    out = Path(args.out)
    _write(out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    manifest = _manifest("infer", load_config(None), {"checkpoint": args.checkpoint,
                                                      "image": args.image, "out": str(out)}, {})
    manifest.timings = {"wall_s": elapsed}
    manifest.results = {"nodes": len(graph)}
    manifest.save(out.with_suffix(".manifest.json"))
    print(f"wrote {len(graph)} scene-graph nodes to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    suites = list(ABLATION_SUITES) if args.suite == "all" else [args.suite]
    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    started = time.perf_counter()
    train_ds, val_ds = make_datasets(cfg)
    results = {}
    for suite in suites:
        outcome = ABLATION_SUITES[suite](cfg, train_ds, val_ds, ckpt_dir,
                                         train_missing=not args.no_train)
        _write(out / f"{suite}.txt", outcome["table"])
        results[suite] = {k: v for k, v in outcome.items() if k != "table"}
        print(outcome["table"])
    _write(out / "ablations.json", json.dumps(results, indent=2, sort_keys=True) + "\n")
    manifest = _manifest("ablate", cfg, {"out": str(out), "suite": args.suite},
                         {"seeds": list(cfg.ablate.seeds)})
    manifest.timings = {"wall_s": time.perf_counter() - started}
    manifest.results = results
    manifest.save(out / "manifest.json")
    return 0


def cmd_compare_baselines(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    started = time.perf_counter()
    train_ds, val_ds = make_datasets(cfg)
    outcome = compare_baselines(cfg, train_ds, val_ds, out / "checkpoints",
                                train_missing=not args.no_train)
    _write(out / "table.txt", outcome["table"])
    _write(out / "comparison.json", json.dumps(outcome["results"], indent=2, sort_keys=True) + "\n")
    manifest = _manifest("compare-baselines", cfg, {"out": str(out)},
                         {"seed": cfg.ablate.seeds[0]})
    manifest.timings = {"wall_s": time.perf_counter() - started}
    manifest.results = outcome["results"]
    manifest.save(out / "manifest.json")
    print(outcome["table"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracq",
                                     description="scene graph generation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="experiment config (.ini); defaults apply if omitted")
        p.add_argument("--from-manifest", help="re-run with the config and seed of a manifest")
        if seed:
            p.add_argument("--seed", type=int, help="override data/train seed")

    p = sub.add_parser("generate", help="write synthetic train/val datasets")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite existing datasets")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train the configured model")
    common(p)
    p.add_argument("--dataset", help="dataset .jsonl (generated on the fly if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="candidates kept per predicate at inference")
    p.add_argument("-K", action="append", help="recall cutoff (repeatable)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="predict a scene graph for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="dataset.jsonl[:idx], .npy or .png")
    p.add_argument("--index", type=int, help="record index for .jsonl inputs")
    p.add_argument("--out", default="graph.json")
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int, help="max nodes in the emitted graph")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="run ablation suites")
    common(p)
    p.add_argument("--suite", choices=[*ABLATION_SUITES, "all"], default="all")
    p.add_argument("--out", required=True)
    p.add_argument("--no-train", action="store_true",
                   help="fail instead of training missing variants")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("compare-baselines", help="train and compare all architectures")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--no-train", action="store_true")
    p.set_defaults(fn=cmd_compare_baselines)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
