"""Experiment orchestration: training runs, timed evaluation, ablation
suites and the baseline comparison table.

Ablation variants are config-selected wirings of the same building blocks,
never code forks; the predicate-conditioning ablation reuses the base run's
phase-1 weights and retrains only the conditional decoder.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, generate_dataset
from .metrics import MetricsReport, evaluate_corpus
from .nn import Module, count_parameters, load_checkpoint
from .registry import build_model, load_model, save_model
from .train import train_model


def make_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train/val datasets on disjoint seed ranges."""
    train = generate_dataset(cfg.data.seed, cfg.data.train_scenes, cfg.world)
    val = generate_dataset(cfg.data.seed + cfg.data.train_scenes, cfg.data.val_scenes, cfg.world)
    return train, val


def train_variant(selector: str, cfg: ExperimentConfig, seed: int, dataset: Dataset,
                  out_dir: Path, phase1_source: Path | None = None) -> tuple[Path, list[dict]]:
    """Train one variant; returns (final checkpoint path, loss history).

    Saves a phase-1 checkpoint alongside the final one for the two-phase
    models so conditioning ablations can retrain only the second decoder.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = replace(cfg.train, seed=seed)
    model = build_model(selector, cfg.model, seed=seed)
    history: list[dict] = []

    two_phase = hasattr(model, "loss_phase1")
    if two_phase:
        if phase1_source is not None:
            state, _ = load_checkpoint(phase1_source)
            model.load_state_dict(state)
            phase1 = replace(tc, phase1_steps=0)
        else:
            phase1 = replace(tc, phase2_steps=0)
            history += train_model(model, dataset, phase1)
            save_model(_phase1_path(out_dir, selector, seed), model, selector, seed,
                       extra={"phase": 1})
            phase1 = replace(tc, phase1_steps=0)
        history += train_model(model, dataset, phase1)
    else:
        history += train_model(model, dataset, tc)

    final = checkpoint_path(out_dir, selector, seed)
    save_model(final, model, selector, seed, extra={"phase": "final"})
    return final, history


def checkpoint_path(out_dir: Path, selector: str, seed: int) -> Path:
    return out_dir / f"{selector}-seed{seed}.npz"


def _phase1_path(out_dir: Path, selector: str, seed: int) -> Path:
    return out_dir / f"{selector}-seed{seed}-phase1.npz"


def ensure_trained(selector: str, cfg: ExperimentConfig, seed: int, dataset: Dataset,
                   out_dir: Path, train_missing: bool = True,
                   phase1_source: Path | None = None) -> Path:
    path = checkpoint_path(out_dir, selector, seed)
    if path.exists():
        return path
    if not train_missing:
        raise FileNotFoundError(f"missing checkpoint for {selector} seed {seed}: {path}")
    final, _ = train_variant(selector, cfg, seed, dataset, out_dir, phase1_source)
    return final


def evaluate_model(model: Module, dataset: Dataset, k_values, iou_threshold: float = 0.5,
                   k: int | None = None, require_labels: bool = True,
                   timed: bool = False) -> tuple[MetricsReport, dict]:
    """Metrics over a dataset plus (optionally) per-image inference timing.

    Timing follows a 5-image warmup and reports median and mean seconds."""
    records = dataset.records
    stats: dict = {"images": len(records), "parameters": count_parameters(model)}
    if timed:
        for rec in records[:5]:
            model.predict_graph(rec.raster, k=k)
    per_image = []
    durations = []
    for rec in records:
        start = time.perf_counter()
        predictions = model.predict_graph(rec.raster, k=k)
        durations.append(time.perf_counter() - start)
        per_image.append((predictions, rec.graph))
    if timed:
        stats["inference_time_median_s"] = float(np.median(durations))
        stats["inference_time_mean_s"] = float(np.mean(durations))
    report = evaluate_corpus(per_image, list(k_values), iou_threshold, require_labels)
    return report, stats


def _mean_over_seeds(reports: list[MetricsReport], k_values) -> dict[str, dict[int, float]]:
    return {
        "mR": {k: float(np.mean([r.mean_recall[k] for r in reports])) for k in k_values},
        "R": {k: float(np.mean([r.recall[k] for r in reports])) for k in k_values},
    }


def _row(label: str, values: dict[int, float], k_values) -> str:
    cells = " / ".join(f"{values[k]:.4f}" for k in k_values)
    return f"{label:<28} {cells}"


# -- ablation suites -----------------------------------------------------------
def ablate_order(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset,
                 ckpt_dir: Path, train_missing: bool = True) -> dict:
    """Decoder-order ablation: entity-first versus predicate-first."""
    k_values = list(cfg.eval.k_values)
    per_variant = {}
    for selector in ("tracq-entity-first", "tracq"):
        reports = []
        for seed in cfg.ablate.seeds:
            path = ensure_trained(selector, cfg, seed, train_ds, ckpt_dir, train_missing)
            model, _ = load_model(path)
            report, _ = evaluate_model(model, val_ds, k_values, cfg.eval.iou_threshold)
            reports.append(report)
        per_variant[selector] = _mean_over_seeds(reports, k_values)

    lines = [f"decoder-order ablation, mean recall over seeds {list(cfg.ablate.seeds)}",
             f"{'variant':<28} mR@" + " / mR@".join(str(k) for k in k_values)]
    lines.append(_row("entity-first", per_variant["tracq-entity-first"]["mR"], k_values))
    lines.append(_row("predicate-first", per_variant["tracq"]["mR"], k_values))
    return {"table": "\n".join(lines) + "\n", "results": per_variant}


def ablate_k(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset,
             ckpt_dir: Path, train_missing: bool = True) -> dict:
    """Candidate-count sweep: k is inference-time only, one model per seed."""
    k_eval = list(cfg.eval.k_values)
    sweep = [k for k in cfg.ablate.k_sweep if k <= cfg.model.n_refine_queries ** 2]
    per_seed: dict[int, dict[int, MetricsReport]] = {}
    for seed in cfg.ablate.seeds:
        path = ensure_trained("tracq", cfg, seed, train_ds, ckpt_dir, train_missing)
        model, _ = load_model(path)
        per_seed[seed] = {}
        for k in sweep:
            report, _ = evaluate_model(model, val_ds, k_eval, cfg.eval.iou_threshold, k=k)
            per_seed[seed][k] = report

    k0 = k_eval[0]
    lines = [f"candidate-count sweep, recall@{k0} per seed {list(cfg.ablate.seeds)}",
             f"{'k':>4} {'#predictions':>13} {'mR@' + str(k0):>10} {'R@' + str(k0):>10}"]
    results = {}
    for k in sweep:
        mr = float(np.mean([per_seed[s][k].mean_recall[k0] for s in cfg.ablate.seeds]))
        r = float(np.mean([per_seed[s][k].recall[k0] for s in cfg.ablate.seeds]))
        n_pred = k * cfg.model.n_predicate_queries
        results[k] = {"predictions": n_pred, "mR": mr, "R": r}
        lines.append(f"{k:>4} {n_pred:>13} {mr:>10.4f} {r:>10.4f}")

    # soft directional gate: larger k should not lose recall versus k=1
    gate = None
    if len(sweep) >= 2:
        k_hi = sweep[1]
        wins = sum(per_seed[s][k_hi].recall[k0] >= per_seed[s][sweep[0]].recall[k0]
                   for s in cfg.ablate.seeds)
        gate = {"criterion": f"R@{k0}(k={k_hi}) >= R@{k0}(k={sweep[0]})",
                "wins": int(wins), "seeds": len(cfg.ablate.seeds),
                "passed": bool(wins * 3 >= 2 * len(cfg.ablate.seeds))}
        lines.append(f"direction: {gate['criterion']} in {wins}/{len(cfg.ablate.seeds)} seeds "
                     f"-> {'pass' if gate['passed'] else 'FAIL'}")
    return {"table": "\n".join(lines) + "\n", "results": results, "gate": gate}


def ablate_refine(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset,
                  ckpt_dir: Path, train_missing: bool = True) -> dict:
    """Box-refinement ablation under the predicate-detection protocol
    (entity labels given): boxes straight from the first decoder versus
    refined boxes from the conditional decoder."""
    k_values = list(cfg.eval.k_values)
    routes = {"from-first-decoder": [], "refined": []}
    for seed in cfg.ablate.seeds:
        path = ensure_trained("tracq", cfg, seed, train_ds, ckpt_dir, train_missing)
        model, _ = load_model(path)
        refined, _ = evaluate_model(model, val_ds, k_values, cfg.eval.iou_threshold,
                                    require_labels=False)
        raw = load_model(path, selector="tracq-no-refine")[0]
        unrefined, _ = evaluate_model(raw, val_ds, k_values, cfg.eval.iou_threshold,
                                      require_labels=False)
        routes["refined"].append(refined)
        routes["from-first-decoder"].append(unrefined)

    results = {name: _mean_over_seeds(reports, k_values) for name, reports in routes.items()}
    lines = ["box-refinement ablation (predicate-detection protocol, labels given)",
             f"{'entity boxes':<28} mR@" + " / mR@".join(str(k) for k in k_values)]
    lines.append(_row("from first decoder", results["from-first-decoder"]["mR"], k_values))
    lines.append(_row("refined (full model)", results["refined"]["mR"], k_values))
    return {"table": "\n".join(lines) + "\n", "results": results}


def ablate_cond(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset,
                ckpt_dir: Path, train_missing: bool = True) -> dict:
    """Predicate-conditioning ablation: drop the predicate embedding from the
    conditional queries and retrain the second phase only."""
    k_values = list(cfg.eval.k_values)
    pairs = []
    for seed in cfg.ablate.seeds:
        base_path = ensure_trained("tracq", cfg, seed, train_ds, ckpt_dir, train_missing)
        phase1 = _phase1_path(ckpt_dir, "tracq", seed)
        source = phase1 if phase1.exists() else None
        variant_path = ensure_trained("tracq-no-pred-cond", cfg, seed, train_ds, ckpt_dir,
                                      train_missing, phase1_source=source)
        base, _ = load_model(base_path)
        variant, _ = load_model(variant_path)
        base_report, _ = evaluate_model(base, val_ds, k_values, cfg.eval.iou_threshold)
        variant_report, _ = evaluate_model(variant, val_ds, k_values, cfg.eval.iou_threshold)
        pairs.append((base_report, variant_report))

    k0 = k_values[0]
    wins = sum(v.mean_recall[k0] <= b.mean_recall[k0] for b, v in pairs)
    gate = {"criterion": f"removing predicate conditioning does not improve mR@{k0}",
            "wins": int(wins), "seeds": len(cfg.ablate.seeds),
            "passed": bool(wins * 3 >= 2 * len(cfg.ablate.seeds))}
    results = {
        "with-conditioning": _mean_over_seeds([b for b, _ in pairs], k_values),
        "without-predicate-term": _mean_over_seeds([v for _, v in pairs], k_values),
    }
    lines = ["conditional-query ablation",
             f"{'queries':<28} mR@" + " / mR@".join(str(k) for k in k_values)]
    lines.append(_row("without predicate term", results["without-predicate-term"]["mR"], k_values))
    lines.append(_row("with conditioning", results["with-conditioning"]["mR"], k_values))
    lines.append(f"direction: {gate['criterion']} in {wins}/{len(cfg.ablate.seeds)} seeds "
                 f"-> {'pass' if gate['passed'] else 'FAIL'}")
    return {"table": "\n".join(lines) + "\n", "results": results, "gate": gate}


ABLATION_SUITES = {
    "order": ablate_order,
    "k": ablate_k,
    "refine": ablate_refine,
    "cond": ablate_cond,
}


def compare_baselines(cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset,
                      ckpt_dir: Path, train_missing: bool = True) -> dict:
    """Recall / parameter count / inference time across all architectures."""
    k_values = list(cfg.eval.k_values)
    seed = cfg.ablate.seeds[0]
    rows = {}
    for selector in ("sd", "dd", "ddtr", "tracq"):
        path = ensure_trained(selector, cfg, seed, train_ds, ckpt_dir, train_missing)
        model, _ = load_model(path)
        report, stats = evaluate_model(model, val_ds, k_values, cfg.eval.iou_threshold,
                                       timed=True)
        rows[selector] = {
            "mR": {k: report.mean_recall[k] for k in k_values},
            "R": {k: report.recall[k] for k in k_values},
            "parameters": stats["parameters"],
            "inference_time_median_s": stats["inference_time_median_s"],
        }
    header = (f"{'model':<8} mR@" + " / mR@".join(str(k) for k in k_values)
              + f" {'#params':>10} {'median s/img':>13}")
    lines = [f"baseline comparison, seed {seed}", header]
    for selector, row in rows.items():
        cells = " / ".join(f"{row['mR'][k]:.4f}" for k in k_values)
        lines.append(f"{selector:<8} {cells} {row['parameters']:>10} "
                     f"{row['inference_time_median_s']:>13.4f}")
    return {"table": "\n".join(lines) + "\n", "results": rows}
