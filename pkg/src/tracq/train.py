"""Training loops: two-phase for the conditional-query models, single phase
for the baselines. Phase 1 fits the feature encoder and the first decoder;
phase 2 freezes them (their activations are cached off the tape) and fits
the conditional second decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import DDModel, DDTRModel, EntityFirstModel, SDModel
from .data import Dataset
from .models import TracqModel
from .nn import AdamW, Module, Parameter, TrainingError


@dataclass(frozen=True)
class TrainConfig:
    phase1_steps: int = 1500
    phase2_steps: int = 800
    batch_size: int = 8
    lr_backbone: float = 1e-5
    lr_main: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    lambda_label: float = 1.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    null_weight: float = 0.1

    def loss_weights(self) -> dict:
        return {"lambda_label": self.lambda_label, "lambda_l1": self.lambda_l1,
                "lambda_giou": self.lambda_giou, "null_weight": self.null_weight}


@dataclass
class TrainItem:
    image: np.ndarray
    triplets: dict[str, np.ndarray]
    entity_classes: np.ndarray
    entity_boxes: np.ndarray


def prepare_items(dataset: Dataset) -> list[TrainItem]:
    items = []
    for rec in dataset.records:
        ents = rec.graph.entities
        items.append(TrainItem(
            rec.raster,
            rec.graph.triplet_arrays(),
            np.array([e.label for e in ents], dtype=np.intp),
            np.array([e.box.as_array() for e in ents]).reshape(len(ents), 4),
        ))
    return items


def _batch_stream(rng: np.random.Generator, n: int, batch_size: int):
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def _exclude(params: list[Parameter], *groups: list[Parameter]) -> list[Parameter]:
    drop = {id(p) for g in groups for p in g}
    return [p for p in params if id(p) not in drop]


def _phase_parameters(model: Module) -> tuple[list[Parameter], list[Parameter], list[Parameter]]:
    """(backbone, phase-1 main, phase-2) parameter split per architecture."""
    if isinstance(model, TracqModel):
        backbone = model.encoder.patch_embed.parameters()
        phase2 = model.refiner.parameters()
        main = _exclude(model.parameters(), backbone, phase2)
        return backbone, main, phase2
    if isinstance(model, EntityFirstModel):
        backbone = model.encoder.patch_embed.parameters()
        phase2 = [model.base_queries] + model.pair_embed.parameters() \
            + model.sub_label_embed.parameters() + model.obj_label_embed.parameters() \
            + model.cond_stack.parameters() + model.predicate_head.parameters()
        main = _exclude(model.parameters(), backbone, phase2)
        return backbone, main, phase2
    if isinstance(model, DDTRModel):
        backbone = model.tuple_model.encoder.patch_embed.parameters() \
            + model.entity_model.encoder.patch_embed.parameters()
        return backbone, _exclude(model.parameters(), backbone), []
    if isinstance(model, (SDModel, DDModel)):
        backbone = model.encoder.patch_embed.parameters()
        return backbone, _exclude(model.parameters(), backbone), []
    raise TypeError(f"no training recipe for {type(model).__name__}")


def _mean_loss(reports):
    scale = 1.0 / len(reports)
    total = reports[0].total * scale
    for r in reports[1:]:
        total = total + r.total * scale
    parts = {k: float(np.mean([r.parts[k] for r in reports])) for k in reports[0].parts}
    return total, parts


def _run_phase(loss_fn, items_idx, steps: int, optimizer: AdamW, rng: np.random.Generator,
               batch_size: int, phase: int, history: list[dict], step_offset: int) -> None:
    stream = _batch_stream(rng, len(items_idx), batch_size)
    for step in range(steps):
        batch = next(stream)
        optimizer.zero_grad()
        reports = [loss_fn(items_idx[i]) for i in batch]
        total, parts = _mean_loss(reports)
        value = float(total.item())
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at phase {phase} step {step}")
        total.backward()
        optimizer.step()
        entry = {"step": step_offset + step, "phase": phase, "total": value}
        entry.update(parts)
        history.append(entry)


def train_model(model: Module, dataset: Dataset, tc: TrainConfig) -> list[dict]:
    """Train in place; returns the per-step loss history (JSON-able dicts)."""
    items = prepare_items(dataset)
    if not items:
        raise ValueError("empty dataset")
    weights = tc.loss_weights()
    backbone, main, phase2 = _phase_parameters(model)
    history: list[dict] = []
    rng = np.random.default_rng([tc.seed, 100])

    if isinstance(model, TracqModel) or isinstance(model, EntityFirstModel):
        optimizer = AdamW([
            {"params": backbone, "lr": tc.lr_backbone},
            {"params": main, "lr": tc.lr_main},
        ], weight_decay=tc.weight_decay)
        _run_phase(lambda it: model.loss_phase1(it.image, it.triplets, **weights),
                   items, tc.phase1_steps, optimizer, rng, tc.batch_size, 1, history, 0)

        caches = [model.phase2_cache(it.image, it.triplets, **weights) for it in items]
        paired = [(it, cache) for it, cache in zip(items, caches) if len(it.triplets["predicate"])]
        if paired and tc.phase2_steps > 0:
            optimizer2 = AdamW([{"params": phase2, "lr": tc.lr_main}], weight_decay=tc.weight_decay)
            rng2 = np.random.default_rng([tc.seed, 200])
            _run_phase(lambda pc: model.loss_phase2(pc[1], pc[0].triplets, **weights),
                       paired, tc.phase2_steps, optimizer2, rng2, tc.batch_size, 2,
                       history, tc.phase1_steps)
        return history

    optimizer = AdamW([
        {"params": backbone, "lr": tc.lr_backbone},
        {"params": main, "lr": tc.lr_main},
    ], weight_decay=tc.weight_decay)
    if isinstance(model, DDTRModel):
        loss_fn = lambda it: model.loss(it.image, it.triplets,
                                        (it.entity_classes, it.entity_boxes), **weights)
    else:
        loss_fn = lambda it: model.loss(it.image, it.triplets, **weights)
    _run_phase(loss_fn, items, tc.phase1_steps, optimizer, rng, tc.batch_size, 1, history, 0)
    return history
