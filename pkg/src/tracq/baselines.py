"""Baseline single-stage architectures with varying feature entanglement:

* SD   - one decoder, five heads, full 5-tuples from shared queries.
* DD   - shared encoder and queries, separate predicate/entity decoders,
         outputs paired index-to-index (no matching step).
* DDTR - two fully separate encoder-decoder models with disjoint queries,
         joined by brute-force assembly over all entity pairs.

Plus the entity-first variant that swaps the decoder roles (entities first,
predicate classification conditioned on them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import boxes as boxgeo
from . import matching
from .attention import AttentionConfig, AttentionStack
from .autodiff import Tensor
from .losses import (LossReport, class_weights, loss_detr, loss_predicate,
                     NULL_CLASS_WEIGHT)
from .matching import hungarian
from .models import (FeatureEncoder, TracqConfig, TripletPrediction, _Candidate,
                     best_non_null, make_triplet, softmax_np, TracqModel)
from .nn import MLP, Embedding, Linear, Module, Parameter


def _decoder_stack(cfg: TracqConfig, rng: np.random.Generator) -> AttentionStack:
    attn_cfg = AttentionConfig(cfg.d_model, cfg.predicate_heads, cfg.d_ff,
                               cfg.predicate_layers, cfg.dropout)
    return AttentionStack(attn_cfg, "decoder", rng)


class SDModel(Module):
    """Single decoder emitting whole <(b,y)_sub - p - (b,y)_obj> tuples."""

    family = "sd"

    def __init__(self, cfg: TracqConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng([seed, 1])
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg, rng)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_predicate_queries, cfg.d_model)))
        self.stack = _decoder_stack(cfg, rng)
        d = cfg.d_model
        self.sub_box_head = MLP([d, d, d, 4], rng)
        self.obj_box_head = MLP([d, d, d, 4], rng)
        self.sub_class_head = Linear(d, cfg.n_entity_classes + 1, rng)
        self.obj_class_head = Linear(d, cfg.n_entity_classes + 1, rng)
        self.predicate_head = Linear(d, cfg.n_predicate_classes + 1, rng)

    def forward(self, image: np.ndarray):
        z = self.stack(self.queries, self.encoder(image))
        return {
            "pred_logits": self.predicate_head(z),
            "sub_logits": self.sub_class_head(z),
            "obj_logits": self.obj_class_head(z),
            "sub_box": ad.sigmoid(self.sub_box_head(z)),
            "obj_box": ad.sigmoid(self.obj_box_head(z)),
        }

    def loss(self, image: np.ndarray, triplets: dict[str, np.ndarray], **weights) -> LossReport:
        out = self.forward(image)
        return spo_set_loss(out, triplets, self.cfg, **weights)

    def predict_graph(self, image: np.ndarray, k: int | None = None,
                      m: int | None = None) -> list[TripletPrediction]:
        del k  # index-paired outputs have no per-predicate candidate axis
        with ad.no_grad():
            out = self.forward(image)
        return _tuples_from_heads(out, self.cfg, m)


class DDModel(Module):
    """Shared encoder and queries, dual decoders; outputs pair by index."""

    family = "dd"

    def __init__(self, cfg: TracqConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng([seed, 2])
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg, rng)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_predicate_queries, cfg.d_model)))
        self.predicate_stack = _decoder_stack(cfg, rng)
        self.entity_stack = _decoder_stack(cfg, rng)
        d = cfg.d_model
        self.sub_box_head = MLP([d, d, d, 4], rng)
        self.obj_box_head = MLP([d, d, d, 4], rng)
        self.predicate_head = Linear(d, cfg.n_predicate_classes + 1, rng)
        self.sub_class_head = Linear(d, cfg.n_entity_classes + 1, rng)
        self.obj_class_head = Linear(d, cfg.n_entity_classes + 1, rng)

    def forward(self, image: np.ndarray):
        memory = self.encoder(image)
        zp = self.predicate_stack(self.queries, memory)
        ze = self.entity_stack(self.queries, memory)
        return {
            "pred_logits": self.predicate_head(zp),
            "sub_box": ad.sigmoid(self.sub_box_head(zp)),
            "obj_box": ad.sigmoid(self.obj_box_head(zp)),
            "sub_logits": self.sub_class_head(ze),
            "obj_logits": self.obj_class_head(ze),
        }

    def loss(self, image: np.ndarray, triplets: dict[str, np.ndarray], **weights) -> LossReport:
        out = self.forward(image)
        return spo_set_loss(out, triplets, self.cfg, **weights)

    def predict_graph(self, image: np.ndarray, k: int | None = None,
                      m: int | None = None) -> list[TripletPrediction]:
        del k  # index-paired outputs have no per-predicate candidate axis
        with ad.no_grad():
            out = self.forward(image)
        return _tuples_from_heads(out, self.cfg, m)


def spo_set_loss(out: dict[str, Tensor], triplets: dict[str, np.ndarray], cfg: TracqConfig,
                 lambda_label: float = boxgeo.LAMBDA_LABEL, lambda_l1: float = boxgeo.LAMBDA_L1,
                 lambda_giou: float = boxgeo.LAMBDA_GIOU,
                 null_weight: float = NULL_CLASS_WEIGHT) -> LossReport:
    """Set loss over whole SPO tuples: the predicate-tuple cost extended with
    the entity-label probability terms, then CE on all three classifiers."""
    n_slots = cfg.n_predicate_queries
    preds = np.asarray(triplets["predicate"], dtype=np.intp)
    n_real = preds.shape[0]
    if n_real > n_slots:
        raise ValueError(f"{n_real} ground-truth relations exceed {n_slots} prediction slots")

    if n_real:
        cost = matching.predicate_cost_matrix(
            out["pred_logits"].data, out["sub_box"].data, out["obj_box"].data,
            preds, triplets["sub_box"], triplets["obj_box"], lambda_giou, lambda_l1)
        sub_probs = softmax_np(out["sub_logits"].data)
        obj_probs = softmax_np(out["obj_logits"].data)
        cost = cost - sub_probs[:, triplets["sub_label"]].T - obj_probs[:, triplets["obj_label"]].T
        sigma = hungarian(cost).sigma
    else:
        sigma = np.zeros(0, dtype=np.intp)

    def slot_targets(labels, null_class):
        t = np.full(n_slots, null_class, dtype=np.intp)
        if n_real:
            t[sigma] = np.asarray(labels, dtype=np.intp)
        return t

    pw = class_weights(cfg.n_predicate_classes + 1, cfg.predicate_null, null_weight)
    ew = class_weights(cfg.n_entity_classes + 1, cfg.entity_null, null_weight)
    cls = ad.cross_entropy(out["pred_logits"], slot_targets(preds, cfg.predicate_null), pw)
    cls = cls + ad.cross_entropy(out["sub_logits"], slot_targets(triplets["sub_label"], cfg.entity_null), ew)
    cls = cls + ad.cross_entropy(out["obj_logits"], slot_targets(triplets["obj_label"], cfg.entity_null), ew)

    if n_real:
        l1_s, giou_s = boxgeo.l_box_parts(out["sub_box"][sigma], triplets["sub_box"])
        l1_o, giou_o = boxgeo.l_box_parts(out["obj_box"][sigma], triplets["obj_box"])
        l1 = (l1_s + l1_o) * (1.0 / n_real)
        giou_term = (giou_s + giou_o) * (1.0 / n_real)
    else:
        l1 = Tensor(0.0)
        giou_term = Tensor(0.0)

    total = lambda_label * cls + lambda_l1 * l1 + lambda_giou * giou_term
    parts = {"cls": cls.item(), "box_l1": l1.item(), "box_giou": giou_term.item()}
    weights = {"cls": lambda_label, "box_l1": lambda_l1, "box_giou": lambda_giou}
    return LossReport(total, parts, weights, assignment=sigma)


def _tuples_from_heads(out: dict[str, Tensor], cfg: TracqConfig, m: int | None) -> list[TripletPrediction]:
    """Index-paired 5-tuples from per-slot heads, sorted by triplet score."""
    pred_probs = softmax_np(out["pred_logits"].data)
    sub_probs = softmax_np(out["sub_logits"].data)
    obj_probs = softmax_np(out["obj_logits"].data)
    sub_boxes = out["sub_box"].data
    obj_boxes = out["obj_box"].data
    candidates = []
    for qi in range(cfg.n_predicate_queries):
        predicate, s_pred = best_non_null(pred_probs[qi], cfg.predicate_null)
        sub_label, s_sub = best_non_null(sub_probs[qi], cfg.entity_null)
        obj_label, s_obj = best_non_null(obj_probs[qi], cfg.entity_null)
        triplet = make_triplet(sub_boxes[qi], sub_label, s_sub, obj_boxes[qi], obj_label, s_obj,
                               predicate, s_pred)
        candidates.append(_Candidate(triplet.score, qi, 0, False, triplet))
    return TracqModel._emit(candidates, m)


class _EntityDetector(Module):
    """DETR-style entity detector (class + box per query) for DDTR."""

    def __init__(self, cfg: TracqConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg, rng)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_predicate_queries, cfg.d_model)))
        self.stack = _decoder_stack(cfg, rng)
        self.class_head = Linear(cfg.d_model, cfg.n_entity_classes + 1, rng)
        self.box_head = MLP([cfg.d_model, cfg.d_model, cfg.d_model, 4], rng)

    def forward(self, image: np.ndarray) -> tuple[Tensor, Tensor]:
        z = self.stack(self.queries, self.encoder(image))
        return self.class_head(z), ad.sigmoid(self.box_head(z))


class _TupleDetector(Module):
    """Predicate-tuple detector (own encoder) for DDTR."""

    def __init__(self, cfg: TracqConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg, rng)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_predicate_queries, cfg.d_model)))
        self.stack = _decoder_stack(cfg, rng)
        d = cfg.d_model
        self.sub_box_head = MLP([d, d, d, 4], rng)
        self.obj_box_head = MLP([d, d, d, 4], rng)
        self.predicate_head = Linear(d, cfg.n_predicate_classes + 1, rng)

    def forward(self, image: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        z = self.stack(self.queries, self.encoder(image))
        return self.predicate_head(z), ad.sigmoid(self.sub_box_head(z)), ad.sigmoid(self.obj_box_head(z))


@dataclass(frozen=True)
class AssemblyCandidate:
    """One <entity_i, predicate_m, entity_j> combination with its rank score."""

    assembly_score: float
    tuple_index: int
    sub_index: int
    obj_index: int
    triplet: TripletPrediction


def ddtr_assemble(pred_logits: np.ndarray, pred_sub: np.ndarray, pred_obj: np.ndarray,
                  ent_logits: np.ndarray, ent_boxes: np.ndarray,
                  n_predicate_classes: int, n_entity_classes: int) -> list[AssemblyCandidate]:
    """Score every ordered entity pair against every predicate tuple.

    Always returns M*N*(N-1) candidates, ranked by descending assembly score
    (box-IoU agreement on both endpoints times the three class scores).
    """
    pred_probs = softmax_np(pred_logits)
    ent_probs = softmax_np(ent_logits)
    m_tuples = pred_logits.shape[0]
    n_entities = ent_boxes.shape[0]
    ent_best = [best_non_null(ent_probs[i], n_entity_classes) for i in range(n_entities)]
    candidates = []
    for mi in range(m_tuples):
        predicate, s_pred = best_non_null(pred_probs[mi], n_predicate_classes)
        iou_sub = boxgeo.iou_matrix(pred_sub[mi:mi + 1], ent_boxes)[0]
        iou_obj = boxgeo.iou_matrix(pred_obj[mi:mi + 1], ent_boxes)[0]
        for i in range(n_entities):
            for j in range(n_entities):
                if i == j:
                    continue
                label_i, score_i = ent_best[i]
                label_j, score_j = ent_best[j]
                assembly = float(iou_sub[i] * iou_obj[j] * s_pred * score_i * score_j)
                triplet = make_triplet(ent_boxes[i], label_i, score_i,
                                       ent_boxes[j], label_j, score_j, predicate, s_pred)
                candidates.append(AssemblyCandidate(assembly, mi, i, j, triplet))
    candidates.sort(key=lambda c: (-c.assembly_score, c.tuple_index, c.sub_index, c.obj_index))
    return candidates


class DDTRModel(Module):
    """Two disjoint detector models joined by brute-force assembly."""

    family = "ddtr"

    def __init__(self, cfg: TracqConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng([seed, 3])
        self.cfg = cfg
        self.tuple_model = _TupleDetector(cfg, rng)
        self.entity_model = _EntityDetector(cfg, rng)

    def loss(self, image: np.ndarray, triplets: dict[str, np.ndarray],
             entities: tuple[np.ndarray, np.ndarray], **weights) -> LossReport:
        """Sum of the tuple set loss and the entity detection set loss."""
        logits, sub, obj = self.tuple_model(image)
        rel = loss_predicate(logits, sub, obj, triplets["predicate"], triplets["sub_box"],
                             triplets["obj_box"], self.cfg.predicate_null, **weights)
        ent_logits, ent_boxes = self.entity_model(image)
        ent_classes, ent_box_arr = entities
        ent = loss_detr(ent_logits, ent_boxes, ent_classes, ent_box_arr,
                        self.cfg.entity_null, **weights)
        total = rel.total + ent.total
        parts = {k: rel.parts[k] + ent.parts[k] for k in rel.parts}
        return LossReport(total, parts, rel.weights, assignment=rel.assignment)

    def predict_graph(self, image: np.ndarray, k: int | None = None,
                      m: int | None = None) -> list[TripletPrediction]:
        k = self.cfg.tuples_per_predicate if k is None else int(k)
        with ad.no_grad():
            logits, sub, obj = self.tuple_model(image)
            ent_logits, ent_boxes = self.entity_model(image)
        candidates = ddtr_assemble(logits.data, sub.data, obj.data, ent_logits.data,
                                   ent_boxes.data, self.cfg.n_predicate_classes,
                                   self.cfg.n_entity_classes)
        kept: list[_Candidate] = []
        per_tuple: dict[int, int] = {}
        for c in candidates:
            taken = per_tuple.get(c.tuple_index, 0)
            if taken < k:
                per_tuple[c.tuple_index] = taken + 1
                combo = c.sub_index * ent_boxes.shape[0] + c.obj_index
                kept.append(_Candidate(c.triplet.score, c.tuple_index, combo, False, c.triplet))
        if m is None:
            m = self.cfg.max_graph_size
        return TracqModel._emit(kept, m)


class EntityFirstModel(Module):
    """Role-swapped variant: entity pairs decoded first, predicate
    classification conditioned on them by a second decoder."""

    family = "tracq-entity-first"

    def __init__(self, cfg: TracqConfig, seed: int = 0):
        super().__init__()
        if cfg.tuples_per_predicate > cfg.n_refine_queries:
            raise ValueError("entity-first variant needs k <= N_ce (one candidate axis)")
        rng = np.random.default_rng([seed, 4])
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg, rng)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_predicate_queries, cfg.d_model)))
        self.pair_stack = _decoder_stack(cfg, rng)
        d = cfg.d_model
        self.sub_box_head = MLP([d, d, d, 4], rng)
        self.obj_box_head = MLP([d, d, d, 4], rng)
        self.sub_class_head = Linear(d, cfg.n_entity_classes + 1, rng)
        self.obj_class_head = Linear(d, cfg.n_entity_classes + 1, rng)
        # conditional predicate classifier
        self.base_queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_refine_queries, cfg.d_model)))
        self.pair_embed = Linear(8, d, rng)
        self.sub_label_embed = Embedding(cfg.n_entity_classes, d, rng)
        self.obj_label_embed = Embedding(cfg.n_entity_classes, d, rng)
        attn_cfg = AttentionConfig(cfg.d_model, cfg.refine_heads, cfg.d_ff,
                                   cfg.refine_layers, cfg.dropout)
        self.cond_stack = AttentionStack(attn_cfg, "decoder", rng)
        self.predicate_head = Linear(d, cfg.n_predicate_classes + 1, rng)

    def forward_pairs(self, image: np.ndarray):
        memory = self.encoder(image)
        z = self.pair_stack(self.queries, memory)
        return memory, {
            "sub_logits": self.sub_class_head(z),
            "obj_logits": self.obj_class_head(z),
            "sub_box": ad.sigmoid(self.sub_box_head(z)),
            "obj_box": ad.sigmoid(self.obj_box_head(z)),
        }

    def build_queries(self, sub_box, obj_box, sub_label: int, obj_label: int) -> Tensor:
        pair = np.concatenate([np.asarray(sub_box), np.asarray(obj_box)]).reshape(1, 8)
        q = self.base_queries + self.pair_embed(Tensor(pair))
        q = q + self.sub_label_embed([int(sub_label)]) + self.obj_label_embed([int(obj_label)])
        return q

    def classify_predicate(self, memory: Tensor, queries: Tensor) -> Tensor:
        return self.predicate_head(self.cond_stack(queries, memory))

    # -- phase 1: entity-pair set loss ----------------------------------
    def loss_phase1(self, image: np.ndarray, triplets: dict[str, np.ndarray],
                    lambda_label: float = boxgeo.LAMBDA_LABEL, lambda_l1: float = boxgeo.LAMBDA_L1,
                    lambda_giou: float = boxgeo.LAMBDA_GIOU,
                    null_weight: float = NULL_CLASS_WEIGHT) -> LossReport:
        _, out = self.forward_pairs(image)
        cfg = self.cfg
        n_slots = cfg.n_predicate_queries
        n_real = triplets["predicate"].shape[0]
        if n_real > n_slots:
            raise ValueError(f"{n_real} relations exceed {n_slots} slots")
        if n_real:
            sub_probs = softmax_np(out["sub_logits"].data)
            obj_probs = softmax_np(out["obj_logits"].data)
            cost = -(sub_probs[:, triplets["sub_label"]] + obj_probs[:, triplets["obj_label"]]).T
            cost = cost + boxgeo.l_box_matrix(out["sub_box"].data, triplets["sub_box"],
                                              lambda_giou, lambda_l1).T
            cost = cost + boxgeo.l_box_matrix(out["obj_box"].data, triplets["obj_box"],
                                              lambda_giou, lambda_l1).T
            sigma = hungarian(cost).sigma
        else:
            sigma = np.zeros(0, dtype=np.intp)

        ew = class_weights(cfg.n_entity_classes + 1, cfg.entity_null, null_weight)

        def slot_targets(labels):
            t = np.full(n_slots, cfg.entity_null, dtype=np.intp)
            if n_real:
                t[sigma] = np.asarray(labels, dtype=np.intp)
            return t

        cls = ad.cross_entropy(out["sub_logits"], slot_targets(triplets["sub_label"]), ew)
        cls = cls + ad.cross_entropy(out["obj_logits"], slot_targets(triplets["obj_label"]), ew)
        if n_real:
            l1_s, giou_s = boxgeo.l_box_parts(out["sub_box"][sigma], triplets["sub_box"])
            l1_o, giou_o = boxgeo.l_box_parts(out["obj_box"][sigma], triplets["obj_box"])
            l1 = (l1_s + l1_o) * (1.0 / n_real)
            giou_term = (giou_s + giou_o) * (1.0 / n_real)
        else:
            l1 = Tensor(0.0)
            giou_term = Tensor(0.0)
        total = lambda_label * cls + lambda_l1 * l1 + lambda_giou * giou_term
        parts = {"cls": cls.item(), "box_l1": l1.item(), "box_giou": giou_term.item()}
        weights = {"cls": lambda_label, "box_l1": lambda_l1, "box_giou": lambda_giou}
        return LossReport(total, parts, weights, assignment=sigma)

    # -- phase 2: conditional predicate classification -------------------
    def phase2_cache(self, image: np.ndarray, triplets: dict[str, np.ndarray], **weights):
        with ad.no_grad():
            memory, out = self.forward_pairs(image)
            report = self.loss_phase1(image, triplets, **weights)
        sub_probs = softmax_np(out["sub_logits"].data)
        obj_probs = softmax_np(out["obj_logits"].data)
        return {
            "memory": memory.data,
            "sub_box": out["sub_box"].data,
            "obj_box": out["obj_box"].data,
            "sub_hard": sub_probs[:, : self.cfg.n_entity_classes].argmax(axis=1),
            "obj_hard": obj_probs[:, : self.cfg.n_entity_classes].argmax(axis=1),
            "assignment": report.assignment,
        }

    def loss_phase2(self, cache: dict, triplets: dict[str, np.ndarray],
                    lambda_label: float = boxgeo.LAMBDA_LABEL,
                    null_weight: float = NULL_CLASS_WEIGHT, **_ignored) -> LossReport:
        cfg = self.cfg
        memory = Tensor(cache["memory"])
        all_logits = []
        all_targets = []
        slots = []
        for gt_idx, slot in enumerate(cache["assignment"]):
            queries = self.build_queries(cache["sub_box"][slot], cache["obj_box"][slot],
                                         cache["sub_hard"][slot], cache["obj_hard"][slot])
            logits = self.classify_predicate(memory, queries)
            probs = softmax_np(logits.data)
            gt_pred = int(triplets["predicate"][gt_idx])
            inner_cost = -probs[:, gt_pred].reshape(1, -1)
            inner_slot = int(hungarian(inner_cost).sigma[0])
            targets = np.full(cfg.n_refine_queries, cfg.predicate_null, dtype=np.intp)
            targets[inner_slot] = gt_pred
            all_logits.append(logits)
            all_targets.append(targets)
            slots.append(inner_slot)
        zero = {"cls": 0.0, "box_l1": 0.0, "box_giou": 0.0}
        wmap = {"cls": lambda_label, "box_l1": 0.0, "box_giou": 0.0}
        if not all_logits:
            return LossReport(Tensor(0.0), zero, wmap, group_slots=np.zeros(0, dtype=np.intp))
        pw = class_weights(cfg.n_predicate_classes + 1, cfg.predicate_null, null_weight)
        cls = ad.cross_entropy(ad.concat(all_logits, axis=0), np.concatenate(all_targets), pw)
        parts = {"cls": cls.item(), "box_l1": 0.0, "box_giou": 0.0}
        return LossReport(lambda_label * cls, parts, wmap,
                          group_slots=np.asarray(slots, dtype=np.intp))

    # -- inference --------------------------------------------------------
    def predict_graph(self, image: np.ndarray, k: int | None = None,
                      m: int | None = None) -> list[TripletPrediction]:
        cfg = self.cfg
        k = cfg.tuples_per_predicate if k is None else int(k)
        if k > cfg.n_refine_queries:
            raise ValueError(f"k={k} exceeds N_ce={cfg.n_refine_queries} for entity-first")
        with ad.no_grad():
            memory, out = self.forward_pairs(image)
            sub_probs = softmax_np(out["sub_logits"].data)
            obj_probs = softmax_np(out["obj_logits"].data)
            candidates: list[_Candidate] = []
            for qi in range(cfg.n_predicate_queries):
                sub_label, s_sub = best_non_null(sub_probs[qi], cfg.entity_null)
                obj_label, s_obj = best_non_null(obj_probs[qi], cfg.entity_null)
                queries = self.build_queries(out["sub_box"].data[qi], out["obj_box"].data[qi],
                                             sub_label, obj_label)
                logits = self.classify_predicate(memory, queries)
                probs = softmax_np(logits.data)
                ranked = []
                for ci in range(cfg.n_refine_queries):
                    predicate, s_pred = best_non_null(probs[ci], cfg.predicate_null)
                    flagged = bool(probs[ci].argmax() == cfg.predicate_null)
                    ranked.append((flagged, -s_pred, ci, predicate))
                ranked.sort()
                for flagged, neg, ci, predicate in ranked[:k]:
                    triplet = make_triplet(out["sub_box"].data[qi], sub_label, s_sub,
                                           out["obj_box"].data[qi], obj_label, s_obj,
                                           predicate, -neg)
                    candidates.append(_Candidate(triplet.score, qi, ci, flagged, triplet))
        if m is None:
            m = cfg.max_graph_size
        return TracqModel._emit(candidates, m)
