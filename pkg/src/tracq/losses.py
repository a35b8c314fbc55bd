"""Matched set-prediction losses for entity, predicate and refinement heads.

Each loss Hungarian-matches real ground-truth items to prediction slots,
routes unmatched slots to the null class, and reports the classification and
box parts separately. Classification is a weighted mean with a down-weighted
null class; box terms are normalized by the real-target count (the DETR
normalization, recorded as a deviation from the plain-sum formulation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import boxes as boxgeo
from . import matching
from .autodiff import Tensor
from .boxes import LAMBDA_GIOU, LAMBDA_L1, LAMBDA_LABEL

NULL_CLASS_WEIGHT = 0.1


@dataclass
class LossReport:
    """Total loss tensor plus its unweighted parts and the match it used."""

    total: Tensor
    parts: dict[str, float]
    weights: dict[str, float]
    assignment: np.ndarray | None = None  # ground-truth index -> prediction slot
    group_slots: np.ndarray | None = None  # matched slot per refinement group

    def weighted_parts_sum(self) -> float:
        return sum(self.weights[k] * self.parts[k] for k in self.parts)

    def to_log(self, **extra) -> dict:
        entry = {"total": float(self.total.item())}
        entry.update({k: float(v) for k, v in self.parts.items()})
        entry.update(extra)
        return entry


def pad_targets(classes: np.ndarray, n_slots: int, null_class: int) -> np.ndarray:
    """Real target classes followed by null padding, length n_slots."""
    classes = np.asarray(classes, dtype=np.intp)
    if classes.shape[0] > n_slots:
        raise ValueError(f"{classes.shape[0]} targets exceed {n_slots} prediction slots")
    return np.concatenate([classes, np.full(n_slots - classes.shape[0], null_class, dtype=np.intp)])


def class_weights(n_classes_with_null: int, null_class: int,
                  null_weight: float = NULL_CLASS_WEIGHT) -> np.ndarray:
    w = np.ones(n_classes_with_null)
    w[null_class] = null_weight
    return w


def _slot_targets(n_slots: int, sigma: np.ndarray, gt_classes: np.ndarray, null_class: int) -> np.ndarray:
    targets = np.full(n_slots, null_class, dtype=np.intp)
    targets[sigma] = np.asarray(gt_classes, dtype=np.intp)
    return targets


def loss_detr(logits: Tensor, pred_boxes: Tensor,
              gt_classes: np.ndarray, gt_boxes: np.ndarray, null_class: int,
              lambda_label: float = LAMBDA_LABEL, lambda_l1: float = LAMBDA_L1,
              lambda_giou: float = LAMBDA_GIOU, null_weight: float = NULL_CLASS_WEIGHT) -> LossReport:
    """Entity set loss: Hungarian on the entity cost, then CE + matched box loss."""
    n_slots = logits.shape[0]
    gt_classes = np.asarray(gt_classes, dtype=np.intp)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n_real = gt_classes.shape[0]
    if n_real > n_slots:
        raise ValueError(f"{n_real} ground-truth entities exceed {n_slots} prediction slots")

    if n_real:
        cost = matching.entity_cost_matrix(logits.data, pred_boxes.data, gt_classes, gt_boxes,
                                           lambda_giou, lambda_l1)
        sigma = matching.hungarian(cost).sigma
    else:
        sigma = np.zeros(0, dtype=np.intp)

    targets = _slot_targets(n_slots, sigma, gt_classes, null_class)
    cls = ad.cross_entropy(logits, targets, class_weights(logits.shape[1], null_class, null_weight))

    if n_real:
        l1, giou_term = boxgeo.l_box_parts(pred_boxes[sigma], gt_boxes)
        l1 = l1 * (1.0 / n_real)
        giou_term = giou_term * (1.0 / n_real)
    else:
        l1 = Tensor(0.0)
        giou_term = Tensor(0.0)

    total = lambda_label * cls + lambda_l1 * l1 + lambda_giou * giou_term
    parts = {"cls": cls.item(), "box_l1": l1.item(), "box_giou": giou_term.item()}
    weights = {"cls": lambda_label, "box_l1": lambda_l1, "box_giou": lambda_giou}
    return LossReport(total, parts, weights, assignment=sigma)


def loss_predicate(pred_logits: Tensor, pred_sub: Tensor, pred_obj: Tensor,
                   gt_predicates: np.ndarray, gt_sub: np.ndarray, gt_obj: np.ndarray,
                   null_class: int,
                   lambda_label: float = LAMBDA_LABEL, lambda_l1: float = LAMBDA_L1,
                   lambda_giou: float = LAMBDA_GIOU, null_weight: float = NULL_CLASS_WEIGHT) -> LossReport:
    """Predicate-tuple set loss over <sub box, predicate, obj box> triples."""
    n_slots = pred_logits.shape[0]
    gt_predicates = np.asarray(gt_predicates, dtype=np.intp)
    gt_sub = np.asarray(gt_sub, dtype=np.float64).reshape(-1, 4)
    gt_obj = np.asarray(gt_obj, dtype=np.float64).reshape(-1, 4)
    n_real = gt_predicates.shape[0]
    if n_real > n_slots:
        raise ValueError(f"{n_real} ground-truth relations exceed {n_slots} prediction slots")

    if n_real:
        cost = matching.predicate_cost_matrix(pred_logits.data, pred_sub.data, pred_obj.data,
                                              gt_predicates, gt_sub, gt_obj, lambda_giou, lambda_l1)
        sigma = matching.hungarian(cost).sigma
    else:
        sigma = np.zeros(0, dtype=np.intp)

    targets = _slot_targets(n_slots, sigma, gt_predicates, null_class)
    cls = ad.cross_entropy(pred_logits, targets,
                           class_weights(pred_logits.shape[1], null_class, null_weight))

    if n_real:
        l1_s, giou_s = boxgeo.l_box_parts(pred_sub[sigma], gt_sub)
        l1_o, giou_o = boxgeo.l_box_parts(pred_obj[sigma], gt_obj)
        l1 = (l1_s + l1_o) * (1.0 / n_real)
        giou_term = (giou_s + giou_o) * (1.0 / n_real)
    else:
        l1 = Tensor(0.0)
        giou_term = Tensor(0.0)

    total = lambda_label * cls + lambda_l1 * l1 + lambda_giou * giou_term
    parts = {"cls": cls.item(), "box_l1": l1.item(), "box_giou": giou_term.item()}
    weights = {"cls": lambda_label, "box_l1": lambda_l1, "box_giou": lambda_giou}
    return LossReport(total, parts, weights, assignment=sigma)


@dataclass
class RefinementGroup:
    """N_ce refinements for one conditioned box and its single true entity."""

    logits: Tensor  # [N_ce, E+1]
    boxes: Tensor  # [N_ce, 4]
    gt_class: int
    gt_box: np.ndarray = field(default_factory=lambda: np.zeros(4))


def loss_entity_refine(groups: list[RefinementGroup], null_class: int, n_queries: int,
                       lambda_label: float = LAMBDA_LABEL, lambda_l1: float = LAMBDA_L1,
                       lambda_giou: float = LAMBDA_GIOU, null_weight: float = NULL_CLASS_WEIGHT) -> LossReport:
    """Refinement loss: per-group inner match of the one true entity vs nulls.

    Each group's single ground-truth entity is padded with nulls to the group
    size; the matched slot takes the CE + box loss, the rest train toward the
    null class. With no groups (all padded predicates) the loss is zero.
    """
    for g in groups:
        if g.logits.shape[0] != n_queries or g.boxes.shape[0] != n_queries:
            raise ValueError(f"refinement group size {g.logits.shape[0]} != configured {n_queries}")

    if not groups:
        return LossReport(Tensor(0.0), {"cls": 0.0, "box_l1": 0.0, "box_giou": 0.0},
                          {"cls": lambda_label, "box_l1": lambda_l1, "box_giou": lambda_giou},
                          group_slots=np.zeros(0, dtype=np.intp))

    slots = []
    all_logits = []
    all_targets = []
    matched_boxes = []
    matched_gt = []
    n_classes = groups[0].logits.shape[1]
    for g in groups:
        cost = matching.entity_cost_matrix(g.logits.data, g.boxes.data,
                                           np.array([g.gt_class]), g.gt_box.reshape(1, 4),
                                           lambda_giou, lambda_l1)
        slot = int(matching.hungarian(cost).sigma[0])
        slots.append(slot)
        targets = np.full(n_queries, null_class, dtype=np.intp)
        targets[slot] = g.gt_class
        all_logits.append(g.logits)
        all_targets.append(targets)
        matched_boxes.append(g.boxes[slot:slot + 1])
        matched_gt.append(np.asarray(g.gt_box, dtype=np.float64).reshape(1, 4))

    logits = ad.concat(all_logits, axis=0)
    targets = np.concatenate(all_targets)
    cls = ad.cross_entropy(logits, targets, class_weights(n_classes, null_class, null_weight))

    pred_boxes = ad.concat(matched_boxes, axis=0)
    gt_boxes = np.concatenate(matched_gt, axis=0)
    l1, giou_term = boxgeo.l_box_parts(pred_boxes, gt_boxes)
    l1 = l1 * (1.0 / len(groups))
    giou_term = giou_term * (1.0 / len(groups))

    total = lambda_label * cls + lambda_l1 * l1 + lambda_giou * giou_term
    parts = {"cls": cls.item(), "box_l1": l1.item(), "box_giou": giou_term.item()}
    weights = {"cls": lambda_label, "box_l1": lambda_l1, "box_giou": lambda_giou}
    return LossReport(total, parts, weights, group_slots=np.asarray(slots, dtype=np.intp))
