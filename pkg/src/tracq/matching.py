"""Hungarian bipartite matching and the set-prediction matching costs.

Matching runs on plain float matrices, outside the gradient tape; only the
losses computed afterwards are differentiated. Class terms use softmax
probabilities rather than raw logits (the DETR convention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes
from .boxes import LAMBDA_GIOU, LAMBDA_L1


@dataclass(frozen=True)
class MatchAssignment:
    """Cost-minimal injective map from ground-truth rows to prediction columns."""

    sigma: np.ndarray  # [rows] column index per row
    total_cost: float

    def as_dict(self) -> dict[int, int]:
        return {i: int(j) for i, j in enumerate(self.sigma)}


def hungarian(costs: np.ndarray) -> MatchAssignment:
    """Solve min-cost assignment for a rows<=cols matrix of finite costs.

    Shortest-augmenting-path algorithm with potentials; ties resolve to the
    lowest column (prediction) index, so results are deterministic.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {costs.shape}")
    n, m = costs.shape
    if n == 0:
        return MatchAssignment(np.zeros(0, dtype=np.intp), 0.0)
    if n > m:
        raise ValueError(f"more rows ({n}) than columns ({m}); pad the ground-truth side first")
    if not np.isfinite(costs).all():
        raise ValueError("cost matrix contains non-finite entries")

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.intp)  # match[j] = row occupying column j, 0 = free
    padded = np.empty((n + 1, m + 1))
    padded[1:, 1:] = costs

    for row in range(1, n + 1):
        match[0] = row
        j0 = 0
        minv = np.full(m + 1, inf)
        way = np.zeros(m + 1, dtype=np.intp)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            reduced = padded[i0, 1:] - u[i0] - v[1:]
            better = ~used[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            free = np.flatnonzero(~used[1:]) + 1
            j1 = free[np.argmin(minv[free])]
            delta = minv[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j_prev = way[j0]
            match[j0] = match[j_prev]
            j0 = j_prev

    sigma = np.zeros(n, dtype=np.intp)
    for j in range(1, m + 1):
        if match[j] != 0:
            sigma[match[j] - 1] = j - 1
    total = float(costs[np.arange(n), sigma].sum())
    return MatchAssignment(sigma, total)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- per-pair matching costs --------------------------------------------------
def cost_entity(logits, pred_box, gt_class: int, gt_box, null_class: int,
                lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> float:
    """Entity matching cost: -prob[class] + box loss, zero for null targets."""
    if gt_class == null_class:
        return 0.0
    prob = _softmax(np.asarray(logits, dtype=np.float64))[gt_class]
    return float(-prob + boxes.l_box_value(pred_box, gt_box, lambda_giou, lambda_l1))


def cost_predicate(pred_logits, pred_sub_box, pred_obj_box,
                   gt_predicate: int, gt_sub_box, gt_obj_box, null_class: int,
                   lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> float:
    """Predicate-tuple matching cost over class prob and both box losses."""
    if gt_predicate == null_class:
        return 0.0
    prob = _softmax(np.asarray(pred_logits, dtype=np.float64))[gt_predicate]
    box_cost = boxes.l_box_value(pred_sub_box, gt_sub_box, lambda_giou, lambda_l1)
    box_cost += boxes.l_box_value(pred_obj_box, gt_obj_box, lambda_giou, lambda_l1)
    return float(-prob + box_cost)


def cost_refinement(logits, pred_box, gt_class: int, gt_box, null_class: int,
                    lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> float:
    """Entity-refinement matching cost; same shape as the entity cost."""
    if gt_class == null_class:
        return 0.0
    prob = _softmax(np.asarray(logits, dtype=np.float64))[gt_class]
    return float(-prob + boxes.l_box_value(pred_box, gt_box, lambda_giou, lambda_l1))


# -- vectorized cost matrices (predictions x real targets) --------------------
def entity_cost_matrix(logits: np.ndarray, pred_boxes: np.ndarray,
                       gt_classes: np.ndarray, gt_boxes: np.ndarray,
                       lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> np.ndarray:
    """[n_gt, n_pred] entity costs for real (non-null) targets."""
    probs = _softmax(np.asarray(logits, dtype=np.float64))  # [n_pred, C]
    cls_term = -probs[:, np.asarray(gt_classes, dtype=np.intp)]  # [n_pred, n_gt]
    box_term = boxes.l_box_matrix(pred_boxes, gt_boxes, lambda_giou, lambda_l1)
    return (cls_term + box_term).T


def predicate_cost_matrix(pred_logits: np.ndarray, pred_sub: np.ndarray, pred_obj: np.ndarray,
                          gt_predicates: np.ndarray, gt_sub: np.ndarray, gt_obj: np.ndarray,
                          lambda_giou: float = LAMBDA_GIOU, lambda_l1: float = LAMBDA_L1) -> np.ndarray:
    """[n_gt, n_pred] predicate-tuple costs for real targets."""
    probs = _softmax(np.asarray(pred_logits, dtype=np.float64))
    cls_term = -probs[:, np.asarray(gt_predicates, dtype=np.intp)]
    box_term = boxes.l_box_matrix(pred_sub, gt_sub, lambda_giou, lambda_l1)
    box_term = box_term + boxes.l_box_matrix(pred_obj, gt_obj, lambda_giou, lambda_l1)
    return (cls_term + box_term).T
