"""Scene-graph recall metrics with graph-constraint triplet matching.

A prediction matches a ground-truth triplet when the subject, predicate and
object classes all agree and both boxes clear the IoU threshold. Recall@K
greedily matches the top-K predictions one-to-one against the ground truth;
mean recall aggregates matches per predicate class over the whole corpus
before averaging, so long-tail classes weigh equally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou
from .data import SceneGraph
from .models import TripletPrediction

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class GroundTruthTriplet:
    sub_box: np.ndarray
    sub_label: int
    obj_box: np.ndarray
    obj_label: int
    predicate: int


def graph_triplets(graph: SceneGraph) -> list[GroundTruthTriplet]:
    by_id = {e.instance_id: e for e in graph.entities}
    out = []
    for sub, pred, obj in graph.relations:
        s, o = by_id[sub], by_id[obj]
        out.append(GroundTruthTriplet(s.box.as_array(), s.label, o.box.as_array(), o.label, pred))
    return out


def match_triplet(pred: TripletPrediction, gt: GroundTruthTriplet,
                  iou_thresh: float = IOU_THRESHOLD, require_labels: bool = True) -> bool:
    """Class equality on all three parts plus IoU >= threshold on both boxes.

    With require_labels=False only the predicate class is checked (the
    predicate-detection protocol, where entity labels are given)."""
    if pred.predicate != gt.predicate:
        return False
    if require_labels and (pred.sub_label != gt.sub_label or pred.obj_label != gt.obj_label):
        return False
    if iou(np.asarray(pred.sub_box), gt.sub_box) < iou_thresh:
        return False
    return iou(np.asarray(pred.obj_box), gt.obj_box) >= iou_thresh


def match_top_k(predictions: list[TripletPrediction], gts: list[GroundTruthTriplet], k: int,
                iou_thresh: float = IOU_THRESHOLD, require_labels: bool = True) -> np.ndarray:
    """Greedy one-to-one matching of the top-k predictions; first match wins.

    Returns a boolean mask over the ground-truth triplets."""
    matched = np.zeros(len(gts), dtype=bool)
    for pred in predictions[:k]:
        for gi, gt in enumerate(gts):
            if matched[gi]:
                continue
            if match_triplet(pred, gt, iou_thresh, require_labels):
                matched[gi] = True
                break
    return matched


def recall_at_k(predictions: list[TripletPrediction], graph: SceneGraph, k: int,
                iou_thresh: float = IOU_THRESHOLD, require_labels: bool = True) -> float:
    """Matched fraction of ground-truth triplets; empty ground truth is 1.0."""
    gts = graph_triplets(graph)
    if not gts:
        return 1.0
    return float(match_top_k(predictions, gts, k, iou_thresh, require_labels).sum() / len(gts))


@dataclass
class MetricsReport:
    recall: dict[int, float]
    mean_recall: dict[int, float]
    per_predicate_recall: dict[int, dict[int, float]]  # k -> predicate -> recall
    counts: dict[int, dict[int, tuple[int, int]]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "mean_recall": {str(k): v for k, v in sorted(self.mean_recall.items())},
            "per_predicate_recall": {
                str(k): {str(p): v for p, v in sorted(by_pred.items())}
                for k, by_pred in sorted(self.per_predicate_recall.items())
            },
            "counts": {
                str(k): {str(p): list(c) for p, c in sorted(by_pred.items())}
                for k, by_pred in sorted(self.counts.items())
            },
        }


def evaluate_corpus(per_image: list[tuple[list[TripletPrediction], SceneGraph]],
                    k_values: list[int], iou_thresh: float = IOU_THRESHOLD,
                    require_labels: bool = True) -> MetricsReport:
    """Corpus metrics: R@K is the image-mean recall; mR@K aggregates matched
    and total counts per predicate class corpus-wide, then averages classes
    present in the ground truth."""
    k_values = sorted(set(int(k) for k in k_values))
    image_recalls = {k: [] for k in k_values}
    matched_by_class = {k: {} for k in k_values}
    total_by_class = {}

    for predictions, graph in per_image:
        gts = graph_triplets(graph)
        for gt in gts:
            total_by_class[gt.predicate] = total_by_class.get(gt.predicate, 0) + 1
        for k in k_values:
            if gts:
                mask = match_top_k(predictions, gts, k, iou_thresh, require_labels)
                image_recalls[k].append(mask.sum() / len(gts))
                for gt, hit in zip(gts, mask):
                    if hit:
                        matched_by_class[k][gt.predicate] = matched_by_class[k].get(gt.predicate, 0) + 1
            else:
                image_recalls[k].append(1.0)

    recall = {k: float(np.mean(image_recalls[k])) if image_recalls[k] else 1.0 for k in k_values}
    per_predicate = {}
    counts = {}
    mean_recall = {}
    for k in k_values:
        by_pred = {}
        by_count = {}
        for pred_class, total in sorted(total_by_class.items()):
            hit = matched_by_class[k].get(pred_class, 0)
            by_pred[pred_class] = hit / total
            by_count[pred_class] = (hit, total)
        per_predicate[k] = by_pred
        counts[k] = by_count
        mean_recall[k] = float(np.mean(list(by_pred.values()))) if by_pred else 1.0
    return MetricsReport(recall, mean_recall, per_predicate, counts)


def format_metrics_table(report: MetricsReport, predicate_names: list[str] | None = None,
                         extra_rows: dict[str, str] | None = None) -> str:
    """Plain-text table mirroring the usual mR@K / R@K layout."""
    ks = sorted(report.recall)
    header = ["metric"] + [f"@{k}" for k in ks]
    rows = [header,
            ["mR"] + [f"{report.mean_recall[k]:.4f}" for k in ks],
            ["R"] + [f"{report.recall[k]:.4f}" for k in ks]]
    for pred_class in sorted(report.per_predicate_recall[ks[0]]) if ks else []:
        name = (predicate_names[pred_class] if predicate_names
                and pred_class < len(predicate_names) else f"predicate {pred_class}")
        rows.append([f"R[{name}]"] + [f"{report.per_predicate_recall[k][pred_class]:.4f}" for k in ks])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-" * max(len(line) for line in lines))
    if extra_rows:
        lines.append("")
        for key, value in extra_rows.items():
            lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"
