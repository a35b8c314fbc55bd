"""The conditional-query scene graph model: feature encoder, predicate
decoder, conditional entity refiner, and inference assembly.

The predicate decoder turns learned queries into <sub box, predicate, obj box>
tuples; the refiner decodes per-box conditional queries (box embedding +
predicate embedding + learned base queries) into entity labels and refined
boxes; inference grids the per-predicate refinements into scored 5-tuples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, AttentionStack, sinusoidal_positions
from .autodiff import Tensor
from .losses import LossReport, RefinementGroup, loss_entity_refine, loss_predicate
from .nn import MLP, Embedding, Linear, Module, Parameter


@dataclass(frozen=True)
class TracqConfig:
    """Desk-scale defaults; the paper-scale reference point is
    N_p=200, N_ce=10, k=5 with 6-layer decoders and 8/4 heads."""

    d_model: int = 64
    d_ff: int = 128
    encoder_layers: int = 2
    predicate_layers: int = 2
    predicate_heads: int = 4
    refine_layers: int = 2
    refine_heads: int = 2
    n_predicate_queries: int = 16  # N_p
    n_refine_queries: int = 4  # N_ce
    tuples_per_predicate: int = 2  # k
    max_graph_size: int | None = None  # m; None = no truncation (k * N_p)
    n_entity_classes: int = 8
    n_predicate_classes: int = 5
    image_size: int = 64
    patch_size: int = 8
    dropout: float = 0.0
    use_predicate_conditioning: bool = True  # ablation: drop the Emb_p term

    def __post_init__(self):
        if self.tuples_per_predicate > self.n_refine_queries ** 2:
            raise ValueError(f"k={self.tuples_per_predicate} exceeds N_ce^2={self.n_refine_queries ** 2}")
        if self.max_graph_size is not None and self.max_graph_size > self.candidate_count:
            raise ValueError(f"m={self.max_graph_size} exceeds k*N_p={self.candidate_count}")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be a multiple of patch_size")

    @property
    def entity_null(self) -> int:
        return self.n_entity_classes

    @property
    def predicate_null(self) -> int:
        return self.n_predicate_classes

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def candidate_count(self) -> int:
        return self.tuples_per_predicate * self.n_predicate_queries

    @property
    def resolved_graph_size(self) -> int:
        return self.candidate_count if self.max_graph_size is None else self.max_graph_size


@dataclass(frozen=True)
class TripletPrediction:
    """A scene-graph node: labeled subject and object boxes plus a predicate.

    The triplet score is exactly predicate_score * sub_score * obj_score.
    """

    sub_box: tuple[float, float, float, float]
    sub_label: int
    sub_score: float
    obj_box: tuple[float, float, float, float]
    obj_label: int
    obj_score: float
    predicate: int
    predicate_score: float
    score: float

    def to_json(self) -> dict:
        return {
            "subject": {"box": list(self.sub_box), "label": self.sub_label, "score": self.sub_score},
            "object": {"box": list(self.obj_box), "label": self.obj_label, "score": self.obj_score},
            "predicate": {"label": self.predicate, "score": self.predicate_score},
            "score": self.score,
        }


def make_triplet(sub_box, sub_label, sub_score, obj_box, obj_label, obj_score,
                 predicate, predicate_score) -> TripletPrediction:
    return TripletPrediction(
        tuple(float(x) for x in sub_box), int(sub_label), float(sub_score),
        tuple(float(x) for x in obj_box), int(obj_label), float(obj_score),
        int(predicate), float(predicate_score),
        float(predicate_score) * float(sub_score) * float(obj_score),
    )


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def best_non_null(probs: np.ndarray, null_class: int) -> tuple[int, float]:
    """Highest-probability real class (the null class never wins)."""
    real = probs[:null_class]
    label = int(np.argmax(real))
    return label, float(real[label])


class FeatureEncoder(Module):
    """Patch embedding + fixed positions through the self-attention stack."""

    def __init__(self, cfg: TracqConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_dim, cfg.d_model, rng)
        self.positions = sinusoidal_positions(cfg.n_patches, cfg.d_model)
        attn_cfg = AttentionConfig(cfg.d_model, cfg.predicate_heads, cfg.d_ff,
                                   cfg.encoder_layers, cfg.dropout)
        self.stack = AttentionStack(attn_cfg, "encoder", rng)

    def patchify(self, image: np.ndarray) -> np.ndarray:
        s, p = self.cfg.image_size, self.cfg.patch_size
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (s, s, 3):
            raise ad.ShapeError(f"expected image [{s},{s},3], got {image.shape}")
        grid = s // p
        return image.reshape(grid, p, grid, p, 3).transpose(0, 2, 1, 3, 4).reshape(grid * grid, -1)

    def forward(self, image: np.ndarray) -> Tensor:
        tokens = self.patch_embed(Tensor(self.patchify(image))) + Tensor(self.positions)
        return self.stack(tokens)


class PredicateDecoder(Module):
    """Learned queries -> per-query predicate logits and coarse box pair."""

    def __init__(self, cfg: TracqConfig, rng: np.random.Generator):
        super().__init__()
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_predicate_queries, cfg.d_model)))
        attn_cfg = AttentionConfig(cfg.d_model, cfg.predicate_heads, cfg.d_ff,
                                   cfg.predicate_layers, cfg.dropout)
        self.stack = AttentionStack(attn_cfg, "decoder", rng)
        d = cfg.d_model
        self.sub_box_head = MLP([d, d, d, 4], rng)
        self.obj_box_head = MLP([d, d, d, 4], rng)
        self.class_head = Linear(d, cfg.n_predicate_classes + 1, rng)

    def forward(self, memory: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        z = self.stack(self.queries, memory)
        logits = self.class_head(z)
        sub = ad.sigmoid(self.sub_box_head(z))
        obj = ad.sigmoid(self.obj_box_head(z))
        return logits, sub, obj


class EntityRefiner(Module):
    """Conditional queries (box embedding + predicate embedding + base set)
    decoded against the shared features into entity labels and refined boxes."""

    def __init__(self, cfg: TracqConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.base_queries = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_refine_queries, cfg.d_model)))
        self.box_embed = Linear(4, cfg.d_model, rng)
        self.predicate_embed = Embedding(cfg.n_predicate_classes, cfg.d_model, rng)
        attn_cfg = AttentionConfig(cfg.d_model, cfg.refine_heads, cfg.d_ff,
                                   cfg.refine_layers, cfg.dropout)
        self.stack = AttentionStack(attn_cfg, "decoder", rng)
        self.class_head = Linear(cfg.d_model, cfg.n_entity_classes + 1, rng)
        self.box_head = MLP([cfg.d_model, cfg.d_model, cfg.d_model, 4], rng)

    def build_queries(self, box: np.ndarray, predicate: int) -> Tensor:
        """Q = Emb_b(box) + Emb_p(predicate) + base queries (rows stay distinct)."""
        q = self.base_queries + self.box_embed(Tensor(np.asarray(box, dtype=np.float64).reshape(1, 4)))
        if self.cfg.use_predicate_conditioning:
            q = q + self.predicate_embed([int(predicate)])
        return q

    def forward(self, memory: Tensor, queries: Tensor) -> tuple[Tensor, Tensor]:
        z = self.stack(queries, memory)
        return self.class_head(z), ad.sigmoid(self.box_head(z))


@dataclass
class PhaseTwoCache:
    """Frozen per-image activations used while training the refiner."""

    memory: np.ndarray  # [L, d]
    sub_boxes: np.ndarray  # [N_p, 4]
    obj_boxes: np.ndarray  # [N_p, 4]
    hard_predicates: np.ndarray  # [N_p] argmax over real predicate classes
    assignment: np.ndarray  # gt relation index -> prediction slot


@dataclass
class _Candidate:
    score: float
    query_index: int
    combo_index: int
    null_flagged: bool
    triplet: TripletPrediction


class TracqModel(Module):
    """Two-decoder pipeline trained in two phases; see module docstring."""

    family = "tracq"

    def __init__(self, cfg: TracqConfig, seed: int = 0, refine_at_inference: bool = True):
        super().__init__()
        rng = np.random.default_rng([seed, 0])
        self.cfg = cfg
        self.refine_at_inference = refine_at_inference
        self.encoder = FeatureEncoder(cfg, rng)
        self.predicate_decoder = PredicateDecoder(cfg, rng)
        self.refiner = EntityRefiner(cfg, rng)

    # -- training ------------------------------------------------------
    def loss_phase1(self, image: np.ndarray, triplets: dict[str, np.ndarray], **weights) -> LossReport:
        memory = self.encoder(image)
        logits, sub, obj = self.predicate_decoder(memory)
        return loss_predicate(logits, sub, obj, triplets["predicate"], triplets["sub_box"],
                              triplets["obj_box"], self.cfg.predicate_null, **weights)

    def phase2_cache(self, image: np.ndarray, triplets: dict[str, np.ndarray], **weights) -> PhaseTwoCache:
        """Evaluate the frozen encoder + predicate decoder once, off the tape."""
        with ad.no_grad():
            memory = self.encoder(image)
            logits, sub, obj = self.predicate_decoder(memory)
            report = loss_predicate(logits, sub, obj, triplets["predicate"], triplets["sub_box"],
                                    triplets["obj_box"], self.cfg.predicate_null, **weights)
        probs = softmax_np(logits.data)
        hard = probs[:, : self.cfg.n_predicate_classes].argmax(axis=1)
        return PhaseTwoCache(memory.data, sub.data, obj.data, hard, report.assignment)

    def refinement_groups(self, cache: PhaseTwoCache, triplets: dict[str, np.ndarray]) -> list[RefinementGroup]:
        """One group per matched relation endpoint, conditioned on the frozen
        predicate-decoder boxes and hard predicate labels."""
        memory = Tensor(cache.memory)
        groups: list[RefinementGroup] = []
        for gt_idx, slot in enumerate(cache.assignment):
            predicate = int(cache.hard_predicates[slot])
            for side, box_key, label_key in (("sub", "sub_box", "sub_label"),
                                             ("obj", "obj_box", "obj_label")):
                conditioned = cache.sub_boxes[slot] if side == "sub" else cache.obj_boxes[slot]
                queries = self.refiner.build_queries(conditioned, predicate)
                logits, boxes = self.refiner(memory, queries)
                groups.append(RefinementGroup(logits, boxes,
                                              int(triplets[label_key][gt_idx]),
                                              np.asarray(triplets[box_key][gt_idx])))
        return groups

    def loss_phase2(self, cache: PhaseTwoCache, triplets: dict[str, np.ndarray], **weights) -> LossReport:
        groups = self.refinement_groups(cache, triplets)
        return loss_entity_refine(groups, self.cfg.entity_null, self.cfg.n_refine_queries, **weights)

    # -- inference -----------------------------------------------------
    def decode_tuples(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Predicate-decoder outputs as arrays (memory, logits, sub, obj)."""
        with ad.no_grad():
            memory = self.encoder(image)
            logits, sub, obj = self.predicate_decoder(memory)
        return memory.data, logits.data, sub.data, obj.data

    def predict_graph(self, image: np.ndarray, k: int | None = None,
                      m: int | None = None) -> list[TripletPrediction]:
        """Top-m 5-tuples, sorted by strictly non-increasing triplet score."""
        cfg = self.cfg
        k = cfg.tuples_per_predicate if k is None else int(k)
        if k > cfg.n_refine_queries ** 2 and self.refine_at_inference:
            raise ValueError(f"k={k} exceeds N_ce^2={cfg.n_refine_queries ** 2}")
        memory_np, logits, sub, obj = self.decode_tuples(image)

        if not self.refine_at_inference:
            return self._graph_from_tuples(logits, sub, obj, m)

        memory = Tensor(memory_np)
        candidates: list[_Candidate] = []
        probs = softmax_np(logits)
        with ad.no_grad():
            for qi in range(cfg.n_predicate_queries):
                predicate, s_pred = best_non_null(probs[qi], cfg.predicate_null)
                sides = {}
                for side, box in (("sub", sub[qi]), ("obj", obj[qi])):
                    queries = self.refiner.build_queries(box, predicate)
                    ref_logits, ref_boxes = self.refiner(memory, queries)
                    ref_probs = softmax_np(ref_logits.data)
                    labels_scores = [best_non_null(p, cfg.entity_null) for p in ref_probs]
                    null_hit = ref_probs.argmax(axis=1) == cfg.entity_null
                    sides[side] = (ref_boxes.data, labels_scores, null_hit)
                candidates.extend(self._grid_candidates(qi, predicate, s_pred, sides, k))
        if m is None:
            m = self.cfg.max_graph_size  # None caps nothing: all k*N_p candidates
        return self._emit(candidates, m)

    def _grid_candidates(self, qi: int, predicate: int, s_pred: float, sides: dict,
                         k: int) -> list[_Candidate]:
        """Rank the N_ce^2 sub/obj combinations, null-argmax combos last."""
        n = self.cfg.n_refine_queries
        sub_boxes, sub_ls, sub_null = sides["sub"]
        obj_boxes, obj_ls, obj_null = sides["obj"]
        combos = []
        for si in range(n):
            for oi in range(n):
                idx = si * n + oi
                s_sub = sub_ls[si][1]
                s_obj = obj_ls[oi][1]
                flagged = bool(sub_null[si] or obj_null[oi])
                combos.append((flagged, -(s_sub * s_obj), idx, si, oi))
        combos.sort()
        picked = []
        for flagged, _neg, idx, si, oi in combos[:k]:
            triplet = make_triplet(sub_boxes[si], sub_ls[si][0], sub_ls[si][1],
                                   obj_boxes[oi], obj_ls[oi][0], obj_ls[oi][1],
                                   predicate, s_pred)
            picked.append(_Candidate(triplet.score, qi, idx, flagged, triplet))
        return picked

    def _graph_from_tuples(self, logits: np.ndarray, sub: np.ndarray, obj: np.ndarray,
                           m: int | None) -> list[TripletPrediction]:
        """No-refinement route: emit the raw <sub box, predicate, obj box>
        tuples (entity labels unknown), for predicate-detection evaluation."""
        probs = softmax_np(logits)
        candidates = []
        for qi in range(self.cfg.n_predicate_queries):
            predicate, s_pred = best_non_null(probs[qi], self.cfg.predicate_null)
            triplet = make_triplet(sub[qi], -1, 1.0, obj[qi], -1, 1.0, predicate, s_pred)
            candidates.append(_Candidate(triplet.score, qi, 0, False, triplet))
        limit = self.cfg.n_predicate_queries if m is None else int(m)
        return self._emit(candidates, limit)

    @staticmethod
    def _emit(candidates: list[_Candidate], m: int | None) -> list[TripletPrediction]:
        candidates.sort(key=lambda c: (-c.score, c.query_index, c.combo_index))
        if m is not None:
            candidates = candidates[:m]
        return [c.triplet for c in candidates]


def conditional_query_delta(model: TracqModel, box_a, box_b, predicate: int) -> np.ndarray:
    """Row-wise query difference for two boxes under the same predicate."""
    with ad.no_grad():
        qa = model.refiner.build_queries(np.asarray(box_a), predicate)
        qb = model.refiner.build_queries(np.asarray(box_b), predicate)
    return qa.data - qb.data


def with_overrides(cfg: TracqConfig, **kwargs) -> TracqConfig:
    return replace(cfg, **kwargs)
