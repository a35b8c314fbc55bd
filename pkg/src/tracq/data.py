"""Synthetic scene generation and dataset serialization.

Scenes are colored shapes (rectangles and ellipses) on a small raster; the
entity class is the shape/color combination and relations follow directly
from box geometry (left-of, above, inside, overlapping, same-row), so every
ground-truth relation can be re-derived from the stored boxes. Class
frequencies follow a configurable power law to emulate a long tail.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .boxes import Box, iou, to_xyxy

SHAPES = ("rectangle", "ellipse")
COLORS = (
    ("red", (0.85, 0.20, 0.20)),
    ("green", (0.20, 0.75, 0.25)),
    ("blue", (0.25, 0.35, 0.85)),
    ("yellow", (0.90, 0.85, 0.20)),
)
PREDICATES = ("left-of", "above", "inside", "overlapping", "same-row")

DATASET_FORMAT = "tracq-scenes"
DATASET_VERSION = 1


class DatasetError(ValueError):
    """Raised on malformed dataset files, annotated with the line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class WorldConfig:
    """Vocabulary and geometry knobs for the synthetic scene generator."""

    image_size: int = 64
    min_entities: int = 2
    max_entities: int = 8
    skew: float = 0.8  # power-law exponent on entity class frequency
    margin: float = 0.05  # left-of / above decision margin
    row_tolerance: float = 0.02
    overlap_iou: float = 0.10
    inside_margin: float = 0.01
    min_extent: float = 0.12
    max_extent: float = 0.35
    max_place_tries: int = 25
    max_scene_tries: int = 16

    def __post_init__(self):
        if self.n_entity_classes < 2 or self.n_predicate_classes < 2:
            raise ValueError("need at least 2 entity and 2 predicate classes")
        if self.skew < 0:
            raise ValueError("skew exponent must be >= 0")
        if not (0 < self.min_entities <= self.max_entities):
            raise ValueError("bad scene size range")

    @property
    def entity_class_names(self) -> list[str]:
        return [f"{color}-{shape}" for shape in SHAPES for color, _ in COLORS]

    @property
    def predicate_class_names(self) -> list[str]:
        return list(PREDICATES)

    @property
    def n_entity_classes(self) -> int:
        return len(SHAPES) * len(COLORS)

    @property
    def n_predicate_classes(self) -> int:
        return len(PREDICATES)

    def class_distribution(self) -> np.ndarray:
        ranks = np.arange(1, self.n_entity_classes + 1, dtype=np.float64)
        p = ranks ** (-self.skew)
        return p / p.sum()


@dataclass(frozen=True)
class SceneEntity:
    box: Box
    label: int
    instance_id: int


@dataclass
class SceneGraph:
    entities: list[SceneEntity]
    relations: list[tuple[int, int, int]]  # (subject id, predicate, object id)

    def validate(self, world: WorldConfig) -> None:
        ids = [e.instance_id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate entity instance ids")
        known = set(ids)
        for e in self.entities:
            if not (0 <= e.label < world.n_entity_classes):
                raise ValueError(f"entity label {e.label} out of range")
            e.box.validate_normalized()
            if e.box.degenerate:
                raise ValueError("degenerate entity box")
        seen = set()
        for sub, pred, obj in self.relations:
            if sub not in known or obj not in known:
                raise ValueError(f"relation endpoint {sub}->{obj} missing")
            if sub == obj:
                raise ValueError("self relation")
            if not (0 <= pred < world.n_predicate_classes):
                raise ValueError(f"predicate {pred} out of range")
            if (sub, pred, obj) in seen:
                raise ValueError(f"duplicate relation {(sub, pred, obj)}")
            seen.add((sub, pred, obj))

    def to_json(self) -> dict:
        return {
            "entities": [{"box": [float(x) for x in e.box.as_array()], "label": int(e.label),
                          "id": int(e.instance_id)} for e in self.entities],
            "relations": [[int(x) for x in r] for r in self.relations],
        }

    @staticmethod
    def from_json(obj: dict) -> "SceneGraph":
        entities = [SceneEntity(Box.from_array(e["box"]), int(e["label"]), int(e["id"]))
                    for e in obj["entities"]]
        relations = [(int(s), int(p), int(o)) for s, p, o in obj["relations"]]
        return SceneGraph(entities, relations)

    def triplet_arrays(self) -> dict[str, np.ndarray]:
        """Relations as flat arrays keyed by role, boxes resolved from ids."""
        by_id = {e.instance_id: e for e in self.entities}
        n = len(self.relations)
        out = {
            "predicate": np.zeros(n, dtype=np.intp),
            "sub_box": np.zeros((n, 4)),
            "obj_box": np.zeros((n, 4)),
            "sub_label": np.zeros(n, dtype=np.intp),
            "obj_label": np.zeros(n, dtype=np.intp),
        }
        for i, (sub, pred, obj) in enumerate(self.relations):
            out["predicate"][i] = pred
            out["sub_box"][i] = by_id[sub].box.as_array()
            out["obj_box"][i] = by_id[obj].box.as_array()
            out["sub_label"][i] = by_id[sub].label
            out["obj_label"][i] = by_id[obj].label
        return out


def derive_relations(entities: list[SceneEntity], world: WorldConfig) -> list[tuple[int, int, int]]:
    """All ordered pairs x all geometric predicates that hold, in fixed order."""
    relations = []
    for a in entities:
        for b in entities:
            if a.instance_id == b.instance_id:
                continue
            for pred in _predicates_between(a.box, b.box, world):
                relations.append((a.instance_id, pred, b.instance_id))
    return relations


def _predicates_between(a: Box, b: Box, world: WorldConfig) -> list[int]:
    held = []
    ax = to_xyxy(a.as_array())
    bx = to_xyxy(b.as_array())
    if a.cx < b.cx - world.margin:
        held.append(PREDICATES.index("left-of"))
    if a.cy < b.cy - world.margin:
        held.append(PREDICATES.index("above"))
    a_in_b = (ax[0] >= bx[0] + world.inside_margin and ax[1] >= bx[1] + world.inside_margin
              and ax[2] <= bx[2] - world.inside_margin and ax[3] <= bx[3] - world.inside_margin)
    b_in_a = (bx[0] >= ax[0] + world.inside_margin and bx[1] >= ax[1] + world.inside_margin
              and bx[2] <= ax[2] - world.inside_margin and bx[3] <= ax[3] - world.inside_margin)
    if a_in_b:
        held.append(PREDICATES.index("inside"))
    if not a_in_b and not b_in_a and iou(a.as_array(), b.as_array()) > world.overlap_iou:
        held.append(PREDICATES.index("overlapping"))
    if abs(a.cy - b.cy) <= world.row_tolerance:
        held.append(PREDICATES.index("same-row"))
    return held


def render_scene(entities: list[SceneEntity], world: WorldConfig) -> np.ndarray:
    """Rasterize entities as filled shapes, largest first, to [S,S,3] in [0,1]."""
    size = world.image_size
    raster = np.full((size, size, 3), 0.08)
    cols = (np.arange(size) + 0.5) / size
    rows = (np.arange(size) + 0.5) / size
    grid_x = np.broadcast_to(cols[None, :], (size, size))
    grid_y = np.broadcast_to(rows[:, None], (size, size))
    order = sorted(entities, key=lambda e: -(e.box.w * e.box.h))
    for e in order:
        shape = SHAPES[e.label // len(COLORS)]
        color = np.array(COLORS[e.label % len(COLORS)][1])
        if shape == "rectangle":
            x0, y0, x1, y1 = to_xyxy(e.box.as_array())
            mask = (grid_x >= x0) & (grid_x < x1) & (grid_y >= y0) & (grid_y < y1)
        else:
            rx = max(e.box.w / 2.0, 1e-6)
            ry = max(e.box.h / 2.0, 1e-6)
            mask = ((grid_x - e.box.cx) / rx) ** 2 + ((grid_y - e.box.cy) / ry) ** 2 <= 1.0
        raster[mask] = color
    return raster


def quantize_raster(raster: np.ndarray) -> np.ndarray:
    """Round-trip through the uint8 storage encoding."""
    u8 = np.clip(np.round(raster * 255.0), 0, 255).astype(np.uint8)
    return u8.astype(np.float64) / 255.0


def generate_scene(seed: int, world: WorldConfig) -> tuple[np.ndarray, SceneGraph]:
    """Deterministic scene for a seed; retries unplaceable draws on sub-seeds.

    The raster is pre-quantized to the uint8 storage encoding so in-memory
    scenes match a save/load round trip exactly.
    """
    for attempt in range(world.max_scene_tries):
        rng = np.random.default_rng([int(seed), attempt])
        entities = _place_entities(rng, world)
        if entities is None:
            continue
        graph = SceneGraph(entities, derive_relations(entities, world))
        graph.validate(world)
        return quantize_raster(render_scene(entities, world)), graph
    raise RuntimeError(f"could not place a scene for seed {seed}")


def _place_entities(rng: np.random.Generator, world: WorldConfig) -> list[SceneEntity] | None:
    n = int(rng.integers(world.min_entities, world.max_entities + 1))
    labels = rng.choice(world.n_entity_classes, size=n, p=world.class_distribution())
    entities: list[SceneEntity] = []
    for idx in range(n):
        placed = False
        for _ in range(world.max_place_tries):
            w = float(rng.uniform(world.min_extent, world.max_extent))
            h = float(rng.uniform(world.min_extent, world.max_extent))
            cx = float(rng.uniform(w / 2.0, 1.0 - w / 2.0))
            cy = float(rng.uniform(h / 2.0, 1.0 - h / 2.0))
            box = Box(cx, cy, w, h)
            if all(iou(box.as_array(), e.box.as_array()) < 0.8 for e in entities):
                entities.append(SceneEntity(box, int(labels[idx]), idx))
                placed = True
                break
        if not placed:
            return None
    return entities


# -- dataset files -------------------------------------------------------------
@dataclass
class SceneRecord:
    seed: int
    raster: np.ndarray  # [S,S,3] float64 in [0,1]
    graph: SceneGraph


@dataclass
class Dataset:
    world: WorldConfig
    records: list[SceneRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def generate_dataset(seed_start: int, count: int, world: WorldConfig) -> Dataset:
    """Scenes for the disjoint seed range [seed_start, seed_start + count)."""
    records = []
    for seed in range(seed_start, seed_start + count):
        raster, graph = generate_scene(seed, world)
        records.append(SceneRecord(seed, raster, graph))
    return Dataset(world, records)


def _record_checksum(raster_u8: np.ndarray, graph_json: dict) -> str:
    digest = hashlib.sha256()
    digest.update(raster_u8.tobytes())
    digest.update(json.dumps(graph_json, sort_keys=True, separators=(",", ":")).encode())
    return digest.hexdigest()


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    """Line-delimited records: JSON header, then base64 raster + graph + checksum."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION,
              "world": asdict(dataset.world), "count": len(dataset.records)}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in dataset.records:
            u8 = np.clip(np.round(rec.raster * 255.0), 0, 255).astype(np.uint8)
            graph_json = rec.graph.to_json()
            row = {
                "seed": rec.seed,
                "shape": list(u8.shape),
                "raster": base64.b64encode(u8.tobytes()).decode("ascii"),
                "graph": graph_json,
                "checksum": _record_checksum(u8, graph_json),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    """Load and fully validate a dataset file; errors carry the line number."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"bad header: {exc}", line=1) from exc
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise DatasetError("unrecognized dataset format/version", line=1)
    world = WorldConfig(**header["world"])
    expected = int(header["count"])
    if len(lines) - 1 != expected:
        raise DatasetError(f"expected {expected} records, file has {len(lines) - 1}",
                           line=len(lines) + 1)

    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"bad record: {exc}", line=lineno) from exc
        try:
            shape = tuple(int(x) for x in row["shape"])
            u8 = np.frombuffer(base64.b64decode(row["raster"]), dtype=np.uint8).reshape(shape)
            graph_json = row["graph"]
            if _record_checksum(u8, graph_json) != row["checksum"]:
                raise DatasetError("checksum mismatch", line=lineno)
            graph = SceneGraph.from_json(graph_json)
            graph.validate(world)
            rederived = set(derive_relations(graph.entities, world))
            if rederived != set(graph.relations):
                raise DatasetError("relations inconsistent with stored boxes", line=lineno)
        except DatasetError:
            raise
        except (KeyError, ValueError) as exc:
            raise DatasetError(str(exc), line=lineno) from exc
        records.append(SceneRecord(int(row["seed"]), u8.astype(np.float64) / 255.0, graph))
    return Dataset(world, records)
