"""Model selector registry and checkpoint round-tripping."""

from __future__ import annotations

from dataclasses import asdict, replace
from pathlib import Path

from .baselines import DDModel, DDTRModel, EntityFirstModel, SDModel
from .models import TracqConfig, TracqModel
from .nn import Module, load_checkpoint, save_checkpoint

MODEL_SELECTORS = ("tracq", "sd", "dd", "ddtr", "tracq-entity-first",
                   "tracq-no-pred-cond", "tracq-no-refine")


def build_model(selector: str, cfg: TracqConfig, seed: int = 0) -> Module:
    if selector == "tracq":
        return TracqModel(cfg, seed)
    if selector == "tracq-no-refine":
        return TracqModel(cfg, seed, refine_at_inference=False)
    if selector == "tracq-no-pred-cond":
        return TracqModel(replace(cfg, use_predicate_conditioning=False), seed)
    if selector == "tracq-entity-first":
        return EntityFirstModel(cfg, seed)
    if selector == "sd":
        return SDModel(cfg, seed)
    if selector == "dd":
        return DDModel(cfg, seed)
    if selector == "ddtr":
        return DDTRModel(cfg, seed)
    raise ValueError(f"unknown model selector {selector!r}; choose from {MODEL_SELECTORS}")


def save_model(path: str | Path, model: Module, selector: str, seed: int, extra: dict | None = None) -> None:
    meta = {"selector": selector, "seed": int(seed), "config": asdict(model.cfg)}
    if extra:
        meta.update(extra)
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path: str | Path, selector: str | None = None) -> tuple[Module, dict]:
    """Rebuild the model named in the checkpoint header and load its weights."""
    state, meta = load_checkpoint(path)
    cfg = TracqConfig(**meta["config"])
    model = build_model(selector or meta["selector"], cfg, seed=int(meta.get("seed", 0)))
    model.load_state_dict(state)
    return model, meta


def check_config_compatible(expected: TracqConfig, meta: dict) -> None:
    """Field-by-field comparison, naming the first differing field."""
    stored = meta["config"]
    for key, value in asdict(expected).items():
        if stored.get(key) != value:
            raise ValueError(f"config mismatch on field {key!r}: expected {value}, "
                             f"checkpoint has {stored.get(key)}")
