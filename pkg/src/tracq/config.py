"""Experiment configuration (INI round trip) and run manifests.

The config file is plain key=value text with sections; every field has a
default and unknown sections or keys are rejected. A run manifest snapshots
the fully resolved config plus seeds, versions, timings and metric results,
and is written atomically so a finished run is always self-describing.
"""

from __future__ import annotations

import configparser
import io
import json
import os
import subprocess
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import WorldConfig
from .models import TracqConfig
from .registry import MODEL_SELECTORS
from .train import TrainConfig

PACKAGE_VERSION = "0.1.0"


@dataclass(frozen=True)
class DataConfig:
    train_scenes: int = 512
    val_scenes: int = 128
    seed: int = 0  # train seeds [seed, seed+train), val follows disjointly


@dataclass(frozen=True)
class EvalConfig:
    k_values: tuple[int, ...] = (20, 50, 100)
    iou_threshold: float = 0.5


@dataclass(frozen=True)
class AblateConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    k_sweep: tuple[int, ...] = (1, 2, 4, 8)


@dataclass(frozen=True)
class ExperimentConfig:
    selector: str = "tracq"
    model: TracqConfig = field(default_factory=TracqConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def __post_init__(self):
        if self.selector not in MODEL_SELECTORS:
            raise ValueError(f"unknown model selector {self.selector!r}")
        if self.model.image_size != self.world.image_size:
            raise ValueError(f"model image_size {self.model.image_size} != "
                             f"world image_size {self.world.image_size}")
        if self.model.n_entity_classes != self.world.n_entity_classes:
            raise ValueError("model n_entity_classes must match the world vocabulary")
        if self.model.n_predicate_classes != self.world.n_predicate_classes:
            raise ValueError("model n_predicate_classes must match the world vocabulary")


_SECTIONS = {
    "experiment": None,  # holds the selector
    "model": TracqConfig,
    "world": WorldConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "ablate": AblateConfig,
}


def _parse_value(text: str, kind):
    text = text.strip()
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is bool:
        lowered = text.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is str:
        return text
    raise ValueError(f"unsupported config field type {kind}")


def _parse_field(text: str, f):
    hint = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if hint in ("int", "float", "bool", "str"):
        return _parse_value(text, {"int": int, "float": float, "bool": bool, "str": str}[hint])
    if hint == "int | None":
        return None if text.strip().lower() in ("none", "") else int(text)
    if hint.startswith("tuple[int"):
        stripped = text.strip()
        return tuple(int(x) for x in stripped.split(",") if x.strip()) if stripped else ()
    raise ValueError(f"cannot parse config field {f.name!r} of type {hint}")


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def config_to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser["experiment"] = {"selector": cfg.selector}
    for section, obj in (("model", cfg.model), ("world", cfg.world), ("data", cfg.data),
                         ("train", cfg.train), ("eval", cfg.eval), ("ablate", cfg.ablate)):
        parser[section] = {f.name: _render(getattr(obj, f.name)) for f in fields(obj)}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def config_from_ini(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    unknown_sections = set(parser.sections()) - set(_SECTIONS)
    if unknown_sections:
        raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")

    selector = "tracq"
    if parser.has_section("experiment"):
        extra = set(parser["experiment"]) - {"selector"}
        if extra:
            raise ValueError(f"unknown keys in [experiment]: {sorted(extra)}")
        selector = parser["experiment"].get("selector", "tracq")

    built = {}
    for section, cls in _SECTIONS.items():
        if cls is None:
            continue
        kwargs = {}
        if parser.has_section(section):
            by_name = {f.name: f for f in fields(cls)}
            for key, raw in parser[section].items():
                if key not in by_name:
                    raise ValueError(f"unknown key {key!r} in [{section}]")
                kwargs[key] = _parse_field(raw, by_name[key])
        built[section] = cls(**kwargs)
    return ExperimentConfig(selector=selector, model=built["model"], world=built["world"],
                            data=built["data"], train=built["train"], eval=built["eval"],
                            ablate=built["ablate"])


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return config_from_ini(Path(path).read_text())


def with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    """Apply a --seed override to both data generation and training."""
    if seed is None:
        return cfg
    return replace(cfg, data=replace(cfg.data, seed=seed),
                   train=replace(cfg.train, seed=seed))


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0:
            return rev.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


@dataclass
class RunManifest:
    command: str
    config_ini: str
    args: dict
    seeds: dict
    package_version: str = PACKAGE_VERSION
    code_version: str = field(default_factory=code_version)
    created_unix: float = field(default_factory=time.time)
    timings: dict = field(default_factory=dict)
    metrics: dict | None = None
    results: dict | None = None

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config_ini": self.config_ini,
            "args": self.args,
            "seeds": self.seeds,
            "package_version": self.package_version,
            "code_version": self.code_version,
            "created_unix": self.created_unix,
            "timings": self.timings,
            "metrics": self.metrics,
            "results": self.results,
        }

    def save(self, path: str | Path) -> None:
        """Atomic write: the manifest either exists complete or not at all."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        payload = json.loads(Path(path).read_text())
        return RunManifest(
            command=payload["command"], config_ini=payload["config_ini"],
            args=payload.get("args", {}), seeds=payload.get("seeds", {}),
            package_version=payload.get("package_version", "?"),
            code_version=payload.get("code_version", "?"),
            created_unix=payload.get("created_unix", 0.0),
            timings=payload.get("timings", {}), metrics=payload.get("metrics"),
            results=payload.get("results"),
        )
