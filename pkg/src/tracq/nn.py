"""Modules, primitive layers, the AdamW optimizer and checkpoint I/O."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class TrainingError(RuntimeError):
    """Raised when optimization hits a non-finite state."""


class Parameter(Tensor):
    """A trainable tensor; modules register these under hierarchical names."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container tracking parameters and submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        object.__setattr__(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name, p in self.named_parameters():
            if name in state:
                raise ValueError(f"duplicate parameter name {name!r}")
            state[name] = p.data
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ad.ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.data.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self.add_module(str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def count_parameters(module: Module) -> int:
    return sum(p.size for p in module.parameters())


# -- layers ----------------------------------------------------------------
class Linear(Module):
    """y = x @ W + b with Xavier-uniform W and zero b."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if self.bias is None:
            return ad.matmul(x, self.weight)
        return ad.affine(x, self.weight, self.bias)


class Embedding(Module):
    """Lookup table initialized N(0, 0.02)."""

    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.table = Parameter(rng.normal(0.0, 0.02, size=(num_embeddings, dim)))

    def forward(self, ids) -> Tensor:
        return ad.take(self.table, np.asarray(ids, dtype=np.intp))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    return ad.layer_norm_op(x, gain, bias, eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    """Inverted dropout; identity when p == 0 or in eval mode."""

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        super().__init__()
        self.p = float(p)
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p <= 0.0:
            return x
        rng = self.rng if self.rng is not None else np.random.default_rng()
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(mask)


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        super().__init__()
        self.layers = ModuleList([Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)])

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = ad.relu(x)
        return x


# -- optimizer ---------------------------------------------------------------
class AdamW:
    """AdamW with decoupled weight decay; supports per-group learning rates."""

    def __init__(self, params_or_groups, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        if params_or_groups and isinstance(params_or_groups[0], dict):
            groups = params_or_groups
        else:
            groups = [{"params": list(params_or_groups)}]
        self.groups = []
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr": float(g.get("lr", lr)),
                "betas": tuple(g.get("betas", betas)),
                "eps": float(g.get("eps", eps)),
                "weight_decay": float(g.get("weight_decay", weight_decay)),
            })
        self._state: dict[int, dict] = {}

    def parameters(self) -> list[Parameter]:
        return [p for g in self.groups for p in g["params"]]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def step(self) -> None:
        for g in self.groups:
            b1, b2 = g["betas"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                if not np.isfinite(p.grad).all():
                    raise TrainingError("non-finite gradient encountered")
                st = self._state.setdefault(id(p), {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0})
                st["t"] += 1
                st["m"] = b1 * st["m"] + (1.0 - b1) * p.grad
                st["v"] = b2 * st["v"] + (1.0 - b2) * p.grad * p.grad
                m_hat = st["m"] / (1.0 - b1 ** st["t"])
                v_hat = st["v"] / (1.0 - b2 ** st["t"])
                p.data = p.data - g["lr"] * (m_hat / (np.sqrt(v_hat) + g["eps"]) + g["weight_decay"] * p.data)


# -- checkpoints --------------------------------------------------------------
CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], meta: dict) -> None:
    """Write a flat name -> array map plus a JSON meta header (.npz)."""
    header = dict(meta)
    header["format_version"] = CHECKPOINT_FORMAT_VERSION
    payload = {f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in state.items()}
    payload["meta"] = np.array(json.dumps(header, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {meta.get('format_version')!r}")
        state = {k[len("param/"):]: archive[k] for k in archive.files if k.startswith("param/")}
    return state, meta
