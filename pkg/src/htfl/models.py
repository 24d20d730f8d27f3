"""Model zoo: heterogeneous client architectures behind a uniform interface.

Every model is extractor -> adapter -> head. The adapter maps the raw
extractor output to a fixed feature width so that feature-space methods
can exchange knowledge across architectures: average pooling when the raw
width is a multiple of the feature width, otherwise a learned projection.
The head is a linear classifier, optionally with hidden layers for
head-heterogeneous groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ModelError
from .tensor import Tensor

CONV_KERNEL = 9
POOL_KERNEL = 2


@dataclass(frozen=True)
class MlpExtractor:
    widths: tuple[int, ...]

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ModelError(f"MLP widths must be positive, got {self.widths}")


@dataclass(frozen=True)
class Cnn1dExtractor:
    """Sensor-style CNN: (conv k=9 -> relu -> avgpool 2) blocks, then two FC layers."""

    conv_layers: int
    stride: int
    channels: int = 8
    fc_widths: tuple[int, int] | None = None  # None: derived as (2*feature_dim, feature_dim)

    def __post_init__(self):
        if not (1 <= self.conv_layers <= 3):
            raise ModelError(f"conv_layers must be in 1..3, got {self.conv_layers}")
        if not (1 <= self.stride <= 3):
            raise ModelError(f"stride must be in 1..3, got {self.stride}")
        if self.channels < 1:
            raise ModelError(f"channels must be positive, got {self.channels}")


@dataclass(frozen=True)
class ModelSpec:
    extractor: MlpExtractor | Cnn1dExtractor
    feature_dim: int = 512
    head_hidden: int = 0  # hidden head layers of width feature_dim

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ModelError(f"feature_dim must be positive, got {self.feature_dim}")
        if not (0 <= self.head_hidden <= 3):
            raise ModelError(f"head_hidden must be in 0..3, got {self.head_hidden}")


@dataclass(frozen=True)
class ModelGroup:
    name: str
    specs: tuple[ModelSpec, ...]

    def __post_init__(self):
        if not self.specs:
            raise ModelError(f"model group '{self.name}' is empty")
        dims = {s.feature_dim for s in self.specs}
        if len(dims) != 1:
            raise ModelError(f"group '{self.name}' mixes feature dims {sorted(dims)}")

    @property
    def degree(self) -> int:
        return len(self.specs)

    @property
    def feature_dim(self) -> int:
        return self.specs[0].feature_dim

    @property
    def heterogeneous_heads(self) -> bool:
        return len({s.head_hidden for s in self.specs}) > 1


def assign_model(client_id: int, group: ModelGroup) -> ModelSpec:
    """Client i runs spec i mod group-degree."""
    if client_id < 0:
        raise ModelError(f"client id must be non-negative, got {client_id}")
    return group.specs[client_id % group.degree]


def _plan(spec: ModelSpec, in_shape: tuple, num_classes: int):
    """Walk the architecture and list every parameter with its shape and fan-in.

    Returns (entries, info); entries are (name, shape, fan_in) in creation
    order, info carries the dims the forward pass needs.
    """
    if num_classes < 2:
        raise ModelError(f"need >= 2 classes, got {num_classes}")
    k = spec.feature_dim
    entries: list[tuple[str, tuple, int]] = []
    info: dict = {"feature_dim": k}
    ext = spec.extractor
    if isinstance(ext, MlpExtractor):
        d = int(np.prod(in_shape))
        prev = d
        for i, w in enumerate(ext.widths):
            entries.append((f"ext.{i}.w", (prev, w), prev))
            entries.append((f"ext.{i}.b", (w,), prev))
            prev = w
        info["flat_in"] = d
        raw = prev
    elif isinstance(ext, Cnn1dExtractor):
        if len(in_shape) != 2:
            raise ModelError(
                f"CNN1D extractor needs (channels, length) inputs, got shape {in_shape}"
            )
        c_in, length = in_shape
        strides = []
        for i in range(ext.conv_layers):
            c_out = ext.channels * (2**i)
            if length < CONV_KERNEL:
                raise ModelError(
                    f"input length {length} too short for conv kernel {CONV_KERNEL} "
                    f"at layer {i}"
                )
            entries.append((f"ext.conv{i}.w", (c_out, c_in, CONV_KERNEL), c_in * CONV_KERNEL))
            entries.append((f"ext.conv{i}.b", (c_out,), c_in * CONV_KERNEL))
            length = (length - CONV_KERNEL) // ext.stride + 1
            length = length // POOL_KERNEL
            if length < 1:
                raise ModelError(f"feature length collapsed to 0 after conv layer {i}")
            strides.append(ext.stride)
            c_in = c_out
        flat = c_in * length
        fc_widths = ext.fc_widths if ext.fc_widths is not None else (2 * k, k)
        prev = flat
        for i, w in enumerate(fc_widths):
            entries.append((f"ext.fc{i}.w", (prev, w), prev))
            entries.append((f"ext.fc{i}.b", (w,), prev))
            prev = w
        info.update(conv_strides=strides, flat_after_conv=flat, fc_widths=fc_widths)
        raw = prev
    else:
        raise ModelError(f"unknown extractor type {type(ext).__name__}")

    info["raw_width"] = raw
    if raw % k == 0:
        info["adapter"] = "pool"
    else:
        info["adapter"] = "linear"
        entries.append(("adapt.w", (raw, k), raw))
        entries.append(("adapt.b", (k,), raw))

    prev = k
    for i in range(spec.head_hidden):
        entries.append((f"head.{i}.w", (prev, k), prev))
        entries.append((f"head.{i}.b", (k,), prev))
        prev = k
    entries.append(("head.out.w", (prev, num_classes), prev))
    entries.append(("head.out.b", (num_classes,), prev))
    return entries, info


def parameter_count(spec: ModelSpec, in_shape: tuple, num_classes: int) -> int:
    entries, _ = _plan(spec, in_shape, num_classes)
    return int(sum(np.prod(shape) for _, shape, _ in entries))


def init_params(entries, seed) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in in entries:
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            bound = float(np.sqrt(6.0 / fan_in))
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True)
    return params


class ModelInstance:
    """A built model: parameter tensors plus the forward pass."""

    def __init__(self, spec: ModelSpec, in_shape: tuple, num_classes: int, seed):
        self.spec = spec
        self.in_shape = tuple(in_shape)
        self.num_classes = num_classes
        entries, info = _plan(spec, in_shape, num_classes)
        self.info = info
        self.params = init_params(entries, seed)

    def section(self, prefix: str) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if n.startswith(prefix + ".")}

    @property
    def head_params(self) -> dict[str, Tensor]:
        return self.section("head")

    def load_section(self, prefix: str, tensors: dict[str, np.ndarray]):
        """Copy downloaded arrays into the named section, in place."""
        own = self.section(prefix)
        if set(own) != set(tensors):
            raise ModelError(
                f"section '{prefix}' keys {sorted(own)} do not match {sorted(tensors)}"
            )
        for name, arr in tensors.items():
            if own[name].data.shape != arr.shape:
                raise ModelError(
                    f"shape mismatch for '{name}': {own[name].data.shape} vs {arr.shape}"
                )
            own[name].data[...] = arr

    def export_section(self, prefix: str) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.section(prefix).items()}

    def _extract(self, x: Tensor) -> Tensor:
        ext = self.spec.extractor
        p = self.params
        if isinstance(ext, MlpExtractor):
            h = x
            if len(h.shape) > 2:
                h = T.reshape(h, (h.shape[0], -1))
            for i in range(len(ext.widths)):
                h = T.relu(T.add(T.matmul(h, p[f"ext.{i}.w"]), p[f"ext.{i}.b"]))
            return h
        h = x
        if len(h.shape) != 3 or h.shape[1:] != self.in_shape:
            raise ModelError(f"expected input shape (B, {self.in_shape}), got {h.shape}")
        for i, stride in enumerate(self.info["conv_strides"]):
            w = p[f"ext.conv{i}.w"]
            b = T.reshape(p[f"ext.conv{i}.b"], (1, -1, 1))
            h = T.relu(T.add(T.conv1d(h, w, stride), b))
            h = T.avg_pool1d(h, POOL_KERNEL)
        h = T.reshape(h, (h.shape[0], -1))
        for i in range(len(self.info["fc_widths"])):
            h = T.relu(T.add(T.matmul(h, p[f"ext.fc{i}.w"]), p[f"ext.fc{i}.b"]))
        return h

    def _adapt(self, raw: Tensor) -> Tensor:
        if self.info["adapter"] == "pool":
            return T.adapter_pool(raw, self.info["feature_dim"])
        return T.add(T.matmul(raw, self.params["adapt.w"]), self.params["adapt.b"])

    def head_forward(self, features) -> Tensor:
        h = features if isinstance(features, Tensor) else Tensor(features)
        p = self.params
        for i in range(self.spec.head_hidden):
            h = T.relu(T.add(T.matmul(h, p[f"head.{i}.w"]), p[f"head.{i}.b"]))
        return T.add(T.matmul(h, p["head.out.w"]), p["head.out.b"])

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Returns (features, logits); features have width feature_dim."""
        xt = x if isinstance(x, Tensor) else Tensor(x)
        features = self._adapt(self._extract(xt))
        return features, self.head_forward(features)

    def predict(self, x) -> np.ndarray:
        _, logits = self.forward(x)
        return logits.data


def build(spec: ModelSpec, in_shape: tuple, num_classes: int, seed) -> ModelInstance:
    return ModelInstance(spec, in_shape, num_classes, seed)


class HeadNet:
    """Standalone classifier head, used for server-side head training."""

    def __init__(self, feature_dim: int, num_classes: int, head_hidden: int, seed):
        entries = []
        prev = feature_dim
        for i in range(head_hidden):
            entries.append((f"head.{i}.w", (prev, feature_dim), prev))
            entries.append((f"head.{i}.b", (feature_dim,), prev))
            prev = feature_dim
        entries.append(("head.out.w", (prev, num_classes), prev))
        entries.append(("head.out.b", (num_classes,), prev))
        self.head_hidden = head_hidden
        self.params = init_params(entries, seed)

    def forward(self, features) -> Tensor:
        h = features if isinstance(features, Tensor) else Tensor(features)
        for i in range(self.head_hidden):
            h = T.relu(T.add(T.matmul(h, self.params[f"head.{i}.w"]), self.params[f"head.{i}.b"]))
        return T.add(T.matmul(h, self.params["head.out.w"]), self.params["head.out.b"])

    def export(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}


def builtin_groups(feature_dim: int = 512) -> dict[str, ModelGroup]:
    """The named architecture groups the benchmark ships with."""
    k = feature_dim

    def cnn(layers, stride):
        return ModelSpec(Cnn1dExtractor(conv_layers=layers, stride=stride), feature_dim=k)

    def mlp(*widths, head_hidden=0):
        return ModelSpec(MlpExtractor(tuple(widths)), feature_dim=k, head_hidden=head_hidden)

    sen8 = (
        cnn(1, 1), cnn(1, 2), cnn(1, 3),
        cnn(2, 1), cnn(2, 2), cnn(2, 3),
        cnn(3, 1), cnn(3, 2),
    )
    mlp8 = (
        mlp(4 * k),
        mlp(2 * k, k),
        mlp(2 * k, 2 * k, k),
        mlp(k),
        mlp(4 * k, 2 * k),
        mlp(k, k),
        mlp(2 * k),
        mlp(4 * k, 2 * k, k, k),
    )
    groups = {
        "sen-2": ModelGroup("sen-2", (cnn(2, 1), cnn(2, 2))),
        "sen-3": ModelGroup("sen-3", (cnn(2, 1), cnn(2, 2), cnn(2, 3))),
        "sen-5": ModelGroup(
            "sen-5", (cnn(2, 1), cnn(2, 2), cnn(2, 3), cnn(1, 1), cnn(3, 1))
        ),
        "sen-8": ModelGroup("sen-8", sen8),
        "mlp-2": ModelGroup("mlp-2", mlp8[:2]),
        "mlp-4": ModelGroup("mlp-4", mlp8[:4]),
        "mlp-8": ModelGroup("mlp-8", mlp8),
        "mlp-htc-4": ModelGroup(
            "mlp-htc-4", tuple(mlp(2 * k, k, head_hidden=h) for h in range(4))
        ),
        "htm-8": ModelGroup(
            "htm-8",
            tuple(
                ModelSpec(s.extractor, feature_dim=k, head_hidden=i % 4)
                for i, s in enumerate(mlp8)
            ),
        ),
    }
    return groups


def get_group(name: str, feature_dim: int = 512) -> ModelGroup:
    groups = builtin_groups(feature_dim)
    if name not in groups:
        raise ModelError(f"unknown model group '{name}'; known: {sorted(groups)}")
    return groups[name]


def auxiliary_spec(group: ModelGroup, in_shape: tuple, num_classes: int) -> ModelSpec:
    """The group's smallest member by parameter count; ties keep group order."""
    counts = [parameter_count(s, in_shape, num_classes) for s in group.specs]
    best = int(np.argmin(counts))
    spec = group.specs[best]
    # the shared auxiliary model always uses a plain linear head
    if spec.head_hidden != 0:
        spec = ModelSpec(spec.extractor, feature_dim=spec.feature_dim, head_hidden=0)
    return spec
