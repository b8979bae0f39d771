"""Declarative layer stacks for LivenessNet and the AttackNet family.

A :class:`ModelSpec` is an immutable list of :class:`LayerSpec` entries.
Shapes and parameter counts are pure functions of the spec. The AttackNet
layer widths and skip placements are not fully pinned down by the prose
description, so they are chosen by :func:`reconstruct_to_count`, which
enumerates a small grid of block layouts and keeps those whose parameter
count equals the published total.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import tensorcore as tc

LIVENESSNET = "LivenessNet"
ATTACKNET_V1 = "AttackNetV1"
ATTACKNET_V2_1 = "AttackNetV2_1"
ATTACKNET_V2_2 = "AttackNetV2_2"
VARIANTS = (LIVENESSNET, ATTACKNET_V1, ATTACKNET_V2_1, ATTACKNET_V2_2)

# published totals at 256x256x3 input
TARGET_PARAMS = {
    LIVENESSNET: 8_406_098,
    ATTACKNET_V1: 33_588_738,
    ATTACKNET_V2_1: 33_588_738,
    ATTACKNET_V2_2: 16_806_722,
}

REFERENCE_INPUT = (256, 256, 3)
LEAKY_ALPHA = 0.2


class ReconstructionError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | bn | act | pool | dropout | flatten | dense | merge
    filters: int | None = None
    kernel: int | None = None
    units: int | None = None
    rate: float | None = None
    activation: str | None = None
    alpha: float | None = None
    mode: str | None = None  # merge: concat | add
    source: int | None = None  # merge: index of the earlier layer merged with the current output

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    dropout_conv: float = 0.25
    dropout_dense: float = 0.5
    l2: float = 1e-5

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.kind == "merge" and not (layer.source is not None and 0 <= layer.source < i):
                raise ValueError(f"layer {i}: merge must reference an earlier layer, got source={layer.source}")
        last = self.layers[-1] if self.layers else None
        prev = self.layers[-2] if len(self.layers) > 1 else None
        if not (last and last.kind == "act" and last.activation == "softmax" and prev.kind == "dense" and prev.units == 2):
            raise ValueError("a ModelSpec must end with Dense(2) + softmax")

    def to_json(self) -> str:
        body = {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "dropout_conv": self.dropout_conv,
            "dropout_dense": self.dropout_dense,
            "l2": self.l2,
            "layers": [layer.to_dict() for layer in self.layers],
        }
        return json.dumps(body, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        body = json.loads(text)
        return cls(
            name=body["name"],
            input_shape=tuple(body["input_shape"]),
            layers=tuple(LayerSpec(**d) for d in body["layers"]),
            dropout_conv=body["dropout_conv"],
            dropout_dense=body["dropout_dense"],
            l2=body["l2"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# --------------------------------------------------------------------------
# shape inference and counting
# --------------------------------------------------------------------------

def infer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Per-layer output shapes (without the batch axis)."""
    shape: tuple[int, ...] = tuple(spec.input_shape)
    shapes: list[tuple[int, ...]] = []
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        if k == "conv":
            if len(shape) != 3:
                raise tc.ShapeError(f"layer {i}: conv needs an HxWxC input, got {shape}")
            shape = (shape[0], shape[1], layer.filters)
        elif k == "pool":
            if len(shape) != 3 or shape[0] % 2 or shape[1] % 2:
                raise tc.ShapeError(f"layer {i}: pool needs even spatial dims, got {shape}")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif k == "flatten":
            shape = (int(np.prod(shape)),)
        elif k == "dense":
            if len(shape) != 1:
                raise tc.ShapeError(f"layer {i}: dense needs a flat input, got {shape}")
            shape = (layer.units,)
        elif k == "merge":
            other = shapes[layer.source]
            if layer.mode == "add":
                if other != shape:
                    raise tc.ShapeError(f"layer {i}: add merge of {other} and {shape}")
            elif layer.mode == "concat":
                if other[:-1] != shape[:-1]:
                    raise tc.ShapeError(f"layer {i}: concat merge of {other} and {shape}")
                shape = shape[:-1] + (other[-1] + shape[-1],)
            else:
                raise ValueError(f"layer {i}: unknown merge mode {layer.mode!r}")
        elif k not in ("bn", "act", "dropout"):
            raise ValueError(f"layer {i}: unknown kind {k!r}")
        shapes.append(shape)
    return shapes


def param_breakdown(spec: ModelSpec) -> tuple[int, int]:
    """(trainable, non_trainable) parameter counts.

    Batch norm owns gamma/beta (trainable) and moving mean/variance (not).
    """
    shapes = infer_shapes(spec)
    trainable = frozen = 0
    prev: tuple[int, ...] = tuple(spec.input_shape)
    for layer, out in zip(spec.layers, shapes):
        if layer.kind == "conv":
            trainable += layer.kernel * layer.kernel * prev[-1] * layer.filters + layer.filters
        elif layer.kind == "dense":
            trainable += prev[0] * layer.units + layer.units
        elif layer.kind == "bn":
            trainable += 2 * prev[-1]
            frozen += 2 * prev[-1]
        prev = out
    return trainable, frozen


def count_params(spec: ModelSpec) -> int:
    return sum(param_breakdown(spec))


# --------------------------------------------------------------------------
# block layouts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchConfig:
    """Block-level description that expands into a layer list.

    ``merge`` is a pair (i, j) of conv positions inside each block: after
    conv j (and its activation/BN) the output of conv i is merged in.
    ``bn_on_merge_tail`` controls whether conv j keeps its BN layer.
    """

    widths: tuple[int, ...]
    convs_per_block: int = 2
    merge: tuple[int, int] | None = None
    merge_mode: str | None = None
    bn_on_merge_tail: bool = True
    dense_units: int = 64
    conv_activation: str = "relu"
    dense_activation: str = "relu"

    @property
    def n_pools(self) -> int:
        return len(self.widths)

    def key(self) -> tuple:
        """Canonical ordering: fewest layers, longest skip span, then lexicographic."""
        span = 0 if self.merge is None else self.merge[1] - self.merge[0]
        return (
            n_layers(self),
            -span,
            self.widths,
            self.convs_per_block,
            self.merge or (),
            not self.bn_on_merge_tail,
            self.dense_units,
        )

    def describe(self) -> str:
        merge = "none" if self.merge is None else f"{self.merge_mode}(c{self.merge[0] + 1},c{self.merge[1] + 1})"
        bn = "" if self.merge is None or self.bn_on_merge_tail else ", no BN on merge tail"
        return f"widths={list(self.widths)} convs/block={self.convs_per_block} merge={merge}{bn} dense={self.dense_units}"


def _activation(name: str) -> LayerSpec:
    if name == "leaky_relu":
        return LayerSpec("act", activation="leaky_relu", alpha=LEAKY_ALPHA)
    return LayerSpec("act", activation=name)


def expand(config: ArchConfig, dropout_conv: float, dropout_dense: float) -> tuple[LayerSpec, ...]:
    layers: list[LayerSpec] = []
    for width in config.widths:
        outputs: list[int] = []
        for k in range(config.convs_per_block):
            layers.append(LayerSpec("conv", filters=width, kernel=3))
            layers.append(_activation(config.conv_activation))
            is_tail = config.merge is not None and k == config.merge[1]
            if not is_tail or config.bn_on_merge_tail:
                layers.append(LayerSpec("bn"))
            outputs.append(len(layers) - 1)
            if is_tail:
                layers.append(LayerSpec("merge", mode=config.merge_mode, source=outputs[config.merge[0]]))
        layers.append(LayerSpec("pool"))
        layers.append(LayerSpec("dropout", rate=dropout_conv))
    layers += [
        LayerSpec("flatten"),
        LayerSpec("dense", units=config.dense_units),
        _activation(config.dense_activation),
        LayerSpec("bn"),
        LayerSpec("dropout", rate=dropout_dense),
        LayerSpec("dense", units=2),
        LayerSpec("act", activation="softmax"),
    ]
    return tuple(layers)


def n_layers(config: ArchConfig) -> int:
    return len(expand(config, 0.0, 0.0))


def spec_from_config(name: str, config: ArchConfig, input_shape=REFERENCE_INPUT,
                     dropout_conv: float = 0.25, dropout_dense: float = 0.5, l2: float = 1e-5) -> ModelSpec:
    h, w, _ = input_shape
    div = 2 ** config.n_pools
    if h % div or w % div:
        raise tc.ShapeError(f"input {h}x{w} is not divisible by {div} (needed for {config.n_pools} pooling stages)")
    return ModelSpec(name, tuple(input_shape), expand(config, dropout_conv, dropout_dense), dropout_conv, dropout_dense, l2)


LIVENESSNET_CONFIG = ArchConfig(widths=(16, 32), convs_per_block=2, dense_units=64)


def _variant_activations(variant: str) -> tuple[str, str, str | None]:
    if variant == LIVENESSNET:
        return "relu", "relu", None
    if variant == ATTACKNET_V1:
        return "relu", "relu", "concat"
    if variant == ATTACKNET_V2_1:
        return "leaky_relu", "tanh", "concat"
    if variant == ATTACKNET_V2_2:
        return "leaky_relu", "tanh", "add"
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# --------------------------------------------------------------------------
# reconstruction search
# --------------------------------------------------------------------------

@dataclass
class SearchReport:
    variant: str
    target: int
    candidates: list[tuple[ArchConfig, int]] = field(default_factory=list)
    matches: list[ArchConfig] = field(default_factory=list)
    chosen: ArchConfig | None = None
    exact: bool = False

    def table(self) -> str:
        lines = ["| layout | params | match |", "|---|---:|:---:|"]
        for cfg, n in self.candidates:
            mark = "chosen" if cfg == self.chosen else ("yes" if n == self.target else "")
            lines.append(f"| {cfg.describe()} | {n:,} | {mark} |")
        return "\n".join(lines)


def candidate_grid(variant: str) -> list[ArchConfig]:
    conv_act, dense_act, mode = _variant_activations(variant)
    grid = []
    for n_pools in (2, 3):
        for widths in itertools.product((16, 32, 64), repeat=n_pools):
            if list(widths) != sorted(widths):
                continue
            for convs in (2, 3):
                merges = [None] if mode is None else [(i, j) for j in range(convs) for i in range(j)]
                for merge in merges:
                    for bn_tail in ((True,) if merge is None else (True, False)):
                        for units in (64, 128):
                            grid.append(ArchConfig(widths, convs, merge, mode, bn_tail, units, conv_act, dense_act))
    return grid


def reconstruct_to_count(variant: str, target_count: int, input_shape=REFERENCE_INPUT,
                         grid: list[ArchConfig] | None = None) -> SearchReport:
    """Enumerate block layouts and keep those whose parameter count hits ``target_count``.

    When nothing matches exactly the closest candidate is chosen and
    ``exact`` is False; callers must surface that as a deviation.
    """
    grid = candidate_grid(variant) if grid is None else grid
    if not grid:
        raise ReconstructionError("empty candidate grid")
    if target_count <= 0:
        raise ReconstructionError(f"target count must be positive, got {target_count}")
    report = SearchReport(variant, target_count)
    for cfg in grid:
        n = count_params(spec_from_config(variant, cfg, input_shape))
        report.candidates.append((cfg, n))
    report.matches = sorted((c for c, n in report.candidates if n == target_count), key=ArchConfig.key)
    if report.matches:
        report.chosen, report.exact = report.matches[0], True
    else:
        report.chosen = min(report.candidates, key=lambda cn: (abs(cn[1] - target_count), cn[0].key()))[0]
    return report


@lru_cache(maxsize=None)
def resolved_config(variant: str) -> ArchConfig:
    if variant == LIVENESSNET:
        return LIVENESSNET_CONFIG
    return reconstruct_to_count(variant, TARGET_PARAMS[variant]).chosen


def build_livenessnet(input_shape=REFERENCE_INPUT, dropout_conv: float = 0.25, dropout_dense: float = 0.5,
                      l2: float = 1e-5) -> ModelSpec:
    return spec_from_config(LIVENESSNET, LIVENESSNET_CONFIG, input_shape, dropout_conv, dropout_dense, l2)


def build_attacknet(variant: str, input_shape=REFERENCE_INPUT, dropout_conv: float = 0.25,
                    dropout_dense: float = 0.5, l2: float = 1e-5) -> ModelSpec:
    if variant not in VARIANTS[1:]:
        raise ValueError(f"not an AttackNet variant: {variant!r}")
    return spec_from_config(variant, resolved_config(variant), input_shape, dropout_conv, dropout_dense, l2)


def build(variant: str, input_shape=REFERENCE_INPUT, **kw) -> ModelSpec:
    if variant == LIVENESSNET:
        return build_livenessnet(input_shape, **kw)
    return build_attacknet(variant, input_shape, **kw)


def with_merges_as_add(spec: ModelSpec) -> ModelSpec:
    """Same stack with every concat merge turned into an add (shapes permitting)."""
    layers = tuple(replace(l, mode="add") if l.kind == "merge" else l for l in spec.layers)
    return replace(spec, layers=layers)


CLI_NAMES = {
    "livenessnet": LIVENESSNET,
    "attacknet-v1": ATTACKNET_V1,
    "attacknet-v2.1": ATTACKNET_V2_1,
    "attacknet-v2.2": ATTACKNET_V2_2,
}


# --------------------------------------------------------------------------
# runnable network
# --------------------------------------------------------------------------

class Network:
    """Parameters and running statistics for one ModelSpec, plus its forward pass."""

    def __init__(self, spec: ModelSpec, seed: int = 42, dtype=tc.TRAIN_DTYPE, bn_momentum: float = tc.BN_MOMENTUM):
        self.spec = spec
        self.bn_momentum = bn_momentum
        self.dtype = np.dtype(dtype)
        self.params: dict[str, tc.Tensor] = {}
        self.state: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        shapes = infer_shapes(spec)
        prev = tuple(spec.input_shape)
        for i, (layer, out) in enumerate(zip(spec.layers, shapes)):
            if layer.kind == "conv":
                k, cin, cout = layer.kernel, prev[-1], layer.filters
                self._add_param(f"{i}.kernel", _glorot(rng, (k, k, cin, cout), k * k * cin, k * k * cout))
                self._add_param(f"{i}.bias", np.zeros(cout))
            elif layer.kind == "dense":
                self._add_param(f"{i}.kernel", _glorot(rng, (prev[0], layer.units), prev[0], layer.units))
                self._add_param(f"{i}.bias", np.zeros(layer.units))
            elif layer.kind == "bn":
                c = prev[-1]
                self._add_param(f"{i}.gamma", np.ones(c))
                self._add_param(f"{i}.beta", np.zeros(c))
                self.state[f"{i}.moving_mean"] = np.zeros(c, dtype=self.dtype)
                self.state[f"{i}.moving_var"] = np.ones(c, dtype=self.dtype)
            prev = out

    def _add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = tc.Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values()) + sum(s.size for s in self.state.values())

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> tc.Tensor:
        x = x if isinstance(x, tc.Tensor) else tc.Tensor(np.asarray(x, dtype=self.dtype))
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise tc.ShapeError(f"input shape {x.shape[1:]} does not match model input {self.spec.input_shape}")
        outs: list[tc.Tensor] = []
        cur = x
        p = self.params
        for i, layer in enumerate(self.spec.layers):
            k = layer.kind
            if k == "conv":
                cur = tc.conv2d(cur, p[f"{i}.kernel"], p[f"{i}.bias"])
            elif k == "dense":
                cur = tc.dense(cur, p[f"{i}.kernel"], p[f"{i}.bias"])
            elif k == "bn":
                cur = tc.batchnorm(cur, p[f"{i}.gamma"], p[f"{i}.beta"], self.state[f"{i}.moving_mean"],
                                   self.state[f"{i}.moving_var"], training, momentum=self.bn_momentum)
            elif k == "act":
                cur = _apply_activation(layer, cur)
            elif k == "pool":
                cur = tc.maxpool2(cur)
            elif k == "dropout":
                cur = tc.dropout(cur, layer.rate, training, rng)
            elif k == "flatten":
                cur = tc.flatten(cur)
            elif k == "merge":
                other = outs[layer.source]
                cur = tc.concat_channels(other, cur) if layer.mode == "concat" else tc.add(other, cur)
            outs.append(cur)
        return cur

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Class probabilities in inference mode, batched."""
        out = []
        for start in range(0, len(x), batch_size):
            out.append(self.forward(x[start:start + batch_size], training=False).data)
        return np.concatenate(out) if out else np.zeros((0, 2), dtype=self.dtype)

    def weights(self) -> dict[str, np.ndarray]:
        arrays = {k: v.data for k, v in self.params.items()}
        arrays.update(self.state)
        return arrays

    def set_weights(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if k in self.params:
                if v.shape != self.params[k].shape:
                    raise tc.ShapeError(f"{k}: shape {v.shape} vs {self.params[k].shape}")
                self.params[k].data = np.array(v, dtype=self.dtype)
            elif k in self.state:
                self.state[k][...] = v
            else:
                raise KeyError(f"unknown weight {k!r}")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: np.array(v, copy=True) for k, v in self.weights().items()}


def _apply_activation(layer: LayerSpec, x: tc.Tensor) -> tc.Tensor:
    name = layer.activation
    if name == "relu":
        return tc.relu(x)
    if name == "leaky_relu":
        return tc.leaky_relu(x, layer.alpha if layer.alpha is not None else LEAKY_ALPHA)
    if name == "tanh":
        return tc.tanh(x)
    if name == "softmax":
        return tc.softmax(x)
    raise ValueError(f"unknown activation {name!r}")


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
