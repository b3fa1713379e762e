"""Builders for the four architectures and the sequential model container."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigurationError
from ..grad import Engine
from ..pqc import QuantumLayerShape, quanv_output_size
from .layers import (BatchNorm, Conv2d, Dense, Flatten, Layer, MaxPool2d, ParallelQuantumDense,
                     Quanv2d, ReLU)


class Variant(enum.Enum):
    HQNN_PARALLEL = "HQNN_PARALLEL"
    HQNN_QUANV = "HQNN_QUANV"
    CNN1 = "CNN1"
    CNN4 = "CNN4"


DEFAULTS = {
    Variant.HQNN_PARALLEL: dict(qubits=5, depth=3, circuits=4, features=None, conv1=16, conv2=32,
                                image_size=28, classes=10, engine="adjoint", quantum=True),
    Variant.HQNN_QUANV: dict(stride=4, image_size=14, classes=10, engine="adjoint"),
    Variant.CNN1: dict(stride=4, image_size=14, classes=10, channels=1),
    Variant.CNN4: dict(stride=4, image_size=14, classes=10, channels=4),
}


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    options: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, variant, overrides: Optional[dict] = None) -> "ModelSpec":
        variant = Variant(variant)
        options = dict(DEFAULTS[variant])
        for key, value in (overrides or {}).items():
            if key not in options:
                raise ConfigurationError(f"unknown option {key!r} for {variant.value}")
            options[key] = value
        if variant is Variant.HQNN_PARALLEL:
            n = options["qubits"] * options["circuits"]
            if options["features"] is None:
                options["features"] = n
            elif options["features"] != n:
                raise ConfigurationError(f"features n={options['features']} must equal qubits*circuits = {n}")
        return cls(variant, options)


class Model:
    def __init__(self, spec: ModelSpec, layers: list[tuple[str, Layer]]):
        self.spec = spec
        self.layers = list(layers)
        if self.layers:
            self.layers[0][1].needs_input_grad = False

    @property
    def variant(self) -> Variant:
        return self.spec.variant

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        for _, layer in self.layers:
            x = layer.forward(x, training)
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> None:
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)

    def trace_shapes(self, x: np.ndarray) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for name, layer in self.layers:
            x = layer.forward(x, training=False)
            shapes.append((name, x.shape))
        return shapes

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{name}.{key}": arr for name, layer in self.layers for key, arr in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{name}.{key}": arr for name, layer in self.layers for key, arr in layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{name}.{key}": arr for name, layer in self.layers for key, arr in layer.buffers.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Every array needed to reproduce the model: parameters then running statistics."""
        return {**self.parameters(), **self.buffers()}

    def set_array(self, qualified: str, value: np.ndarray) -> None:
        name, key = qualified.rsplit(".", 1)
        for lname, layer in self.layers:
            if lname != name:
                continue
            store = layer.params if key in layer.params else layer.buffers
            if key not in store:
                break
            if store[key].shape != value.shape:
                raise ConfigurationError(f"{qualified}: shape {value.shape} != {store[key].shape}")
            store[key][...] = value
            return
        raise ConfigurationError(f"model has no array named {qualified!r}")

    def set_engine(self, engine) -> None:
        for _, layer in self.layers:
            if hasattr(layer, "engine"):
                layer.engine = Engine(engine)


def _hqnn_parallel(o: dict, rng) -> list[tuple[str, Layer]]:
    size = o["image_size"]
    if size % 4:
        raise ConfigurationError(f"image size must be divisible by 4, got {size}")
    flat = o["conv2"] * (size // 4) ** 2
    n = o["features"]
    layers = [
        ("conv1", Conv2d(1, o["conv1"], 5, stride=1, padding=2, rng=rng)),
        ("bn1", BatchNorm(o["conv1"])), ("relu1", ReLU()), ("pool1", MaxPool2d(2)),
        ("conv2", Conv2d(o["conv1"], o["conv2"], 5, stride=1, padding=2, rng=rng)),
        ("bn2", BatchNorm(o["conv2"])), ("relu2", ReLU()), ("pool2", MaxPool2d(2)),
        ("flatten", Flatten()),
        ("fc1", Dense(flat, n, rng=rng)), ("bn3", BatchNorm(n)), ("relu3", ReLU()),
    ]
    if o["quantum"]:
        shape = QuantumLayerShape(q=o["qubits"], i=o["depth"], c=o["circuits"])
        layers.append(("quantum", ParallelQuantumDense(shape, o["engine"], rng=rng)))
    layers += [("bn4", BatchNorm(n)), ("relu4", ReLU()), ("fc2", Dense(n, o["classes"], rng=rng))]
    return layers


def _hqnn_quanv(o: dict, rng) -> list[tuple[str, Layer]]:
    oh, ow = quanv_output_size(o["image_size"], o["image_size"], o["stride"])
    return [("quanv", Quanv2d(o["stride"], o["engine"], rng=rng)), ("flatten", Flatten()),
            ("fc", Dense(4 * oh * ow, o["classes"], rng=rng))]


def _cnn(o: dict, rng) -> list[tuple[str, Layer]]:
    oh, ow = quanv_output_size(o["image_size"], o["image_size"], o["stride"])
    ch = o["channels"]
    return [("conv", Conv2d(1, ch, 2, stride=o["stride"], padding=0, bias=False, rng=rng)),
            ("flatten", Flatten()), ("fc", Dense(ch * oh * ow, o["classes"], rng=rng))]


_BUILDERS = {Variant.HQNN_PARALLEL: _hqnn_parallel, Variant.HQNN_QUANV: _hqnn_quanv,
             Variant.CNN1: _cnn, Variant.CNN4: _cnn}


def build_model(variant, overrides: Optional[dict] = None, seed: int = 0) -> Model:
    spec = ModelSpec.resolve(variant, overrides)
    rng = np.random.default_rng(seed)
    return Model(spec, _BUILDERS[spec.variant](spec.options, rng))


@dataclass
class ParamTable:
    rows: list[tuple[str, str, int]]

    @property
    def total(self) -> int:
        return sum(r[2] for r in self.rows)

    def format(self) -> str:
        width = max([len(r[1]) for r in self.rows] + [10])
        lines = [f"{'layer':<10} {'kind':<{width}} {'params':>8}"]
        lines += [f"{name:<10} {desc:<{width}} {count:>8}" for name, desc, count in self.rows]
        lines.append(f"total {self.total}")
        return "\n".join(lines)


def count_parameters(model: Model) -> ParamTable:
    """Trainable entries per layer; batch-norm running statistics are not counted."""
    rows = [(name, layer.describe(), int(sum(a.size for a in layer.params.values())))
            for name, layer in model.layers]
    return ParamTable(rows)
