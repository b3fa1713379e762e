"""Parameterized circuits used by the hybrid models.

Two circuit families are provided:

* the parallel quantum dense layer: ``c`` independent ``q``-qubit circuits,
  each with an RX angle embedding, ``i`` strongly entangling repetitions
  (ROT on every wire followed by a range-1 CNOT ring) and a Pauli-Y readout
  on every wire;
* the quanvolution kernel: a 4-qubit circuit fed by one 2x2 pixel patch
  (RY(pi * pixel) embedding), one trainable RY per wire, a CNOT chain
  0->1->2->3 and a Pauli-Z readout per wire.

A :class:`CircuitSpec` compiles its layout into a flat tuple of elementary
:class:`Op` records (RX/RY/RZ/CNOT).  Every parameterized op reads its angle
as ``scale * source[..., index]`` where ``source`` is either the feature
vector ``x`` or the trainable vector ``theta``; the gradient engines in
:mod:`hqnn.grad` work off exactly this table.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import qsim
from .errors import ConfigurationError, ShapeError
from .qsim import GateKind, Pauli

INPUT = "x"
PARAM = "theta"


class Embedding(enum.Enum):
    ANGLE_RX = "angle_rx"
    ANGLE_RY_SCALED = "angle_ry_scaled"


_EMBEDDING_GATE = {Embedding.ANGLE_RX: (GateKind.RX, 1.0),
                   Embedding.ANGLE_RY_SCALED: (GateKind.RY, np.pi)}


@dataclass(frozen=True)
class Op:
    kind: GateKind
    wires: tuple[int, ...]
    source: Optional[str] = None
    index: int = -1
    scale: float = 1.0

    @property
    def parameterized(self) -> bool:
        return self.source is not None


@dataclass(frozen=True)
class QuantumLayerShape:
    """Layout of a parallel quantum dense layer: ``c`` circuits of ``q`` qubits and depth ``i``."""

    q: int
    i: int
    c: int

    def __post_init__(self):
        if not 1 <= self.q <= qsim.MAX_QUBITS:
            raise ConfigurationError(f"qubits per circuit must be in 1..{qsim.MAX_QUBITS}, got {self.q}")
        if self.i < 0 or self.c < 1:
            raise ConfigurationError(f"invalid depth/circuit count ({self.i}, {self.c})")

    @property
    def n(self) -> int:
        return self.q * self.c

    @property
    def params_per_circuit(self) -> int:
        return 3 * self.i * self.q

    @classmethod
    def from_features(cls, n: int, q: int, i: int) -> "QuantumLayerShape":
        if n % q:
            raise ConfigurationError(f"feature count {n} is not divisible by qubit count {q}")
        return cls(q=q, i=i, c=n // q)


@dataclass(frozen=True)
class CircuitSpec:
    """A compiled circuit template acting on one feature chunk."""

    num_qubits: int
    ops: tuple[Op, ...]
    readout: Pauli
    num_inputs: int
    num_params: int
    embedding: Optional[Embedding] = None
    depth: int = 0
    entangler: str = "ring"
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not 1 <= self.num_qubits <= qsim.MAX_QUBITS:
            raise ConfigurationError(f"qubit count must be in 1..{qsim.MAX_QUBITS}, got {self.num_qubits}")

    @property
    def num_outputs(self) -> int:
        return self.num_qubits

    def describe(self) -> dict[str, str]:
        return {"name": self.name, "qubits": str(self.num_qubits), "depth": str(self.depth),
                "embedding": self.embedding.value if self.embedding else "none",
                "entangler": self.entangler, "readout": self.readout.name,
                "params": str(self.num_params)}


def _ring(q: int) -> list[tuple[int, int]]:
    if q < 2:
        return []
    return [(w, (w + 1) % q) for w in range(q)]


def parallel_circuit_spec(q: int, depth: int) -> CircuitSpec:
    """One circuit of the parallel quantum dense layer (RX embedding, ROT + CNOT ring, <Y> readout)."""
    if not 1 <= q <= qsim.MAX_QUBITS:
        raise ConfigurationError(f"qubits per circuit must be in 1..{qsim.MAX_QUBITS}, got {q}")
    if depth < 0:
        raise ConfigurationError(f"depth must be >= 0, got {depth}")
    ops = [Op(GateKind.RX, (w,), INPUT, w) for w in range(q)]
    for layer in range(depth):
        for w in range(q):
            base = (layer * q + w) * 3
            # ROT(a, b, c) = RZ(c) RY(b) RZ(a)
            ops.append(Op(GateKind.RZ, (w,), PARAM, base))
            ops.append(Op(GateKind.RY, (w,), PARAM, base + 1))
            ops.append(Op(GateKind.RZ, (w,), PARAM, base + 2))
        ops.extend(Op(GateKind.CNOT, pair) for pair in _ring(q))
    return CircuitSpec(num_qubits=q, ops=tuple(ops), readout=Pauli.PAULI_Y, num_inputs=q,
                       num_params=3 * depth * q, embedding=Embedding.ANGLE_RX, depth=depth,
                       entangler="ring", name="parallel")


QUANV_QUBITS = 4
QUANV_PARAMS = 4


def quanv_kernel_spec() -> CircuitSpec:
    """The 4-qubit quanvolution kernel (RY(pi p) embedding, RY(theta), CNOT chain, <Z> readout)."""
    ops = [Op(GateKind.RY, (w,), INPUT, w, np.pi) for w in range(QUANV_QUBITS)]
    ops += [Op(GateKind.RY, (w,), PARAM, w) for w in range(QUANV_QUBITS)]
    ops += [Op(GateKind.CNOT, (w, w + 1)) for w in range(QUANV_QUBITS - 1)]
    return CircuitSpec(num_qubits=QUANV_QUBITS, ops=tuple(ops), readout=Pauli.PAULI_Z,
                       num_inputs=QUANV_QUBITS, num_params=QUANV_PARAMS,
                       embedding=Embedding.ANGLE_RY_SCALED, depth=1, entangler="chain", name="quanv")


def quantum_param_count(shape: Union[QuantumLayerShape, CircuitSpec]) -> int:
    if isinstance(shape, CircuitSpec):
        return shape.num_params
    return shape.q * 3 * shape.i * shape.c


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _check_inputs(spec: CircuitSpec, x: np.ndarray, theta: np.ndarray) -> None:
    if x.shape[-1:] != (spec.num_inputs,):
        raise ShapeError(f"circuit takes {spec.num_inputs} features, got trailing shape {x.shape[-1:]}")
    if theta.shape[-1:] != (spec.num_params,):
        raise ShapeError(f"circuit takes {spec.num_params} parameters, got trailing shape {theta.shape[-1:]}")


def op_angle(op: Op, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    src = x if op.source == INPUT else theta
    return op.scale * src[..., op.index]


def op_gate(op: Op, angle=None) -> qsim.Gate:
    if op.kind is GateKind.CNOT:
        return qsim.CNOT(*op.wires)
    return qsim.Gate(op.kind, op.wires, (angle,))


def batch_shape(x: np.ndarray, theta: np.ndarray) -> tuple[int, ...]:
    return np.broadcast_shapes(x.shape[:-1], theta.shape[:-1])


def prepare_state(spec: CircuitSpec, x, theta) -> np.ndarray:
    """Run every op of ``spec`` on |0...0>; batch axes come from broadcasting ``x`` and ``theta``."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    _check_inputs(spec, x, theta)
    state = qsim.new_zero_state(spec.num_qubits, batch_shape(x, theta))
    for op in spec.ops:
        gate = op_gate(op, op_angle(op, x, theta) if op.parameterized else None)
        state = qsim.apply_gate(state, gate)
    return state


def readout(spec: CircuitSpec, state: np.ndarray) -> np.ndarray:
    """Expectation of the readout Pauli on every wire; shape ``batch + (q,)``."""
    values = [qsim.expectation(state, qsim.Observable(spec.readout, w)) for w in range(spec.num_qubits)]
    return np.stack([np.asarray(v) for v in values], axis=-1)


def run_circuit(spec: CircuitSpec, x, theta) -> np.ndarray:
    """Per-wire expectation values of one circuit (batched over leading axes)."""
    return readout(spec, prepare_state(spec, x, theta))


def embed_angles(state: np.ndarray, features, kind: Embedding) -> np.ndarray:
    """Rotate wire ``w`` by ``features[..., w]`` (RX) or ``pi * features[..., w]`` (RY)."""
    features = np.asarray(features, dtype=np.float64)
    n = qsim.num_qubits(state)
    if features.shape[-1:] != (n,):
        raise ShapeError(f"{n}-qubit embedding needs {n} features, got trailing shape {features.shape[-1:]}")
    gate_kind, scale = _EMBEDDING_GATE[kind]
    for w in range(n):
        state = qsim.apply_gate(state, qsim.Gate(gate_kind, (w,), (scale * features[..., w],)))
    return state


def entangling_block(state: np.ndarray, theta_layer) -> np.ndarray:
    """One strongly entangling repetition: ROT(theta[w]) on each wire, then the CNOT ring."""
    theta_layer = np.asarray(theta_layer, dtype=np.float64)
    n = qsim.num_qubits(state)
    if theta_layer.shape[-2:] != (n, 3):
        raise ShapeError(f"expected ({n}, 3) rotation angles, got {theta_layer.shape}")
    for w in range(n):
        a, b, c = (theta_layer[..., w, k] for k in range(3))
        state = qsim.apply_gate(state, qsim.ROT(w, a, b, c))
    for control, target in _ring(n):
        state = qsim.apply_cnot(state, control, target)
    return state


# ---------------------------------------------------------------------------
# layer-level evaluation
# ---------------------------------------------------------------------------

def split_chunks(x: np.ndarray, q: int) -> np.ndarray:
    """(..., n) -> (..., c, q) with consecutive chunks."""
    n = x.shape[-1]
    if n % q:
        raise ShapeError(f"feature count {n} is not divisible by qubit count {q}")
    return x.reshape(x.shape[:-1] + (n // q, q))


def eval_parallel_quantum_layer(x, theta, shape: QuantumLayerShape) -> np.ndarray:
    """Split ``x`` into ``c`` chunks of ``q``, run each circuit and concatenate outputs.

    ``theta`` is laid out as ``[circuit][layer][wire][axis]`` (any shape with
    ``c * i * q * 3`` elements).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != shape.n:
        raise ShapeError(f"layer takes {shape.n} features, got {x.shape[-1]}")
    theta = np.asarray(theta, dtype=np.float64).reshape(shape.c, shape.params_per_circuit)
    spec = parallel_circuit_spec(shape.q, shape.i)
    out = run_circuit(spec, split_chunks(x, shape.q), theta)
    return out.reshape(out.shape[:-2] + (shape.n,))


def eval_quanv_kernel(patch, theta) -> np.ndarray:
    """Four channel values for a 2x2 patch (row-major onto wires 0..3)."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-2:] == (2, 2):
        patch = patch.reshape(patch.shape[:-2] + (4,))
    return run_circuit(quanv_kernel_spec(), patch, np.asarray(theta, dtype=np.float64))


def quanv_output_size(h: int, w: int, stride: int, kernel: int = 2) -> tuple[int, int]:
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if h < kernel or w < kernel:
        raise ShapeError(f"image {h}x{w} smaller than the {kernel}x{kernel} kernel")
    return (h - kernel) // stride + 1, (w - kernel) // stride + 1


def extract_patches(image: np.ndarray, stride: int, kernel: int = 2) -> np.ndarray:
    """(..., H, W) -> (..., H', W', kernel*kernel) row-major windows; overhanging windows are dropped."""
    h, w = image.shape[-2:]
    oh, ow = quanv_output_size(h, w, stride, kernel)
    windows = np.lib.stride_tricks.sliding_window_view(image, (kernel, kernel), axis=(-2, -1))
    windows = windows[..., : (oh - 1) * stride + 1: stride, : (ow - 1) * stride + 1: stride, :, :]
    return windows.reshape(windows.shape[:-2] + (kernel * kernel,))


def quanvolve(image, theta, stride: int) -> np.ndarray:
    """Slide the quantum kernel over ``image`` (..., H, W); returns (..., 4, H', W')."""
    image = np.asarray(image, dtype=np.float64)
    patches = extract_patches(image, stride)
    out = run_circuit(quanv_kernel_spec(), patches, np.asarray(theta, dtype=np.float64))
    return np.moveaxis(out, -1, -3)
