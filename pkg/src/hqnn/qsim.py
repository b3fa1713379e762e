"""Dense statevector simulator for few-qubit circuits.

Amplitudes live in the last axis of a complex128 array of length ``2**n``;
any leading axes are batch axes, so one call can push a whole minibatch of
circuits through the same gate.  Qubit 0 is the least significant bit of the
basis index (little-endian).

Rotation conventions::

    RX(t) = exp(-i t X / 2)    RY(t) = exp(-i t Y / 2)    RZ(t) = exp(-i t Z / 2)
    ROT(a, b, c) = RZ(c) @ RY(b) @ RZ(a)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, ShapeError, WireError

MAX_QUBITS = 12

Angle = Union[float, np.ndarray]


class GateKind(enum.Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    ROT = "ROT"
    CNOT = "CNOT"

    @property
    def num_angles(self) -> int:
        return {"ROT": 3, "CNOT": 0}.get(self.value, 1)

    @property
    def num_wires(self) -> int:
        return 2 if self is GateKind.CNOT else 1


class Pauli(enum.Enum):
    PAULI_Y = "Y"
    PAULI_Z = "Z"


@dataclass(frozen=True, eq=False)
class Gate:
    """One gate instance. Angles may be arrays that broadcast over the batch axes."""

    kind: GateKind
    wires: tuple[int, ...]
    angles: tuple[Angle, ...] = ()

    def __post_init__(self):
        if len(self.wires) != self.kind.num_wires:
            raise ShapeError(f"{self.kind.value} acts on {self.kind.num_wires} wire(s), got {self.wires}")
        if len(set(self.wires)) != len(self.wires):
            raise WireError(f"{self.kind.value} wires must be distinct, got {self.wires}")
        if len(self.angles) != self.kind.num_angles:
            raise ShapeError(f"{self.kind.value} takes {self.kind.num_angles} angle(s), got {len(self.angles)}")


@dataclass(frozen=True)
class Observable:
    axis: Pauli
    wire: int


def RX(wire: int, theta: Angle) -> Gate:
    return Gate(GateKind.RX, (wire,), (theta,))


def RY(wire: int, theta: Angle) -> Gate:
    return Gate(GateKind.RY, (wire,), (theta,))


def RZ(wire: int, theta: Angle) -> Gate:
    return Gate(GateKind.RZ, (wire,), (theta,))


def ROT(wire: int, alpha: Angle, beta: Angle, gamma: Angle) -> Gate:
    return Gate(GateKind.ROT, (wire,), (alpha, beta, gamma))


def CNOT(control: int, target: int) -> Gate:
    return Gate(GateKind.CNOT, (control, target))


# ---------------------------------------------------------------------------
# state helpers
# ---------------------------------------------------------------------------

def new_zero_state(num_qubits: int, batch_shape: tuple[int, ...] = ()) -> np.ndarray:
    """Return |0...0> on ``num_qubits`` wires, optionally replicated over ``batch_shape``."""
    if not isinstance(num_qubits, (int, np.integer)) or not 1 <= num_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in 1..{MAX_QUBITS}, got {num_qubits!r}")
    state = np.zeros(tuple(batch_shape) + (2 ** int(num_qubits),), dtype=np.complex128)
    state[..., 0] = 1.0
    return state


def num_qubits(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim < 2 or 1 << n != dim:
        raise ShapeError(f"statevector length {dim} is not a power of two")
    return n


def norm_squared(state: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(state) ** 2, axis=-1)


def _check_wire(wire: int, n: int) -> None:
    if not 0 <= wire < n:
        raise WireError(f"wire {wire} outside register of {n} qubit(s)")


# ---------------------------------------------------------------------------
# gate matrices
# ---------------------------------------------------------------------------

def rotation_matrix(kind: GateKind, theta: Angle) -> np.ndarray:
    """2x2 matrix of a single-axis rotation; shape ``theta.shape + (2, 2)``."""
    t = np.asarray(theta, dtype=np.float64)
    c = np.cos(t / 2)
    s = np.sin(t / 2)
    m = np.zeros(t.shape + (2, 2), dtype=np.complex128)
    if kind is GateKind.RX:
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -1j * s
        m[..., 1, 0] = -1j * s
    elif kind is GateKind.RY:
        m[..., 0, 0] = c
        m[..., 1, 1] = c
        m[..., 0, 1] = -s
        m[..., 1, 0] = s
    elif kind is GateKind.RZ:
        m[..., 0, 0] = c - 1j * s
        m[..., 1, 1] = c + 1j * s
    else:
        raise ConfigurationError(f"{kind} is not a single-axis rotation")
    return m


def gate_matrix(gate: Gate) -> np.ndarray:
    """Local matrix of ``gate``: (..., 2, 2) for rotations, 4x4 for CNOT (control is the high bit)."""
    if gate.kind is GateKind.CNOT:
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128)
    if gate.kind is GateKind.ROT:
        a, b, c = gate.angles
        return (rotation_matrix(GateKind.RZ, c)
                @ rotation_matrix(GateKind.RY, b)
                @ rotation_matrix(GateKind.RZ, a))
    return rotation_matrix(gate.kind, gate.angles[0])


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def apply_matrix_1q(state: np.ndarray, matrix: np.ndarray, wire: int) -> np.ndarray:
    """Apply a (possibly batched) 2x2 matrix to ``wire``; returns a new array."""
    n = num_qubits(state)
    _check_wire(wire, n)
    lead = state.shape[:-1]
    s = state.reshape(lead + (1 << (n - wire - 1), 2, 1 << wire))
    a0 = s[..., 0, :]
    a1 = s[..., 1, :]
    m = matrix[..., None, None]  # (..., 2, 2, 1, 1) lines up with (..., h, l)
    out = np.empty(np.broadcast_shapes(s.shape, matrix.shape[:-2] + (1, 1, 1)), dtype=np.complex128)
    out[..., 0, :] = m[..., 0, 0, :, :] * a0 + m[..., 0, 1, :, :] * a1
    out[..., 1, :] = m[..., 1, 0, :, :] * a0 + m[..., 1, 1, :, :] * a1
    return out.reshape(out.shape[:-3] + (1 << n,))


@lru_cache(maxsize=None)
def _cnot_permutation(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n)
    flip = ((idx >> control) & 1).astype(bool)
    perm = idx.copy()
    perm[flip] ^= 1 << target
    perm.setflags(write=False)
    return perm


def apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    n = num_qubits(state)
    _check_wire(control, n)
    _check_wire(target, n)
    if control == target:
        raise WireError("CNOT control and target must differ")
    return state[..., _cnot_permutation(n, control, target)]


def apply_gate(state: np.ndarray, gate: Gate) -> np.ndarray:
    """Return ``U_gate |state>`` as a new array; the input is not modified."""
    if gate.kind is GateKind.CNOT:
        return apply_cnot(state, *gate.wires)
    return apply_matrix_1q(state, gate_matrix(gate), gate.wires[0])


def apply_gates(state: np.ndarray, gates: Iterable[Gate]) -> np.ndarray:
    for gate in gates:
        state = apply_gate(state, gate)
    return state


@lru_cache(maxsize=None)
def _bit_sign(n: int, wire: int) -> np.ndarray:
    sign = 1.0 - 2.0 * ((np.arange(1 << n) >> wire) & 1)
    sign.setflags(write=False)
    return sign


def apply_pauli(state: np.ndarray, axis: Pauli, wire: int) -> np.ndarray:
    """Return ``P_wire |state>`` for P in {Y, Z}."""
    n = num_qubits(state)
    _check_wire(wire, n)
    sign = _bit_sign(n, wire)
    if axis is Pauli.PAULI_Z:
        return state * sign
    # Y|0> = i|1>, Y|1> = -i|0>: the amplitude landing on a bit-0 slot came from bit 1.
    flipped = state[..., np.arange(1 << n) ^ (1 << wire)]
    return -1j * sign * flipped


def expectation(state: np.ndarray, obs: Observable) -> np.ndarray:
    """<state| P |state>; real, shape = batch shape (a float for a single state)."""
    if obs.axis is Pauli.PAULI_Z:
        n = num_qubits(state)
        _check_wire(obs.wire, n)
        value = np.sum(np.abs(state) ** 2 * _bit_sign(n, obs.wire), axis=-1)
    else:
        value = np.real(np.sum(np.conj(state) * apply_pauli(state, obs.axis, obs.wire), axis=-1))
    return value[()] if np.ndim(value) == 0 else value


# ---------------------------------------------------------------------------
# dense reference
# ---------------------------------------------------------------------------

_I2 = np.eye(2, dtype=np.complex128)
_X2 = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_P0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
_P1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
ORACLE_MAX_QUBITS = 3


def _kron_wires(ops: dict[int, np.ndarray], n: int) -> np.ndarray:
    full = np.ones((1, 1), dtype=np.complex128)
    for w in reversed(range(n)):  # highest wire is the leftmost Kronecker factor
        full = np.kron(full, ops.get(w, _I2))
    return full


def dense_unitary(gates: Sequence[Gate], n: int) -> np.ndarray:
    """Full 2**n x 2**n unitary of an unbatched gate list built from Kronecker products."""
    if n > ORACLE_MAX_QUBITS:
        raise ConfigurationError(f"dense oracle limited to {ORACLE_MAX_QUBITS} qubits, got {n}")
    u = np.eye(1 << n, dtype=np.complex128)
    for g in gates:
        for w in g.wires:
            _check_wire(w, n)
        if g.kind is GateKind.CNOT:
            c, t = g.wires
            op = _kron_wires({c: _P0}, n) + _kron_wires({c: _P1, t: _X2}, n)
        else:
            local = np.asarray(gate_matrix(g))
            if local.shape != (2, 2):
                raise ShapeError("dense oracle does not take batched angles")
            op = _kron_wires({g.wires[0]: local}, n)
        u = op @ u
    return u


def dense_oracle_apply(state: np.ndarray, gates: Sequence[Gate]) -> np.ndarray:
    """Reference path for testing ``apply_gates``: explicit unitary times vector."""
    n = num_qubits(state)
    return dense_unitary(gates, n) @ state
