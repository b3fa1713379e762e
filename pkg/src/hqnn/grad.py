"""Gradient engines for compiled circuits.

All engines return derivatives per batch element, i.e. with the broadcast
batch shape of ``x`` and ``theta`` in front.  Callers that share ``theta``
across a batch sum over the batch axes themselves.

Jacobian layout: ``(..., num_outputs, num_inputs)`` for inputs and
``(..., num_outputs, num_params)`` for parameters.  VJP layout: ``(...,
num_inputs)`` and ``(..., num_params)``.
"""
from __future__ import annotations

import enum
from typing import NamedTuple, Optional

import numpy as np

from . import qsim
from .errors import ConfigurationError, ShapeError, UnsupportedGateError
from .pqc import INPUT, PARAM, CircuitSpec, batch_shape, op_angle, op_gate, readout, run_circuit
from .qsim import GateKind

SHIFT = np.pi / 2
DEFAULT_EPS = 1e-5
_PAULI_ROTATIONS = (GateKind.RX, GateKind.RY, GateKind.RZ)


class Wrt(enum.Enum):
    PARAMS = "params"
    INPUTS = "inputs"
    BOTH = "both"


class Engine(enum.Enum):
    ADJOINT = "adjoint"
    PARAM_SHIFT = "param_shift"
    FINITE_DIFF = "finite_diff"


class Gradients(NamedTuple):
    inputs: Optional[np.ndarray]
    params: Optional[np.ndarray]


def _prepare(spec: CircuitSpec, x, theta, upstream=None):
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if x.shape[-1:] != (spec.num_inputs,) or theta.shape[-1:] != (spec.num_params,):
        raise ShapeError(f"expected {spec.num_inputs} inputs / {spec.num_params} params, "
                         f"got {x.shape} / {theta.shape}")
    for op in spec.ops:
        if op.parameterized and op.kind not in _PAULI_ROTATIONS:
            raise UnsupportedGateError(f"cannot differentiate parameterized {op.kind.value} gate")
    if upstream is not None:
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape[-1:] != (spec.num_outputs,):
            raise ShapeError(f"cotangent must have {spec.num_outputs} entries, got {upstream.shape}")
    return x, theta, upstream


def _wanted(wrt: Wrt) -> tuple[bool, bool]:
    wrt = Wrt(wrt)
    return wrt in (Wrt.INPUTS, Wrt.BOTH), wrt in (Wrt.PARAMS, Wrt.BOTH)


def _contract(jac: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.einsum("...o,...op->...p", upstream, jac)


def _finish(jac_x, jac_t, upstream) -> Gradients:
    if upstream is None:
        return Gradients(jac_x, jac_t)
    return Gradients(None if jac_x is None else _contract(jac_x, upstream),
                     None if jac_t is None else _contract(jac_t, upstream))


# ---------------------------------------------------------------------------
# parameter shift
# ---------------------------------------------------------------------------

def _run_shifted(spec: CircuitSpec, x, theta, k: int, delta: float) -> np.ndarray:
    state = qsim.new_zero_state(spec.num_qubits, batch_shape(x, theta))
    for j, op in enumerate(spec.ops):
        angle = None
        if op.parameterized:
            angle = op_angle(op, x, theta)
            if j == k:
                angle = angle + delta
        state = qsim.apply_gate(state, op_gate(op, angle))
    return readout(spec, state)


def param_shift_grad(spec: CircuitSpec, x, theta, wrt: Wrt = Wrt.BOTH, upstream=None) -> Gradients:
    """Two-term shift rule: d<P>/d(angle) = (f(angle + pi/2) - f(angle - pi/2)) / 2.

    Each parameterized op is shifted on its own; the op's ``scale`` carries
    the chain factor from the source entry to the gate angle.
    """
    x, theta, upstream = _prepare(spec, x, theta, upstream)
    want_x, want_t = _wanted(wrt)
    lead = batch_shape(x, theta)
    jac_x = np.zeros(lead + (spec.num_outputs, spec.num_inputs)) if want_x else None
    jac_t = np.zeros(lead + (spec.num_outputs, spec.num_params)) if want_t else None
    for k, op in enumerate(spec.ops):
        if not op.parameterized:
            continue
        target = jac_x if op.source == INPUT else jac_t
        if target is None:
            continue
        plus = _run_shifted(spec, x, theta, k, SHIFT)
        minus = _run_shifted(spec, x, theta, k, -SHIFT)
        target[..., :, op.index] += op.scale * (plus - minus) / 2
    return _finish(jac_x, jac_t, upstream)


# ---------------------------------------------------------------------------
# adjoint
# ---------------------------------------------------------------------------

def _adjoint_sweep(spec: CircuitSpec, x, theta, lam_weights: np.ndarray, want_x: bool, want_t: bool):
    """Reverse sweep for the observable ``sum_j w_j P_j``.

    ``lam_weights`` has shape ``batch + (K, q)``: K independent observables are
    swept at once (K = q rows of the identity for a full Jacobian, K = 1 for
    a VJP).  Returns arrays of shape ``batch + (K, num_inputs / num_params)``.
    """
    # an extra axis for the K observables
    xk = x[..., None, :]
    tk = theta[..., None, :]
    gates = [op_gate(op, op_angle(op, xk, tk) if op.parameterized else None) for op in spec.ops]

    psi = qsim.new_zero_state(spec.num_qubits, batch_shape(xk, tk))
    for g in gates:
        psi = qsim.apply_gate(psi, g)

    lam = 0
    for w in range(spec.num_qubits):
        lam = lam + lam_weights[..., w, None] * qsim.apply_pauli(psi, spec.readout, w)

    k_lead = np.broadcast_shapes(psi.shape[:-1], lam_weights.shape[:-1])
    grad_x = np.zeros(k_lead + (spec.num_inputs,)) if want_x else None
    grad_t = np.zeros(k_lead + (spec.num_params,)) if want_t else None

    for op, g in zip(reversed(spec.ops), reversed(gates)):
        if g.kind is GateKind.CNOT:
            # CNOT is its own inverse
            psi = qsim.apply_gate(psi, g)
            lam = qsim.apply_gate(lam, g)
            continue
        angle = g.angles[0]
        inverse = qsim.rotation_matrix(g.kind, -angle)
        psi = qsim.apply_matrix_1q(psi, inverse, g.wires[0])
        target = grad_x if op.source == INPUT else grad_t
        if target is not None:
            # dR(t)/dt = R(t + pi) / 2 for every Pauli rotation
            mu = qsim.apply_matrix_1q(psi, qsim.rotation_matrix(g.kind, angle + np.pi) / 2, g.wires[0])
            target[..., op.index] += op.scale * 2 * np.real(np.sum(np.conj(lam) * mu, axis=-1))
        lam = qsim.apply_matrix_1q(lam, inverse, g.wires[0])
    return grad_x, grad_t


def adjoint_grad(spec: CircuitSpec, x, theta, wrt: Wrt = Wrt.BOTH, upstream=None) -> Gradients:
    """One forward pass plus one reverse sweep of inverse gates."""
    x, theta, upstream = _prepare(spec, x, theta, upstream)
    want_x, want_t = _wanted(wrt)
    if upstream is None:
        weights = np.eye(spec.num_outputs)
        gx, gt = _adjoint_sweep(spec, x, theta, weights, want_x, want_t)
        return Gradients(gx, gt)
    gx, gt = _adjoint_sweep(spec, x, theta, upstream[..., None, :], want_x, want_t)
    return Gradients(None if gx is None else gx[..., 0, :], None if gt is None else gt[..., 0, :])


# ---------------------------------------------------------------------------
# finite differences (test oracle)
# ---------------------------------------------------------------------------

def finite_diff_grad(spec: CircuitSpec, x, theta, wrt: Wrt = Wrt.BOTH, upstream=None,
                     eps: float = DEFAULT_EPS) -> Gradients:
    """Central differences on the source entries, independent of the op table."""
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigurationError(f"finite-difference step must lie in [1e-7, 1e-3], got {eps}")
    x, theta, upstream = _prepare(spec, x, theta, upstream)
    want_x, want_t = _wanted(wrt)
    lead = batch_shape(x, theta)

    def column(arr, i, which):
        hi, lo = arr.copy(), arr.copy()
        hi[..., i] += eps
        lo[..., i] -= eps
        if which == INPUT:
            return (run_circuit(spec, hi, theta) - run_circuit(spec, lo, theta)) / (2 * eps)
        return (run_circuit(spec, x, hi) - run_circuit(spec, x, lo)) / (2 * eps)

    jac_x = jac_t = None
    if want_x:
        jac_x = np.zeros(lead + (spec.num_outputs, spec.num_inputs))
        for i in range(spec.num_inputs):
            jac_x[..., :, i] = column(x, i, INPUT)
    if want_t:
        jac_t = np.zeros(lead + (spec.num_outputs, spec.num_params))
        for i in range(spec.num_params):
            jac_t[..., :, i] = column(theta, i, PARAM)
    return _finish(jac_x, jac_t, upstream)


_ENGINES = {Engine.ADJOINT: adjoint_grad, Engine.PARAM_SHIFT: param_shift_grad,
            Engine.FINITE_DIFF: finite_diff_grad}


def get_engine(engine) -> callable:
    try:
        return _ENGINES[Engine(engine)]
    except ValueError:
        raise ConfigurationError(f"unknown gradient engine {engine!r}") from None


def circuit_vjp(spec: CircuitSpec, x, theta, upstream, engine=Engine.ADJOINT,
                wrt: Wrt = Wrt.BOTH) -> Gradients:
    """Per-batch-element cotangents ``upstream^T dv/dx`` and ``upstream^T dv/dtheta``."""
    return get_engine(engine)(spec, x, theta, wrt=wrt, upstream=upstream)


def quantum_layer_vjp(layer, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Backward splice for a quantum layer whose forward pass cached its inputs.

    ``layer`` is any object with a ``backward(upstream)`` returning the input
    cotangent and storing the parameter gradient in ``layer.grads``; see
    :class:`hqnn.nn.layers.ParallelQuantumDense` and :class:`hqnn.nn.layers.Quanv2d`.
    """
    dx = layer.backward(upstream)
    return dx, layer.grads[layer.quantum_param_name]
