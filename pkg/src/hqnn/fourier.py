"""Fourier spectra of quantum-layer outputs.

A circuit that encodes an input ``x_j`` through ``d`` Pauli rotations is a
trigonometric polynomial of degree ``d`` in that input::

    f(x) = sum_{omega in {-d..d}^m} c_omega * exp(-i omega . x)

Sampling ``f`` on the (2d+1)^m equidistant grid over [0, 2pi)^m determines
every ``c_omega`` exactly:  c_omega = N^-m sum_k f(x_k) exp(+i omega . x_k).
"""
from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError, ShapeError
from .pqc import CircuitSpec, run_circuit

MAX_ANALYZED = 2
VIOLIN_COLUMNS = ("omega_x", "omega_y", "sample_index", "real", "imag")


def grid_points(d: int) -> np.ndarray:
    n = 2 * d + 1
    return 2 * np.pi * np.arange(n) / n


def _omegas(d: int) -> np.ndarray:
    return np.arange(-d, d + 1)


@dataclass
class FourierSpectrum:
    """Coefficients ``c[omega_1 + d, ..., omega_m + d]`` of one function."""

    d: int
    coefficients: np.ndarray

    @property
    def m(self) -> int:
        return self.coefficients.ndim

    @property
    def omegas(self) -> list[tuple[int, ...]]:
        return list(itertools.product(_omegas(self.d), repeat=self.m))

    def coefficient(self, omega: Sequence[int]) -> complex:
        return complex(self.coefficients[tuple(w + self.d for w in omega)])

    def flat(self) -> np.ndarray:
        """Coefficients in ``omegas`` order."""
        return self.coefficients.reshape(-1)

    def evaluate(self, points) -> np.ndarray:
        """Reconstruct f at ``points`` of shape (..., m); returns real values."""
        points = np.asarray(points, dtype=np.float64)
        w = np.array(self.omegas, dtype=np.float64)
        phase = np.exp(-1j * points @ w.T)
        return np.real(phase @ self.flat())

    def hermitian_error(self) -> float:
        """max |c_{-omega} - conj(c_omega)|."""
        flipped = self.coefficients[(slice(None, None, -1),) * self.m]
        return float(np.max(np.abs(flipped - np.conj(self.coefficients))))


def _full_inputs(spec: CircuitSpec, analyzed: Sequence[int], fixed) -> np.ndarray:
    if fixed is None:
        fixed = np.zeros(spec.num_inputs)
    fixed = np.asarray(fixed, dtype=np.float64)
    if fixed.shape != (spec.num_inputs,):
        raise ShapeError(f"fixed inputs must have {spec.num_inputs} entries, got {fixed.shape}")
    if any(not 0 <= a < spec.num_inputs for a in analyzed) or len(set(analyzed)) != len(analyzed):
        raise ConfigurationError(f"invalid analyzed input indices {tuple(analyzed)}")
    return fixed


def evaluate_on_grid(spec: CircuitSpec, theta, analyzed: Sequence[int] = (0, 1), d: int = 1,
                     fixed=None, output: int = -1) -> np.ndarray:
    """Circuit output ``output`` on the (2d+1)^m grid; the other inputs held at ``fixed``.

    ``theta`` may carry leading batch axes; the result has shape
    ``theta.shape[:-1] + (2d+1,) * m``.
    """
    m = len(analyzed)
    if not 1 <= m <= MAX_ANALYZED:
        raise ConfigurationError(f"can analyze 1..{MAX_ANALYZED} inputs at once, got {m}")
    if d < 1:
        raise ConfigurationError(f"frequency d must be >= 1, got {d}")
    base = _full_inputs(spec, analyzed, fixed)
    theta = np.asarray(theta, dtype=np.float64)
    axis = grid_points(d)
    coords = np.stack(np.meshgrid(*([axis] * m), indexing="ij"), axis=-1).reshape(-1, m)
    x = np.repeat(base[None, :], len(coords), axis=0)
    x[:, list(analyzed)] = coords
    lead = theta.shape[:-1]
    values = run_circuit(spec, x, theta[..., None, :])[..., output]
    return values.reshape(lead + (len(axis),) * m)


def _dft_matrix(d: int) -> np.ndarray:
    """F[omega, k] = exp(+i omega x_k) / N."""
    n = 2 * d + 1
    return np.exp(1j * np.outer(_omegas(d), grid_points(d))) / n


def dft_coefficients(samples, d: int, m: int) -> Union[FourierSpectrum, list[FourierSpectrum]]:
    """Exact inversion of grid samples; leading axes beyond the last ``m`` yield a list."""
    samples = np.asarray(samples)
    n = 2 * d + 1
    if samples.shape[samples.ndim - m:] != (n,) * m or samples.ndim < m:
        raise ShapeError(f"expected trailing shape {(n,) * m} for d={d}, m={m}, got {samples.shape}")
    f = _dft_matrix(d)
    coeffs = samples.astype(np.complex128)
    for ax in range(m):
        axis = samples.ndim - m + ax
        coeffs = np.moveaxis(np.tensordot(coeffs, f, axes=([axis], [1])), -1, axis)
    if samples.ndim == m:
        return FourierSpectrum(d, coeffs)
    return [FourierSpectrum(d, c) for c in coeffs.reshape((-1,) + (n,) * m)]


def spectrum(spec: CircuitSpec, theta, analyzed: Sequence[int] = (0, 1), d: int = 1, fixed=None,
             output: int = -1) -> FourierSpectrum:
    samples = evaluate_on_grid(spec, theta, analyzed, d, fixed, output)
    return dft_coefficients(samples, d, len(analyzed))


@dataclass
class CoefficientSamples:
    """``values[s, k]`` is coefficient ``omegas[k]`` for the s-th random theta."""

    d: int
    omegas: list[tuple[int, ...]]
    values: np.ndarray
    thetas: np.ndarray

    def std(self) -> np.ndarray:
        """Per-coefficient sample standard deviation of the complex values."""
        return np.std(self.values, axis=0, ddof=1)

    def spread(self) -> tuple[np.ndarray, np.ndarray]:
        return np.std(self.values.real, axis=0, ddof=1), np.std(self.values.imag, axis=0, ddof=1)


def sample_coefficient_distribution(spec: CircuitSpec, samples: int = 100, seed: int = 0, d: int = 1,
                                    analyzed: Sequence[int] = (0, 1), fixed=None,
                                    output: int = -1) -> CoefficientSamples:
    """Draw theta ~ U[0, 2pi) ``samples`` times and collect the spectrum of each draw."""
    if samples < 2:
        raise ConfigurationError(f"need at least 2 samples, got {samples}")
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(0.0, 2 * np.pi, size=(samples, spec.num_params))
    grid = evaluate_on_grid(spec, thetas, analyzed, d, fixed, output)
    spectra = dft_coefficients(grid, d, len(analyzed))
    values = np.stack([s.flat() for s in spectra])
    return CoefficientSamples(d, spectra[0].omegas, values, thetas)


def correlation_determinant(dist: CoefficientSamples) -> float:
    """det of the correlation matrix of all real and imaginary parts with nonzero variance."""
    cols = np.concatenate([dist.values.real, dist.values.imag], axis=1)
    keep = np.std(cols, axis=0) > 1e-12
    if keep.sum() < 2:
        return float("nan")
    return float(np.linalg.det(np.corrcoef(cols[:, keep], rowvar=False)))


def export_violin_csv(dist: CoefficientSamples, path: Union[str, os.PathLike]) -> int:
    """Write one row per (coefficient, sample); returns the number of data rows."""
    if dist.values.size == 0:
        raise ConfigurationError("no coefficient samples to export")
    if len(dist.omegas[0]) != 2:
        raise ConfigurationError("violin export expects two analyzed inputs")
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VIOLIN_COLUMNS)
        for k, (wx, wy) in enumerate(dist.omegas):
            for s in range(dist.values.shape[0]):
                c = dist.values[s, k]
                writer.writerow([int(wx), int(wy), s, repr(float(c.real)), repr(float(c.imag))])
                rows += 1
    return rows


def load_violin_csv(path: Union[str, os.PathLike]) -> dict[tuple[int, int], np.ndarray]:
    out: dict[tuple[int, int], list[complex]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != VIOLIN_COLUMNS:
            raise ShapeError(f"unexpected columns {reader.fieldnames}")
        for row in reader:
            key = (int(row["omega_x"]), int(row["omega_y"]))
            out.setdefault(key, []).append(complex(float(row["real"]), float(row["imag"])))
    return {k: np.array(v) for k, v in out.items()}


def truncation_residual(spec: CircuitSpec, theta, analyzed: Sequence[int] = (0, 1), d_fine: int = 3,
                        d_expected: int = 1, fixed=None, output: int = -1) -> float:
    """Largest |c_omega| with some |omega_j| > d_expected, computed on the finer ``d_fine`` grid."""
    spec_fine = spectrum(spec, theta, analyzed, d_fine, fixed, output)
    worst = 0.0
    for omega, c in zip(spec_fine.omegas, spec_fine.flat()):
        if max(abs(w) for w in omega) > d_expected:
            worst = max(worst, abs(c))
    return worst


def reconstruction_error(spec: CircuitSpec, theta, points, analyzed: Sequence[int] = (0, 1), d: int = 1,
                         fixed=None, output: int = -1) -> float:
    """max |series(points) - circuit(points)| at arbitrary (off-grid) points of shape (P, m)."""
    points = np.asarray(points, dtype=np.float64)
    series = spectrum(spec, theta, analyzed, d, fixed, output).evaluate(points)
    base = _full_inputs(spec, analyzed, fixed)
    x = np.repeat(base[None, :], len(points), axis=0)
    x[:, list(analyzed)] = points
    direct = run_circuit(spec, x, np.asarray(theta, dtype=np.float64))[..., output]
    return float(np.max(np.abs(series - direct)))
