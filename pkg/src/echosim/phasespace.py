"""Grids, quantum states and the Wigner transform.

Conventions used throughout the package:

* position lattice ``x_j = x_min + j*dx`` with ``dx = (x_max - x_min)/n``;
  the grid is periodic;
* wave functions are normalized as ``sum |psi_j|^2 dx = 1``;
* density matrices are stored in the position representation with
  ``sum rho_jj dx = 1``, so ``Tr(a b) = sum_ij a_ij b_ji dx^2``;
* the Wigner function lives on ``(x_j, p_k)`` where the momentum axis has
  half the spacing of the wave-function momentum lattice (antidiagonals of
  the density matrix are sampled with step ``dx``), sorted ascending.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .exceptions import GridMismatchError, GridTooCoarseError, LeakageError

logger = logging.getLogger(__name__)

LEAKAGE_CELLS = 3
LEAKAGE_LIMIT = 1e-4


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform periodic position lattice and its conjugate momentum lattice."""

    n_points: int
    x_min: float
    x_max: float
    hbar: float = 1.0

    def __post_init__(self):
        n = int(self.n_points)
        if n != self.n_points or n < 4 or n & (n - 1):
            raise GridTooCoarseError(f"n_points must be a power of two >= 4, got {self.n_points}")
        if not np.isfinite(self.x_min) or not np.isfinite(self.x_max) or self.x_max <= self.x_min:
            raise GridTooCoarseError("x_max must exceed x_min")
        if not self.hbar > 0:
            raise GridTooCoarseError("hbar must be positive")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))
        object.__setattr__(self, "hbar", float(self.hbar))

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def dp(self) -> float:
        return 2 * np.pi * self.hbar / (self.n_points * self.dx)

    @property
    def p_max(self) -> float:
        return np.pi * self.hbar / self.dx

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(self.x_min + self.dx * np.arange(self.n_points), float)

    @cached_property
    def p(self) -> np.ndarray:
        """Momentum lattice in FFT (signed) ordering."""
        return _frozen(self.dp * self.n_points * np.fft.fftfreq(self.n_points), float)

    @property
    def wigner_dp(self) -> float:
        return 0.5 * self.dp

    @cached_property
    def wigner_p(self) -> np.ndarray:
        """Ascending momentum axis of the Wigner plane."""
        k = np.arange(self.n_points) - self.n_points // 2
        return _frozen(k * self.wigner_dp, float)

    def as_dict(self) -> dict:
        return {"n_points": self.n_points, "x_min": self.x_min,
                "x_max": self.x_max, "hbar": self.hbar}

    def check_same(self, other: "PhaseSpaceGrid"):
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


@dataclass(frozen=True, eq=False)
class WaveFunction:
    grid: PhaseSpaceGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = _frozen(self.amplitudes, complex)
        if amp.shape != (self.grid.n_points,):
            raise GridMismatchError(f"amplitudes have shape {amp.shape}, grid has {self.grid.n_points} points")
        object.__setattr__(self, "amplitudes", amp)

    @property
    def probability(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(self.probability.sum() * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes / np.sqrt(self.norm()))

    def momentum_amplitudes(self) -> np.ndarray:
        """Amplitudes on ``grid.p`` normalized as ``sum |phi|^2 dp = 1``."""
        g = self.grid
        phase = np.exp(-1j * g.p * g.x_min / g.hbar)
        return sfft.fft(self.amplitudes) * phase * g.dx / np.sqrt(2 * np.pi * g.hbar)

    @classmethod
    def from_momentum(cls, grid: PhaseSpaceGrid, phi: np.ndarray) -> "WaveFunction":
        phase = np.exp(1j * grid.p * grid.x_min / grid.hbar)
        amp = sfft.ifft(np.asarray(phi) * phase) * np.sqrt(2 * np.pi * grid.hbar) / grid.dx
        return cls(grid, amp)

    def mean_x(self) -> float:
        return float(np.sum(self.grid.x * self.probability) * self.grid.dx)

    def var_x(self) -> float:
        mu = self.mean_x()
        return float(np.sum((self.grid.x - mu) ** 2 * self.probability) * self.grid.dx)

    def mean_p(self) -> float:
        prob = np.abs(self.momentum_amplitudes()) ** 2
        return float(np.sum(self.grid.p * prob) * self.grid.dp)

    def var_p(self) -> float:
        prob = np.abs(self.momentum_amplitudes()) ** 2
        mu = np.sum(self.grid.p * prob) * self.grid.dp
        return float(np.sum((self.grid.p - mu) ** 2 * prob) * self.grid.dp)

    def inner(self, other: "WaveFunction") -> complex:
        """``<self|other>``."""
        self.grid.check_same(other.grid)
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    grid: PhaseSpaceGrid
    elements: np.ndarray

    def __post_init__(self):
        el = _frozen(self.elements, complex)
        n = self.grid.n_points
        if el.shape != (n, n):
            raise GridMismatchError(f"density matrix has shape {el.shape}, expected {(n, n)}")
        object.__setattr__(self, "elements", el)

    def trace(self) -> float:
        return float(np.real(np.trace(self.elements)) * self.grid.dx)

    @property
    def diagonal(self) -> np.ndarray:
        """Position probability density ``rho(x, x)``."""
        return np.real(np.diag(self.elements)).copy()

    def hermiticity_error(self) -> float:
        el = self.elements
        return float(np.max(np.abs(el - el.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.elements * self.grid.dx).min())

    def mean_x(self) -> float:
        return float(np.sum(self.grid.x * self.diagonal) * self.grid.dx)

    def var_x(self) -> float:
        mu = self.mean_x()
        return float(np.sum((self.grid.x - mu) ** 2 * self.diagonal) * self.grid.dx)

    def momentum_distribution(self) -> np.ndarray:
        """``<p|rho|p>`` on ``grid.p`` (FFT order), integrating to one with ``dp``."""
        g = self.grid
        f = sfft.fft(sfft.ifft(self.elements, axis=1, norm="forward"), axis=0)
        return np.real(np.diag(f)) * g.dx ** 2 / (2 * np.pi * g.hbar)

    def var_p(self) -> float:
        g = self.grid
        prob = self.momentum_distribution()
        mu = np.sum(g.p * prob) * g.dp
        return float(np.sum((g.p - mu) ** 2 * prob) * g.dp)


@dataclass(frozen=True, eq=False)
class WignerFunction:
    """Real phase-space distribution; ``values[i, k]`` is ``W(x_i, p_k)``."""

    grid: PhaseSpaceGrid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, float)
        n = self.grid.n_points
        if vals.shape != (n, n):
            raise GridMismatchError(f"Wigner array has shape {vals.shape}, expected {(n, n)}")
        object.__setattr__(self, "values", vals)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def p(self) -> np.ndarray:
        return self.grid.wigner_p

    @property
    def cell_area(self) -> float:
        return self.grid.dx * self.grid.wigner_dp

    def total(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def x_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.wigner_dp

    def p_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.grid.dx

    def overlap(self, other: "WignerFunction") -> float:
        """``2 pi hbar * integral W_a W_b dx dp``."""
        self.grid.check_same(other.grid)
        return float(2 * np.pi * self.grid.hbar * np.sum(self.values * other.values) * self.cell_area)


def make_gaussian_state(grid: PhaseSpaceGrid, x0: float, p0: float, sigma_x: float) -> WaveFunction:
    """Minimum-uncertainty Gaussian packet; its momentum spread is ``hbar/(2 sigma_x)``."""
    if not sigma_x > 3 * grid.dx:
        raise GridTooCoarseError(f"sigma_x={sigma_x} must exceed 3*dx={3 * grid.dx}")
    if not sigma_x < grid.length / 6:
        raise GridTooCoarseError(f"sigma_x={sigma_x} must be below (x_max-x_min)/6={grid.length / 6}")
    x = grid.x
    amp = np.exp(-((x - x0) ** 2) / (4 * sigma_x ** 2) + 1j * p0 * (x - x0) / grid.hbar)
    return WaveFunction(grid, amp).normalized()


def make_cat_state(grid: PhaseSpaceGrid, separation: float, sigma_x: float,
                   x_center: float = 0.0, p0: float = 0.0, phase: float = 0.0) -> WaveFunction:
    """Superposition of two Gaussians at ``x_center +/- separation/2``.

    The interference term of its Wigner function oscillates along momentum
    with wave vector ``k_p = separation / hbar``.
    """
    left = make_gaussian_state(grid, x_center - separation / 2, p0, sigma_x)
    right = make_gaussian_state(grid, x_center + separation / 2, p0, sigma_x)
    return WaveFunction(grid, left.amplitudes + np.exp(1j * phase) * right.amplitudes).normalized()


def density_from_pure(psi: WaveFunction) -> DensityMatrix:
    a = psi.amplitudes
    return DensityMatrix(psi.grid, np.outer(a, a.conj()))


def mixture(states, weights=None) -> DensityMatrix:
    """Convex combination of pure states."""
    states = list(states)
    grid = states[0].grid
    if weights is None:
        weights = np.full(len(states), 1.0 / len(states))
    weights = np.asarray(weights, float)
    amps = np.array([s.amplitudes for s in states])
    el = (amps.T * weights) @ amps.conj()
    return DensityMatrix(grid, el)


def _antidiagonal_indices(n: int):
    i = np.arange(n)[:, None]
    m = np.arange(n)[None, :] - n // 2
    rows, cols = i + m, i - m
    inside = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
    return rows % n, cols % n, inside


def wigner_transform(rho: DensityMatrix) -> WignerFunction:
    """Wigner function ``W(x,p) = (1/pi hbar) int dy rho(x+y, x-y) exp(-2ipy/hbar)``.

    The antidiagonal through each grid point is sampled with step ``dx`` and
    Fourier transformed; elements that would wrap around the periodic box
    are dropped.
    """
    g = rho.grid
    n = g.n_points
    rows, cols, inside = _antidiagonal_indices(n)
    anti = np.where(inside, rho.elements[rows, cols], 0.0)
    # column m of ``anti`` holds offset y = (m - n/2) dx
    spec = sfft.fftshift(sfft.fft(sfft.ifftshift(anti, axes=1), axis=1), axes=1)
    spec *= g.dx / (np.pi * g.hbar)
    scale = np.max(np.abs(spec.real)) or 1.0
    residue = np.max(np.abs(spec.imag)) / scale
    if residue > 1e-8:
        logger.debug("Wigner transform imaginary residue %.3g (non-Hermitian input?)", residue)
    return WignerFunction(g, spec.real)


def overlap_trace(a: DensityMatrix, b: DensityMatrix) -> float:
    """``Tr(a b)``, clipped into ``[0, 1 + 1e-8]``."""
    a.grid.check_same(b.grid)
    raw = np.sum(a.elements * b.elements.T) * a.grid.dx ** 2
    value = float(raw.real)
    clipped = min(max(value, 0.0), 1.0 + 1e-8)
    if clipped != value:
        logger.debug("overlap_trace clipped raw value %.3e (imag %.1e)", value, raw.imag)
    return clipped


def purity(rho: DensityMatrix) -> float:
    return overlap_trace(rho, rho)


def boundary_leakage(grid: PhaseSpaceGrid, density: np.ndarray) -> np.ndarray:
    """Probability within ``LEAKAGE_CELLS`` cells of either edge.

    ``density`` is ``|psi|^2`` or a diagonal; extra leading axes are batches.
    """
    edge = np.concatenate([density[..., :LEAKAGE_CELLS], density[..., -LEAKAGE_CELLS:]], axis=-1)
    return edge.sum(axis=-1) * grid.dx


def check_leakage(grid: PhaseSpaceGrid, density: np.ndarray, limit: float = LEAKAGE_LIMIT,
                  realization_offset: int = 0):
    leaked = np.atleast_1d(boundary_leakage(grid, density))
    bad = np.flatnonzero(leaked > limit)
    if bad.size:
        idx = int(bad[0])
        raise LeakageError(
            f"boundary leakage {leaked[idx]:.3g} exceeds {limit:g}",
            leaked=float(leaked[idx]),
            realization=idx + realization_offset if leaked.size > 1 else None,
        )
