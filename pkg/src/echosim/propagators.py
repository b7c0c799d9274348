"""Split-operator time evolution of wave functions and density matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
import scipy.fft as sfft

from .exceptions import ConfigError, GridMismatchError
from .phasespace import (DensityMatrix, PhaseSpaceGrid, WaveFunction,
                         check_leakage)

POTENTIAL_KINDS = ("double_well", "inverted_oscillator", "harmonic", "free")

_DEFAULTS = {
    "double_well": {"a4": 0.5, "a2": 10.0, "drive_amp": 10.0, "drive_freq": 6.07},
    "inverted_oscillator": {"lambda0": 1.0},
    "harmonic": {"omega": 1.0},
    "free": {},
}


@dataclass(frozen=True)
class HamiltonianSpec:
    """``H0 = p^2/2m + V0(x, t)``.

    ``mass=inf`` switches the kinetic term off (``H0 = V0``), which together
    with ``kind="free"`` gives ``H0 = 0``.
    """

    kind: str = "free"
    mass: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ConfigError(f"unknown potential kind {self.kind!r}; expected one of {POTENTIAL_KINDS}")
        if not self.mass > 0:
            raise ConfigError("mass must be positive")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        if self.kind == "double_well" and not (merged["a4"] > 0 and merged["a2"] > 0):
            raise ConfigError("double_well needs a4 > 0 and a2 > 0")
        if self.kind == "inverted_oscillator" and not merged["lambda0"] > 0:
            raise ConfigError("lambda0 must be positive")
        if self.kind == "harmonic" and not merged["omega"] > 0:
            raise ConfigError("omega must be positive")
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "mass", float(self.mass))

    @classmethod
    def double_well(cls, a4=0.5, a2=10.0, drive_amp=10.0, drive_freq=6.07, mass=1.0):
        return cls("double_well", mass, {"a4": a4, "a2": a2, "drive_amp": drive_amp, "drive_freq": drive_freq})

    @classmethod
    def inverted_oscillator(cls, lambda0=1.0, mass=1.0):
        return cls("inverted_oscillator", mass, {"lambda0": lambda0})

    @classmethod
    def harmonic(cls, omega=1.0, mass=1.0):
        return cls("harmonic", mass, {"omega": omega})

    @classmethod
    def free(cls, mass=1.0):
        return cls("free", mass, {})

    def as_dict(self) -> dict:
        return {"kind": self.kind, "mass": self.mass, **self.params}

    @property
    def has_kinetic(self) -> bool:
        return math.isfinite(self.mass)

    @property
    def is_time_dependent(self) -> bool:
        return self.kind == "double_well" and self.params["drive_amp"] != 0

    def static_potential(self, x):
        x = np.asarray(x, dtype=float)
        k, c = self.kind, self.params
        if k == "double_well":
            return c["a4"] * x ** 4 - c["a2"] * x ** 2
        if k == "inverted_oscillator":
            return -0.5 * self.mass * c["lambda0"] ** 2 * x ** 2
        if k == "harmonic":
            return 0.5 * self.mass * c["omega"] ** 2 * x ** 2
        return np.zeros_like(x)

    def drive(self, t):
        """Coefficient of the time-dependent term ``x * drive(t)``."""
        if self.kind != "double_well":
            return 0.0 * np.asarray(t, dtype=float)
        return self.params["drive_amp"] * np.cos(self.params["drive_freq"] * np.asarray(t, dtype=float))

    def potential(self, x, t=0.0):
        return self.static_potential(x) + np.asarray(x, dtype=float) * self.drive(t)

    def force(self, x, t=0.0):
        """``-dV0/dx``."""
        k, c = self.kind, self.params
        if k == "double_well":
            dv = 4 * c["a4"] * x ** 3 - 2 * c["a2"] * x
        elif k == "inverted_oscillator":
            dv = -self.mass * c["lambda0"] ** 2 * x
        elif k == "harmonic":
            dv = self.mass * c["omega"] ** 2 * x
        else:
            dv = 0.0 * x
        return -(dv + self.drive(t))

    def curvature(self, x, t=0.0):
        """``d^2 V0 / dx^2``."""
        k, c = self.kind, self.params
        if k == "double_well":
            return 12 * c["a4"] * x ** 2 - 2 * c["a2"]
        if k == "inverted_oscillator":
            return -self.mass * c["lambda0"] ** 2 + 0.0 * x
        if k == "harmonic":
            return self.mass * c["omega"] ** 2 + 0.0 * x
        return 0.0 * x

    def energy(self, q, p, t=0.0):
        kin = 0.5 * p ** 2 / self.mass if self.has_kinetic else 0.0 * p
        return kin + self.potential(q, t)

    def potential_range(self, grid: PhaseSpaceGrid) -> float:
        """Upper bound of ``max V0 - min V0`` over the grid and all times."""
        v = self.static_potential(grid.x)
        spread = float(v.max() - v.min())
        if self.kind == "double_well":
            spread += 2 * abs(self.params["drive_amp"]) * float(np.max(np.abs(grid.x)))
        return spread


@dataclass(frozen=True)
class CouplingFunction:
    """Spatial profile ``V(x)`` of the perturbation ``V(x) J(t)``."""

    kind: str = "position"
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "position":
            if self.values is not None:
                raise ConfigError("position coupling takes no tabulated values")
        elif self.kind == "quartic_free":
            if self.values is None:
                raise ConfigError("tabulated coupling needs values")
            vals = np.array(self.values, dtype=float)
            if vals.ndim != 1 or not np.all(np.isfinite(vals)):
                raise ConfigError("tabulated coupling must be a finite 1-D real array")
            vals.flags.writeable = False
            object.__setattr__(self, "values", vals)
        else:
            raise ConfigError(f"unknown coupling kind {self.kind!r}")

    @classmethod
    def position(cls):
        return cls("position")

    @classmethod
    def tabulated(cls, values):
        return cls("quartic_free", values)

    @property
    def is_linear(self) -> bool:
        return self.kind == "position"

    def evaluate(self, grid: PhaseSpaceGrid) -> np.ndarray:
        if self.is_linear:
            return np.array(grid.x)
        if self.values.shape != (grid.n_points,):
            raise GridMismatchError("tabulated coupling does not match the grid")
        return np.array(self.values)

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.values is not None:
            d["values"] = self.values.tolist()
        return d


@dataclass(frozen=True)
class EvolutionParams:
    dt: float
    t_max: float
    store_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.t_max > 0):
            raise ConfigError("dt and t_max must be positive")
        if int(self.store_every) != self.store_every or self.store_every < 1:
            raise ConfigError("store_every must be a positive integer")
        ratio = self.t_max / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(f"t_max/dt = {ratio} is not an integer")
        object.__setattr__(self, "store_every", int(self.store_every))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def checkpoint_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.store_every)

    @property
    def times(self) -> np.ndarray:
        return self.checkpoint_steps * self.dt

    def as_dict(self) -> dict:
        return {"dt": self.dt, "t_max": self.t_max, "store_every": self.store_every}


def check_time_step(grid: PhaseSpaceGrid, h: HamiltonianSpec, dt: float):
    """Reject steps whose potential phase per step can exceed pi anywhere on the grid.

    The kinetic factor is applied exactly in momentum space and needs no bound.
    """
    phase = h.potential_range(grid) * dt / grid.hbar
    if phase > np.pi:
        limit = np.pi * grid.hbar / h.potential_range(grid)
        raise ConfigError(f"dt={dt:g} too large: potential phase per step {phase:.3g} > pi (use dt <= {limit:.3g})")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def __iter__(self):
        return iter(self.states)


class SplitOperator:
    """Strang splitting ``exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2)`` on a batch of states.

    Rows of the batch share the Hamiltonian but each row may carry its own
    source ``J_r(t)`` multiplying the coupling ``V(x)``.  Potential kicks of
    consecutive steps are fused between checkpoints.
    """

    def __init__(self, grid: PhaseSpaceGrid, h: HamiltonianSpec, dt: float,
                 coupling: Optional[CouplingFunction] = None, check_dt: bool = True):
        if check_dt:
            check_time_step(grid, h, dt)
        self.grid, self.h, self.dt = grid, h, float(dt)
        self.coupling = coupling or CouplingFunction.position()
        hb = grid.hbar
        x = grid.x
        self._static_half = np.exp(-0.5j * h.static_potential(x) * dt / hb)
        self._static_full = self._static_half ** 2
        if h.has_kinetic:
            self._kinetic = np.exp(-0.5j * grid.p ** 2 * dt / (h.mass * hb))
        else:
            self._kinetic = None
        self._vx = self.coupling.evaluate(grid)
        self._block = 32 if grid.n_points % 32 == 0 else 1

    def _linear_phase(self, c):
        """``exp(-i c_r x_j / hbar)`` for a vector of coefficients ``c``."""
        g = self.grid
        c = np.asarray(c, dtype=float)[:, None]
        b = self._block
        if b == 1:
            return np.exp(-1j * c * g.x / g.hbar)
        n = g.n_points
        coarse = np.exp(-1j * c * (g.x_min + g.dx * b * np.arange(n // b)) / g.hbar)
        fine = np.exp(-1j * c * (g.dx * np.arange(b)) / g.hbar)
        return (coarse[:, :, None] * fine[:, None, :]).reshape(len(c), n)

    def kick_phase(self, drive_coef, source_coef, full):
        """Diagonal kick factors, shape ``(R, N)``.

        ``drive_coef`` (scalar) and ``source_coef`` (``(R,)``) are time
        integrals of the drive and source over the kick.
        """
        static = self._static_full if full else self._static_half
        source_coef = np.asarray(source_coef, dtype=float)
        if self.coupling.is_linear:
            return static * self._linear_phase(drive_coef + source_coef)
        phase = static * self._linear_phase(np.full(source_coef.shape, drive_coef))
        return phase * np.exp(-1j * np.outer(source_coef, self._vx) / self.grid.hbar)

    def kinetic(self, batch):
        if self._kinetic is None:
            return batch
        return sfft.ifft(self._kinetic * sfft.fft(batch, axis=-1), axis=-1)

    def half_step_coefficients(self, step: int, source_step):
        """Drive and source integrals over one half step."""
        t_mid = (step + 0.5) * self.dt
        drive = float(self.h.drive(t_mid)) * 0.5 * self.dt
        return drive, source_step * 0.5 * self.dt

    def iterate(self, batch, n_steps: int, source=None, checkpoint_steps=None):
        """Advance ``batch`` (``(R, N)``) by ``n_steps`` steps, yielding ``(step, batch)``.

        ``source`` is ``(R, n_steps)`` (values of ``J`` per step) or ``None``.
        Yields at step 0 and at every step listed in ``checkpoint_steps``; the
        yielded array is the live buffer and must not be modified.
        """
        psi = np.array(batch, dtype=complex)
        rows = psi.shape[0]
        if source is None:
            source = np.zeros((rows, 0))
        source = np.asarray(source, dtype=float)
        has_source = source.shape[1] > 0
        if has_source and source.shape != (rows, n_steps):
            raise ConfigError(f"source shape {source.shape} does not match {(rows, n_steps)}")
        marks = set(int(s) for s in (checkpoint_steps if checkpoint_steps is not None else [n_steps]))
        zero = np.zeros(rows)
        if 0 in marks:
            yield 0, psi
        pending = None
        for k in range(n_steps):
            drive, src = self.half_step_coefficients(k, source[:, k] if has_source else zero)
            if pending is None:
                psi *= self.kick_phase(drive, src, full=False)
            else:
                psi *= self.kick_phase(drive + pending[0], src + pending[1], full=True)
            psi = self.kinetic(psi)
            pending = (drive, src)
            if (k + 1) in marks or k + 1 == n_steps:
                psi *= self.kick_phase(pending[0], pending[1], full=False)
                pending = None
                if (k + 1) in marks:
                    yield k + 1, psi

    def run(self, batch, n_steps: int, source=None, checkpoint_steps=None,
            on_checkpoint: Optional[Callable] = None):
        """Callback form of :meth:`iterate`; returns the final batch."""
        wanted = set(int(s) for s in checkpoint_steps) if checkpoint_steps is not None else set()
        psi = None
        for step, psi in self.iterate(batch, n_steps, source, wanted | {n_steps}):
            if on_checkpoint is not None and step in wanted:
                on_checkpoint(step, psi)
        return psi


def iter_unitary(psi: WaveFunction, h: HamiltonianSpec, params: EvolutionParams,
                 source=None, coupling: Optional[CouplingFunction] = None,
                 check_dt: bool = True) -> Iterator[tuple]:
    """Yield ``(t, WaveFunction)`` at every checkpoint, starting at ``t=0``.

    ``source`` holds one value of ``J`` per step (the step average); white
    noise impulses ``W_k`` enter as ``J_k = W_k / dt``.
    """
    grid = psi.grid
    stepper = SplitOperator(grid, h, params.dt, coupling, check_dt=check_dt)
    src = None
    if source is not None:
        src = np.asarray(source, dtype=float)
        if src.shape != (params.n_steps,):
            raise ConfigError(f"source has {src.shape[0] if src.ndim else 0} values, expected {params.n_steps}")
        src = src[None, :]
    for step, batch in stepper.iterate(psi.amplitudes[None, :], params.n_steps, src, params.checkpoint_steps):
        check_leakage(grid, np.abs(batch[0]) ** 2)
        yield step * params.dt, WaveFunction(grid, batch[0])


def evolve_unitary(psi: WaveFunction, h: HamiltonianSpec, params: EvolutionParams,
                   source=None, coupling: Optional[CouplingFunction] = None,
                   check_dt: bool = True) -> Trajectory:
    """Unitary evolution under ``H0 + V(x) J(t)``, stored every ``store_every`` steps."""
    states = [state for _, state in iter_unitary(psi, h, params, source, coupling, check_dt)]
    return Trajectory(params.times, states)


def decoherence_factor(grid: PhaseSpaceGrid, coupling: CouplingFunction, diffusion_d: float, tau: float):
    """``exp(-D (V(x)-V(x'))^2 tau / hbar^2)``: exact white-noise averaging over ``tau``."""
    v = coupling.evaluate(grid)
    diff = v[:, None] - v[None, :]
    return np.exp(-diffusion_d * diff ** 2 * tau / grid.hbar ** 2)


class MasterStepper:
    """Strang step for ``rho' = -i[H0, rho]/hbar - (D/hbar^2)[V, [V, rho]]``.

    Potential kicks and decoherence are both diagonal in the position
    representation and are applied together as one elementwise factor.
    """

    def __init__(self, grid, h, coupling, diffusion_d, dt, check_dt=True):
        if diffusion_d < 0:
            raise ConfigError("diffusion_d must be non-negative")
        self.unitary = SplitOperator(grid, h, dt, None, check_dt=check_dt)
        self.grid = grid
        self._deco_half = decoherence_factor(grid, coupling, diffusion_d, 0.5 * dt)
        self._deco_full = self._deco_half ** 2
        k = self.unitary._kinetic
        self._kin2 = None if k is None else k[:, None] * k.conj()[None, :]

    def _kick(self, rho, drive, full):
        p = self.unitary.kick_phase(drive, np.zeros(1), full)[0]
        deco = self._deco_full if full else self._deco_half
        rho *= (p[:, None] * p.conj()[None, :]) * deco

    def _kinetic(self, rho):
        if self._kin2 is None:
            return rho
        r = sfft.ifft(sfft.fft(rho, axis=0), axis=1)
        r *= self._kin2
        return sfft.fft(sfft.ifft(r, axis=0), axis=1)

    def run(self, rho, n_steps, checkpoint_steps, on_checkpoint):
        rho = np.array(rho, dtype=complex)
        marks = set(int(s) for s in checkpoint_steps)
        if 0 in marks:
            on_checkpoint(0, rho)
        pending = None
        for k in range(n_steps):
            drive, _ = self.unitary.half_step_coefficients(k, 0.0)
            if pending is None:
                self._kick(rho, drive, full=False)
            else:
                self._kick(rho, drive + pending, full=True)
            rho = self._kinetic(rho)
            pending = drive
            if (k + 1) in marks or k + 1 == n_steps:
                self._kick(rho, pending, full=False)
                pending = None
                if (k + 1) in marks:
                    on_checkpoint(k + 1, rho)
        return rho


def evolve_master(rho: DensityMatrix, h: HamiltonianSpec, coupling: Optional[CouplingFunction],
                  diffusion_d: float, params: EvolutionParams, check_dt: bool = True,
                  on_checkpoint: Optional[Callable] = None) -> Trajectory:
    """White-noise master equation, stored every ``store_every`` steps.

    With ``on_checkpoint(t, DensityMatrix)`` given, states are streamed to the
    callback instead of being kept in memory.
    """
    grid = rho.grid
    coupling = coupling or CouplingFunction.position()
    stepper = MasterStepper(grid, h, coupling, diffusion_d, params.dt, check_dt=check_dt)
    states = []

    def record(step, r):
        check_leakage(grid, np.real(np.diag(r)))
        state = DensityMatrix(grid, r)
        if on_checkpoint is None:
            states.append(state)
        else:
            on_checkpoint(step * params.dt, state)

    stepper.run(rho.elements, params.n_steps, params.checkpoint_steps, record)
    return Trajectory(params.times, states)
