"""Noise ensembles: source sampling, perturbed evolutions and their averages."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, LeakageError
from .observables import DecayTrace, echo_curvature_ratio, sigma_bar
from .phasespace import (DensityMatrix, WaveFunction, boundary_leakage,
                         LEAKAGE_LIMIT, wigner_transform)
from .propagators import (CouplingFunction, EvolutionParams, HamiltonianSpec,
                          SplitOperator)

logger = logging.getLogger(__name__)

KERNELS = ("white", "flat")
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseProcess:
    """Gaussian source ``J(t)`` with a white or a flat (time-independent) kernel.

    White noise has ``<J(t)J(t')> = 2 D delta(t-t')``, which yields momentum
    diffusion ``D`` in the Wigner picture; a flat kernel has a single
    amplitude ``J0 ~ N(0, nu0)`` per realization.
    """

    kernel: str = "white"
    diffusion_d: float = 0.0
    variance_nu0: float = 0.0
    coupling: CouplingFunction = field(default_factory=CouplingFunction.position)
    seed: int = 0
    n_realizations: int = 100

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.diffusion_d < 0 or self.variance_nu0 < 0:
            raise ConfigError("noise strengths must be non-negative")
        if int(self.n_realizations) != self.n_realizations or self.n_realizations < 1:
            raise ConfigError("n_realizations must be a positive integer")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "n_realizations", int(self.n_realizations))

    @classmethod
    def white(cls, diffusion_d, n_realizations=100, seed=0, coupling=None):
        return cls("white", diffusion_d, 0.0, coupling or CouplingFunction.position(), seed, n_realizations)

    @classmethod
    def flat(cls, variance_nu0, n_realizations=100, seed=0, coupling=None):
        return cls("flat", 0.0, variance_nu0, coupling or CouplingFunction.position(), seed, n_realizations)

    @property
    def strength(self) -> float:
        return self.diffusion_d if self.kernel == "white" else self.variance_nu0

    def as_dict(self) -> dict:
        d = {"kernel": self.kernel, "seed": self.seed, "n_realizations": self.n_realizations,
             "coupling": self.coupling.as_dict()}
        if self.kernel == "white":
            d["diffusion_d"] = self.diffusion_d
        else:
            d["variance_nu0"] = self.variance_nu0
        return d


def realization_rng(seed: int, realization_index: int) -> np.random.Generator:
    """Independent stream keyed by ``(seed, realization_index)``."""
    ss = np.random.SeedSequence([int(seed) & _SEED_MASK, int(realization_index)])
    return np.random.Generator(np.random.PCG64(ss))


def sample_realization(process: NoiseProcess, realization_index: int, n_steps: int, dt: float) -> np.ndarray:
    """Per-step source values ``J_k`` for one realization.

    For white noise the impulses ``W_k = J_k dt`` are independent with
    variance ``2 D dt``; for a flat kernel ``J_k = J0`` for all ``k``.
    """
    if not 0 <= realization_index < process.n_realizations:
        raise ConfigError(f"realization_index {realization_index} outside [0, {process.n_realizations})")
    rng = realization_rng(process.seed, realization_index)
    if process.kernel == "white":
        if process.diffusion_d == 0:
            return np.zeros(n_steps)
        return rng.standard_normal(n_steps) * math.sqrt(2 * process.diffusion_d * dt) / dt
    return np.full(n_steps, math.sqrt(process.variance_nu0) * rng.standard_normal())


@dataclass
class _Moments:
    """Streaming count/mean/M2 with pairwise merging."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=float)
        mean = samples.mean(axis=0)
        return cls(samples.shape[0], mean, ((samples - mean) ** 2).sum(axis=0))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        return _Moments(n, mean, m2)


class EnsembleAccumulator:
    """Running ensemble statistics: echo moments and, optionally, ``rho_bar``.

    ``rho_sums[i]`` holds ``sum_r psi_r psi_r^dagger`` at checkpoint ``i``.
    """

    def __init__(self, n_checkpoints: int, grid=None, keep_rho: bool = False):
        self.n_checkpoints = n_checkpoints
        self.grid = grid
        self.moments: Optional[_Moments] = None
        self.rho_sums = [None] * n_checkpoints if keep_rho else None

    @property
    def count(self) -> int:
        return 0 if self.moments is None else self.moments.count

    def add_echoes(self, echoes):
        """Add per-realization echo series, shape ``(R, n_checkpoints)``."""
        m = _Moments.from_samples(np.atleast_2d(echoes))
        self.moments = m if self.moments is None else self.moments.merge(m)

    def add_states(self, index: int, states: np.ndarray):
        if self.rho_sums is None:
            raise ConfigError("accumulator was created without density-matrix storage")
        s = states.T @ states.conj()
        self.rho_sums[index] = s if self.rho_sums[index] is None else self.rho_sums[index] + s

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        out = EnsembleAccumulator(self.n_checkpoints, self.grid, keep_rho=False)
        if self.moments is None or other.moments is None:
            out.moments = self.moments or other.moments
        else:
            out.moments = self.moments.merge(other.moments)
        if self.rho_sums is not None and other.rho_sums is not None:
            out.rho_sums = [a + b for a, b in zip(self.rho_sums, other.rho_sums)]
        return out

    @property
    def echo_mean(self) -> np.ndarray:
        return self.moments.mean

    @property
    def echo_stderr(self) -> np.ndarray:
        n = self.count
        if n < 2:
            return np.zeros_like(self.moments.mean)
        return np.sqrt(self.moments.m2 / (n - 1) / n)

    def rho_bar(self, index: int) -> DensityMatrix:
        return DensityMatrix(self.grid, self.rho_sums[index] / self.count)


def _tree_reduce(items, combine):
    items = list(items)
    while len(items) > 1:
        nxt = [combine(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


@dataclass
class _BlockResult:
    echoes: np.ndarray                  # (R_b, T)
    rho_sums: Optional[list]            # T x (N, N) or None
    reference: Optional[np.ndarray]     # (T, N) unperturbed states
    max_leakage: float = 0.0            # worst single-realization boundary leakage


def _simulate_block(psi0: WaveFunction, h: HamiltonianSpec, process: NoiseProcess,
                    params: EvolutionParams, indices: Sequence[int], keep_rho: bool,
                    keep_reference: bool, check_dt: bool, on_checkpoint=None) -> _BlockResult:
    """Evolve the unperturbed state (row 0) with the realizations ``indices``."""
    grid = psi0.grid
    n_steps = params.n_steps
    steps = list(params.checkpoint_steps)
    index_of = {s: i for i, s in enumerate(steps)}
    n_rows = len(indices) + 1
    source = np.zeros((n_rows, n_steps))
    for row, idx in enumerate(indices, start=1):
        source[row] = sample_realization(process, idx, n_steps, params.dt)
    batch = np.repeat(psi0.amplitudes[None, :], n_rows, axis=0)
    stepper = SplitOperator(grid, h, params.dt, process.coupling, check_dt=check_dt)
    echoes = np.empty((len(indices), len(steps)))
    rho_sums = [None] * len(steps) if keep_rho else None
    reference = np.empty((len(steps), grid.n_points), dtype=complex) if keep_reference else None
    max_row_leak = 0.0
    for step, psi in stepper.iterate(batch, n_steps, source, steps):
        i = index_of[step]
        leaked = boundary_leakage(grid, np.abs(psi) ** 2)
        max_row_leak = max(max_row_leak, float(leaked[1:].max()))
        for who, value in (("unperturbed state", leaked[0]), ("ensemble mean", leaked[1:].mean())):
            if value > LEAKAGE_LIMIT:
                worst = indices[int(np.argmax(leaked[1:]))]
                raise LeakageError(f"boundary leakage {value:.3g} in {who} at t={step * params.dt:g} "
                                   f"(worst realization {worst})", leaked=float(value), realization=worst)
        ref, rest = psi[0], psi[1:]
        amp = (rest @ ref.conj()) * grid.dx
        echoes[:, i] = amp.real ** 2 + amp.imag ** 2
        if reference is not None:
            reference[i] = ref
        if on_checkpoint is not None:
            on_checkpoint(i, ref, rest)
        elif rho_sums is not None:
            rho_sums[i] = rest.T @ rest.conj()
    return _BlockResult(echoes, rho_sums, reference, max_row_leak)


def _purity_jackknife(states: np.ndarray, dx: float):
    """Purity of the mean projector of ``states`` (rows) and its jackknife error.

    Uses the Gram matrix: ``Tr(rho_bar^2) = sum |<i|j>|^2 / R^2``.
    """
    r = states.shape[0]
    gram = (states.conj() @ states.T) * dx
    a = gram.real ** 2 + gram.imag ** 2
    total = float(a.sum())
    value = total / r ** 2
    if r < 2:
        return value, math.nan
    loo = (total - 2 * a.sum(axis=1) + np.diag(a)) / (r - 1) ** 2
    err = math.sqrt((r - 1) / r * float(np.sum((loo - loo.mean()) ** 2)))
    return value, err


def _purity_block_jackknife(rho_sums, counts, dx: float):
    """Purity from per-block projector sums with a leave-one-block-out error."""
    b = len(rho_sums)
    t = np.empty((b, b))
    for i in range(b):
        for j in range(i, b):
            t[i, j] = t[j, i] = float(np.sum(rho_sums[i] * rho_sums[j].conj()).real) * dx ** 2
    n = counts.sum()
    value = float(t.sum()) / n ** 2
    loo = np.array([(t.sum() - 2 * t[k].sum() + t[k, k]) / (n - counts[k]) ** 2 for k in range(b)])
    err = math.sqrt((b - 1) / b * float(np.sum((loo - loo.mean()) ** 2)))
    return value, err


@dataclass
class EnsembleRun:
    """Everything produced by :func:`run_ensemble`."""

    trace: DecayTrace
    accumulator: EnsembleAccumulator
    snapshots: dict = field(default_factory=dict)   # t -> (rho_0, rho_bar)


def run_ensemble(psi0: WaveFunction, h: HamiltonianSpec, process: NoiseProcess, params: EvolutionParams,
                 *, compute_purity: bool = True, compute_sigma: bool = False,
                 snapshot_times: Sequence[float] = (), block_size: Optional[int] = None,
                 n_jobs: int = 1, check_dt: bool = True) -> EnsembleRun:
    """Monte-Carlo echo ensemble with optional purity, wavelength scales and snapshots.

    Realizations are split into blocks of ``block_size`` (all of them by
    default).  With one block the density-matrix diagnostics are evaluated on
    the fly; with several, each block returns per-checkpoint ``rho_bar`` sums
    that are combined in a fixed pairwise order, so ``n_jobs`` never changes
    the result.

    The leakage monitor watches the unperturbed state and the ensemble-mean
    density; the worst single realization is reported in the trace metadata.
    """
    if process.n_realizations < 2:
        raise ConfigError("an ensemble needs at least two realizations")
    grid = psi0.grid
    times = params.times
    n_t = len(times)
    snap_idx = {int(np.argmin(np.abs(times - ts))) for ts in snapshot_times}
    need_rho = compute_purity or compute_sigma or bool(snap_idx)
    r_total = process.n_realizations
    size = block_size or r_total
    blocks = [list(range(s, min(s + size, r_total))) for s in range(0, r_total, size)]

    purity = np.full(n_t, np.nan) if compute_purity else None
    purity_err = np.full(n_t, np.nan) if compute_purity else None
    sbar = np.full(n_t, np.nan) if compute_sigma else None
    secho = np.full(n_t, np.nan) if compute_sigma else None
    snapshots = {}

    def diagnostics(i, ref, rho_sum, count):
        rho_bar = rho_sum / count
        if compute_sigma or i in snap_idx:
            rho0 = DensityMatrix(grid, np.outer(ref, ref.conj()))
            rb = DensityMatrix(grid, rho_bar)
            if compute_sigma:
                w0, wb = wigner_transform(rho0), wigner_transform(rb)
                sbar[i] = sigma_bar(wb)
                ratio = echo_curvature_ratio(w0, wb)
                secho[i] = math.inf if ratio == 0 else 1 / math.sqrt(abs(ratio))
            if i in snap_idx:
                snapshots[float(times[i])] = (rho0, rb)

    last_rho = {}
    if len(blocks) == 1:
        def online(i, ref, rest):
            if compute_purity:
                purity[i], purity_err[i] = _purity_jackknife(rest, grid.dx)
            if compute_sigma or i in snap_idx or i == n_t - 1:
                rho_sum = rest.T @ rest.conj()
                diagnostics(i, ref, rho_sum, rest.shape[0])
                if i == n_t - 1:
                    last_rho["sum"] = rho_sum
        results = [_simulate_block(psi0, h, process, params, blocks[0], False, False, check_dt, online)]
    else:
        args = [(psi0, h, process, params, b, need_rho, need_rho, check_dt) for b in blocks]
        if n_jobs == 1:
            results = [_simulate_block(*a) for a in args]
        else:
            from joblib import Parallel, delayed
            results = Parallel(n_jobs=n_jobs)(delayed(_simulate_block)(*a) for a in args)

    accs = []
    for res in results:
        acc = EnsembleAccumulator(n_t, grid, keep_rho=res.rho_sums is not None)
        acc.add_echoes(res.echoes)
        if res.rho_sums is not None:
            acc.rho_sums = res.rho_sums
        accs.append(acc)
    total = _tree_reduce(accs, lambda a, b: a.merge(b))
    if len(blocks) > 1 and need_rho:
        ref = results[0].reference
        counts = np.array([len(b) for b in blocks], dtype=float)
        for i in range(n_t):
            diagnostics(i, ref[i], total.rho_sums[i], total.count)
            if compute_purity:
                purity[i], purity_err[i] = _purity_block_jackknife(
                    [r.rho_sums[i] for r in results], counts, grid.dx)
    elif "sum" in last_rho:
        total.rho_sums = [None] * (n_t - 1) + [last_rho["sum"]]

    meta = {"n_realizations": r_total, "block_size": size, "kernel": process.kernel,
            "strength": process.strength, "seed": process.seed,
            "max_realization_leakage": max(r.max_leakage for r in results)}
    trace = DecayTrace(times, total.echo_mean, total.echo_stderr, purity, sbar, secho, meta, purity_err)
    return EnsembleRun(trace, total, snapshots)


def run_echo_ensemble(psi0: WaveFunction, h: HamiltonianSpec, process: NoiseProcess,
                      params: EvolutionParams, **kwargs) -> DecayTrace:
    """Ensemble-averaged echo ``M(t)`` with standard errors and purity of ``rho_bar``."""
    return run_ensemble(psi0, h, process, params, **kwargs).trace


@dataclass(frozen=True)
class InequalityMargin:
    margin: np.ndarray       # purity - m_bar^2
    error: np.ndarray        # propagated Monte-Carlo error of m_bar^2
    violated: np.ndarray     # margin < -3 error

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.violated))


def inequality_margin(trace: DecayTrace, n_sigma: float = 3.0) -> InequalityMargin:
    """``purity - m_bar^2`` per checkpoint, flagged where it is below ``-n_sigma`` errors."""
    if trace.purity is None or trace.m_bar is None:
        raise ConfigError("trace needs both m_bar and purity")
    margin = trace.purity - trace.m_bar ** 2
    err = 2 * np.abs(trace.m_bar) * trace.m_stderr
    # a tiny absolute slack absorbs round-off when both sides equal one
    violated = margin < -(n_sigma * err + 1e-12)
    return InequalityMargin(margin, err, violated)
