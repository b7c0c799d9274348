"""Closed-form echo oracles and classical Lyapunov exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DomainError, InsufficientDecayError, TrajectoryEscapeError
from .propagators import HamiltonianSpec


@dataclass(frozen=True)
class IOEchoParams:
    """Parameters of the exact inverted-oscillator echo.

    ``sigma_bar_sq`` is the critical momentum width squared and ``sigma_i``
    the momentum dispersion of the initial packet; ``r = sigma_bar_sq / (4 sigma_i^2)``.
    """

    lambda0: float
    sigma_bar_sq: float
    sigma_i: float

    def __post_init__(self):
        vals = (self.lambda0, self.sigma_bar_sq, self.sigma_i)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("IO echo parameters must be finite")
        if not (self.lambda0 > 0 and self.sigma_i > 0 and self.sigma_bar_sq >= 0):
            raise ConfigError("need lambda0 > 0, sigma_i > 0 and sigma_bar_sq >= 0")

    @property
    def r(self) -> float:
        return self.sigma_bar_sq / (4 * self.sigma_i ** 2)

    @classmethod
    def from_r(cls, lambda0: float, r: float, sigma_i: float = 1.0) -> "IOEchoParams":
        return cls(lambda0, 4 * r * sigma_i ** 2, sigma_i)

    @classmethod
    def from_diffusion(cls, lambda0: float, diffusion_d: float, sigma_i: float) -> "IOEchoParams":
        """Use the balance width ``sigma_bar^2 = 2 D / lambda``."""
        return cls(lambda0, 2 * diffusion_d / lambda0, sigma_i)


def io_echo_exact(params: IOEchoParams, t):
    """Echo of the inverted oscillator under white momentum diffusion.

    ``M(t) = [1 + r sinh(2 lt) + r^2 (sinh^2(lt) - (lt)^2)]^(-1/2)``.  This is
    exact for the minimum-uncertainty packet centred on the fixed point with
    ``sigma_x = sqrt(hbar / (2 m lambda))``, i.e. ``sigma_i = m lambda sigma_x``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    lt = params.lambda0 * t
    r = params.r
    radicand = 1 + r * np.sinh(2 * lt) + r ** 2 * (np.sinh(lt) ** 2 - lt ** 2)
    if np.any(radicand < 1 - 1e-12) or not np.all(np.isfinite(radicand)):
        raise DomainError("radicand below one: corrupted parameters")
    out = 1.0 / np.sqrt(radicand)
    return float(out) if out.ndim == 0 else out


def io_long_time_rate(params: IOEchoParams) -> float:
    """Asymptotic decay rate ``lim -d ln M_IO / dt``, which equals ``lambda0``."""
    if params.r <= 0:
        raise InsufficientDecayError("r = 0: the echo does not decay")
    return params.lambda0


def fringe_decay_rate(diffusion_d: float, k_p: float) -> float:
    """Decay rate ``D k_p^2`` of Wigner fringes ``cos(k_p p)`` under momentum diffusion."""
    return diffusion_d * k_p ** 2


@dataclass(frozen=True)
class LyapunovEstimate:
    lambda_: float
    stderr: float
    t_transient: float
    n_renormalizations: int


def _benettin_logs(h: HamiltonianSpec, q, p, t_total, renorm_every, dt, escape_bound):
    """Log stretch factors, shape ``(n_renorm, n_traj)``, from leapfrog tangent dynamics."""
    q = np.array(q, dtype=float, ndmin=1)
    p = np.array(p, dtype=float, ndmin=1)
    m = h.mass
    steps_per = int(round(renorm_every / dt))
    if steps_per < 1 or abs(steps_per * dt - renorm_every) > 1e-9 * renorm_every:
        raise ConfigError("renorm_every must be a multiple of dt")
    n_renorm = int(round(t_total / renorm_every))
    if n_renorm < 10:
        raise ConfigError("t_total must span at least 10 renormalization intervals")
    dq = np.ones_like(q)
    dp = np.zeros_like(p)
    logs = np.empty((n_renorm, q.size))
    t = 0.0
    f = h.force(q, t)
    c = h.curvature(q, t)
    half = 0.5 * dt
    for i in range(n_renorm):
        for _ in range(steps_per):
            p += half * f
            dp -= half * c * dq
            q += dt * p / m
            dq += dt * dp / m
            t += dt
            f = h.force(q, t)
            c = h.curvature(q, t)
            p += half * f
            dp -= half * c * dq
        if np.any(np.abs(q) > escape_bound):
            raise TrajectoryEscapeError(f"trajectory left |x| < {escape_bound:g} at t = {t:.3g}")
        g = np.hypot(dq, dp)
        logs[i] = np.log(g)
        dq /= g
        dp /= g
    return logs


def _estimate_from_logs(logs, renorm_every, transient_fraction, n_blocks):
    n = logs.shape[0]
    skip = int(math.floor(transient_fraction * n))
    kept = logs[skip:]
    lam = kept.mean(axis=0) / renorm_every
    nb = min(n_blocks, kept.shape[0])
    usable = (kept.shape[0] // nb) * nb
    blocks = kept[:usable].reshape(nb, -1, kept.shape[1]).mean(axis=1) / renorm_every
    stderr = blocks.std(axis=0, ddof=1) / math.sqrt(nb)
    return lam, stderr, skip * renorm_every, n


def lyapunov_benettin(h: HamiltonianSpec, x0: float, p0: float, t_total: float,
                      renorm_every: float, dt: float = 1e-3, escape_bound: float = 1e6,
                      transient_fraction: float = 0.1, n_blocks: int = 10) -> LyapunovEstimate:
    """Largest Lyapunov exponent of the classical flow of ``h`` from ``(x0, p0)``.

    The tangent vector is integrated alongside the trajectory with the same
    leapfrog map and renormalized every ``renorm_every``; the first
    ``transient_fraction`` of intervals is discarded and the error comes
    from ``n_blocks`` block averages.
    """
    if not h.has_kinetic:
        raise ConfigError("classical flow needs a finite mass")
    logs = _benettin_logs(h, x0, p0, t_total, renorm_every, dt, escape_bound)
    lam, err, t_tr, n = _estimate_from_logs(logs, renorm_every, transient_fraction, n_blocks)
    return LyapunovEstimate(float(lam[0]), float(err[0]), float(t_tr), int(n))


@dataclass(frozen=True)
class ChaoticSeaEstimate:
    lambda_: float
    stderr: float
    per_trajectory: np.ndarray
    per_trajectory_stderr: np.ndarray
    accepted: np.ndarray
    initial_conditions: np.ndarray


def chaotic_sea_lyapunov(h: HamiltonianSpec, x0: float, p0: float, spread_x: float, spread_p: float,
                         n_trajectories: int = 20, t_total: float = 200.0, renorm_every: float = 0.5,
                         dt: float = 1e-3, seed: int = 0, escape_bound: float = 1e6) -> ChaoticSeaEstimate:
    """Reference exponent averaged over initial conditions drawn around ``(x0, p0)``.

    Initial conditions are Gaussian with the given spreads (use the Wigner
    widths of the initial state).  Trajectories whose exponent lies within
    two standard errors of zero are treated as regular and rejected.
    """
    rng = np.random.default_rng(seed)
    q = x0 + spread_x * rng.standard_normal(n_trajectories)
    p = p0 + spread_p * rng.standard_normal(n_trajectories)
    ics = np.column_stack([q, p])
    logs = _benettin_logs(h, q.copy(), p.copy(), t_total, renorm_every, dt, escape_bound)
    lam, err, _, _ = _estimate_from_logs(logs, renorm_every, 0.1, 10)
    accepted = lam > 2 * err
    if not np.any(accepted):
        raise InsufficientDecayError("no chaotic trajectories among the initial conditions")
    vals = lam[accepted]
    stderr = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else float(err[accepted][0])
    return ChaoticSeaEstimate(float(vals.mean()), float(stderr), lam, err, accepted, ics)
