"""Echo and purity diagnostics: wavelength scales, region split, rate fits."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import least_squares

from .exceptions import (ConfigError, DegenerateStateError, FloorDominatedError,
                         InsufficientDecayError)
from .phasespace import WignerFunction

TRACE_COLUMNS = ("t", "m_bar", "m_stderr", "purity", "sigma_bar", "sigma_echo")


@dataclass
class DecayTrace:
    """Time series of the ensemble echo and companion diagnostics."""

    times: np.ndarray
    m_bar: np.ndarray
    m_stderr: np.ndarray
    purity: Optional[np.ndarray] = None
    sigma_bar: Optional[np.ndarray] = None
    sigma_echo: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)
    purity_stderr: Optional[np.ndarray] = None   # jackknife error, not part of the CSV schema

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.m_bar = np.asarray(self.m_bar, dtype=float)
        self.m_stderr = np.asarray(self.m_stderr, dtype=float)
        n = len(self.times)
        for name in ("m_bar", "m_stderr", "purity", "sigma_bar", "sigma_echo", "purity_stderr"):
            col = getattr(self, name)
            if col is None:
                continue
            col = np.asarray(col, dtype=float)
            setattr(self, name, col)
            if col.shape != (n,):
                raise ConfigError(f"{name} has shape {col.shape}, expected ({n},)")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigError("trace times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def column(self, name):
        if name == "t":
            return self.times
        return getattr(self, name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        cols = [self.column(c) for c in TRACE_COLUMNS]
        for i in range(len(self)):
            writer.writerow(["" if c is None else repr(float(c[i])) for c in cols])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, metadata=None) -> "DecayTrace":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if tuple(header) != TRACE_COLUMNS:
            raise ConfigError(f"unexpected trace header {header}")
        data = {}
        for j, name in enumerate(TRACE_COLUMNS):
            vals = [r[j] for r in body]
            data[name] = None if all(v == "" for v in vals) else np.array(vals, dtype=float)
        return cls(data["t"], data["m_bar"], data["m_stderr"], data["purity"],
                   data["sigma_bar"], data["sigma_echo"], metadata or {})


@dataclass
class RateFit:
    """Result of fitting ``a exp(-lambda t) + b exp(-Gamma t)`` to an echo trace."""

    a: float
    b: float
    rate_lyapunov: float
    rate_fgr: float
    fit_window: tuple
    residual: float
    floor: float
    model: str = "single"
    rate_lyapunov_err: float = 0.0
    rate_fgr_err: float = 0.0
    n_points: int = 0
    residual_single: float = float("nan")
    residual_double: float = float("nan")

    @property
    def dominant_rate(self) -> float:
        """Asymptotic (slowest non-zero) decay rate."""
        rates = [r for r, amp in ((self.rate_lyapunov, self.a), (self.rate_fgr, self.b)) if amp > 0]
        return min(rates) if rates else 0.0

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * np.exp(-self.rate_lyapunov * t) + self.b * np.exp(-self.rate_fgr * t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit_window"] = list(self.fit_window)
        d["dominant_rate"] = self.dominant_rate
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _p_derivative(values: np.ndarray, dp: float, order: int) -> np.ndarray:
    k = 2 * np.pi * sfft.fftfreq(values.shape[1], d=dp)
    spec = sfft.fft(values, axis=1) * (1j * k) ** order
    return sfft.ifft(spec, axis=1).real


def sigma_bar(w: WignerFunction) -> float:
    """Dominant momentum wavelength: ``sigma_bar^-2 = int (dW/dp)^2 / int W^2``."""
    norm = float(np.sum(w.values ** 2) * w.cell_area)
    if norm <= 1e-12:
        raise DegenerateStateError("Wigner function is numerically zero")
    dw = _p_derivative(w.values, w.grid.wigner_dp, 1)
    grad = float(np.sum(dw ** 2) * w.cell_area)
    if grad <= 0:
        raise DegenerateStateError("Wigner function has no momentum structure")
    return math.sqrt(norm / grad)


def echo_curvature_ratio(w0: WignerFunction, w_bar: WignerFunction) -> float:
    """Signed ratio ``int W0 d^2W/dp^2 / int W0 W`` (negative for decaying echoes)."""
    w0.grid.check_same(w_bar.grid)
    overlap = float(np.sum(w0.values * w_bar.values) * w0.cell_area)
    if overlap <= 1e-12:
        raise DegenerateStateError(f"vanishing overlap {overlap:.3g}")
    curv = _p_derivative(w_bar.values, w0.grid.wigner_dp, 2)
    return float(np.sum(w0.values * curv) * w0.cell_area) / overlap


def sigma_echo(w0: WignerFunction, w_bar: WignerFunction) -> float:
    """Echo scale ``sigma`` with ``sigma^-2 = |echo_curvature_ratio|``."""
    ratio = echo_curvature_ratio(w0, w_bar)
    if ratio == 0:
        return math.inf
    return 1.0 / math.sqrt(abs(ratio))


def region_decomposition(w0: WignerFunction, w_bar: WignerFunction, smoothing_width: float) -> dict:
    """Split the overlap ``2 pi hbar int W0 W`` into classical and oscillatory parts.

    ``W0`` is smoothed along momentum with a Gaussian of standard deviation
    ``smoothing_width`` (momentum units).  A cell is classical when ``W0 > 0``
    and the smoothed value keeps more than half of ``|W0|``; fringes average
    out under smoothing and land in the oscillatory region.
    """
    w0.grid.check_same(w_bar.grid)
    dp = w0.grid.wigner_dp
    if smoothing_width < dp:
        raise ConfigError(f"smoothing_width {smoothing_width:g} below the momentum cell {dp:g}")
    smooth = gaussian_filter1d(w0.values, smoothing_width / dp, axis=1, mode="constant")
    classical = (w0.values > 0) & (smooth > 0.5 * np.abs(w0.values))
    weight = 2 * np.pi * w0.grid.hbar * w0.cell_area
    prod = w0.values * w_bar.values
    m_c = float(np.sum(prod[classical]) * weight)
    m_o = float(np.sum(prod[~classical]) * weight)
    return {"m_classical": m_c, "m_oscillatory": m_o,
            "classical_fraction": float(classical.mean())}


def fringe_amplitude(w: WignerFunction, k_p: float, x0: float = 0.0) -> float:
    """Amplitude of the ``cos(k_p p)`` component of ``W(x0, p)``."""
    i = int(np.argmin(np.abs(w.x - x0)))
    row = w.values[i]
    comp = np.sum(row * np.exp(-1j * k_p * w.p)) * w.grid.wigner_dp
    return float(2 * abs(comp))


# -- rate fitting -----------------------------------------------------------

def _detect_floor(m: np.ndarray) -> float:
    n_tail = max(2, int(math.ceil(0.1 * len(m))))
    tail = m[-n_tail:]
    floor = float(np.median(tail))
    if floor <= 0:
        return 0.0
    half = n_tail // 2
    first, second = np.median(tail[:half]), np.median(tail[half:])
    if first <= 0 or second <= 0:
        return floor
    # a tail that still drops by >22% is decay, not saturation
    if math.log(first / second) > 0.25:
        return 0.0
    return floor


def _fit_single(t, y):
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (intercept + slope * t)
    return -slope, intercept, float(np.sqrt(np.mean(resid ** 2)))


def _double_log_model(theta, t):
    la, lb, k1, k2 = theta
    return np.logaddexp(la - k1 * t, lb - k2 * t)


def _fit_double(t, y, starts):
    best = None
    for k1, k2, la, lb in starts:
        x0 = np.array([la, lb, max(k1, 1e-8), max(k2, 1e-8)])
        try:
            res = least_squares(lambda th: _double_log_model(th, t) - y, x0,
                                bounds=([-50, -50, 0, 0], [5, 5, np.inf, np.inf]),
                                x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
        except ValueError:
            continue
        la, lb, k1, k2 = res.x
        if k1 > k2:
            la, lb, k1, k2 = lb, la, k2, k1
        resid = float(np.sqrt(np.mean(res.fun ** 2)))
        cand = (resid, k2, la, lb, k1)
        if best is None or resid < best[0] * (1 - 1e-9) or (abs(resid - best[0]) <= 1e-9 * best[0] and k2 < best[1]):
            best = cand
    if best is None:
        return None
    resid, k_fast, la_slow, lb_fast, k_slow = best
    return k_slow, k_fast, la_slow, lb_fast, resid


def _double_starts(t, y, k_single, intercept, seed_rate):
    half = len(t) // 2
    k_early = _fit_single(t[:half], y[:half])[0] if half >= 3 else 2 * k_single
    k_late = _fit_single(t[half:], y[half:])[0] if len(t) - half >= 3 else 0.5 * k_single
    k_early, k_late = max(k_early, 1e-6), max(k_late, 1e-6)
    lh = intercept - math.log(2)
    starts = [
        (k_late, max(k_early, 1.5 * k_late), lh, lh),
        (0.5 * k_single, 2.0 * k_single, lh, lh),
        (k_late, 4.0 * max(k_early, k_late), intercept, intercept - 1.0),
        (k_single, max(seed_rate, 1e-6), lh, lh),
    ]
    return starts


def _window_mask(t, m, floor, window):
    if window is not None:
        lo, hi = window
        mask = (t >= lo) & (t <= hi) & (m > 0)
        return mask
    below = np.flatnonzero(m < 0.9)
    if below.size == 0:
        raise InsufficientDecayError("echo never drops below 0.9")
    start = int(below[0])
    limit = 3 * floor
    stop = start
    while stop < len(m) and m[stop] > limit and m[stop] > 0:
        stop += 1
    mask = np.zeros(len(m), dtype=bool)
    mask[start:stop] = True
    return mask


def fit_decay_rates(trace: DecayTrace, diffusion_d: float = 0.0, k_p_hint: Optional[float] = None,
                    *, window=None, min_points: int = 20, regime: str = "auto",
                    n_bootstrap: int = 100, random_state=0) -> RateFit:
    """Fit the echo decay with one or two exponentials on a log scale.

    The saturation floor is the median of the last 10% of the trace (taken as
    zero if that tail is still decaying).  The fit window runs from the first
    point below 0.9 to the last point above three times the floor, unless
    ``window=(t_lo, t_hi)`` is given.  A second exponential is kept only if it
    lowers the RMS log-residual by more than 20% and the two rates differ by
    more than 10%.

    ``regime`` decides how a rate is labelled: ``"auto"`` calls a rate the
    FGR rate when it is within a factor two of ``diffusion_d * k_p_hint**2``
    (for a double fit: the rate closest to it; without a hint the faster
    one), ``"lyapunov"`` or ``"fgr"`` force the label of a single-rate fit.
    """
    if regime not in ("auto", "lyapunov", "fgr"):
        raise ConfigError(f"unknown regime {regime!r}")
    t_all, m_all = trace.times, trace.m_bar
    err_all = trace.m_stderr if trace.m_stderr is not None else np.zeros_like(m_all)
    floor = _detect_floor(m_all)
    mask = _window_mask(t_all, m_all, floor, window)
    n = int(mask.sum())
    if n < min_points:
        raise FloorDominatedError(f"only {n} points in the fit window (need {min_points})")
    t, m, err = t_all[mask], m_all[mask], err_all[mask]
    seed_rate = diffusion_d * k_p_hint ** 2 if k_p_hint else None

    def fit(y):
        k1, icpt, r1 = _fit_single(t, y)
        starts = _double_starts(t, y, k1, icpt, seed_rate if seed_rate else 3 * k1)
        dbl = _fit_double(t, y, starts)
        return (k1, icpt, r1), dbl

    y = np.log(m)
    (k1, icpt, r1), dbl = fit(y)
    use_double = False
    if dbl is not None and r1 > 1e-9:
        k_slow, k_fast, _, _, r2 = dbl
        distinct = (k_fast - k_slow) > 0.1 * k_fast
        use_double = distinct and r2 < 0.8 * r1
    r2 = dbl[4] if dbl is not None else float("nan")

    def label(single_rate=None, pair=None):
        """Return (is_fgr flags) for the fitted rates."""
        if pair is None:
            if regime != "auto":
                return regime == "fgr"
            if seed_rate:
                return abs(math.log(max(single_rate, 1e-300) / seed_rate)) < math.log(2)
            return False
        k_slow, k_fast = pair
        if seed_rate:
            return abs(math.log(max(k_fast, 1e-300) / seed_rate)) <= abs(math.log(max(k_slow, 1e-300) / seed_rate))
        return True  # fast rate is the FGR one

    def assemble(single, dbl_fit):
        if not use_double:
            k, c = single[0], single[1]
            amp = math.exp(c)
            if label(single_rate=k):
                return 0.0, amp, 0.0, max(k, 0.0)
            return amp, 0.0, max(k, 0.0), 0.0
        k_slow, k_fast, la, lb, _ = dbl_fit
        if label(pair=(k_slow, k_fast)):
            return math.exp(la), math.exp(lb), k_slow, k_fast
        return math.exp(lb), math.exp(la), k_fast, k_slow

    a, b, rl, rf = assemble((k1, icpt), dbl)
    rl_err = rf_err = 0.0
    if n_bootstrap and np.any(err > 0):
        rng = np.random.default_rng(random_state)
        samples = []
        for _ in range(n_bootstrap):
            mb = m + err * rng.standard_normal(len(m))
            mb = np.clip(mb, 1e-300, None)
            yb = np.log(mb)
            if use_double:
                kb1, icb, _ = _fit_single(t, yb)
                db = _fit_double(t, yb, [(dbl[0], dbl[1], dbl[2], dbl[3])])
                if db is None:
                    continue
                samples.append(assemble((kb1, icb), db)[2:])
            else:
                kb1, icb, _ = _fit_single(t, yb)
                samples.append(assemble((kb1, icb), None)[2:])
        if samples:
            s = np.array(samples)
            rl_err, rf_err = (float(v) for v in s.std(axis=0, ddof=1))
    return RateFit(a=a, b=b, rate_lyapunov=rl, rate_fgr=rf,
                   fit_window=(float(t[0]), float(t[-1])),
                   residual=r2 if use_double else r1, floor=floor,
                   model="double" if use_double else "single",
                   rate_lyapunov_err=rl_err, rate_fgr_err=rf_err, n_points=n,
                   residual_single=r1, residual_double=r2)


def log_slope(times, values, window=None) -> float:
    """Least-squares decay rate ``-d ln(values)/dt`` over ``window``."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    mask = v > 0
    if window is not None:
        mask &= (t >= window[0]) & (t <= window[1])
    if mask.sum() < 2:
        raise FloorDominatedError("fewer than two usable points for a log slope")
    return -float(np.polyfit(t[mask], np.log(v[mask]), 1)[0])
