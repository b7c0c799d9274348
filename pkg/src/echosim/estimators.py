"""scikit-learn style wrappers around the rate fitter, the Wigner transform and Benettin."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .analytic import _benettin_logs, _estimate_from_logs
from .exceptions import ConfigError
from .observables import DecayTrace, fit_decay_rates
from .phasespace import DensityMatrix, PhaseSpaceGrid, wigner_transform
from .propagators import HamiltonianSpec


def _times(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single time column, got {X.shape[1]}")
        X = X[:, 0]
    return X


class DecayRateFitter(RegressorMixin, BaseEstimator):
    """Fit ``a exp(-lambda t) + b exp(-Gamma t)`` to an echo curve.

    ``X`` holds the times (shape ``(n,)`` or ``(n, 1)``), ``y`` the echo.
    Standard errors of ``y`` can be passed to :meth:`fit` as ``m_stderr``
    and drive the bootstrap error bars.
    """

    def __init__(self, diffusion_d=0.0, k_p_hint=None, window=None, min_points=20,
                 regime="auto", n_bootstrap=100, random_state=0):
        self.diffusion_d = diffusion_d
        self.k_p_hint = k_p_hint
        self.window = window
        self.min_points = min_points
        self.regime = regime
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def fit(self, X, y, m_stderr=None):
        t = _times(X)
        y = check_array(y, ensure_2d=False, dtype=float)
        check_consistent_length(t, y)
        err = np.zeros_like(y) if m_stderr is None else check_array(m_stderr, ensure_2d=False, dtype=float)
        check_consistent_length(t, err)
        order = np.argsort(t)
        trace = DecayTrace(t[order], y[order], err[order])
        fit = fit_decay_rates(trace, self.diffusion_d, self.k_p_hint, window=self.window,
                              min_points=self.min_points, regime=self.regime,
                              n_bootstrap=self.n_bootstrap, random_state=self.random_state)
        self.fit_result_ = fit
        self.rate_lyapunov_ = fit.rate_lyapunov
        self.rate_fgr_ = fit.rate_fgr
        self.floor_ = fit.floor
        self.model_ = fit.model
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.predict(_times(X))


def _complex_rows(X):
    # check_array refuses complex input, so validate by hand
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d array of states, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states contain NaN or inf")
    return X


class WignerTransformer(TransformerMixin, BaseEstimator):
    """Map density matrices (or pure states) to flattened Wigner functions.

    Rows of ``X`` are either wave functions of length ``N`` or density
    matrices flattened to ``N*N``; the output has ``N*N`` columns in
    ``[x, p]`` C order with ascending momenta.
    """

    def __init__(self, n_points=64, x_min=-8.0, x_max=8.0, hbar=1.0):
        self.n_points = n_points
        self.x_min = x_min
        self.x_max = x_max
        self.hbar = hbar

    def fit(self, X, y=None):
        self.grid_ = PhaseSpaceGrid(self.n_points, self.x_min, self.x_max, self.hbar)
        X = _complex_rows(X)
        n = self.grid_.n_points
        if X.shape[1] not in (n, n * n):
            raise ConfigError(f"rows must have {n} or {n * n} entries, got {X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = _complex_rows(X)
        n = self.grid_.n_points
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], n * n))
        for i, row in enumerate(X):
            rho = np.outer(row, row.conj()) if row.size == n else row.reshape(n, n)
            out[i] = wigner_transform(DensityMatrix(self.grid_, rho)).values.ravel()
        return out


class LyapunovEstimator(BaseEstimator):
    """Benettin exponents for a batch of initial conditions ``X = [[x0, p0], ...]``."""

    def __init__(self, hamiltonian=None, t_total=200.0, renorm_every=0.5, dt=1e-3,
                 escape_bound=1e6, transient_fraction=0.1, n_blocks=10):
        self.hamiltonian = hamiltonian
        self.t_total = t_total
        self.renorm_every = renorm_every
        self.dt = dt
        self.escape_bound = escape_bound
        self.transient_fraction = transient_fraction
        self.n_blocks = n_blocks

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("initial conditions need two columns (x0, p0)")
        h = self.hamiltonian if self.hamiltonian is not None else HamiltonianSpec.double_well()
        if not h.has_kinetic:
            raise ConfigError("classical flow needs a finite mass")
        logs = _benettin_logs(h, X[:, 0].copy(), X[:, 1].copy(), self.t_total, self.renorm_every,
                              self.dt, self.escape_bound)
        lam, err, _, _ = _estimate_from_logs(logs, self.renorm_every, self.transient_fraction, self.n_blocks)
        self.exponents_ = lam
        self.stderr_ = err
        self.lambda_ = float(lam.mean())
        self.n_features_in_ = 2
        return self

    def predict(self, X=None):
        """Per-trajectory exponents of the fitted batch."""
        check_is_fitted(self, "exponents_")
        return self.exponents_.copy()
