import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echosim import (ConfigError, DecayTrace, DegenerateStateError, EvolutionParams, FloorDominatedError,
                     HamiltonianSpec, IOEchoParams, InsufficientDecayError, PhaseSpaceGrid, density_from_pure,
                     evolve_master, evolve_unitary, fit_decay_rates, fringe_amplitude, io_echo_exact,
                     make_cat_state, make_gaussian_state, mixture, overlap_trace, purity,
                     region_decomposition, sigma_bar, sigma_echo, wigner_transform)
from echosim.observables import echo_curvature_ratio, log_slope

GRID = PhaseSpaceGrid(256, -12, 12)


def wig(psi):
    return wigner_transform(density_from_pure(psi))


# -- wavelength scales ----------------------------------------------------------

@pytest.mark.parametrize("sx", [0.7, 1.0, 1.5])
def test_sigma_bar_of_gaussian(sx):
    s = GRID.hbar / (2 * sx)
    assert sigma_bar(wig(make_gaussian_state(GRID, 0.3, -0.5, sx))) == pytest.approx(s * math.sqrt(2), rel=1e-6)


def test_sigma_echo_of_identical_gaussians():
    w = wig(make_gaussian_state(GRID, 0, 0, 1.0))
    assert sigma_echo(w, w) == pytest.approx(0.5 * math.sqrt(2), rel=1e-6)
    assert echo_curvature_ratio(w, w) < 0


def test_sigma_bar_of_cat_set_by_fringes():
    # the momentum envelope adds about 2 next to k_p^2/2 = 50
    sep = 10.0
    w = wig(make_cat_state(GRID, sep, 1.0))
    k_p = sep / GRID.hbar
    assert sigma_bar(w) ** -2 == pytest.approx(k_p ** 2 / 2, rel=0.05)
    exact = type(w)(GRID, cat_wigner(w, sep))
    assert sigma_bar(w) == pytest.approx(sigma_bar(exact), rel=1e-6)


def test_sigma_bar_reflection_invariant():
    w = wig(make_cat_state(GRID, 4.0, 0.9, p0=0.7))
    flipped = type(w)(w.grid, w.values[::-1, ::-1])
    assert sigma_bar(flipped) == pytest.approx(sigma_bar(w), rel=1e-10)


@given(st.floats(0.1, 10.0))
def test_sigma_bar_scale_invariant(c):
    w = wig(make_gaussian_state(GRID, 0, 0, 0.8))
    scaled = type(w)(w.grid, c * w.values)
    assert sigma_bar(scaled) == pytest.approx(sigma_bar(w), rel=1e-10)


def test_degenerate_inputs():
    w = wig(make_gaussian_state(GRID, 0, 0, 1.0))
    zero = type(w)(w.grid, np.zeros_like(w.values))
    with pytest.raises(DegenerateStateError):
        sigma_bar(zero)
    far = wig(make_gaussian_state(GRID, 8.0, 0, 0.5))
    near = wig(make_gaussian_state(GRID, -8.0, 0, 0.5))
    with pytest.raises(DegenerateStateError):
        sigma_echo(far, near)


# -- region split ------------------------------------------------------------------

def test_region_split_gaussian_is_classical():
    w = wig(make_gaussian_state(GRID, 0, 0, 1.0))
    res = region_decomposition(w, w, smoothing_width=0.2)
    assert res["m_classical"] == pytest.approx(1.0, abs=1e-3)
    assert abs(res["m_oscillatory"]) < 1e-3


def test_region_split_cat_versus_decohered_cat():
    sep, sx = 6.0, 1.0
    cat = make_cat_state(GRID, sep, sx)
    w0 = wig(cat)
    width = 2 * GRID.hbar / sep   # a third of a fringe period
    same = region_decomposition(w0, w0, width)
    assert same["m_oscillatory"] == pytest.approx(0.5, abs=0.02)
    left = make_gaussian_state(GRID, -sep / 2, 0, sx)
    right = make_gaussian_state(GRID, sep / 2, 0, sx)
    dec = wigner_transform(mixture([left, right]))
    res = region_decomposition(w0, dec, width)
    assert abs(res["m_oscillatory"]) < 0.02
    assert res["m_classical"] == pytest.approx(0.5, abs=0.02)


@given(st.floats(2.0, 6.0), st.floats(0.2, 1.0))
def test_region_split_sums_to_overlap(sep, width):
    a = make_cat_state(GRID, sep, 1.0)
    b = make_gaussian_state(GRID, 0.5, 0.2, 0.9)
    res = region_decomposition(wig(a), wig(b), width)
    total = overlap_trace(density_from_pure(a), density_from_pure(b))
    assert res["m_classical"] + res["m_oscillatory"] == pytest.approx(total, abs=1e-8)


def test_region_split_rejects_sub_cell_smoothing():
    w = wig(make_gaussian_state(GRID, 0, 0, 1.0))
    with pytest.raises(ConfigError):
        region_decomposition(w, w, GRID.wigner_dp / 2)


def cat_wigner(w, sep):
    # closed form for sigma_x = 1, hbar = 1, well separated packets
    x, p = np.meshgrid(w.x, w.p, indexing="ij")
    g = lambda x0: np.exp(-(x - x0) ** 2 / 2 - 2 * p ** 2) / np.pi
    return 0.5 * (g(-sep / 2) + g(sep / 2)) + np.exp(-x ** 2 / 2 - 2 * p ** 2) * np.cos(sep * p) / np.pi


def test_fringe_amplitude_of_cat():
    sep = 8.0
    w = wig(make_cat_state(GRID, sep, 1.0))
    left = make_gaussian_state(GRID, -sep / 2, 0, 1.0)
    right = make_gaussian_state(GRID, sep / 2, 0, 1.0)
    dec = wigner_transform(mixture([left, right]))
    k_p = sep / GRID.hbar
    amp = fringe_amplitude(w, k_p)
    # the x=0 row is exp(-2 p^2) cos(k_p p) / pi
    expect = math.sqrt(math.pi / 2) / math.pi * (1 + math.exp(-k_p ** 2 / 2))
    assert amp == pytest.approx(expect, rel=1e-3)
    assert fringe_amplitude(dec, k_p) < 1e-3 * amp


# -- instantaneous rate identities ------------------------------------------------------

def test_rate_identities_on_harmonic_master_run():
    g = PhaseSpaceGrid(128, -10, 10)
    psi = make_gaussian_state(g, 1.0, 0.0, 0.8)
    h = HamiltonianSpec.harmonic()
    d, dt = 0.05, 0.002
    rhos = evolve_master(density_from_pure(psi), h, None, d, EvolutionParams(dt, 2.0, 250))
    pures = evolve_unitary(psi, h, EvolutionParams(dt, 2.0, 250))
    for k in (1, 2, 3):
        # finite-difference the logs over one extra step from the checkpoint
        rho, ref, t = rhos[k], pures[k], rhos.times[k]
        nxt = evolve_master(rho, h, None, d, EvolutionParams(dt, 2 * dt, 1))
        ref_next = evolve_unitary(ref, h, EvolutionParams(dt, 2 * dt, 1))
        m = [overlap_trace(density_from_pure(r), x) for r, x in zip(ref_next, nxt)]
        p = [purity(x) for x in nxt]
        echo_rate = -(math.log(m[2]) - math.log(m[0])) / (2 * dt)
        pur_rate = -(math.log(p[2]) - math.log(p[0])) / (2 * dt)
        w0, wb = wigner_transform(density_from_pure(ref_next[1])), wigner_transform(nxt[1])
        assert echo_rate == pytest.approx(d / sigma_echo(w0, wb) ** 2, rel=0.15)
        assert pur_rate == pytest.approx(2 * d / sigma_bar(wb) ** 2, rel=0.15)


# -- rate fitting ---------------------------------------------------------------------

T = np.linspace(0, 10, 201)


def test_fit_single_exponential():
    fit = fit_decay_rates(DecayTrace(T, np.exp(-0.7 * T), np.zeros_like(T)), regime="lyapunov")
    assert fit.model == "single"
    assert fit.rate_lyapunov == pytest.approx(0.7, rel=1e-8)
    assert fit.floor == 0.0


def test_fit_double_exponential():
    m = 0.5 * np.exp(-0.3 * T) + 0.5 * np.exp(-3.0 * T)
    fit = fit_decay_rates(DecayTrace(T, m, np.zeros_like(T)), diffusion_d=0.3, k_p_hint=3.0)
    assert fit.model == "double"
    assert fit.rate_lyapunov == pytest.approx(0.3, rel=1e-4)
    assert fit.rate_fgr == pytest.approx(3.0, rel=1e-4)
    assert fit.a == pytest.approx(0.5, rel=1e-4)
    assert np.allclose(fit.predict(T), m, rtol=1e-6)


def test_fit_labels_single_rate_by_fgr_hint():
    m = np.exp(-0.4 * T)
    fgr = fit_decay_rates(DecayTrace(T, m, np.zeros_like(T)), diffusion_d=0.1, k_p_hint=2.0)
    assert fgr.rate_fgr == pytest.approx(0.4) and fgr.rate_lyapunov == 0
    lyap = fit_decay_rates(DecayTrace(T, m, np.zeros_like(T)), diffusion_d=0.01, k_p_hint=2.0)
    assert lyap.rate_lyapunov == pytest.approx(0.4) and lyap.rate_fgr == 0


def test_fit_recovers_io_rate():
    t = np.linspace(0, 4, 401)
    m = io_echo_exact(IOEchoParams.from_r(1.0, 0.5), t)
    fit = fit_decay_rates(DecayTrace(t, m, np.zeros_like(t)), window=(2, 4), regime="lyapunov")
    assert fit.rate_lyapunov == pytest.approx(1.0, rel=0.02)


@given(st.floats(0.05, 5.0), st.floats(0.2, 3.0))
def test_fit_is_scale_invariant(c, rate):
    m = np.exp(-rate * T) * 0.9
    base = fit_decay_rates(DecayTrace(T, m, np.zeros_like(T)), regime="lyapunov", window=(0, 5))
    scaled = fit_decay_rates(DecayTrace(T, c * m, np.zeros_like(T)), regime="lyapunov", window=(0, 5))
    assert scaled.rate_lyapunov == pytest.approx(base.rate_lyapunov, rel=1e-8)
    assert scaled.a == pytest.approx(c * base.a, rel=1e-8)


def test_fit_floor_and_errors():
    m = np.maximum(np.exp(-0.8 * T), 0.01)
    fit = fit_decay_rates(DecayTrace(T, m, np.zeros_like(T)), regime="lyapunov")
    assert fit.floor == pytest.approx(0.01)
    assert fit.fit_window[1] < math.log(1 / 0.03) / 0.8 + 0.06
    with pytest.raises(InsufficientDecayError):
        fit_decay_rates(DecayTrace(T, np.ones_like(T), np.zeros_like(T)))
    with pytest.raises(FloorDominatedError):
        fit_decay_rates(DecayTrace(T, np.maximum(np.exp(-5 * T), 0.2), np.zeros_like(T)))
    with pytest.raises(ConfigError):
        fit_decay_rates(DecayTrace(T, m, np.zeros_like(T)), regime="other")


def test_fit_bootstrap_errors_scale_with_noise():
    rng = np.random.default_rng(0)
    m = np.exp(-0.5 * T)
    errs = []
    for s in (0.002, 0.02):
        noisy = np.clip(m + s * m * rng.standard_normal(T.size), 1e-6, None)
        fit = fit_decay_rates(DecayTrace(T, noisy, s * m), regime="lyapunov", window=(0.5, 8))
        errs.append(fit.rate_lyapunov_err)
    assert 0 < errs[0] < errs[1]


def test_log_slope():
    assert log_slope(T, np.exp(-0.3 * T), (1, 5)) == pytest.approx(0.3)
    with pytest.raises(FloorDominatedError):
        log_slope(T, np.exp(-0.3 * T), (1, 1.01))


# -- trace I/O ----------------------------------------------------------------------

def test_trace_csv_round_trip():
    t = np.linspace(0, 1, 5)
    tr = DecayTrace(t, np.exp(-t), 0.01 * t, purity=np.exp(-2 * t) / 3)
    back = DecayTrace.from_csv(tr.to_csv())
    assert np.array_equal(back.m_bar, tr.m_bar)
    assert np.array_equal(back.purity, tr.purity)
    assert back.sigma_bar is None
    assert tr.to_csv().splitlines()[0] == "t,m_bar,m_stderr,purity,sigma_bar,sigma_echo"


def test_trace_validation():
    with pytest.raises(ConfigError):
        DecayTrace([0, 1], [1, 1, 1], [0, 0])
    with pytest.raises(ConfigError):
        DecayTrace([1, 0], [1, 1], [0, 0])
