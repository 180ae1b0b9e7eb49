import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambclte.channel import BdPathSpec, ChannelSpec, PathSpec, apply_channel, expected_tap_model
from ambclte.codec import BdWaveform
from ambclte.csi import (
    CirSeries,
    FreqEstimate,
    SyncError,
    cir_from_freq,
    estimate_cir_series,
    extract_crs_ls,
    interp_filter,
    interpolate_taps,
    tap_select,
    timing_sync,
)
from ambclte.lte import CRS_SYMBOLS, CellConfig, IqStream, build_grid, crs_shift, ofdm_demodulate, ofdm_modulate

import oracles


def _stream(cfg, n_sf, seed=0):
    return ofdm_modulate(build_grid(cfg, n_sf, rng=seed))


# --- timing sync ----------------------------------------------------------


@pytest.mark.parametrize("offset", [1234, 0, 40_000])
def test_timing_sync_finds_offset(cell, offset):
    iq = _stream(cell, 40)
    start = 10 * cell.subframe_samples - offset  # capture begins mid-frame
    cut = IqStream(iq.samples[start:], iq.sample_rate)
    assert timing_sync(cut, cell) == offset


def test_timing_sync_with_noise_and_other_pci():
    cfg = CellConfig(pci=101)
    iq = _stream(cfg, 30, seed=5)
    r = np.random.default_rng(0)
    x = iq.samples[7680 * 10 - 777 :]
    x = x + np.sqrt(0.5 / 2) * (r.standard_normal(len(x)) + 1j * r.standard_normal(len(x)))
    assert timing_sync(IqStream(x, iq.sample_rate), cfg) == 777


def test_timing_sync_rejects_noise(cell):
    r = np.random.default_rng(1)
    n = 20 * cell.subframe_samples
    noise = IqStream(r.standard_normal(n) + 1j * r.standard_normal(n), cell.sample_rate)
    with pytest.raises(SyncError):
        timing_sync(noise, cell)


def test_timing_sync_bypass(cell):
    noise = IqStream(np.zeros(100, dtype=complex), cell.sample_rate)
    assert timing_sync(noise, cell, known=4321) == 4321


# --- LS estimates ---------------------------------------------------------


def test_ls_identity_channel(cell):
    grid = build_grid(cell, 1, rng=0)
    for s in CRS_SYMBOLS:
        est = extract_crs_ls(grid, cell, s)
        assert len(est.pilot_values) == 50
        assert np.array_equal(est.pilot_indices % 6, np.full(50, crs_shift(cell, s)))
        assert np.allclose(est.pilot_values, 1, atol=1e-12)


def test_ls_flat_channel(cell):
    g = 0.5 * np.exp(1j * np.pi / 4)
    grid = build_grid(cell, 1, rng=0)
    grid.cells *= g
    for s in CRS_SYMBOLS:
        assert np.allclose(extract_crs_ls(grid, cell, s).pilot_values, g, atol=1e-12)


@pytest.mark.parametrize("d", [1, 3, 20])
def test_ls_delay_gives_linear_phase(cell, d):
    iq = _stream(cell, 1)
    out = apply_channel(iq, ChannelSpec(paths=(PathSpec(delay=d / cell.sample_rate),)))
    grid = ofdm_demodulate(out, 0, cell)
    for s in CRS_SYMBOLS:
        est = extract_crs_ls(grid, cell, s)
        step = est.pilot_values[1:] / est.pilot_values[:-1]
        q = cell.subcarrier_freq_index()[est.pilot_indices]
        same_side = np.diff(q) == 6  # pairs that do not straddle the DC gap
        assert np.allclose(step[same_side], np.exp(-2j * np.pi * d * 6 / cell.n_fft), atol=1e-9)
        # and the exact response at every pilot
        assert np.allclose(est.pilot_values, np.exp(-2j * np.pi * q * d / cell.n_fft), atol=1e-9)


@pytest.mark.parametrize("s", [1, 2, 3, 5, 6, 8, 13])
def test_ls_non_crs_symbol(cell, s):
    with pytest.raises(ValueError):
        extract_crs_ls(build_grid(cell, 1, rng=0), cell, s)


# --- CIR ------------------------------------------------------------------


def test_cir_flat_channel():
    h = cir_from_freq(FreqEstimate(np.ones(50, dtype=complex), 6 * np.arange(50), 0))
    assert h[0] == pytest.approx(1, abs=1e-12)
    assert np.max(np.abs(h[1:])) <= 1e-12


def test_cir_single_path(cell):
    for bins, peak in [(3.0, 3), (3.3, 3), (3.6, 4)]:
        d = bins / cell.pilot_bandwidth
        k = 6 * np.arange(50)
        q = cell.subcarrier_freq_index()[k]
        est = FreqEstimate(np.exp(-2j * np.pi * q * cell.subcarrier_spacing * d), k, 0)
        mag = np.abs(cir_from_freq(est))
        assert int(np.argmax(mag)) == peak
        if bins == 3.0:
            assert mag[3] > 0.99 and np.max(np.delete(mag, 3)) < 0.05
        else:  # sinc leakage into the neighbours
            assert np.sort(mag)[-2] > 0.1


def test_cir_consistent_across_shift_classes(cell):
    # flat static channel: identical tap vectors for every shift class
    grid = build_grid(CellConfig(traffic_fill="empty", include_pss=False), 1)
    grid.cells *= 0.7 * np.exp(-0.3j)
    taps = [cir_from_freq(extract_crs_ls(grid, cell, s)) for s in CRS_SYMBOLS]
    for h in taps[1:]:
        assert np.allclose(h, taps[0], atol=1e-9)


def test_cir_bin_centred_paths_align_across_shift_classes(cell):
    # the DC gap makes the leakage pattern shift-dependent, but the bins that
    # carry bin-centred paths agree after derotation
    d2 = 2 / cell.pilot_bandwidth
    grid = build_grid(CellConfig(traffic_fill="empty", include_pss=False), 1)
    f = cell.subcarrier_freq_index()[:, None] * cell.subcarrier_spacing
    grid.cells *= 1 + 0.4j * np.exp(-2j * np.pi * f * d2)
    h0 = cir_from_freq(extract_crs_ls(grid, cell, 0))
    h4 = cir_from_freq(extract_crs_ls(grid, cell, 4))
    assert np.allclose(h0[[0, 2]], h4[[0, 2]], atol=1e-9)
    assert np.max(np.abs(h0 - h4)) < 1e-2


def test_cir_incomplete_lattice():
    with pytest.raises(ValueError):
        cir_from_freq(FreqEstimate(np.ones(49, dtype=complex), 6 * np.arange(49) + 6, 0))
    with pytest.raises(ValueError):
        cir_from_freq(FreqEstimate(np.ones(3, dtype=complex), np.array([0, 6, 13]), 0))


@settings(max_examples=30)
@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=50, max_size=50))
def test_cir_parseval(values):
    values = np.array(values)
    h = cir_from_freq(FreqEstimate(values, 6 * np.arange(50) + 3, 4))
    assert np.sum(np.abs(h) ** 2) == pytest.approx(np.mean(np.abs(values) ** 2), rel=1e-9, abs=1e-12)


# --- tap selection ----------------------------------------------------------


def _series(power_by_bin, n_est=8):
    taps = np.zeros((50, n_est), dtype=complex)
    for b, p in power_by_bin.items():
        taps[b] = np.sqrt(p)
    idx = np.arange(n_est)
    return CirSeries(taps, idx, idx / 14_000.0)


@pytest.mark.parametrize(
    "powers,expected", [({0: 1.0}, 0), ({0: 1.0, 3: 0.04}, 0), ({2: 1.0, 5: 1.0}, 2), ({7: 0.1, 1: 0.05}, 7)]
)
def test_tap_select(powers, expected):
    assert tap_select(_series(powers)) == expected


def test_tap_select_empty():
    with pytest.raises(ValueError):
        tap_select(CirSeries(np.zeros((50, 0), dtype=complex), np.zeros(0, int), np.zeros(0)))


# --- interpolation ----------------------------------------------------------


def _pilot_series(values_fn, n_sf):
    idx = (np.arange(n_sf)[:, None] * 14 + np.array(CRS_SYMBOLS)).ravel()
    taps = np.zeros((50, len(idx)), dtype=complex)
    taps[0] = values_fn(idx / 14_000.0)
    return CirSeries(taps, idx, idx / 14_000.0)


def test_interpolation_static_and_length():
    s = _pilot_series(lambda t: np.full(len(t), 0.3 - 0.2j), 100)
    u = interpolate_taps(s, 0)
    assert len(u) == 1400
    assert np.max(np.abs(u / (0.3 - 0.2j) - 1)) < 1e-6


def test_interpolation_50hz_sinusoid():
    s = _pilot_series(lambda t: 1 + 0.1 * np.cos(2 * np.pi * 50 * t), 200)
    u = interpolate_taps(s, 0)
    t = np.arange(len(u)) / 14_000.0
    core = slice(200, -200)
    basis = np.column_stack([np.ones(len(t)), np.cos(2 * np.pi * 50 * t), np.sin(2 * np.pi * 50 * t)])[core]
    coef, *_ = np.linalg.lstsq(basis, u[core].real, rcond=None)
    assert abs(np.hypot(coef[1], coef[2]) / 0.1 - 1) < 0.03


def test_interpolation_needs_two_subframes():
    with pytest.raises(ValueError):
        interpolate_taps(_pilot_series(lambda t: np.ones(len(t)), 1), 0)


def test_interp_filter_unit_dc_and_symmetric():
    h = interp_filter()
    assert len(h) == 129
    assert h.sum() == pytest.approx(1.0)
    assert np.allclose(h, h[::-1])


# --- full chain -------------------------------------------------------------


def test_chain_identity_channel(cell):
    series = estimate_cir_series(_stream(cell, 10), cell, 0)
    assert series.l0 == 0
    assert series.taps.shape == (50, 40)
    assert np.allclose(series.taps[0], 1, atol=1e-9)
    assert np.allclose(series.uniform, 1, atol=1e-9)
    assert len(series.uniform) == 140


def test_chain_matches_ofdm_demodulate_path(cell):
    iq = apply_channel(_stream(cell, 3, seed=2), ChannelSpec(paths=(PathSpec(), PathSpec(delay=5 / cell.sample_rate, amplitude=0.3))))
    series = estimate_cir_series(iq, cell, 0, interpolate=False)
    grid = ofdm_demodulate(iq, 0, cell)
    for j, col in enumerate([0, 4, 7, 11, 14, 18]):
        assert np.allclose(series.taps[:, j], cir_from_freq(extract_crs_ls(grid, cell, col)), atol=1e-12)


@pytest.mark.parametrize("pci", [0, 4])
def test_chain_two_path_matches_comb_model(pci):
    cfg = CellConfig(pci=pci)
    d = 3 / cfg.sample_rate  # integer-sample delay: exact shift, no interpolation error
    spec = ChannelSpec(paths=(PathSpec(amplitude=0.8), PathSpec(delay=d, amplitude=0.3 - 0.2j)))
    series = estimate_cir_series(apply_channel(_stream(cfg, 4), spec), cfg, 0, interpolate=False)
    for j, s in enumerate(CRS_SYMBOLS):
        shift = crs_shift(cfg, s)
        model = expected_tap_model(spec, cfg, series.l0, kernel="comb", shift=shift)
        assert abs(series.taps[series.l0, j] - model.g1) <= 1e-6 * abs(model.g1)
        want = oracles.comb_cir([0.8, 0.3 - 0.2j], [0.0, d], cfg.n_rb, cfg.subcarrier_spacing, shift)
        assert np.allclose(series.taps[:, j], want, atol=1e-9)


def test_chain_backscatter_toggles_between_levels(cell):
    n_sf = 40
    fs = cell.sample_rate
    n = n_sf * cell.subframe_samples
    t = np.arange(n) / fs
    x = (np.floor(t / 0.005) % 2 == 0).astype(float)  # 100 Hz square wave
    spec = ChannelSpec(bd=BdPathSpec(amplitude=0.1j, waveform=BdWaveform(x, fs)))
    series = estimate_cir_series(apply_channel(_stream(cell, n_sf), spec), cell, 0, interpolate=False)
    tap = series.taps[0]
    t_est = series.symbol_times
    # estimates whose whole OFDM symbol lies inside one BD state
    state_start = np.floor((t_est - 40 / fs) / 0.005)
    state_end = np.floor((t_est + 512 / fs) / 0.005)
    clean = state_start == state_end
    on = (state_start % 2 == 0) & clean
    off = (state_start % 2 == 1) & clean
    assert on.sum() > 10 and off.sum() > 10
    assert np.allclose(tap[on], 1 + 0.1j, atol=1e-9)
    assert np.allclose(tap[off], 1, atol=1e-9)


def test_chain_residual_noise_variance(cell):
    n_sf = 250
    sigma2 = 0.2
    iq = _stream(cell, n_sf, seed=9)
    noisy = apply_channel(iq, ChannelSpec(noise_psd=sigma2), rng=3)
    series = estimate_cir_series(noisy, cell, 0, interpolate=False)
    residual = series.taps.copy()
    residual[0] -= 1
    measured = np.mean(np.abs(residual) ** 2)
    assert residual.size >= 10_000
    # each bin carries sigma^2 / N_pilots of noise
    assert abs(10 * np.log10(measured / (sigma2 / 50))) < 3
    assert measured == pytest.approx(sigma2 / 50, rel=0.05)


def test_chain_rejects_short_stream(cell):
    with pytest.raises(ValueError):
        estimate_cir_series(IqStream(np.zeros(1000, dtype=complex), cell.sample_rate), cell, 0)


def test_cir_series_csv(tmp_path, cell):
    series = estimate_cir_series(_stream(cell, 2), cell, 0)
    series.to_csv(tmp_path / "cir.csv")
    rows = list(csv.reader(open(tmp_path / "cir.csv")))
    assert rows[0] == ["time_s", "re", "im"]
    assert len(rows) == 1 + 28
    assert float(rows[1][1]) == pytest.approx(1.0)
