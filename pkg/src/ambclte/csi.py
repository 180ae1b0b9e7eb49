"""Receiver front half: PSS timing, CRS least-squares estimates, CIR taps, 14 kHz tap series."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve, firwin

from .lte import (
    CRS_SYMBOLS,
    PSS_SYMBOL_IN_SLOT,
    SYMBOLS_PER_SLOT,
    SYMBOLS_PER_SUBFRAME,
    SUBFRAMES_PER_FRAME,
    CellConfig,
    IqStream,
    ResourceGrid,
    crs_sequence,
    crs_shift,
    crs_subcarriers,
    demodulate_symbols,
    pss_time_replica,
)

INTERP_TAPS = 129
INTERP_CUTOFF = 1000.0
PSS_THRESHOLD = 5.0


class SyncError(RuntimeError):
    """No usable LTE timing reference in the stream."""


@dataclass
class FreqEstimate:
    pilot_values: np.ndarray
    pilot_indices: np.ndarray
    symbol_index: int

    @property
    def shift(self) -> int:
        return int(self.pilot_indices[0] % 6)


@dataclass
class CirSeries:
    """Per-CRS-symbol channel taps ``[n_bins, n_estimates]``.

    ``symbol_index`` counts symbols from the first processed subframe (14 per
    subframe); ``rate`` is the symbol rate the taps are interpolated onto.
    After :func:`estimate_cir_series`, ``l0`` and ``uniform`` hold the
    selected tap and its interpolated sequence.
    """

    taps: np.ndarray
    symbol_index: np.ndarray
    symbol_times: np.ndarray
    rate: float = 14_000.0
    l0: int | None = None
    uniform: np.ndarray | None = None

    @property
    def n_subframes(self) -> int:
        if len(self.symbol_index) == 0:
            return 0
        return int(self.symbol_index[-1]) // SYMBOLS_PER_SUBFRAME + 1

    def to_csv(self, path) -> None:
        """Write ``time_s, re, im`` rows of the interpolated tap (raw tap ``l0`` if absent)."""
        if self.uniform is not None:
            t = self.symbol_times[0] + np.arange(len(self.uniform)) / self.rate
            values = self.uniform
        else:
            l0 = 0 if self.l0 is None else self.l0
            t, values = self.symbol_times, self.taps[l0]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time_s", "re", "im"])
            for ti, v in zip(t, values):
                w.writerow([repr(float(ti)), repr(float(v.real)), repr(float(v.imag))])


def _correlate(x: np.ndarray, replica: np.ndarray) -> np.ndarray:
    """``c[k] = sum_i x[k+i] * conj(replica[i])`` for all full overlaps."""
    return fftconvolve(x, np.conj(replica[::-1]), mode="valid")


def _crs_coherence(samples: np.ndarray, start: int, config: CellConfig, first_subframe: int) -> float:
    """Fraction of CIR energy in the strongest bin when CRS are read as ``first_subframe``."""
    spec = demodulate_symbols(samples, start, config, 1, CRS_SYMBOLS)[0]
    energy = np.zeros(config.n_pilots)
    for j, s in enumerate(CRS_SYMBOLS):
        slot = 2 * first_subframe + s // SYMBOLS_PER_SLOT
        k = crs_subcarriers(config, s)
        ls = spec[j, k] * np.conj(crs_sequence(config, slot, s % SYMBOLS_PER_SLOT))
        energy += np.abs(np.fft.ifft(ls)) ** 2
    return float(energy.max() / max(energy.sum(), 1e-300))


def timing_sync(
    iq: IqStream,
    config: CellConfig,
    known: int | None = None,
    threshold: float = PSS_THRESHOLD,
    max_half_frames: int = 8,
) -> int:
    """Sample index of the first radio-frame (subframe 0) boundary in ``iq``.

    The PSS replica correlation is folded over up to ``max_half_frames`` 5 ms
    periods; the subframe 0 / 5 ambiguity of the PSS is resolved by testing
    CRS coherence for both readings. ``known`` bypasses the search.

    Raises:
        SyncError: peak-to-median correlation ratio below ``threshold``.
    """
    if known is not None:
        return int(known)
    half = SUBFRAMES_PER_FRAME // 2 * config.subframe_samples
    replica = pss_time_replica(config)
    n_use = min(len(iq), max_half_frames * half + len(replica) - 1)
    if n_use < len(replica):
        raise SyncError("stream shorter than one OFDM symbol")
    corr = np.abs(_correlate(iq.samples[:n_use], replica)) ** 2
    if len(corr) >= half:
        n_fold = len(corr) // half
        folded = corr[: n_fold * half].reshape(n_fold, half).sum(axis=0)
    else:
        folded = corr
    peak = int(np.argmax(folded))
    ratio = np.sqrt(folded[peak] / max(np.median(folded), 1e-300))
    if not ratio >= threshold:
        raise SyncError(f"PSS peak-to-median ratio {ratio:.2f} below {threshold}")

    pss_offset = int(config.useful_offsets()[PSS_SYMBOL_IN_SLOT])
    boundary = (peak - pss_offset) % half
    if boundary + config.subframe_samples > len(iq):
        raise SyncError("stream too short to read the CRS after the PSS")
    as_sf0 = _crs_coherence(iq.samples, boundary, config, 0)
    as_sf5 = _crs_coherence(iq.samples, boundary, config, 5)
    return boundary if as_sf0 >= as_sf5 else boundary + half


def extract_crs_ls(grid: ResourceGrid, config: CellConfig, symbol: int) -> FreqEstimate:
    """Least-squares pilot estimates ``H = Y / X`` on one CRS-bearing grid column."""
    if symbol % SYMBOLS_PER_SUBFRAME not in CRS_SYMBOLS:
        raise ValueError(f"symbol {symbol} carries no port-0 CRS")
    k = crs_subcarriers(config, symbol)
    s = symbol % SYMBOLS_PER_SUBFRAME
    pilots = crs_sequence(config, grid.slot_of(symbol), s % SYMBOLS_PER_SLOT)
    return FreqEstimate(grid.cells[k, symbol] / pilots, k, symbol)


def _derotation(n_pilots: int, shift: int) -> np.ndarray:
    n_sc = 6 * n_pilots
    l = np.arange(n_pilots)
    return np.exp(2j * np.pi * (shift - n_sc // 2) * l / n_sc)


def cir_from_freq(est: FreqEstimate) -> np.ndarray:
    """Delay-domain taps of the pilot comb, causal bins ``0..N-1``.

    Uses the ``1/N`` inverse transform, so a flat channel of gain ``g`` gives
    ``g`` in bin 0 and the tap energy equals the mean pilot power.
    """
    n = len(est.pilot_values)
    expected = 6 * np.arange(n) + est.shift
    if n == 0 or not np.array_equal(est.pilot_indices, expected):
        raise ValueError("pilot lattice incomplete or irregular")
    if not np.all(np.isfinite(est.pilot_values)):
        raise ValueError("pilot values contain non-finite entries")
    return np.fft.ifft(est.pilot_values) * _derotation(n, est.shift)


def tap_select(series: CirSeries) -> int:
    """Bin with the largest mean tap power (lowest index on ties)."""
    if series.taps.size == 0:
        raise ValueError("empty CIR series")
    return int(np.argmax(np.mean(np.abs(series.taps) ** 2, axis=1)))


@lru_cache(maxsize=16)
def interp_filter(rate: float = 14_000.0, cutoff: float = INTERP_CUTOFF, n_taps: int = INTERP_TAPS) -> np.ndarray:
    """Linear-phase low-pass used to fill the non-pilot symbols.

    A Kaiser low-pass cascaded with a 7-sample moving average. The average
    has nulls at every multiple of rate/7, which is where the images of the
    period-7 pilot placement (symbols 0 and 4 of each slot) fall, so a static
    channel is reconstructed without ripple.
    """
    box = np.ones(SYMBOLS_PER_SLOT) / SYMBOLS_PER_SLOT
    lp = firwin(n_taps - len(box) + 1, cutoff, window=("kaiser", 8.0), fs=rate)
    h = np.convolve(lp, box)
    h /= h.sum()
    h.setflags(write=False)
    return h


def interpolate_taps(
    series: CirSeries,
    l0: int,
    cutoff: float = INTERP_CUTOFF,
    n_taps: int = INTERP_TAPS,
) -> np.ndarray:
    """Tap ``l0`` on the uniform symbol lattice (14 per subframe).

    Pilot estimates are placed at their symbols, the rest left at zero, and
    the result low-pass filtered with delay compensation. The ends are
    extended by repeating the first and last subframe's estimates, so a
    static channel comes out flat up to the edges.
    """
    n_sf = series.n_subframes
    if n_sf < 2:
        raise ValueError("interpolation needs estimates from at least 2 subframes")
    n_out = n_sf * SYMBOLS_PER_SUBFRAME
    h = interp_filter(series.rate, cutoff, n_taps)
    d = (len(h) - 1) // 2
    pad_sf = -(-d // SYMBOLS_PER_SUBFRAME)
    pad = pad_sf * SYMBOLS_PER_SUBFRAME
    placed = np.zeros(n_out + 2 * pad, dtype=complex)
    placed[pad + series.symbol_index] = series.taps[l0]
    first = series.symbol_index < SYMBOLS_PER_SUBFRAME
    last = series.symbol_index >= n_out - SYMBOLS_PER_SUBFRAME
    for j in range(pad_sf):
        placed[j * SYMBOLS_PER_SUBFRAME + series.symbol_index[first]] = series.taps[l0][first]
        tail = series.symbol_index[last] - (n_out - SYMBOLS_PER_SUBFRAME)
        placed[pad + n_out + j * SYMBOLS_PER_SUBFRAME + tail] = series.taps[l0][last]
    density = len(series.symbol_index) / n_out
    return np.convolve(placed, h)[pad + d : pad + d + n_out] / density


def _pilot_table(config: CellConfig, first_subframe: int, n_subframes: int) -> np.ndarray:
    """Conjugate pilots ``[n_sf, 4, n_pilots]`` for the CRS symbols of each subframe."""
    frame = np.empty((SUBFRAMES_PER_FRAME, len(CRS_SYMBOLS), config.n_pilots), dtype=complex)
    for sf in range(SUBFRAMES_PER_FRAME):
        for j, s in enumerate(CRS_SYMBOLS):
            frame[sf, j] = np.conj(crs_sequence(config, 2 * sf + s // SYMBOLS_PER_SLOT, s % SYMBOLS_PER_SLOT))
    return frame[(first_subframe + np.arange(n_subframes)) % SUBFRAMES_PER_FRAME]


def estimate_cir_series(
    iq: IqStream,
    config: CellConfig,
    timing: int,
    n_subframes: int | None = None,
    first_subframe: int = 0,
    l0: int | None = None,
    interpolate: bool = True,
) -> CirSeries:
    """Per-CRS-symbol CIR estimates from ``timing`` on, plus the interpolated tap.

    Equivalent to running :func:`extract_crs_ls` and :func:`cir_from_freq` on
    every CRS symbol of ``ofdm_demodulate(iq, timing, config)``; only the CRS
    symbols are transformed.
    """
    available = (len(iq) - timing) // config.subframe_samples
    if n_subframes is None:
        n_subframes = available
    if timing < 0 or n_subframes < 1 or n_subframes > available:
        raise ValueError(f"stream holds {available} whole subframes after sample {timing}")
    spec = demodulate_symbols(iq.samples, timing, config, n_subframes, CRS_SYMBOLS)
    conj_pilots = _pilot_table(config, first_subframe, n_subframes)
    taps = np.empty((config.n_pilots, n_subframes, len(CRS_SYMBOLS)), dtype=complex)
    for j, s in enumerate(CRS_SYMBOLS):
        k = crs_subcarriers(config, s)
        ls = spec[:, j, k] * conj_pilots[:, j]
        taps[:, :, j] = (np.fft.ifft(ls, axis=-1) * _derotation(config.n_pilots, crs_shift(config, s))).T
    taps = taps.reshape(config.n_pilots, -1)
    sym_idx = (np.arange(n_subframes)[:, None] * SYMBOLS_PER_SUBFRAME + np.array(CRS_SYMBOLS)).ravel()
    offsets = config.useful_offsets()[list(CRS_SYMBOLS)]
    times = (
        (timing + np.arange(n_subframes)[:, None] * config.subframe_samples + offsets).ravel()
        / config.sample_rate
        + iq.t0
    )
    series = CirSeries(taps, sym_idx, times, config.symbol_rate)
    series.l0 = tap_select(series) if l0 is None else l0
    if interpolate and n_subframes >= 2:
        series.uniform = interpolate_taps(series, series.l0)
    return series
