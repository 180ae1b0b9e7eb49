"""Backscatter demodulator on the 14 kHz tap series.

Processing order: tap power -> high-pass (direct path / Doppler removal) ->
chip matched filter -> two-Barker header correlation with sign correction ->
Manchester correlator decisions.

``frame_sync``, ``find_packets``, ``demodulate`` and ``snr_estimate`` all work
on the *matched-filter output*. Sample indices are tap-series indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import firwin, lfilter, oaconvolve

from .codec import (
    DEFAULT_CHIP_DURATION,
    FRAME_CHIPS,
    SYNC_CHIPS,
    bits_to_hex,
    samples_per_chip,
    sync_chips,
)

TAP_RATE = 14_000.0
HIGHPASS_TAPS = 4097
HIGHPASS_CUTOFF = 10.0
SYNC_THRESHOLD = 5.0
SNR_MARGIN_CHIPS = 3
OFFPEAK_MIN_CHIPS = 120


class NoPacketError(RuntimeError):
    """The header correlation did not clear the sync threshold."""


@dataclass
class TapPowerSeries:
    values: np.ndarray
    rate: float = TAP_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class SyncResult:
    frame_start: int
    phase_sign: int
    sync_metric: float


@dataclass
class DemodResult:
    frame_start: int
    sync_metric: float
    phase_sign: int
    payload_bits: np.ndarray
    soft_values: np.ndarray
    snr_est_db: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def payload_hex(self) -> str:
        return bits_to_hex(self.payload_bits)


def tap_power(taps, rate: float = TAP_RATE) -> TapPowerSeries:
    """``|tap|^2`` per sample."""
    taps = np.asarray(taps)
    return TapPowerSeries(np.abs(taps) ** 2, rate)


@lru_cache(maxsize=8)
def highpass_taps(rate: float = TAP_RATE, cutoff: float = HIGHPASS_CUTOFF, n_taps: int = HIGHPASS_TAPS) -> np.ndarray:
    """Linear-phase high-pass built as delta minus a Hamming-window low-pass (exact DC null)."""
    if n_taps % 2 == 0:
        raise ValueError("high-pass length must be odd")
    h = -firwin(n_taps, cutoff, fs=rate)
    h[n_taps // 2] += 1.0
    h.setflags(write=False)
    return h


def _highpass_values(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    d = len(h) // 2
    if len(x) == 0:
        return x.astype(float)
    padded = np.pad(x, d, mode="reflect" if len(x) > 1 else "edge")
    return oaconvolve(padded, h, mode="valid")


def highpass(
    series: TapPowerSeries, cutoff: float = HIGHPASS_CUTOFF, n_taps: int = HIGHPASS_TAPS
) -> TapPowerSeries:
    """Zero-phase (delay-compensated) high-pass.

    The series is extended at both ends by mirror reflection (edge sample not
    repeated), so constants and slow trends are rejected right up to the
    edges and noise statistics stay the same there.
    """
    h = highpass_taps(series.rate, cutoff, n_taps)
    return TapPowerSeries(_highpass_values(np.asarray(series.values, dtype=float), h), series.rate)


class StreamingFir:
    """Chunked version of :func:`highpass` with explicitly carried state.

    Feed chunks with :meth:`process`; call :meth:`flush` once at the end. The
    concatenated outputs equal ``highpass`` on the whole series (the first
    output appears once more than ``delay`` samples have been fed, because
    the start reflection needs them). An instance is single-owner; do not
    share one across captures.
    """

    def __init__(self, taps: np.ndarray):
        self.taps = np.asarray(taps, dtype=float)
        if len(self.taps) % 2 == 0:
            raise ValueError("linear-phase FIR length must be odd")
        self.delay = len(self.taps) // 2
        self._zi = np.zeros(len(self.taps) - 1)
        self._head: list[np.ndarray] | None = []
        self._tail = np.zeros(0)
        self._to_drop = 2 * self.delay

    def _run(self, x: np.ndarray) -> np.ndarray:
        y, self._zi = lfilter(self.taps, 1.0, x, zi=self._zi)
        drop = min(self._to_drop, len(y))
        self._to_drop -= drop
        return y[drop:]

    def process(self, chunk) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=float)
        if len(chunk) == 0:
            return np.zeros(0)
        self._tail = np.concatenate([self._tail, chunk])[-(self.delay + 1) :]
        if self._head is None:
            return self._run(chunk)
        self._head.append(chunk)
        head = np.concatenate(self._head)
        if len(head) <= self.delay:
            return np.zeros(0)
        self._head = None
        return self._run(np.concatenate([head[self.delay : 0 : -1], head]))

    def flush(self) -> np.ndarray:
        if self._head is not None:
            # never reached steady state: the whole input is still buffered
            head = np.concatenate(self._head) if self._head else np.zeros(0)
            self._head = []
            return _highpass_values(head, self.taps)
        return self._run(self._tail[-2::-1][: self.delay])


def matched_filter(series: TapPowerSeries, chip_duration: float = DEFAULT_CHIP_DURATION) -> TapPowerSeries:
    """Centred moving average over one chip.

    At sample ``start + c*L + L//2`` the output is exactly the mean of chip
    ``c`` of a packet beginning at ``start`` (``L`` samples per chip).
    """
    L = samples_per_chip(chip_duration, series.rate)
    full = oaconvolve(series.values, np.full(L, 1.0 / L)) if len(series) else np.zeros(L - 1)
    s = (L - 1) // 2
    return TapPowerSeries(full[s : s + len(series)], series.rate)


def header_template(chip_duration: float = DEFAULT_CHIP_DURATION, rate: float = TAP_RATE) -> np.ndarray:
    """Bipolar two-Barker header expanded to the tap-sample grid at chip rate.

    The template is ``+1/-1`` at the centre sample of each of the 26 header
    chips and zero elsewhere. On the matched-filter output this sums exactly
    the chip means the demodulator uses, and its correlation peak is a sharp
    cusp at the true packet start.
    """
    L = samples_per_chip(chip_duration, rate)
    tpl = np.zeros(SYNC_CHIPS * L)
    tpl[np.arange(SYNC_CHIPS) * L + L // 2] = 2.0 * sync_chips() - 1.0
    return tpl


def header_correlation(mf: TapPowerSeries, chip_duration: float = DEFAULT_CHIP_DURATION) -> np.ndarray:
    """``c[k] = (1/26) * sum_i mf[k+i] * template[i]`` for every header position ``k``."""
    tpl = header_template(chip_duration, mf.rate)
    if len(mf) < len(tpl):
        raise NoPacketError("series shorter than the sync header")
    return oaconvolve(mf.values, tpl[::-1], mode="valid") / SYNC_CHIPS


def _off_peak_rms(corr: np.ndarray, peaks, L: int) -> float:
    """RMS of the correlation away from the detected packets.

    A packet starting at ``p`` influences lags ``p - 26L < k < p + 90L``.
    When at least ``OFFPEAK_MIN_CHIPS`` chips' worth of lags lie outside
    every such footprint, the RMS is taken over those lags only. Otherwise
    (short scenes) it is taken over all lags except one chip either side of
    each peak; the packet's own header/data sidelobes then count as
    "off-peak", which is conservative.
    """
    n = len(corr)
    keep = np.ones(n, dtype=bool)
    for p in peaks:
        keep[max(0, p - SYNC_CHIPS * L + 1) : max(0, p + FRAME_CHIPS * L)] = False
    if np.count_nonzero(keep) < OFFPEAK_MIN_CHIPS * L:
        keep[:] = True
        for p in peaks:
            keep[max(0, p - L + 1) : p + L] = False
    if not keep.any():
        return 0.0
    return float(np.sqrt(np.mean(corr[keep] ** 2)))


def _metric(peak_value: float, rms: float) -> float:
    if rms > 0:
        return abs(peak_value) / rms
    return np.inf if peak_value != 0 else 0.0


def frame_sync(
    mf: TapPowerSeries,
    chip_duration: float = DEFAULT_CHIP_DURATION,
    threshold: float = SYNC_THRESHOLD,
) -> SyncResult:
    """Locate the strongest packet header.

    ``sync_metric`` is ``|peak|`` over the RMS of the correlation at lags
    that do not overlap the detected packet (see :func:`_off_peak_rms`);
    ``phase_sign`` is the sign of the peak.

    Raises:
        NoPacketError: metric below ``threshold``.
    """
    L = samples_per_chip(chip_duration, mf.rate)
    corr = header_correlation(mf, chip_duration)
    k = int(np.argmax(np.abs(corr)))
    metric = _metric(corr[k], _off_peak_rms(corr, [k], L))
    if not metric >= threshold:
        raise NoPacketError(f"sync metric {metric:.2f} below threshold {threshold}")
    return SyncResult(k, 1 if corr[k] >= 0 else -1, float(metric))


def find_packets(
    mf: TapPowerSeries,
    chip_duration: float = DEFAULT_CHIP_DURATION,
    threshold: float = SYNC_THRESHOLD,
    max_packets: int | None = None,
) -> list[SyncResult]:
    """Greedy multi-packet search, sorted by position.

    Peaks are taken strongest first, each blanking one packet length either
    side; the off-peak RMS excludes every accepted packet. Only positions
    where the whole packet fits are considered. Reported metrics are
    recomputed once all packets are known.
    """
    L = samples_per_chip(chip_duration, mf.rate)
    packet = FRAME_CHIPS * L
    try:
        corr = header_correlation(mf, chip_duration)
    except NoPacketError:
        return []
    n_fit = len(mf) - packet + 1
    if n_fit <= 0:
        return []
    search = np.abs(corr[:n_fit])
    blanked = np.zeros(n_fit, dtype=bool)
    accepted: list[int] = []
    while max_packets is None or len(accepted) < max_packets:
        if blanked.all():
            break
        k = int(np.argmax(np.where(blanked, -1.0, search)))
        if not _metric(corr[k], _off_peak_rms(corr, accepted + [k], L)) >= threshold:
            break
        accepted.append(k)
        blanked[max(0, k - packet + 1) : k + packet] = True
    rms = _off_peak_rms(corr, accepted, L)
    out = [SyncResult(k, 1 if corr[k] >= 0 else -1, float(_metric(corr[k], rms))) for k in accepted]
    return sorted(out, key=lambda r: r.frame_start)


def chip_values(mf: TapPowerSeries, frame_start: int, chip_duration: float = DEFAULT_CHIP_DURATION) -> np.ndarray:
    """Matched-filter output at the centre of each of the 90 chips."""
    L = samples_per_chip(chip_duration, mf.rate)
    idx = frame_start + np.arange(FRAME_CHIPS) * L + L // 2
    if frame_start < 0 or idx[-1] >= len(mf):
        raise ValueError(f"packet at {frame_start} extends past the series end ({len(mf)} samples)")
    return mf.values[idx]


def demodulate(
    mf: TapPowerSeries,
    frame_start: int,
    phase_sign: int,
    chip_duration: float = DEFAULT_CHIP_DURATION,
    sync_metric: float = float("nan"),
) -> DemodResult:
    """Manchester correlator: soft value = sign * (first chip - second chip); bit 1 iff soft > 0."""
    v = chip_values(mf, frame_start, chip_duration)[SYNC_CHIPS:]
    soft = phase_sign * (v[0::2] - v[1::2])
    bits = (soft > 0).astype(np.uint8)
    return DemodResult(int(frame_start), float(sync_metric), int(phase_sign), bits, soft)


def ber(decoded, truth) -> float:
    decoded = np.asarray(decoded).ravel()
    truth = np.asarray(truth).ravel()
    if decoded.shape != truth.shape:
        raise ValueError(f"length mismatch: {decoded.size} vs {truth.size}")
    if truth.size == 0:
        raise ValueError("empty bit sequences")
    return float(np.count_nonzero(decoded != truth) / truth.size)


def snr_estimate(
    mf: TapPowerSeries,
    frame_start: int,
    chip_duration: float = DEFAULT_CHIP_DURATION,
    soft_values: np.ndarray | None = None,
    other_packets=(),
    edge: int | None = None,
    settle: int = HIGHPASS_TAPS // 2,
) -> float:
    """Decision SNR in dB: mean squared soft value over soft-value noise variance.

    The soft value is a difference of two chip means one chip apart, so its
    noise variance is measured as ``var(mf[n] - mf[n+L])`` on samples away
    from every packet (``SNR_MARGIN_CHIPS`` chips plus the high-pass
    half-length ``settle`` of margin, so filter ringing is not counted as
    noise) and at least ``edge`` samples (default one chip) from the series
    ends. With too few such samples a decision-directed estimate is
    used instead. Returns ``inf`` when the noise floor is below 1e-12 of the
    signal.
    """
    L = samples_per_chip(chip_duration, mf.rate)
    if edge is None:
        edge = L
    if soft_values is None:
        soft_values = demodulate(mf, frame_start, 1, chip_duration).soft_values
    soft = np.asarray(soft_values, dtype=float)
    n = len(mf) - L
    ok = np.zeros(max(n, 0), dtype=bool)
    ok[edge + L : max(edge + L, n - edge)] = True
    margin = SNR_MARGIN_CHIPS * L + settle
    for s in [frame_start, *other_packets]:
        ok[max(0, s - margin - L) : max(0, s + FRAME_CHIPS * L + margin)] = False
    mean_sq = float(np.mean(soft**2))
    if np.count_nonzero(ok) >= 4 * L:
        diff = mf.values[L:][: len(ok)] - mf.values[: len(ok)]
        noise = float(np.var(diff[ok]))
        signal = mean_sq - noise
    else:
        a = np.abs(soft)
        signal = float(np.mean(a) ** 2)
        noise = float(np.var(a))
    if noise <= 1e-12 * max(mean_sq, 1e-300):
        return float("inf")
    if signal <= 0:
        return float("-inf")
    return float(10 * np.log10(signal / noise))


def decode_chips(chips) -> np.ndarray:
    """Chip-domain decode of a noiseless 90-chip frame (sync chips are skipped)."""
    chips = np.asarray(chips, dtype=float).ravel()
    if chips.size != FRAME_CHIPS:
        raise ValueError(f"expected {FRAME_CHIPS} chips, got {chips.size}")
    data = chips[SYNC_CHIPS:]
    return (data[0::2] - data[1::2] > 0).astype(np.uint8)


def receive(
    taps,
    chip_duration: float = DEFAULT_CHIP_DURATION,
    rate: float = TAP_RATE,
    highpass_enabled: bool = True,
    known_start: int | None = None,
    max_packets: int | None = None,
    threshold: float = SYNC_THRESHOLD,
) -> list[DemodResult]:
    """Run the whole demodulator on a complex tap series.

    With ``known_start`` the header search is skipped; the phase sign and
    metric are still read from the header correlation at that position.
    Returns an empty list when nothing clears the threshold.
    """
    y = tap_power(taps, rate)
    if highpass_enabled:
        y = highpass(y)
    mf = matched_filter(y, chip_duration)
    if known_start is not None:
        L = samples_per_chip(chip_duration, rate)
        corr = header_correlation(mf, chip_duration)
        k = int(known_start)
        metric = _metric(corr[k], _off_peak_rms(corr, [k], L))
        syncs = [SyncResult(k, 1 if corr[k] >= 0 else -1, float(metric))]
    else:
        syncs = find_packets(mf, chip_duration, threshold, max_packets)
    starts = [s.frame_start for s in syncs]
    results = []
    for s in syncs:
        r = demodulate(mf, s.frame_start, s.phase_sign, chip_duration, s.sync_metric)
        others = [p for p in starts if p != s.frame_start]
        r.snr_est_db = snr_estimate(mf, s.frame_start, chip_duration, r.soft_values, others)
        results.append(r)
    return results

