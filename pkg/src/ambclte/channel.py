"""Multipath + backscatter propagation, receiver impairments and the tap oracle."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.signal import oaconvolve

from .codec import BdWaveform
from .lte import CellConfig, IqStream

FRACTIONAL_DELAY_TAPS = 65
MAX_DOPPLER = 500.0


@dataclass(frozen=True)
class PathSpec:
    """One unmodulated path. ``amplitude`` already includes the carrier phase."""

    delay: float = 0.0
    amplitude: complex = 1.0
    doppler: float = 0.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("path delay must be >= 0")
        if abs(self.doppler) >= MAX_DOPPLER:
            raise ValueError(f"|doppler| must stay below {MAX_DOPPLER} Hz")


@dataclass(frozen=True)
class BdPathSpec:
    """The backscatter path; its gain is switched by ``waveform`` (on/off)."""

    delay: float = 0.0
    amplitude: complex = 0.1
    waveform: BdWaveform | None = None
    doppler: float = 0.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("backscatter delay must be >= 0")
        if abs(self.doppler) >= MAX_DOPPLER:
            raise ValueError(f"|doppler| must stay below {MAX_DOPPLER} Hz")


@dataclass(frozen=True)
class ChannelSpec:
    """Paths (first entry = direct path), optional backscatter path and impairments.

    ``noise_psd`` is the complex noise variance per sample added by
    :func:`apply_channel`; ``quantizer_full_scale=None`` scales the ADC to
    the received peak (gain set just below clipping).
    """

    paths: tuple[PathSpec, ...] = (PathSpec(),)
    bd: BdPathSpec | None = None
    cfo: float = 0.0
    noise_psd: float = 0.0
    quantizer_bits: int | None = None
    quantizer_full_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.paths:
            raise ValueError("a channel needs at least one unmodulated path")
        if self.noise_psd < 0:
            raise ValueError("noise_psd must be >= 0")

    @property
    def direct(self) -> PathSpec:
        return self.paths[0]

    def with_waveform(self, waveform: BdWaveform) -> ChannelSpec:
        bd = self.bd if self.bd is not None else BdPathSpec()
        return replace(self, bd=replace(bd, waveform=waveform))


@dataclass(frozen=True)
class TapModel:
    g0: complex
    g1: complex
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(abs(self.g1) ** 2))
        beta = abs(self.g0) ** 2 + 2 * (np.conj(self.g1) * self.g0).real
        object.__setattr__(self, "beta", float(beta))

    def tap(self, x) -> np.ndarray:
        """Noiseless tap value for backscatter state(s) ``x``."""
        return self.g1 + self.g0 * np.asarray(x)


@lru_cache(maxsize=256)
def fractional_delay_kernel(frac: float, n_taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Blackman-windowed sinc delaying by ``frac`` samples (0 <= frac < 1), unit DC gain."""
    half = n_taps // 2
    t = np.arange(-half, half + 1) - frac
    m = n_taps + 1
    window = 0.42 + 0.5 * np.cos(2 * np.pi * t / m) + 0.08 * np.cos(4 * np.pi * t / m)
    h = np.sinc(t) * window
    h /= h.sum()
    h.setflags(write=False)
    return h


def delay_samples(x: np.ndarray, delay: float) -> np.ndarray:
    """Delay ``x`` by ``delay`` samples, zero-filling the start."""
    n = len(x)
    whole = int(np.floor(delay))
    frac = delay - whole
    if frac < 1e-9:
        frac = 0.0
    elif frac > 1 - 1e-9:
        whole, frac = whole + 1, 0.0
    if frac:
        h = fractional_delay_kernel(round(frac, 12))
        x = oaconvolve(x, h)[len(h) // 2 : len(h) // 2 + n]
    out = np.zeros(n, dtype=np.result_type(x, np.complex64))
    if whole < n:
        out[whole:] = x[: n - whole]
    return out


def phasor(freq: float, n: int, sample_rate: float, t0: float = 0.0) -> np.ndarray:
    """``exp(j 2 pi freq t)`` on ``n`` samples, built as an outer product of two short ramps."""
    block = 4096
    rows = -(-n // block)
    w = 2 * np.pi * freq / sample_rate
    coarse = np.exp(1j * (2 * np.pi * freq * t0 + w * block * np.arange(rows)))
    fine = np.exp(1j * w * np.arange(block))
    return np.multiply.outer(coarse, fine).ravel()[:n]


def _bd_state(waveform: BdWaveform, times: np.ndarray) -> np.ndarray:
    """Hold value of the backscatter waveform at absolute times (zero outside it)."""
    idx = np.floor(times * waveform.sample_rate + 1e-9).astype(np.int64)
    x = np.zeros(len(times))
    ok = (idx >= 0) & (idx < len(waveform.samples))
    x[ok] = waveform.samples[idx[ok]]
    return x


def apply_channel(
    iq: IqStream, spec: ChannelSpec, rng: np.random.Generator | int | None = None
) -> IqStream:
    """Pass ``iq`` through the paths, the backscatter path, CFO, noise and ADC.

    The backscatter waveform is indexed in stream time (``iq.t0`` based) and
    treated as zero outside its own extent.
    """
    fs = iq.sample_rate
    n = len(iq)
    delayed = {}

    def delayed_input(delay):
        key = round(delay * fs, 9)
        if key not in delayed:
            delayed[key] = delay_samples(iq.samples, key) if key else iq.samples
        return delayed[key]

    out = np.zeros(n, dtype=complex)
    for p in spec.paths:
        term = delayed_input(p.delay)
        if p.doppler:
            out += term * (p.amplitude * phasor(p.doppler, n, fs, iq.t0))
        elif p.amplitude == 1:
            out += term
        else:
            out += p.amplitude * term
    bd = spec.bd
    if bd is not None and bd.waveform is not None and bd.amplitude != 0:
        if bd.waveform.sample_rate == fs and iq.t0 == 0:
            m = min(n, len(bd.waveform.samples))
            x = bd.waveform.samples[:m]
        else:
            x = _bd_state(bd.waveform, iq.times())
            m = n
        if bd.doppler:
            gain = (bd.amplitude * x) * phasor(bd.doppler, m, fs, iq.t0)
        else:
            gain = bd.amplitude * x
        out[:m] += gain * delayed_input(bd.delay)[:m]
    if spec.cfo:
        out *= phasor(spec.cfo, n, fs, iq.t0)
    result = IqStream(out, fs, iq.t0)
    if spec.noise_psd > 0:
        result = add_noise(result, spec.noise_psd, rng)
    if spec.quantizer_bits is not None:
        full_scale = spec.quantizer_full_scale
        if full_scale is None:
            full_scale = float(max(np.abs(result.samples.real).max(), np.abs(result.samples.imag).max()))
        result = quantize(result, spec.quantizer_bits, full_scale)
    return result


def add_noise(
    iq: IqStream, noise_var: float, rng: np.random.Generator | int | None = None
) -> IqStream:
    """Add circular complex Gaussian noise of total variance ``noise_var``."""
    if noise_var <= 0:
        return IqStream(iq.samples.copy(), iq.sample_rate, iq.t0)
    rng = np.random.default_rng(rng)
    n = len(iq)
    noise = rng.standard_normal(2 * n).view(np.complex128)
    return IqStream(iq.samples + np.sqrt(noise_var / 2) * noise, iq.sample_rate, iq.t0)


def awgn(
    iq: IqStream,
    snr_db: float,
    reference_power: float,
    rng: np.random.Generator | int | None = None,
) -> IqStream:
    """Add noise of variance ``reference_power / 10**(snr_db/10)``; ``inf`` adds none."""
    if reference_power <= 0:
        raise ValueError("reference_power must be positive")
    if np.isposinf(snr_db):
        return IqStream(iq.samples.copy(), iq.sample_rate, iq.t0)
    return add_noise(iq, reference_power / 10 ** (snr_db / 10), rng)


def quantize(iq: IqStream, bits: int, full_scale: float) -> IqStream:
    """Uniform mid-rise quantizer on I and Q, clipping at +/-full_scale."""
    if not 4 <= bits <= 16:
        raise ValueError(f"bits must be in [4, 16], got {bits}")
    if full_scale <= 0:
        raise ValueError("full_scale must be positive")
    step = 2 * full_scale / 2**bits
    top = 2 ** (bits - 1) - 1

    def q(v):
        level = np.clip(np.floor(v / step), -top - 1, top)
        return (level + 0.5) * step

    s = iq.samples
    return IqStream(q(s.real) + 1j * q(s.imag), iq.sample_rate, iq.t0)


def delay_bin(delay: float, config: CellConfig) -> float:
    """Delay expressed in CIR bins of the pilot-comb transform."""
    return delay * config.pilot_bandwidth


def comb_response(delay: float, config: CellConfig, shift: int, bins=None) -> np.ndarray:
    """Exact CIR-bin response of the port-0 pilot comb to a unit path at ``delay``.

    Sums the path's phase over the physical pilot frequencies (DC gap
    included), applies the inverse transform over pilot index, and removes the
    comb-offset rotation the same way the estimator does.
    """
    n = config.n_pilots
    bins = np.arange(n) if bins is None else np.atleast_1d(bins)
    i = np.arange(n)
    k = 6 * i + shift
    half = config.n_subcarriers // 2
    q = np.where(k < half, k - half, k - half + 1)
    phase = np.exp(-2j * np.pi * q * config.subcarrier_spacing * delay)
    out = np.empty(len(bins), dtype=complex)
    for j, l in enumerate(bins):
        out[j] = np.sum(phase * np.exp(2j * np.pi * i * l / n)) / n
        out[j] *= np.exp(2j * np.pi * (shift - half) * l / config.n_subcarriers)
    return out


def _weight(delay: float, config: CellConfig, l0: int, kernel: str, shift: int) -> complex:
    if kernel == "sinc":
        return complex(np.sinc(l0 - delay_bin(delay, config)))
    if kernel == "comb":
        return complex(comb_response(delay, config, shift, [l0])[0])
    raise ValueError(f"unknown kernel {kernel!r}")


def path_weights(
    spec: ChannelSpec, config: CellConfig, l0: int, kernel: str = "sinc", shift: int | None = None
) -> tuple[np.ndarray, complex]:
    """Static tap-``l0`` weights of every unmodulated path and of the backscatter path.

    ``g1(t) = sum_k amp_k * w_k * exp(j2pi f_k t)`` and likewise for ``g0``.

    Raises:
        ValueError: a delay falls outside the pilot comb's alias range.
    """
    n_bins = config.n_pilots
    if shift is None:
        shift = config.v_shift
    bd = spec.bd
    for d in [p.delay for p in spec.paths] + ([bd.delay] if bd is not None else []):
        b = delay_bin(d, config)
        if not 0 <= b < n_bins:
            raise ValueError(f"delay {d:g} s (bin {b:.2f}) outside the {n_bins}-bin alias range")
    w = np.array([_weight(p.delay, config, l0, kernel, shift) for p in spec.paths])
    w_bd = _weight(bd.delay, config, l0, kernel, shift) if bd is not None else 0j
    return w, w_bd


def expected_tap_model(
    spec: ChannelSpec,
    config: CellConfig,
    l0: int,
    kernel: str = "sinc",
    shift: int | None = None,
    t: float = 0.0,
) -> TapModel:
    """Analytic composite gains of tap ``l0``.

    ``kernel="sinc"`` is the band-limited interpolation model; ``"comb"`` is
    the exact response of the finite, DC-split pilot comb of shift class
    ``shift`` (default: that of symbol 0). Path phases are evaluated at time
    ``t`` so Doppler and CFO rotations are included.
    """
    w, w_bd = path_weights(spec, config, l0, kernel, shift)
    common = np.exp(2j * np.pi * spec.cfo * t)
    g1 = sum(p.amplitude * np.exp(2j * np.pi * p.doppler * t) * wk for p, wk in zip(spec.paths, w))
    g0 = 0j
    bd = spec.bd
    if bd is not None:
        g0 = bd.amplitude * np.exp(2j * np.pi * bd.doppler * t) * w_bd
    return TapModel(complex(g0 * common), complex(g1 * common))
