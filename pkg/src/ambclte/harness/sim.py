"""Per-packet end-to-end simulation.

Two fidelities share the receiver:

* ``waveform``: LTE grid -> OFDM -> channel (+noise, ADC) -> PSS timing ->
  CRS estimates -> tap series -> demodulator.
* ``tap``: the CRS tap estimates are drawn directly from the composite tap
  model ``g1(t) + g0(t) * xbar + z`` (``xbar`` = backscatter state averaged
  over the symbol's useful part, ``z`` = LS estimation noise), then follow
  the same interpolation and demodulator. Much faster; used for long sweeps.

Noise levels follow ``snr_mode``: ``"decision"`` maps a nominal decision SNR
``gamma`` to the per-sample IQ noise variance

    sigma^2 = n_pilots * beta^2 * n_est / (4 |g1|^2 gamma),

where ``n_est`` is the number of CRS estimates per chip (4 per ms); ``"lte"``
sets ``sigma^2`` from the direct-path power at the receiver.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..channel import ChannelSpec, TapModel, apply_channel, expected_tap_model, path_weights
from ..codec import FRAME_CHIPS, bd_waveform, bits_to_hex, frame_build, hex_to_bits
from ..csi import CirSeries, SyncError, estimate_cir_series, interpolate_taps, timing_sync
from ..lte import (
    CRS_SYMBOLS,
    SYMBOLS_PER_SUBFRAME,
    CellConfig,
    build_grid,
    crs_shift,
    ofdm_modulate,
)
from ..receiver import ber, receive
from .config import ExperimentConfig

CRS_PER_MS = len(CRS_SYMBOLS)


@dataclass
class PacketRecord:
    point: int
    packet: int
    snr_db: float
    payload_hex: str
    detected: bool = False
    frame_start: int = -1
    true_start: int = -1
    sync_metric: float = float("nan")
    phase_sign: int = 0
    snr_est_db: float = float("nan")
    ber: float = float("nan")
    bit_errors: int = -1
    noise_var: float = 0.0
    bd_path_snr_db: float = float("nan")
    error: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def packet_seed(seed: int, point: int, packet: int) -> np.random.SeedSequence:
    """Per-job seed; independent of execution order."""
    return np.random.SeedSequence([int(seed), int(point), int(packet)])


def strongest_tap(spec: ChannelSpec, config: CellConfig) -> int:
    """Bin holding the most unmodulated-path power (static view)."""
    power = [abs(expected_tap_model(spec, config, l, kernel="comb").g1) ** 2 for l in range(config.n_pilots)]
    return int(np.argmax(power))


def nominal_tap_model(spec: ChannelSpec, config: CellConfig) -> tuple[int, TapModel]:
    l0 = strongest_tap(spec, config)
    return l0, expected_tap_model(spec, config, l0, kernel="comb")


def decision_noise_var(model: TapModel, gamma_db: float, chip_duration: float, n_pilots: int = 50) -> float:
    """Per-sample IQ noise variance giving nominal decision SNR ``gamma_db``."""
    if np.isposinf(gamma_db):
        return 0.0
    if model.alpha <= 0 or model.beta == 0:
        raise ValueError("nominal decision SNR needs a non-zero direct tap and backscatter contrast")
    n_est = CRS_PER_MS * 1000.0 * chip_duration
    gamma = 10 ** (gamma_db / 10)
    return n_pilots * model.beta**2 * n_est / (4 * model.alpha * gamma)


def nominal_decision_snr_db(model: TapModel, noise_var: float, chip_duration: float, n_pilots: int = 50) -> float:
    """Inverse of :func:`decision_noise_var`."""
    if noise_var <= 0:
        return float("inf")
    n_est = CRS_PER_MS * 1000.0 * chip_duration
    return float(10 * np.log10(n_pilots * model.beta**2 * n_est / (4 * model.alpha * noise_var)))


def signal_power(config: CellConfig) -> float:
    """Mean per-sample power of the modulated downlink (CP included)."""
    grid = build_grid(config, 10, rng=0)
    return float(np.mean(np.abs(grid.cells) ** 2) * config.n_subcarriers / config.n_fft)


def direct_power(spec: ChannelSpec, config: CellConfig) -> float:
    return abs(spec.direct.amplitude) ** 2 * signal_power(config)


def noise_var_for(cfg: ExperimentConfig, snr_db: float) -> float:
    if np.isposinf(snr_db):
        return 0.0
    if cfg.snr_mode == "decision":
        _, model = nominal_tap_model(cfg.channel, cfg.cell)
        return decision_noise_var(model, snr_db, cfg.chip_duration, cfg.cell.n_pilots)
    return direct_power(cfg.channel, cfg.cell) / 10 ** (snr_db / 10)


def scene_subframes(cfg: ExperimentConfig) -> int:
    span = FRAME_CHIPS * cfg.chip_duration + 2 * cfg.guard
    return int(np.ceil(round(span * 1000, 9)))


def tap_index(sample: int, config: CellConfig) -> int:
    """Tap-series index of the OFDM symbol containing IQ sample ``sample`` (from a subframe boundary)."""
    sf, r = divmod(int(sample), config.subframe_samples)
    starts = config.symbol_offsets()
    return sf * SYMBOLS_PER_SUBFRAME + int(np.searchsorted(starts, r, side="right") - 1)


def _payload(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.payload is not None:
        return hex_to_bits(cfg.payload)
    return rng.integers(0, 2, 32).astype(np.uint8)


def chip_integral(chips: np.ndarray, start: float, chip_duration: float, t: np.ndarray) -> np.ndarray:
    """``int_0^t x(s) ds`` for the piecewise-constant chip train starting at ``start``."""
    chips = np.asarray(chips, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(chips)])
    c = np.clip((np.asarray(t) - start) / chip_duration, 0, len(chips))
    i = np.minimum(np.floor(c).astype(int), len(chips) - 1)
    return (cum[i] + (c - i) * chips[i]) * chip_duration


def simulate_tap_series(
    spec: ChannelSpec,
    config: CellConfig,
    chips: np.ndarray,
    packet_start: float,
    chip_duration: float,
    n_subframes: int,
    noise_var: float,
    rng: np.random.Generator,
    l0: int | None = None,
) -> CirSeries:
    """CRS-rate tap estimates of bin ``l0`` drawn from the composite tap model.

    ``noise_var`` is the per-sample IQ noise variance; each estimate gets
    complex noise of variance ``noise_var / n_pilots``.
    """
    if l0 is None:
        l0 = strongest_tap(spec, config)
    fs = config.sample_rate
    n = config.n_fft
    sym = (np.arange(n_subframes)[:, None] * SYMBOLS_PER_SUBFRAME + np.array(CRS_SYMBOLS)).ravel()
    useful = config.useful_offsets()[list(CRS_SYMBOLS)]
    t_start = ((np.arange(n_subframes)[:, None] * config.subframe_samples + useful).ravel()) / fs
    t_end = t_start + n / fs
    xbar = (chip_integral(chips, packet_start, chip_duration, t_end)
            - chip_integral(chips, packet_start, chip_duration, t_start)) / (n / fs)
    t_mid = t_start + 0.5 * n / fs

    taps = np.empty(len(sym), dtype=complex)
    classes = np.array([crs_shift(config, s) for s in CRS_SYMBOLS])
    shift_of = np.tile(classes, n_subframes)
    for shift in np.unique(classes):
        sel = shift_of == shift
        w, w_bd = path_weights(spec, config, l0, kernel="comb", shift=int(shift))
        tt = t_mid[sel]
        g1 = np.zeros(len(tt), dtype=complex)
        for p, wk in zip(spec.paths, w):
            g1 += p.amplitude * wk * np.exp(2j * np.pi * p.doppler * tt)
        g0 = np.zeros(len(tt), dtype=complex)
        if spec.bd is not None:
            g0 = spec.bd.amplitude * w_bd * np.exp(2j * np.pi * spec.bd.doppler * tt)
        taps[sel] = (g1 + g0 * xbar[sel]) * np.exp(2j * np.pi * spec.cfo * tt)
    if noise_var > 0:
        sigma = np.sqrt(noise_var / config.n_pilots / 2)
        taps = taps + sigma * (rng.standard_normal(len(taps)) + 1j * rng.standard_normal(len(taps)))
    full = np.zeros((config.n_pilots, len(sym)), dtype=complex)
    full[l0] = taps
    series = CirSeries(full, sym, t_start, config.symbol_rate, l0=l0)
    series.uniform = interpolate_taps(series, l0)
    return series


def simulate_packet(
    cfg: ExperimentConfig, snr_db: float, point: int = 0, packet: int = 0, noise_var: float | None = None
) -> PacketRecord:
    """One packet through the configured fidelity; failures are recorded, not raised."""
    rng = np.random.default_rng(packet_seed(cfg.seed, point, packet))
    bits = _payload(cfg, rng)
    frame = frame_build(bits)
    rec = PacketRecord(point, packet, float(snr_db), bits_to_hex(bits))
    if noise_var is None:
        noise_var = noise_var_for(cfg, snr_db)
    rec.noise_var = float(noise_var)
    if noise_var > 0:
        bd_power = abs(cfg.channel.bd.amplitude) ** 2 * signal_power(cfg.cell)
        rec.bd_path_snr_db = float(10 * np.log10(bd_power / noise_var))
    else:
        rec.bd_path_snr_db = float("inf")
    cell = cfg.cell
    n_sf = scene_subframes(cfg)
    try:
        if cfg.fidelity == "tap":
            start_s = round(cfg.guard * 1000) / 1000
            rec.true_start = int(round(start_s * cell.symbol_rate))
            series = simulate_tap_series(
                cfg.channel, cell, frame.chips, start_s, cfg.chip_duration, n_sf, noise_var, rng
            )
        else:
            wf = bd_waveform(frame, cfg.chip_duration, cell.sample_rate, cfg.guard)
            rec.true_start = tap_index(wf.packet_start, cell)
            iq = ofdm_modulate(build_grid(cell, n_sf, rng))
            spec = replace(cfg.channel.with_waveform(wf), noise_psd=noise_var)
            rx = apply_channel(iq, spec, rng)
            timing = timing_sync(rx, cell, known=0 if cfg.timing == "known" else None)
            series = estimate_cir_series(rx, cell, timing)
            if timing:
                rec.true_start -= tap_index(timing, cell)
        known = rec.true_start if cfg.timing == "known" else None
        results = receive(
            series.uniform, cfg.chip_duration, cell.symbol_rate, cfg.highpass, known_start=known, max_packets=1
        )
    except SyncError as exc:
        rec.error = f"lte sync: {exc}"
        return rec
    except ValueError as exc:
        rec.error = str(exc)
        return rec
    if results:
        r = results[0]
        rec.detected = True
        rec.frame_start = r.frame_start
        rec.sync_metric = r.sync_metric
        rec.phase_sign = r.phase_sign
        rec.snr_est_db = r.snr_est_db
        rec.ber = ber(r.payload_bits, bits)
        rec.bit_errors = int(np.count_nonzero(r.payload_bits != bits))
    else:
        rec.error = "no packet"
    return rec
