"""IQ capture files: raw interleaved float32 I/Q, little-endian, no header.

Also builds multi-packet LTE + backscatter captures and decodes them.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from ..channel import apply_channel
from ..codec import FRAME_CHIPS, BdWaveform, bd_waveform, bits_to_hex, frame_build, hex_to_bits
from ..csi import SyncError, estimate_cir_series, timing_sync
from ..lte import CellConfig, IqStream, build_grid, ofdm_modulate
from ..receiver import DemodResult, ber, receive
from .config import ExperimentConfig
from .sim import noise_var_for

IQ_DTYPE = np.dtype("<c8")
RECORD_BYTES = IQ_DTYPE.itemsize
PACKET_COLUMNS = ("capture_id", "frame_start", "sync_metric", "snr_est_db", "payload_hex", "ber")


class CaptureFormatError(ValueError):
    pass


def write_iq(path, iq: IqStream) -> None:
    np.asarray(iq.samples, dtype=IQ_DTYPE).tofile(path)


def ingest_iq(path, config: CellConfig | None = None, sample_rate: float | None = None) -> IqStream:
    """Read a raw cf32 capture. The sample rate comes from ``config`` (or ``sample_rate``).

    Raises:
        CaptureFormatError: the file size is not a whole number of 8-byte
            complex records; the message gives the offset of the stray bytes.
    """
    if sample_rate is None:
        sample_rate = (config or CellConfig()).sample_rate
    size = os.path.getsize(path)
    extra = size % RECORD_BYTES
    if extra:
        offset = size - extra
        kind = "odd number of float32 values" if extra == 4 else f"{extra} stray bytes"
        raise CaptureFormatError(
            f"{path}: {kind} - incomplete complex record at byte offset {offset} (file size {size})"
        )
    samples = np.fromfile(path, dtype=IQ_DTYPE)
    return IqStream(samples, sample_rate)


@dataclass
class CaptureTruth:
    payload_hex: str
    packet_start: int  # capture sample index of the first chip


def generate_capture(
    cfg: ExperimentConfig,
    n_packets: int = 1,
    payloads=None,
    snr_db: float | None = None,
    seed: int | None = None,
    offset: int = 0,
) -> tuple[IqStream, list[CaptureTruth]]:
    """LTE downlink with ``n_packets`` backscatter packets separated by ``cfg.guard``.

    The first ``offset`` samples of the generated stream are dropped so the
    capture need not start on a frame boundary. ``snr_db`` defaults to the
    first point of the config's SNR grid.
    """
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    if offset < 0:
        raise ValueError("offset must be >= 0")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    cell = cfg.cell
    fs = cell.sample_rate
    if payloads is None:
        payloads = [cfg.payload] * n_packets if cfg.payload else [None] * n_packets
    payloads = list(payloads)
    if len(payloads) != n_packets:
        raise ValueError("one payload per packet required")
    bits = [hex_to_bits(p) if p else rng.integers(0, 2, 32).astype(np.uint8) for p in payloads]

    guard = int(round(cfg.guard * fs))
    pieces, truth = [np.zeros(offset + guard)], []
    pos = offset + guard
    for b in bits:
        wf = bd_waveform(frame_build(b), cfg.chip_duration, fs, 0.0)
        truth.append(CaptureTruth(bits_to_hex(b), pos - offset))
        pieces += [wf.samples, np.zeros(guard)]
        pos += len(wf.samples) + guard
    x = np.concatenate(pieces)
    n_sf = -(-len(x) // cell.subframe_samples)
    iq = ofdm_modulate(build_grid(cell, n_sf, rng))
    wf_all = BdWaveform(np.concatenate([x, np.zeros(len(iq) - len(x))]), fs, cfg.chip_duration, offset + guard)
    snr = cfg.snr_db[0] if snr_db is None else snr_db
    spec = replace(cfg.channel.with_waveform(wf_all), noise_psd=noise_var_for(cfg, snr))
    rx = apply_channel(iq, spec, rng)
    return IqStream(rx.samples[offset : len(x)], fs), truth


def min_capture_samples(cfg: ExperimentConfig) -> int:
    return int(round(FRAME_CHIPS * cfg.chip_duration * cfg.cell.sample_rate))


def decode_iq(iq: IqStream, cfg: ExperimentConfig, max_packets: int | None = None) -> list[DemodResult]:
    """Full receive chain over a capture. LTE sync failure gives an empty list.

    Each result's ``extra["sample"]`` is the capture sample index of its
    first chip (start of the OFDM symbol the packet was found at).

    Raises:
        ValueError: capture shorter than one packet.
    """
    cell = cfg.cell
    if len(iq) < min_capture_samples(cfg):
        raise ValueError(
            f"capture of {len(iq)} samples is shorter than one packet ({min_capture_samples(cfg)} samples)"
        )
    try:
        timing = timing_sync(iq, cell)
        series = estimate_cir_series(iq, cell, timing)
    except (SyncError, ValueError):
        return []
    if series.uniform is None:
        return []
    results = receive(series.uniform, cfg.chip_duration, cell.symbol_rate, cfg.highpass, max_packets=max_packets)
    offsets = cell.symbol_offsets()
    for r in results:
        sf, s = divmod(r.frame_start, 14)
        r.extra["sample"] = int(timing + sf * cell.subframe_samples + offsets[s])
    return results


def decode_capture(path, cfg: ExperimentConfig, max_packets: int | None = None) -> list[DemodResult]:
    return decode_iq(ingest_iq(path, cfg.cell), cfg, max_packets)


def match_truth(
    results: list[DemodResult], truth: list[CaptureTruth], tolerance: int | None = None, cfg: ExperimentConfig | None = None
) -> list[float | None]:
    """BER of each result against the truth packet nearest in start sample.

    ``None`` where no truth packet lies within ``tolerance`` samples (default:
    half a chip of ``cfg``, or of the default configuration).
    """
    if tolerance is None:
        cfg = cfg or ExperimentConfig()
        tolerance = int(cfg.chip_duration * cfg.cell.sample_rate) // 2
    out = []
    for r in results:
        best = None
        for t in truth:
            d = abs(r.extra.get("sample", -(10**12)) - t.packet_start)
            if d <= tolerance and (best is None or d < best[0]):
                best = (d, t)
        out.append(None if best is None else ber(r.payload_bits, hex_to_bits(best[1].payload_hex)))
    return out


def write_packets_csv(path_or_file, capture_id: str, results: list[DemodResult], bers=None) -> None:
    """One row per packet: capture_id, frame_start (capture sample), sync_metric, snr_est_db, payload_hex, ber."""
    if bers is None:
        bers = [None] * len(results)
    own = isinstance(path_or_file, (str, os.PathLike))
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PACKET_COLUMNS)
        for r, b in zip(results, bers):
            w.writerow([
                capture_id,
                r.extra.get("sample", r.frame_start),
                repr(float(r.sync_metric)),
                repr(float(r.snr_est_db)),
                r.payload_hex,
                "" if b is None else repr(float(b)),
            ])
    finally:
        if own:
            f.close()


def write_truth_csv(path, truth: list[CaptureTruth]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["packet_start", "payload_hex"])
        for t in truth:
            w.writerow([t.packet_start, t.payload_hex])


def read_truth_csv(path) -> list[CaptureTruth]:
    with open(path, newline="") as f:
        return [CaptureTruth(row["payload_hex"], int(row["packet_start"])) for row in csv.DictReader(f)]
