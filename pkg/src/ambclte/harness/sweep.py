"""BER-vs-SNR sweeps with deterministic per-packet seeding."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .config import ExperimentConfig
from .sim import PacketRecord, noise_var_for, simulate_packet

RESULT_COLUMNS = ("snr_db", "packets", "detected", "mean_ber", "mean_sync_metric", "mean_snr_est_db")


@dataclass
class PointSummary:
    snr_db: float
    packets: int
    detected: int
    mean_ber: float
    mean_sync_metric: float
    mean_snr_est_db: float

    @property
    def detection_rate(self) -> float:
        return self.detected / self.packets


@dataclass
class SweepResult:
    points: list[PointSummary]
    records: list[PacketRecord]

    def to_csv(self, path=None) -> str:
        """Write the fixed-schema results table; returns the CSV text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for p in self.points:
            w.writerow([_fmt(getattr(p, c)) for c in RESULT_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def records_csv(self, path=None) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(PacketRecord)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for r in self.records:
            w.writerow([_fmt(getattr(r, n)) for n in names])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else float("nan")


def _mean_db(values) -> float:
    """dB value of the mean linear ratio (``-inf`` entries count as zero, ``inf`` propagates)."""
    values = np.asarray(list(values), dtype=float)
    values = values[~np.isnan(values)]
    if values.size == 0:
        return float("nan")
    lin = np.mean(np.power(10.0, values / 10))
    return float(10 * np.log10(lin)) if lin > 0 else float("-inf")


def summarize(snr_db: float, records: list[PacketRecord]) -> PointSummary:
    """Means are over detected packets only; the SNR estimate is averaged in linear units."""
    det = [r for r in records if r.detected]
    return PointSummary(
        float(snr_db),
        len(records),
        len(det),
        _mean(r.ber for r in det),
        _mean(r.sync_metric for r in det),
        _mean_db(r.snr_est_db for r in det),
    )


def _job(args):
    cfg, snr, noise_var, point, packet = args
    return simulate_packet(cfg, snr, point, packet, noise_var=noise_var)


def run_sweep(cfg: ExperimentConfig, progress=None) -> SweepResult:
    """Simulate ``cfg.packets`` packets at every SNR point.

    Results do not depend on ``cfg.jobs``: every packet's randomness comes
    from ``SeedSequence([seed, point, packet])``.
    """
    jobs = []
    for i, snr in enumerate(cfg.snr_db):
        nv = noise_var_for(cfg, snr)
        jobs += [(cfg, snr, nv, i, j) for j in range(cfg.packets)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            records = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.jobs))))
    else:
        records = []
        for k, job in enumerate(jobs):
            records.append(_job(job))
            if progress is not None:
                progress(k + 1, len(jobs))
    points = []
    for i, snr in enumerate(cfg.snr_db):
        points.append(summarize(snr, [r for r in records if r.point == i]))
    return SweepResult(points, records)
