"""LTE downlink waveform with port-0 cell-specific reference signals.

Resource grids are indexed ``[subcarrier, symbol]`` where subcarrier 0 is the
lowest occupied subcarrier and the DC subcarrier is not part of the grid.
Symbols are numbered continuously, 14 per 1 ms subframe (normal CP).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

SYMBOLS_PER_SLOT = 7
SYMBOLS_PER_SUBFRAME = 14
SUBFRAMES_PER_FRAME = 10
CRS_SYMBOLS = (0, 4, 7, 11)
PSS_SYMBOL_IN_SLOT = 6
PSS_SUBFRAMES = (0, 5)
PSS_LENGTH = 62
PSS_ROOTS = {0: 25, 1: 29, 2: 34}
N_RB_MAX = 110
_GOLD_NC = 1600


class TrafficFill(str, Enum):
    EMPTY = "empty"
    RANDOM_QPSK = "random_qpsk"


@dataclass(frozen=True)
class CellConfig:
    """Static description of one LTE cell (single antenna port 0)."""

    pci: int = 0
    n_rb: int = 25
    n_fft: int = 512
    cp_lengths: tuple[int, int] = (40, 36)
    subcarrier_spacing: float = 15_000.0
    carrier_freq: float = 486e6
    traffic_fill: TrafficFill = TrafficFill.RANDOM_QPSK
    include_pss: bool = True

    def __post_init__(self):
        if not 0 <= self.pci <= 503:
            raise ValueError(f"pci must be in 0..503, got {self.pci}")
        if self.n_rb < 1 or 12 * self.n_rb > self.n_fft - 1:
            raise ValueError(f"n_rb={self.n_rb} does not fit an {self.n_fft}-point transform")
        object.__setattr__(self, "traffic_fill", TrafficFill(self.traffic_fill))
        object.__setattr__(self, "cp_lengths", tuple(int(c) for c in self.cp_lengths))
        if abs(self.slot_samples - self.sample_rate * 0.5e-3) > 1e-6:
            raise ValueError(
                f"slot of {self.slot_samples} samples is not 0.5 ms at {self.sample_rate} Hz"
            )

    @property
    def sample_rate(self) -> float:
        return self.n_fft * self.subcarrier_spacing

    @property
    def n_subcarriers(self) -> int:
        return 12 * self.n_rb

    @property
    def n_pilots(self) -> int:
        """CRS pilots per CRS-bearing symbol."""
        return 2 * self.n_rb

    @property
    def nid2(self) -> int:
        return self.pci % 3

    @property
    def v_shift(self) -> int:
        return self.pci % 6

    @property
    def slot_samples(self) -> int:
        return SYMBOLS_PER_SLOT * self.n_fft + self.cp_lengths[0] + 6 * self.cp_lengths[1]

    @property
    def subframe_samples(self) -> int:
        return 2 * self.slot_samples

    @property
    def symbol_rate(self) -> float:
        """OFDM symbols per second (14 kHz for normal CP)."""
        return SYMBOLS_PER_SUBFRAME * 1000.0

    @property
    def pilot_bandwidth(self) -> float:
        """Span of the pilot comb in Hz; its inverse is the CIR delay-bin size."""
        return self.n_subcarriers * self.subcarrier_spacing

    def cp_length(self, symbol: int) -> int:
        return self.cp_lengths[0] if symbol % SYMBOLS_PER_SLOT == 0 else self.cp_lengths[1]

    def symbol_offsets(self) -> np.ndarray:
        """Start sample (CP included) of each of the 14 symbols within a subframe."""
        lengths = [self.cp_length(s) + self.n_fft for s in range(SYMBOLS_PER_SUBFRAME)]
        return np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)

    def useful_offsets(self) -> np.ndarray:
        """Start sample of the useful (CP-stripped) part of each symbol within a subframe."""
        cps = np.array([self.cp_length(s) for s in range(SYMBOLS_PER_SUBFRAME)])
        return self.symbol_offsets() + cps

    def subcarrier_freq_index(self) -> np.ndarray:
        """Signed frequency index (in subcarrier spacings) of every grid row; DC skipped."""
        k = np.arange(self.n_subcarriers)
        half = self.n_subcarriers // 2
        return np.where(k < half, k - half, k - half + 1)

    def fft_bins(self) -> np.ndarray:
        return self.subcarrier_freq_index() % self.n_fft


@dataclass
class IqStream:
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if not np.iscomplexobj(self.samples):
            self.samples = self.samples.astype(np.complex128)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.sample_rate


@dataclass
class ResourceGrid:
    cells: np.ndarray
    config: CellConfig
    first_subframe: int = 0

    @property
    def n_subframes(self) -> int:
        return self.cells.shape[1] // SYMBOLS_PER_SUBFRAME

    def slot_of(self, symbol: int) -> int:
        """Slot number within the radio frame (0..19) of a grid column."""
        subframe = self.first_subframe + symbol // SYMBOLS_PER_SUBFRAME
        return (2 * subframe + (symbol % SYMBOLS_PER_SUBFRAME) // SYMBOLS_PER_SLOT) % 20


def gold_sequence(c_init: int, length: int) -> np.ndarray:
    """Length-31 Gold sequence c(n), n = 0..length-1."""
    n = length + _GOLD_NC
    x1 = np.zeros(n + 31, dtype=np.uint8)
    x2 = np.zeros(n + 31, dtype=np.uint8)
    x1[0] = 1
    x2[:31] = [(c_init >> i) & 1 for i in range(31)]
    for i in range(n):
        x1[i + 31] = x1[i + 3] ^ x1[i]
        x2[i + 31] = x2[i + 3] ^ x2[i + 2] ^ x2[i + 1] ^ x2[i]
    return x1[_GOLD_NC:n] ^ x2[_GOLD_NC:n]


def crs_c_init(pci: int, slot: int, symbol_in_slot: int) -> int:
    return (2**10) * (7 * (slot + 1) + symbol_in_slot + 1) * (2 * pci + 1) + 2 * pci + 1


@lru_cache(maxsize=1024)
def _crs_sequence_cached(pci: int, n_rb: int, slot: int, symbol_in_slot: int) -> np.ndarray:
    c = gold_sequence(crs_c_init(pci, slot, symbol_in_slot), 4 * N_RB_MAX)
    r = ((1 - 2 * c[0::2].astype(float)) + 1j * (1 - 2 * c[1::2].astype(float))) / np.sqrt(2)
    seq = r[N_RB_MAX - n_rb : N_RB_MAX + n_rb]
    seq.setflags(write=False)
    return seq


def crs_sequence(config: CellConfig, slot: int, symbol_in_slot: int) -> np.ndarray:
    """Port-0 CRS values for one CRS-bearing symbol, ordered by subcarrier.

    Args:
        config: Cell configuration; ``pci`` seeds the sequence.
        slot: Slot number; taken modulo 20.
        symbol_in_slot: 0 or 4 (the port-0 CRS symbols of a slot).
    """
    if symbol_in_slot not in (0, 4):
        raise ValueError(f"port-0 CRS lives in symbols 0 and 4 of a slot, got {symbol_in_slot}")
    if slot < 0:
        raise ValueError("slot must be non-negative")
    return _crs_sequence_cached(config.pci, config.n_rb, slot % 20, symbol_in_slot).copy()


def crs_shift(config: CellConfig, symbol: int) -> int:
    """Frequency offset (0..5) of the pilot comb in a CRS-bearing subframe symbol."""
    s = symbol % SYMBOLS_PER_SUBFRAME
    if s not in CRS_SYMBOLS:
        raise ValueError(f"symbol {symbol} carries no port-0 CRS")
    v = 0 if s % SYMBOLS_PER_SLOT == 0 else 3
    return (v + config.v_shift) % 6


def crs_subcarriers(config: CellConfig, symbol: int) -> np.ndarray:
    return 6 * np.arange(config.n_pilots) + crs_shift(config, symbol)


def pss_generate(nid2: int) -> np.ndarray:
    """Zadoff-Chu PSS of length 62 (the 63-point root with its centre punctured)."""
    if nid2 not in PSS_ROOTS:
        raise ValueError(f"nid2 must be 0, 1 or 2, got {nid2!r}")
    u = PSS_ROOTS[nid2]
    n = np.arange(PSS_LENGTH)
    m = np.where(n < 31, n * (n + 1), (n + 1) * (n + 2))
    return np.exp(-1j * np.pi * u * m / 63)


def pss_subcarriers(config: CellConfig) -> np.ndarray:
    half = config.n_subcarriers // 2
    return np.arange(PSS_LENGTH) - 31 + half


def pss_time_replica(config: CellConfig) -> np.ndarray:
    """Time-domain PSS symbol (useful part only) as produced by :func:`ofdm_modulate`."""
    freq = np.zeros(config.n_fft, dtype=complex)
    freq[config.fft_bins()[pss_subcarriers(config)]] = pss_generate(config.nid2)
    return np.fft.ifft(freq, norm="ortho")


@lru_cache(maxsize=64)
def _frame_layers(config: CellConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Occupied (symbol, subcarrier, value) triples of one 10-subframe radio frame."""
    cols, ks, vals = [], [], []

    def put(col, k, v):
        cols.append(np.full(len(k), col))
        ks.append(k)
        vals.append(v)

    for sf in range(SUBFRAMES_PER_FRAME):
        for s in CRS_SYMBOLS:
            slot = 2 * sf + s // SYMBOLS_PER_SLOT
            put(sf * SYMBOLS_PER_SUBFRAME + s, crs_subcarriers(config, s), crs_sequence(config, slot, s % SYMBOLS_PER_SLOT))
        if config.include_pss and sf in PSS_SUBFRAMES:
            put(sf * SYMBOLS_PER_SUBFRAME + PSS_SYMBOL_IN_SLOT, pss_subcarriers(config), pss_generate(config.nid2))
    out = tuple(np.concatenate(x) for x in (cols, ks, vals))
    for x in out:
        x.setflags(write=False)
    return out


def pilot_mask(config: CellConfig, n_subframes: int, first_subframe: int = 0) -> np.ndarray:
    """Boolean grid marking port-0 CRS resource elements only."""
    cols = _frame_columns(n_subframes, first_subframe)
    mask = np.zeros((config.n_subcarriers, len(cols)), dtype=bool)
    for j, c in enumerate(cols):
        s = c % SYMBOLS_PER_SUBFRAME
        if s in CRS_SYMBOLS:
            mask[crs_subcarriers(config, s), j] = True
    return mask


def _frame_columns(n_subframes: int, first_subframe: int) -> np.ndarray:
    sf = (first_subframe + np.arange(n_subframes)) % SUBFRAMES_PER_FRAME
    return (sf[:, None] * SYMBOLS_PER_SUBFRAME + np.arange(SYMBOLS_PER_SUBFRAME)).ravel()


_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)


def random_qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    return _QPSK[rng.integers(0, 4, size=shape, dtype=np.uint8)]


def build_grid(
    config: CellConfig,
    n_subframes: int,
    rng: np.random.Generator | int | None = None,
    first_subframe: int = 0,
) -> ResourceGrid:
    """Fill ``n_subframes`` subframes with CRS, PSS (if enabled) and traffic."""
    if n_subframes < 1:
        raise ValueError("n_subframes must be >= 1")
    n_sym = n_subframes * SYMBOLS_PER_SUBFRAME
    n_sc = config.n_subcarriers
    # symbol-major storage; the grid exposes the [subcarrier, symbol] view
    if config.traffic_fill is TrafficFill.RANDOM_QPSK:
        cells = random_qpsk(np.random.default_rng(rng), (n_sym, n_sc))
    else:
        cells = np.zeros((n_sym, n_sc), dtype=complex)
    col, k, val = _frame_layers(config)
    frame_len = SUBFRAMES_PER_FRAME * SYMBOLS_PER_SUBFRAME
    start = (first_subframe % SUBFRAMES_PER_FRAME) * SYMBOLS_PER_SUBFRAME
    j = (col - start) % frame_len
    j = j[:, None] + frame_len * np.arange(-(-n_sym // frame_len) + 1)
    ok = j < n_sym
    flat = (j * n_sc + k[:, None])[ok]
    cells.reshape(-1)[flat] = np.broadcast_to(val[:, None], j.shape)[ok]
    return ResourceGrid(cells.T, config, first_subframe)


def ofdm_modulate(grid: ResourceGrid) -> IqStream:
    cfg = grid.config
    n_sym = grid.cells.shape[1]
    if grid.cells.shape[0] != cfg.n_subcarriers or n_sym % SYMBOLS_PER_SUBFRAME:
        raise ValueError(f"grid shape {grid.cells.shape} inconsistent with the cell config")
    n = cfg.n_fft
    half = cfg.n_subcarriers // 2
    cells_t = grid.cells.T
    freq = np.zeros((n_sym, n), dtype=complex)
    freq[:, n - half :] = cells_t[:, :half]
    freq[:, 1 : half + 1] = cells_t[:, half:]
    td = np.fft.ifft(freq, axis=1, norm="ortho").reshape(grid.n_subframes, SYMBOLS_PER_SUBFRAME, n)
    out = np.empty((grid.n_subframes, cfg.subframe_samples), dtype=complex)
    pos = 0
    for s in range(SYMBOLS_PER_SUBFRAME):
        cp = cfg.cp_length(s)
        out[:, pos : pos + cp] = td[:, s, n - cp :]
        out[:, pos + cp : pos + cp + n] = td[:, s]
        pos += cp + n
    return IqStream(out.ravel(), cfg.sample_rate, t0=grid.first_subframe * 1e-3)


def _useful_blocks(
    samples: np.ndarray, frame_start: int, config: CellConfig, n_subframes: int, symbols
) -> np.ndarray:
    """Slice the useful parts of the chosen subframe symbols: ``[n_sf, n_sym, n_fft]``."""
    sf_len = config.subframe_samples
    block = samples[frame_start : frame_start + n_subframes * sf_len].reshape(n_subframes, sf_len)
    starts = config.useful_offsets()[list(symbols)]
    idx = starts[:, None] + np.arange(config.n_fft)
    return block[:, idx]


def demodulate_symbols(
    samples: np.ndarray,
    frame_start: int,
    config: CellConfig,
    n_subframes: int,
    symbols=tuple(range(SYMBOLS_PER_SUBFRAME)),
) -> np.ndarray:
    """Forward transform of selected symbols of every subframe: ``[n_sf, n_sym, n_sc]``."""
    blocks = _useful_blocks(samples, frame_start, config, n_subframes, symbols)
    spec = np.fft.fft(blocks, axis=-1, norm="ortho")
    return spec[..., config.fft_bins()]


def ofdm_demodulate(
    iq: IqStream,
    frame_start: int,
    config: CellConfig,
    n_subframes: int | None = None,
    first_subframe: int = 0,
) -> ResourceGrid:
    """CP-stripped forward transform of every symbol from ``frame_start`` on.

    Without ``n_subframes`` all whole subframes remaining in the stream are used.
    """
    available = (len(iq) - frame_start) // config.subframe_samples if frame_start >= 0 else -1
    if n_subframes is None:
        n_subframes = available
    if frame_start < 0 or n_subframes < 1 or n_subframes > available:
        raise ValueError(
            f"stream of {len(iq)} samples holds {max(available, 0)} whole subframes "
            f"after sample {frame_start}; {n_subframes or 1} needed"
        )
    spec = demodulate_symbols(iq.samples, frame_start, config, n_subframes)
    cells = spec.reshape(-1, config.n_subcarriers).T
    return ResourceGrid(np.ascontiguousarray(cells), config, first_subframe)
