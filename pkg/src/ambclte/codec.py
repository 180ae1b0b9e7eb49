"""Backscatter device framing: Barker-13 sync header, Manchester payload, OOK waveform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAYLOAD_BITS = 32
SYNC_CHIPS = 26
DATA_CHIPS = 2 * PAYLOAD_BITS
FRAME_CHIPS = SYNC_CHIPS + DATA_CHIPS
DEFAULT_CHIP_DURATION = 0.010

_BARKER13 = np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1], dtype=np.int8)


def barker13() -> np.ndarray:
    """Bipolar Barker-13 code."""
    return _BARKER13.copy()


def sync_chips() -> np.ndarray:
    """Two Barker-13 codes as on/off chips (+1 -> 1, -1 -> 0)."""
    b = (barker13() > 0).astype(np.uint8)
    return np.concatenate([b, b])


def manchester_encode(bits) -> np.ndarray:
    """Bit 0 -> chips (0, 1), bit 1 -> chips (1, 0)."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(bits > 1):
        raise ValueError("bits must be 0 or 1")
    return np.column_stack([bits, 1 - bits]).ravel().astype(np.uint8)


@dataclass(frozen=True)
class BdFrame:
    payload: np.ndarray
    sync_chips: np.ndarray
    data_chips: np.ndarray

    @property
    def chips(self) -> np.ndarray:
        return np.concatenate([self.sync_chips, self.data_chips])

    @property
    def payload_hex(self) -> str:
        return bits_to_hex(self.payload)


def frame_build(payload) -> BdFrame:
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size != PAYLOAD_BITS:
        raise ValueError(f"payload must be {PAYLOAD_BITS} bits, got {payload.size}")
    return BdFrame(payload.copy(), sync_chips(), manchester_encode(payload))


def hex_to_bits(text: str) -> np.ndarray:
    """Parse 8 hex digits into 32 bits, most significant bit first."""
    text = text.strip().lower().removeprefix("0x")
    if len(text) != PAYLOAD_BITS // 4:
        raise ValueError(f"payload must be {PAYLOAD_BITS // 4} hex digits, got {text!r}")
    value = int(text, 16)
    return np.array([(value >> (PAYLOAD_BITS - 1 - i)) & 1 for i in range(PAYLOAD_BITS)], dtype=np.uint8)


def bits_to_hex(bits) -> str:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return f"{value:0{(len(bits) + 3) // 4}x}"


@dataclass
class BdWaveform:
    """Sample-and-hold on/off reflection state.

    ``packet_start`` is the index of the first chip sample; it equals the
    leading guard in samples.
    """

    samples: np.ndarray
    sample_rate: float
    chip_duration: float = DEFAULT_CHIP_DURATION
    packet_start: int = 0

    @property
    def samples_per_chip(self) -> int:
        return samples_per_chip(self.chip_duration, self.sample_rate)

    @property
    def start_time(self) -> float:
        return self.packet_start / self.sample_rate


def samples_per_chip(chip_duration: float, sample_rate: float) -> int:
    n = chip_duration * sample_rate
    spc = int(round(n))
    if spc < 1 or abs(n - spc) > 1e-6 * max(1.0, n):
        raise ValueError(
            f"chip of {chip_duration} s at {sample_rate} Hz is not a whole number of samples"
        )
    return spc


def bd_waveform(
    frame: BdFrame,
    chip_duration: float = DEFAULT_CHIP_DURATION,
    sample_rate: float = 7.68e6,
    guard: float = 0.0,
    guard_after: float | None = None,
) -> BdWaveform:
    """Expand a frame into an on/off waveform with zero guards on both sides.

    ``guard_after`` defaults to ``guard``. Guards are rounded to whole samples.
    """
    spc = samples_per_chip(chip_duration, sample_rate)
    if guard < 0 or (guard_after is not None and guard_after < 0):
        raise ValueError("guard intervals must be non-negative")
    pre = int(round(guard * sample_rate))
    post = int(round((guard if guard_after is None else guard_after) * sample_rate))
    body = np.repeat(frame.chips.astype(np.float64), spc)
    samples = np.concatenate([np.zeros(pre), body, np.zeros(post)])
    return BdWaveform(samples, sample_rate, chip_duration, pre)
