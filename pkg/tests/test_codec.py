import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambclte.codec import (
    FRAME_CHIPS,
    BdFrame,
    barker13,
    bd_waveform,
    bits_to_hex,
    frame_build,
    hex_to_bits,
    manchester_encode,
    samples_per_chip,
    sync_chips,
)
from ambclte.receiver import decode_chips

payloads = st.lists(st.integers(0, 1), min_size=32, max_size=32).map(lambda b: np.array(b, dtype=np.uint8))


# --- Manchester -----------------------------------------------------------


@pytest.mark.parametrize("bits,chips", [([0], [0, 1]), ([1], [1, 0]), ([], [])])
def test_manchester_examples(bits, chips):
    assert manchester_encode(bits).tolist() == chips


@given(st.lists(st.integers(0, 1), max_size=64))
def test_manchester_pairs_and_dc_balance(bits):
    chips = manchester_encode(bits)
    assert len(chips) == 2 * len(bits)
    pairs = chips.reshape(-1, 2).tolist()
    assert all(p in ([0, 1], [1, 0]) for p in pairs)
    assert np.sum(2 * chips.astype(int) - 1) == 0


def test_manchester_rejects_non_binary():
    with pytest.raises(ValueError):
        manchester_encode([0, 2])


# --- Barker ---------------------------------------------------------------


def test_barker13_values_and_autocorrelation():
    b = barker13()
    assert b.tolist() == [1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1]
    assert set(b.tolist()) == {1, -1}
    acf = np.correlate(b.astype(int), b.astype(int), mode="full")
    assert acf[12] == 13
    assert np.max(np.abs(np.delete(acf, 12))) <= 1


def test_sync_chip_mapping():
    assert sync_chips().tolist() == 2 * [1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 1, 0, 1]


# --- frames ---------------------------------------------------------------


@given(payloads)
def test_frame_has_90_chips(payload):
    f = frame_build(payload)
    assert isinstance(f, BdFrame)
    assert len(f.chips) == FRAME_CHIPS == 90
    assert len(f.sync_chips) == 26 and len(f.data_chips) == 64
    assert np.array_equal(f.data_chips, manchester_encode(payload))


def test_all_zero_payload_alternates():
    f = frame_build(np.zeros(32, dtype=np.uint8))
    assert f.data_chips.tolist() == [0, 1] * 32


@pytest.mark.parametrize("n", [0, 31, 33])
def test_frame_build_rejects_wrong_length(n):
    with pytest.raises(ValueError):
        frame_build(np.zeros(n, dtype=np.uint8))


@settings(max_examples=50)
@given(payloads, payloads)
def test_frame_build_injective(a, b):
    same = np.array_equal(frame_build(a).chips, frame_build(b).chips)
    assert same == np.array_equal(a, b)


@given(payloads)
def test_chip_decode_recovers_payload(payload):
    assert np.array_equal(decode_chips(frame_build(payload).chips), payload)


# --- hex ------------------------------------------------------------------


@given(payloads)
def test_hex_round_trip(payload):
    text = bits_to_hex(payload)
    assert len(text) == 8
    assert np.array_equal(hex_to_bits(text), payload)


def test_hex_is_msb_first():
    bits = hex_to_bits("0x80000001")
    assert bits[0] == 1 and bits[-1] == 1 and bits[1:-1].sum() == 0
    assert bits_to_hex(hex_to_bits("A5A5A5A5")) == "a5a5a5a5"


@pytest.mark.parametrize("bad", ["1234567", "123456789", "zzzzzzzz", ""])
def test_hex_rejects_bad_text(bad):
    with pytest.raises(ValueError):
        hex_to_bits(bad)


# --- waveform -------------------------------------------------------------


def test_waveform_length_default_rate():
    wf = bd_waveform(frame_build(np.ones(32, dtype=np.uint8)), 0.010, 7.68e6, 0.0)
    assert len(wf.samples) == 6_912_000 == 90 * 0.01 * 7_680_000
    assert wf.samples_per_chip == 76_800


def test_waveform_is_sample_and_hold():
    frame = frame_build(hex_to_bits("deadbeef"))
    wf = bd_waveform(frame, 1e-3, 14_000.0)
    assert wf.samples_per_chip == 14
    assert np.array_equal(wf.samples.reshape(90, 14), np.repeat(frame.chips[:, None], 14, axis=1))


def test_all_zero_chips_give_zero_waveform():
    z = np.zeros(26, dtype=np.uint8)
    frame = BdFrame(np.zeros(32, dtype=np.uint8), z, np.zeros(64, dtype=np.uint8))
    assert not np.any(bd_waveform(frame, 1e-3, 14_000.0).samples)


def test_waveform_guards():
    frame = frame_build(np.zeros(32, dtype=np.uint8))
    wf = bd_waveform(frame, 1e-3, 14_000.0, guard=0.01, guard_after=0.02)
    assert wf.packet_start == 140
    assert len(wf.samples) == 140 + 90 * 14 + 280
    assert not np.any(wf.samples[:140]) and not np.any(wf.samples[-280:])
    assert wf.start_time == pytest.approx(0.01)
    with pytest.raises(ValueError):
        bd_waveform(frame, 1e-3, 14_000.0, guard=-1.0)


def test_non_integer_samples_per_chip_raises():
    with pytest.raises(ValueError):
        samples_per_chip(1e-3, 14_500.5)
    with pytest.raises(ValueError):
        bd_waveform(frame_build(np.zeros(32, dtype=np.uint8)), 0.0101, 1000.0)
