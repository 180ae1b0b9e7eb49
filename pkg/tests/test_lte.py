import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambclte.lte import (
    CRS_SYMBOLS,
    CellConfig,
    IqStream,
    ResourceGrid,
    build_grid,
    crs_sequence,
    crs_subcarriers,
    gold_sequence,
    ofdm_demodulate,
    ofdm_modulate,
    pilot_mask,
    pss_generate,
    pss_subcarriers,
)

import oracles


# --- numerology -----------------------------------------------------------


def test_default_numerology(cell):
    assert cell.sample_rate == 7_680_000
    assert cell.n_subcarriers == 300 <= cell.n_fft
    assert cell.n_pilots == 50
    assert cell.slot_samples == 7 * 512 + 40 + 6 * 36 == 3840
    assert cell.slot_samples / cell.sample_rate == pytest.approx(0.5e-3)
    assert cell.subframe_samples == 7680
    assert cell.symbol_rate == 14_000


def test_symbol_offsets_cover_subframe(cell):
    offs = cell.symbol_offsets()
    assert offs[0] == 0 and offs[7] == 3840
    assert cell.useful_offsets()[0] == 40 and cell.useful_offsets()[1] == 40 + 512 + 36


@pytest.mark.parametrize("kw", [{"pci": 504}, {"pci": -1}, {"n_rb": 43}, {"cp_lengths": (40, 40)}])
def test_cell_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        CellConfig(**kw)


# --- CRS ------------------------------------------------------------------


def test_gold_sequence_matches_register_oracle():
    for c_init in (1, 0x1234567, 2**31 - 1):
        assert np.array_equal(gold_sequence(c_init, 200), oracles.gold_bits(c_init, 200))


@pytest.mark.parametrize("pci,slot,sym", [(0, 0, 0), (1, 3, 4), (17, 19, 0), (503, 7, 4)])
def test_crs_sequence_matches_oracle(pci, slot, sym):
    got = crs_sequence(CellConfig(pci=pci), slot, sym)
    assert np.allclose(got, oracles.crs_values(pci, 25, slot, sym), atol=1e-15)


def test_crs_sequence_deterministic_and_unit_magnitude(cell):
    a = crs_sequence(cell, 5, 4)
    b = crs_sequence(cell, 5, 4)
    assert len(a) == 2 * cell.n_rb
    assert np.array_equal(a, b)
    assert np.all(np.abs(np.abs(a) - 1) < 1e-12)


def test_crs_sequence_depends_on_pci():
    a = crs_sequence(CellConfig(pci=0), 0, 0)
    b = crs_sequence(CellConfig(pci=1), 0, 0)
    assert np.count_nonzero(~np.isclose(a, b)) >= 1


@pytest.mark.parametrize("sym", [1, 2, 3, 5, 6, -1])
def test_crs_sequence_rejects_non_crs_symbol(cell, sym):
    with pytest.raises(ValueError):
        crs_sequence(cell, 0, sym)


# --- grid -----------------------------------------------------------------


def test_one_subframe_has_200_pilots(empty_cell):
    grid = build_grid(empty_cell, 1)
    assert grid.cells.shape == (300, 14)
    assert pilot_mask(empty_cell, 1).sum() == 4 * 50 == 200
    assert np.count_nonzero(grid.cells) == 200


def test_empty_fill_leaves_non_pilot_cells_zero():
    cfg = CellConfig(traffic_fill="empty", include_pss=True)
    grid = build_grid(cfg, 10)
    mask = pilot_mask(cfg, 10)
    for sf in (0, 5):
        mask[pss_subcarriers(cfg), sf * 14 + 6] = True
    assert np.all(grid.cells[~mask] == 0)
    assert np.all(grid.cells[mask] != 0)


def test_random_fill_is_unit_qpsk():
    grid = build_grid(CellConfig(include_pss=False), 2, rng=1)
    assert np.allclose(np.abs(grid.cells), 1.0)
    assert np.allclose(np.abs(grid.cells.real), 1 / np.sqrt(2))


@pytest.mark.parametrize("pci", range(6))
def test_pilot_lattice_per_shift_class(pci):
    cfg = CellConfig(pci=pci, traffic_fill="empty", include_pss=False)
    grid = build_grid(cfg, 2)
    for col in range(28):
        occupied = set(np.flatnonzero(grid.cells[:, col]))
        s = col % 14
        if s in CRS_SYMBOLS:
            v = 0 if s in (0, 7) else 3
            assert occupied == {6 * m + (v + pci % 6) % 6 for m in range(50)}
        else:
            assert not occupied


def test_pilot_sets_shift_by_three():
    a = set(crs_subcarriers(CellConfig(pci=0), 0))
    b = set(crs_subcarriers(CellConfig(pci=3), 0))
    assert b == {k + 3 for k in a}


def test_grid_pilots_carry_crs_values(empty_cell):
    grid = build_grid(empty_cell, 3, first_subframe=8)
    # column 14 is subframe 9 symbol 0 -> slot 18
    k = crs_subcarriers(empty_cell, 0)
    assert np.allclose(grid.cells[k, 14], crs_sequence(empty_cell, 18, 0))
    # column 32 is subframe 0 (wrapped) symbol 4 -> slot 0
    k = crs_subcarriers(empty_cell, 4)
    assert np.allclose(grid.cells[k, 32], crs_sequence(empty_cell, 0, 4))


def test_build_grid_rejects_zero_subframes(cell):
    with pytest.raises(ValueError):
        build_grid(cell, 0)


# --- PSS ------------------------------------------------------------------


@pytest.mark.parametrize("nid2,root", [(0, 25), (1, 29), (2, 34)])
def test_pss_is_zadoff_chu(nid2, root):
    d = pss_generate(nid2)
    assert len(d) == 62
    assert np.allclose(np.abs(d), 1.0, atol=1e-12)
    assert np.allclose(d, oracles.zadoff_chu_pss(root), atol=1e-12)


def test_pss_auto_correlation_dominates_cross():
    seqs = [pss_generate(i) for i in range(3)]
    for i in range(3):
        auto = abs(np.vdot(seqs[i], seqs[i]))
        for j in range(3):
            if i != j:
                assert auto > 2 * np.max(np.abs(np.correlate(seqs[i], seqs[j], "full")))


@pytest.mark.parametrize("bad", [-1, 3, 7])
def test_pss_rejects_bad_nid2(bad):
    with pytest.raises(ValueError):
        pss_generate(bad)


# --- OFDM -----------------------------------------------------------------


def test_one_subframe_length(cell):
    iq = ofdm_modulate(build_grid(cell, 1, rng=0))
    assert len(iq) == 7680 == 2 * (7 * 512 + 40 + 6 * 36)
    assert iq.sample_rate == cell.sample_rate


def test_zero_grid_gives_zero_stream(cell):
    grid = ResourceGrid(np.zeros((300, 28), dtype=complex), cell)
    assert not np.any(ofdm_modulate(grid).samples)


def test_modulator_matches_explicit_dft(cell):
    grid = build_grid(cell, 1, rng=3)
    iq = ofdm_modulate(grid).samples
    expected = np.concatenate(
        [oracles.ofdm_symbol(grid.cells[:, s], cell.n_fft, cell.cp_length(s)) for s in range(14)]
    )
    assert np.allclose(iq, expected, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(pci=st.integers(0, 503), n_sf=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_round_trip(pci, n_sf, seed):
    cfg = CellConfig(pci=pci)
    grid = build_grid(cfg, n_sf, rng=seed)
    back = ofdm_demodulate(ofdm_modulate(grid), 0, cfg)
    err = np.linalg.norm(back.cells - grid.cells) / np.linalg.norm(grid.cells)
    assert err <= 1e-9


def test_one_sample_timing_error_gives_phase_ramp(empty_cell):
    grid = build_grid(empty_cell, 1)
    iq = ofdm_modulate(grid)
    delayed = IqStream(np.concatenate([[0j], iq.samples, np.zeros(7679)]), iq.sample_rate)
    # window one sample early (inside the cyclic prefix): X_k * exp(-j 2 pi q / N)
    got = ofdm_demodulate(delayed, 0, empty_cell, 1)
    q = empty_cell.subcarrier_freq_index()
    for col in CRS_SYMBOLS:
        k = crs_subcarriers(empty_cell, col)
        ratio = got.cells[k, col] / grid.cells[k, col]
        assert np.allclose(ratio, np.exp(-2j * np.pi * q[k] / empty_cell.n_fft), atol=1e-9)
    # and the right timing recovers the grid exactly
    assert np.allclose(ofdm_demodulate(delayed, 1, empty_cell, 1).cells, grid.cells, atol=1e-9)


def test_demodulate_truncated_stream_raises(cell):
    iq = ofdm_modulate(build_grid(cell, 2, rng=0))
    short = IqStream(iq.samples[:-1], iq.sample_rate)
    assert ofdm_demodulate(short, 0, cell).n_subframes == 1
    with pytest.raises(ValueError):
        ofdm_demodulate(short, 0, cell, n_subframes=2)
    with pytest.raises(ValueError):
        ofdm_demodulate(IqStream(iq.samples[:7000], iq.sample_rate), 0, cell)


def test_iq_stream_times():
    iq = IqStream(np.zeros(4), 2.0, t0=1.0)
    assert iq.duration == 2.0
    assert np.allclose(iq.times(), [1.0, 1.5, 2.0, 2.5])
    assert np.iscomplexobj(IqStream(np.zeros(3), 1.0).samples)
