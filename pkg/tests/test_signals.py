import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from tddbp.signals import (DualPolWaveform, Modulation, constellation, decimate, generate_symbols,
                           insert_pilots, make_frame, matched_filter, nmse_db, resample, rrc_shape,
                           rrc_taps, snr_estimate)

from conftest import crandn


def test_qam64_frame_size_and_power():
    f = generate_symbols(7, 65536, Modulation.QAM64)
    assert len(f) == 65536
    for s in (f.symbols_x, f.symbols_y):
        assert abs(np.mean(np.abs(s) ** 2) - 1) <= 1e-12


def test_qpsk_alphabet():
    f = generate_symbols(7, 4, Modulation.QPSK)
    ref = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    for s in np.concatenate([f.symbols_x, f.symbols_y]):
        # unit-power normalization of 4 symbols keeps them on the QPSK ring
        assert np.min(np.abs(ref - s)) < 1e-12


def test_generation_is_deterministic():
    a, b = make_frame(11, 2048), make_frame(11, 2048)
    assert a.stack().tobytes() == b.stack().tobytes()
    assert np.array_equal(a.pilot_mask, b.pilot_mask)
    assert not np.array_equal(a.stack(), make_frame(12, 2048).stack())


def test_unsupported_modulation_and_count():
    with pytest.raises(ValueError):
        generate_symbols(0, 8, "QAM16")
    with pytest.raises(ValueError):
        generate_symbols(0, 0)


def test_gray_mapping_neighbours_differ_by_one_bit():
    pts = constellation(Modulation.QAM64)
    step = np.min(np.abs(pts[1:] - pts[0]))
    for i, p in enumerate(pts):
        d = np.abs(pts - p)
        for j in np.flatnonzero(np.isclose(d, step)):
            assert bin(i ^ j).count("1") == 1


@pytest.mark.parametrize("n,period,expected", [(64, 32, [0, 32]), (32, 32, [0])])
def test_pilot_positions(n, period, expected):
    f = insert_pilots(generate_symbols(5, n), period)
    assert f.pilot_indices.tolist() == expected
    assert np.allclose(np.abs(f.stack()[:, f.pilot_mask]) ** 2, 1.0)


def test_pilots_leave_data_untouched():
    base = generate_symbols(5, 256)
    f = insert_pilots(base, 32)
    assert np.array_equal(f.stack()[:, f.data_mask], base.stack()[:, f.data_mask])
    qpsk = constellation(Modulation.QPSK)
    for p in f.stack()[:, f.pilot_mask].ravel():
        assert np.min(np.abs(qpsk - p)) < 1e-15


def test_pilot_errors():
    with pytest.raises(ValueError):
        insert_pilots(generate_symbols(5, 16), 32)
    with pytest.raises(ValueError):
        insert_pilots(generate_symbols(5, 16), 1)


@given(st.integers(64, 3000), st.integers(2, 64))
def test_pilot_density(n, period):
    f = insert_pilots(generate_symbols(1, n), period)
    assert abs(f.pilot_mask.sum() - n / period) <= 1


def test_rrc_impulse_unit_energy():
    f = generate_symbols(0, 256, Modulation.QPSK)
    impulse = type(f)(np.eye(1, 256, 128)[0], np.zeros(256), np.zeros(256, bool))
    w = rrc_shape(impulse, 0.1, 2, 64)
    assert abs(np.sum(np.abs(w.samples_x) ** 2) - 1) <= 1e-9
    assert abs(np.linalg.norm(rrc_taps(0.1, 2, 64)) - 1) <= 1e-12


def test_rrc_round_trip_nmse():
    f = make_frame(2, 4096)
    w = rrc_shape(f, 0.1, 2, 64)
    assert w.sample_rate == 128e9
    rx = decimate(matched_filter(w, 0.1, 2, 64), 2)
    assert nmse_db(f.stack(), rx) <= -40


def test_rrc_nyquist_isi():
    h = rrc_taps(0.1, 2, 64)
    p = np.convolve(h, h)
    c = (p.size - 1) // 2
    off = np.delete(p[c % 2::2], c // 2)
    assert 20 * np.log10(np.max(np.abs(off)) / p[c]) <= -40


def test_rrc_shape_errors(small_frame):
    with pytest.raises(ValueError):
        rrc_shape(small_frame, 0.1, 2, 4)
    with pytest.raises(ValueError):
        rrc_shape(small_frame, 0.0, 2, 64)
    with pytest.raises(ValueError):
        rrc_shape(small_frame, 0.5, Fraction(5, 4), 64)


def test_rational_oversampling(small_frame):
    w = rrc_shape(small_frame, 0.1, Fraction(3, 2), 64)
    assert len(w) == 1536 and np.isclose(w.sample_rate, 96e9)
    back = resample(w, Fraction(4, 3))
    ref = rrc_shape(small_frame, 0.1, 2, 64)
    # unit-energy taps at a different rate change the amplitude only
    norm = lambda w: w.stack() / np.sqrt(w.power)
    assert nmse_db(norm(ref), norm(back)) < -25


def test_waveform_invariants():
    with pytest.raises(ValueError):
        DualPolWaveform(np.zeros(4), np.zeros(5), 1.0)
    with pytest.raises(ValueError):
        DualPolWaveform(np.zeros(4), np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        DualPolWaveform(np.array([np.nan, 0]), np.zeros(2), 1.0)


def test_snr_examples(rng):
    x = make_frame(0, 65536, pilot_period=0).symbols_x
    assert snr_estimate(x, x) == np.inf
    assert abs(snr_estimate(x, np.zeros_like(x))) < 1e-12
    noise = np.sqrt(0.01 / 2) * crandn(rng, x.size)
    assert abs(snr_estimate(x, x + noise) - 20) <= 0.1
    with pytest.raises(ValueError):
        snr_estimate([], [])


@given(st.floats(-np.pi, np.pi))
def test_snr_phase_invariant(phi):
    r = np.random.default_rng(0)
    x, y = crandn(r, 64), crandn(r, 64)
    rot = np.exp(1j * phi)
    assert np.isclose(snr_estimate(x, y), snr_estimate(rot * x, rot * y), rtol=1e-10, atol=1e-10)
