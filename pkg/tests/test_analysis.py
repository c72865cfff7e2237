"""Filter diagnostics, power sweeps and complexity accounting."""
import math

import numpy as np
import pytest

from tddbp.analysis import (SweepTable, autocorrelation, cascade_response, complexity_report,
                            fft_mults_per_sample, freq_response, power_sweep, write_complexity_csv)
from tddbp.channel import FiberParams, LinkConfig, angular_frequency, propagate_link
from tddbp.dbp import StepPlan, TdDbpModel, init_model, ls_filter, make_step_plan
from tddbp.estimators import EDCReceiver
from tddbp.signals import DualPolWaveform, make_frame, rrc_shape
from tddbp.training import TrainConfig, train

from conftest import RATE, crandn

T = 1 / RATE


def test_delta_response_is_flat():
    c = freq_response([0, 0, 1, 0, 0], 256)
    assert np.allclose(c.amplitude_db, 0, atol=1e-12)
    assert np.allclose(c.group_delay_ps, 0, atol=1e-9)
    assert np.all(np.diff(c.freq_hz) > 0)
    assert c.freq_hz[0] == pytest.approx(-RATE / 2) and c.freq_hz[-1] < RATE / 2


def test_one_sample_delay():
    c = freq_response([0, 0, 1], 64)
    assert np.allclose(c.amplitude_db, 0, atol=1e-12)
    assert np.allclose(c.group_delay_ps, 7.8125, atol=1e-9)


def test_ls_filter_group_delay_slope():
    """Target phase K (wT)^2 gives group delay -2 K T^2 w (positive for K < 0)."""
    K = -1.676
    c = freq_response(ls_filter(K, 21), 4096)
    mid = np.abs(c.freq_hz) <= 16e9
    w = 2 * np.pi * c.freq_hz[mid]
    slope = np.polyfit(w, c.group_delay_ps[mid] * 1e-12, 1)[0]
    assert slope == pytest.approx(-2 * K * T**2, rel=0.05)


def test_freq_response_validation():
    with pytest.raises(ValueError):
        freq_response(np.ones(9), 64)
    with pytest.raises(ValueError):
        freq_response(np.zeros(5), 64)
    with pytest.raises(ValueError):
        freq_response([], 64)


def test_ripple_and_monotone_helpers():
    c = freq_response(ls_filter(-1.676, 21), 1024)
    assert c.ripple_db(70.4e9) > 0
    assert freq_response([0, 0, 0, 0, 1], 64).group_delay_monotone(70.4e9)
    assert not freq_response(ls_filter(-1.676, 21), 1024).group_delay_monotone(120e9)
    assert freq_response([0, 1, 0], 64).ripple_db(70.4e9) == pytest.approx(0, abs=1e-12)


def _model(filters, fiber):
    plan = StepPlan([fiber.span_length_km / len(filters)] * len(filters), [len(f) for f in filters], T)
    return TdDbpModel(filters, 0.0, plan, fiber)


def test_cascade_of_deltas_is_flat():
    fiber = FiberParams(span_count=3)
    model = init_model(fiber, RATE, total_taps=None)
    deltas = [np.eye(1, n, n // 2)[0] for n in model.plan.per_step_taps]
    c = cascade_response(model.copy(filters=deltas))
    assert np.allclose(c.amplitude_db, 0, atol=1e-9)  # loss and gain cancel over a span
    assert np.allclose(c.group_delay_ps, 0, atol=1e-9)


def test_cascade_with_conjugate_reversed_filter():
    h = ls_filter(-1.676, 21)
    fiber = FiberParams(alpha_db_per_km=0.0, span_count=1)
    c = cascade_response(_model([h, np.conj(h[::-1])], fiber), 1024)
    single = freq_response(h, 1024)
    assert np.allclose(c.group_delay_ps, 0, atol=1e-6)
    assert np.allclose(c.amplitude_db, 2 * single.amplitude_db, atol=1e-10)


def test_cascade_equals_product(rng):
    fiber = FiberParams(alpha_db_per_km=0.0, span_count=1)
    filters = [crandn(rng, 5), crandn(rng, 9), crandn(rng, 3)]
    c = cascade_response(_model(filters, fiber), 512)
    parts = [freq_response(f, 512) for f in filters]
    assert np.allclose(c.amplitude_db, sum(p.amplitude_db for p in parts), atol=1e-10)


def test_residual_cascade_uses_branch_product():
    from tddbp.dbp import filter_response
    fiber = FiberParams(alpha_db_per_km=0.0, span_count=1)
    model = init_model(fiber, RATE, steps_per_span=2, total_taps=None, gamma_dbp=0.0, residual=True)
    c = cascade_response(model, 4096)
    theta = 2 * np.pi * c.freq_hz / RATE
    H = [1 - filter_response(model.filters[2 * k + 1], theta) * filter_response(model.filters[2 * k], theta)
         for k in range(2)]
    assert np.allclose(c.amplitude_db, 20 * np.log10(np.abs(H[0] * H[1])), atol=1e-9)
    band = c.band(40e9)
    assert np.max(np.abs(c.amplitude_db[band])) < 1.0  # near all-pass in band


# -- autocorrelation ----------------------------------------------------------

def test_autocorrelation_delta():
    a = autocorrelation([0, 0, 1, 0, 0])
    assert a.values[a.lag_samples == 0] == 1
    assert np.sum(a.values) == 1


@pytest.mark.parametrize("eps", [0.05, 0.3, 1.0])
def test_autocorrelation_echo(eps):
    h = np.zeros(11, complex)
    h[0], h[-1] = 1, eps
    a = autocorrelation(h)
    assert a.values[a.lag_samples == 10][0] == pytest.approx(eps / (1 + eps**2), abs=1e-9)
    assert a.lag_ps[a.lag_samples == 10][0] == pytest.approx(10 * 7.8125)


def test_autocorrelation_symmetric_and_normalized(rng):
    a = autocorrelation(crandn(rng, 17))
    assert np.allclose(a.values, a.values[::-1], atol=1e-12)
    assert a.values[a.lag_samples == 0][0] == pytest.approx(1)
    assert np.max(a.values) == pytest.approx(1)
    with pytest.raises(ValueError):
        autocorrelation(np.zeros(4))


def test_trained_single_filter_reveals_reflection():
    """A 400 ps echo in the received field shows up in the learned filter's autocorrelation."""
    fiber = FiberParams(span_count=2, gamma_per_w_km=0.0)
    frame = make_frame(8, 2**13)
    rx = propagate_link(rrc_shape(frame), LinkConfig(fiber=fiber, forward_step_m=10140.0,
                                                     launch_power_dbm=0.0))
    x = rx.stack()
    w = angular_frequency(x.shape[1], RATE)
    x = x + 0.1 * np.fft.ifft(np.fft.fft(x, axis=1) * np.exp(-1j * w * 400e-12), axis=1)
    rx = DualPolWaveform.from_array(x, RATE)
    model = init_model(fiber, RATE, gamma_dbp=0.0, launch_power_dbm=0.0, mimo_taps=9,
                       link_mode=True, total_taps=None)

    def bump(m):
        a = autocorrelation(m.filters[0])
        sel = (a.lag_ps > 100) & (a.lag_ps < 800)
        i = np.argmax(np.where(sel, a.values, 0))
        return a.lag_ps[i], a.values[i] / np.median(a.values[sel])

    lag0, _ = bump(model)
    assert abs(lag0 - 400) > 50  # the LS design knows nothing of the echo
    trained, _ = train(model, (rx, frame), TrainConfig(epochs=60, phase1_epochs=10, lr_phase2=1e-3,
                                                      eval_every=60))
    lag, contrast = bump(trained)
    assert abs(lag - 400) <= T * 1e12  # within one sample
    assert contrast >= 5


# -- sweep --------------------------------------------------------------------

def test_edc_is_power_independent_on_linear_link():
    fiber = FiberParams(span_count=2, gamma_per_w_km=0.0)
    frame = make_frame(9, 2048)
    link = LinkConfig(fiber=fiber, forward_step_m=10140.0)
    table = power_sweep(link, frame, {"EDC": EDCReceiver(fiber)}, [-4.0, 0.0, 4.0, 8.0])
    _, snr = table.curve("EDC")
    assert np.ptp(snr) <= 0.1
    assert table.receivers() == ["EDC"]


def test_sweep_parallel_equals_serial(tmp_path):
    fiber = FiberParams(span_count=1)
    frame = make_frame(9, 1024)
    link = LinkConfig(fiber=fiber, forward_step_m=10140.0, amplifier_noise_figure_db=5.0, seed=3)
    recv = {"EDC": EDCReceiver(fiber)}
    a = power_sweep(link, frame, recv, [0.0, 3.0, 6.0], threads=1)
    b = power_sweep(link, frame, recv, [0.0, 3.0, 6.0], threads=3)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "power_dbm,receiver,snr_db"


def test_sweep_errors():
    link = LinkConfig(fiber=FiberParams(span_count=1))
    frame = make_frame(9, 1024)
    with pytest.raises(ValueError):
        power_sweep(link, frame, {}, [0.0])
    with pytest.raises(ValueError):
        power_sweep(link, frame, {"EDC": EDCReceiver()}, [])


def test_sweep_table_optimum():
    rows = [{"power_dbm": p, "receiver": "A", "snr_db": -(p - 2) ** 2} for p in (0.0, 2.0, 4.0)]
    assert SweepTable(rows).optimum("A") == (2.0, 0.0)


# -- complexity -----------------------------------------------------------------

def test_default_configuration_fft_count():
    plan = make_step_plan(FiberParams(), RATE)
    r = complexity_report(plan, span_count=10, fd_steps_per_span=50)
    assert r["fd_fft_per_pol"] == 2 * 10 * 50
    assert r["td_taps_per_span"] == 270
    assert r["td_mults_per_sample"] == 10 * 4 * 270 + 100 * 6
    assert r["fd_mults_per_sample"] == 500 * (2 * 4 * 12 + 6)
    assert r["fd_over_td"] == pytest.approx(r["fd_mults_per_sample"] / r["td_mults_per_sample"])


def test_zero_taps_cost_only_nonlinear_stages():
    r = complexity_report([0] * 10, span_count=10)
    assert r["td_mults_per_sample"] == 100 * 6


def test_fft_size_doubling_adds_log_factor():
    a = complexity_report([3], 1, fft_size=1024)
    b = complexity_report([3], 1, fft_size=2048)
    assert b["fd_mults_per_sample"] - a["fd_mults_per_sample"] == pytest.approx(50 * 2 * 4)
    assert fft_mults_per_sample(4096) == 48


def test_complexity_csv(tmp_path):
    r = complexity_report([5, 7], 2)
    write_complexity_csv(tmp_path / "c.csv", r)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("# ") and "4 N log2 N" in lines[0]
    assert lines[1].split(",")[0] == "fd_steps"
    with pytest.raises(ValueError):
        complexity_report([-1], 1)
