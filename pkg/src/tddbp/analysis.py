"""Filter inspection, launch-power sweeps and complexity accounting."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import clone

from .channel import LinkConfig, propagate_link
from .dbp import StepPlan, TdDbpModel, filter_response
from .estimators import TimeDomainDBP
from .signals import SymbolFrame, rrc_shape
from .training import split_sizes

# real multiplications
COMPLEX_MULT = 4
NL_STAGE_MULTS = 6  # |E|^2 share (2) + complex rotation (4), per sample and polarization


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


@dataclass(frozen=True, eq=False)
class ResponseCurve:
    """Amplitude (dB) and group delay (ps) on an increasing frequency grid."""

    freq_hz: np.ndarray
    amplitude_db: np.ndarray
    group_delay_ps: np.ndarray

    def band(self, bandwidth_hz: float) -> np.ndarray:
        return np.abs(self.freq_hz) <= bandwidth_hz / 2

    def ripple_db(self, bandwidth_hz: float) -> float:
        """Peak-to-peak amplitude variation inside ``|f| <= bandwidth / 2``."""
        a = self.amplitude_db[self.band(bandwidth_hz)]
        return float(a.max() - a.min())

    def group_delay_monotone(self, bandwidth_hz: float, tol_ps: float = 1e-9) -> bool:
        """Monotone group delay in band; steps below ``tol_ps`` count as round-off."""
        d = np.diff(self.group_delay_ps[self.band(bandwidth_hz)])
        return bool(np.all(d >= -tol_ps) or np.all(d <= tol_ps))

    def to_csv(self, path) -> None:
        _write_csv(path, ("freq_hz", "amp_db", "gd_ps"),
                   zip(self.freq_hz, self.amplitude_db, self.group_delay_ps))


def _curve(H: np.ndarray, theta: np.ndarray, sample_rate: float) -> ResponseCurve:
    mag = np.abs(H)
    amp_db = 20 * np.log10(np.maximum(mag, np.finfo(float).tiny))
    phase = np.unwrap(np.angle(H))
    omega = theta * sample_rate
    gd = -np.gradient(phase, omega) * 1e12
    return ResponseCurve(theta * sample_rate / (2 * np.pi), amp_db, gd)


def freq_response(taps, n_points: int = 4096, sample_rate: float = 128e9) -> ResponseCurve:
    """Response of a centred FIR filter on ``n_points`` frequencies in ``[-fs/2, fs/2)``.

    Group delay is taken relative to the centre tap, so a pure delay of the
    centre tap reads as zero.
    """
    taps = np.asarray(taps, dtype=np.complex128)
    if taps.ndim != 1 or taps.size == 0:
        raise ValueError("taps must be a non-empty vector")
    if not np.any(taps):
        raise ValueError("frequency response of an all-zero filter has no phase")
    if n_points < 8 * taps.size:
        raise ValueError(f"{n_points} points cannot resolve {taps.size} taps (need >= {8 * taps.size})")
    theta = 2 * np.pi * (np.arange(n_points) - n_points // 2) / n_points
    return _curve(filter_response(taps, theta), theta, sample_rate)


def cascade_response(model: TdDbpModel, n_points: int | None = None) -> ResponseCurve:
    """Linear response of one span of the cascade (the whole link in link mode).

    Residual models are evaluated with the nonlinear branch phase removed.
    """
    n_taps = model.memory_samples() * 2 + 1
    n_points = n_points or max(4096, 8 * n_taps)
    theta = 2 * np.pi * (np.arange(n_points) - n_points // 2) / n_points
    H = np.ones(n_points, dtype=np.complex128)
    alpha = model.fiber.alpha_power_per_km if model.plan.shared_across_spans else 0.0
    for k, dz in enumerate(model.plan.step_lengths_km):
        if model.residual:
            Hk = 1 - filter_response(model.filters[2 * k + 1], theta) * filter_response(model.filters[2 * k], theta)
        else:
            Hk = filter_response(model.filters[k], theta)
        H = H * Hk * math.exp(alpha * dz / 2)
    if alpha:
        H = H * 10 ** (-model.fiber.span_loss_db / 20)
    return _curve(H, theta, model.sample_rate)


@dataclass(frozen=True, eq=False)
class Autocorrelation:
    lag_samples: np.ndarray
    lag_ps: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        _write_csv(path, ("lag_ps", "value"), zip(self.lag_ps, self.values))


def autocorrelation(taps, sample_rate: float = 128e9) -> Autocorrelation:
    """Normalized magnitude ``|sum h[n+k] conj(h[n])| / sum |h|^2`` for all lags."""
    h = np.asarray(taps, dtype=np.complex128)
    energy = np.sum(np.abs(h) ** 2)
    if energy == 0:
        raise ValueError("autocorrelation of an all-zero filter is undefined")
    c = np.abs(np.correlate(h, h, mode="full")) / energy
    lags = np.arange(-(h.size - 1), h.size)
    return Autocorrelation(lags, lags / sample_rate * 1e12, c)


# ---------------------------------------------------------------------------
# launch-power sweep


@dataclass
class SweepTable:
    rows: list[dict]

    def receivers(self) -> list[str]:
        return list(dict.fromkeys(r["receiver"] for r in self.rows))

    def curve(self, receiver: str) -> tuple[np.ndarray, np.ndarray]:
        rows = sorted((r for r in self.rows if r["receiver"] == receiver), key=lambda r: r["power_dbm"])
        return (np.array([r["power_dbm"] for r in rows]), np.array([r["snr_db"] for r in rows]))

    def optimum(self, receiver: str) -> tuple[float, float]:
        """(launch power, SNR) at the best point of ``receiver``."""
        p, s = self.curve(receiver)
        i = int(np.argmax(s))
        return float(p[i]), float(s[i])

    def to_csv(self, path) -> None:
        _write_csv(path, ("power_dbm", "receiver", "snr_db"),
                   ((r["power_dbm"], r["receiver"], r["snr_db"]) for r in self.rows))


def _retarget(est, power_dbm: float):
    if isinstance(est, TimeDomainDBP) and hasattr(est, "model_"):
        return TimeDomainDBP.from_model(est.model_.copy(launch_power_dbm=power_dbm), est.settings)
    e = clone(est)
    e.set_params(launch_power_dbm=power_dbm)
    return e


def power_sweep(link: LinkConfig, frame: SymbolFrame, receivers: Mapping[str, object],
                powers_dbm: Sequence[float], threads: int = 1, train_fraction: float = 0.8,
                samples_per_symbol: int = 2, rolloff: float = 0.1) -> SweepTable:
    """SNR of each receiver on the test share of ``frame`` at every launch power.

    Pre-trained time-domain receivers are re-targeted to each power; unfitted
    receivers are fitted on the received waveform at that power (the time-domain
    one only ever sees its training share).
    """
    if not receivers:
        raise ValueError("power sweep needs at least one receiver")
    if len(powers_dbm) == 0:
        raise ValueError("power sweep needs at least one launch power")
    tx = rrc_shape(frame, rolloff, samples_per_symbol)
    n_train, _ = split_sizes(len(frame), train_fraction)
    test = (n_train, len(frame))

    def one_power(p: float) -> list[dict]:
        rx = propagate_link(tx, replace(link, launch_power_dbm=float(p)))
        rows = []
        for name, est in receivers.items():
            e = _retarget(est, float(p))
            if not hasattr(e, "model_") and not hasattr(e, "fiber_"):
                e.fit(rx, frame)
            rows.append({"power_dbm": float(p), "receiver": name,
                         "snr_db": float(e.score(rx, frame, symbol_range=test))})
        return rows

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one_power, powers_dbm))
    return SweepTable([r for rows in results for r in rows])


# ---------------------------------------------------------------------------
# complexity


def fft_mults_per_sample(n: int) -> float:
    """Real multiplications per sample of one ``n``-point FFT (``4 n log2 n / n``)."""
    return 4 * math.log2(n)


def complexity_report(td_taps, span_count: int, fd_steps_per_span: int = 50,
                      fft_size: int = 4096, shared_across_spans: bool = True) -> dict:
    """Real multiplications per output sample and polarization, FD versus TD.

    ``td_taps`` is a :class:`~tddbp.dbp.StepPlan` or the per-step tap counts of
    one span. Every FD step costs a forward and an inverse FFT; every TD step
    one complex FIR; both pay one nonlinear stage per step.
    """
    if isinstance(td_taps, StepPlan):
        shared_across_spans = td_taps.shared_across_spans
        td_taps = td_taps.per_step_taps
    taps = [int(t) for t in td_taps]
    if any(t < 0 for t in taps):
        raise ValueError("tap counts must be non-negative")
    if fft_size < 2:
        raise ValueError("fft_size must be >= 2")
    fd_steps = span_count * fd_steps_per_span
    fd = fd_steps * (2 * fft_mults_per_sample(fft_size) + NL_STAGE_MULTS)
    repeats = span_count if shared_across_spans else 1
    td_steps = repeats * len(taps)
    td = repeats * COMPLEX_MULT * sum(taps) + td_steps * NL_STAGE_MULTS
    return {
        "cost_model": "real multiplications per output sample per polarization; "
                      "N-point FFT = 4 N log2 N, complex multiply = 4, "
                      f"nonlinear stage = {NL_STAGE_MULTS}",
        "fd_steps": fd_steps,
        "fd_fft_per_pol": 2 * fd_steps,
        "fd_fft_size": fft_size,
        "fd_mults_per_sample": fd,
        "td_steps": td_steps,
        "td_taps_per_span": sum(taps),
        "td_mults_per_sample": td,
        "fd_over_td": fd / td if td else math.inf,
    }


def write_complexity_csv(path, report: dict) -> None:
    keys = [k for k in report if k != "cost_model"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {report['cost_model']}\n")
        w = csv.writer(fh)
        w.writerow(keys)
        w.writerow([report[k] for k in keys])
