"""Receiver DSP around the back-propagation core.

Carrier phase is tracked from pilots. The phase is modelled as a Wiener
process (variance ``ratio`` per symbol, in units of the pilot observation
noise variance) and the interpolator is the linear MMSE estimate built from a
window of the nearest pilots under the constraint that the weights sum to
one. A zero ratio reduces it to plain averaging, and a noise-free ratio gives
linear interpolation between neighbouring pilots.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import OPS
from .signals import DualPolWaveform, SymbolFrame


@dataclass(frozen=True, eq=False)
class MimoFilter:
    """2x2 bank of FIR filters: ``out_x = xx*x + xy*y``, ``out_y = yx*x + yy*y``."""

    xx: np.ndarray
    xy: np.ndarray
    yx: np.ndarray
    yy: np.ndarray

    def __post_init__(self):
        taps = [np.asarray(t, dtype=np.complex128) for t in (self.xx, self.xy, self.yx, self.yy)]
        sizes = {t.size for t in taps}
        if len(sizes) != 1:
            raise ValueError(f"MIMO tap vectors must have equal lengths, got {sorted(sizes)}")
        if taps[0].size % 2 == 0:
            raise ValueError("MIMO tap vectors must have odd length")
        for name, t in zip(("xx", "xy", "yx", "yy"), taps):
            object.__setattr__(self, name, t)

    @classmethod
    def identity(cls, n_taps: int = 65) -> "MimoFilter":
        delta = np.zeros(n_taps, dtype=np.complex128)
        delta[n_taps // 2] = 1
        zero = np.zeros(n_taps, dtype=np.complex128)
        return cls(delta, zero, zero.copy(), delta.copy())

    @property
    def n_taps(self) -> int:
        return self.xx.size

    def as_tuple(self):
        return self.xx, self.xy, self.yx, self.yy


def mimo_apply(wave: DualPolWaveform, f: MimoFilter) -> DualPolWaveform:
    if len(wave) <= f.n_taps:
        raise ValueError(f"waveform length {len(wave)} must exceed MIMO length {f.n_taps}")
    out, _ = OPS["mimo"].forward([wave.stack()], list(f.as_tuple()), {})
    return DualPolWaveform.from_array(out, wave.sample_rate)


def phase_noise_ratio(linewidth_hz: float, symbol_rate: float, snr_db: float,
                      n_pol: int = 2) -> float:
    """Per-symbol Wiener phase variance over the pilot phase observation noise.

    ``linewidth_hz`` is the combined transmitter and local oscillator linewidth.
    """
    sigma_p2 = 2 * np.pi * linewidth_hz / symbol_rate
    sigma_n2 = 1 / (2 * 10 ** (snr_db / 10) * n_pol)
    return sigma_p2 / sigma_n2


def wiener_weights(n_symbols: int, pilot_idx: np.ndarray, length: int, ratio: float):
    """Interpolation weights from pilot phases to every symbol.

    Returns ``(weights, widx)`` of shape ``(n_symbols, L)`` where ``widx``
    indexes into ``pilot_idx`` and ``L = min(length, len(pilot_idx))``.
    """
    if length % 2 == 0:
        raise ValueError(f"Wiener length must be odd, got {length}")
    pilot_idx = np.asarray(pilot_idx)
    n_p = pilot_idx.size
    if n_p < 2:
        raise ValueError("carrier phase estimation needs at least two pilots")
    L = min(length, n_p)
    targets = np.arange(n_symbols)
    nearest = np.clip(np.searchsorted(pilot_idx, targets), 0, n_p - 1)
    prev = np.clip(nearest - 1, 0, n_p - 1)
    closer_prev = np.abs(pilot_idx[prev] - targets) <= np.abs(pilot_idx[nearest] - targets)
    nearest = np.where(closer_prev, prev, nearest)
    starts = np.clip(nearest - L // 2, 0, n_p - L)
    weights = np.empty((n_symbols, L))
    widx = starts[:, None] + np.arange(L)[None, :]
    for start in np.unique(starts):
        sel = np.flatnonzero(starts == start)
        pos = pilot_idx[start:start + L].astype(float)
        semivar = 0.5 * ratio * np.abs(pos[:, None] - pos[None, :])
        A = np.zeros((L + 1, L + 1))
        A[:L, :L] = -semivar + np.eye(L)
        A[:L, L] = 1
        A[L, :L] = 1
        B = np.ones((L + 1, sel.size))
        B[:L] = -0.5 * ratio * np.abs(pos[:, None] - targets[sel][None, :])
        weights[sel] = np.linalg.solve(A, B)[:L].T
    return weights, widx


def cpe_attrs(frame: SymbolFrame, n_symbols: int | None = None, wiener_length: int = 63,
              ratio: float = 1e-3, joint: bool = True, valid: tuple[int, int] | None = None) -> dict:
    """Constant attributes of the pilot CPE node for ``frame``.

    ``valid`` restricts the pilots used to symbol indices in ``[lo, hi)``,
    keeping filter edge transients out of the estimate.
    """
    n = len(frame) if n_symbols is None else n_symbols
    pidx = frame.pilot_indices
    pidx = pidx[pidx < n]
    if valid is not None:
        pidx = pidx[(pidx >= valid[0]) & (pidx < valid[1])]
    if pidx.size < 2:
        raise ValueError("carrier phase estimation needs at least two pilots")
    pilots = frame.stack()[:, pidx]
    weights, widx = wiener_weights(n, pidx, wiener_length, ratio)
    return {"pilot_idx": pidx, "pilots": pilots, "weights": weights, "widx": widx, "joint": joint}


@dataclass(frozen=True, eq=False)
class PhaseTrack:
    phases: np.ndarray  # (2, n) radians
    pilot_indices: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "phase_x", "phase_y"])
            for i, (px, py) in enumerate(self.phases.T):
                w.writerow([i, repr(float(px)), repr(float(py))])


def cpe_pilot_wiener(symbols, frame: SymbolFrame, wiener_length: int = 63,
                     phase_noise_ratio: float = 1e-3, joint: bool = True,
                     valid: tuple[int, int] | None = None):
    """De-rotate symbol-rate samples using pilot phases and Wiener interpolation.

    Returns the corrected ``(2, n)`` symbols and the :class:`PhaseTrack`.
    """
    r = np.asarray(symbols, dtype=np.complex128)
    attrs = cpe_attrs(frame, r.shape[1], wiener_length, phase_noise_ratio, joint, valid)
    out, _ = OPS["cpe"].forward([r], [], attrs)
    z = r[:, attrs["pilot_idx"]] * np.conj(attrs["pilots"])
    if joint:
        z = np.sum(z, axis=0, keepdims=True)
    phi = np.unwrap(np.angle(z), axis=-1)
    track = np.sum(attrs["weights"] * phi[:, attrs["widx"]], axis=-1)
    phases = np.broadcast_to(track, r.shape).copy()
    return out, PhaseTrack(phases, attrs["pilot_idx"])


def align_and_decide(rx, frame: SymbolFrame, threshold: float = 0.2):
    """Find the circular delay and quadrant rotation of ``rx`` against ``frame``.

    Returns ``(delay, rotation, aligned)`` with ``aligned = rotation * roll(rx, -delay)``.
    """
    rx = np.asarray(rx, dtype=np.complex128)
    tx = frame.stack()
    if rx.shape != tx.shape:
        raise ValueError(f"received shape {rx.shape} != frame shape {tx.shape}")
    corr = np.zeros(rx.shape[1])
    for r, t in zip(rx, tx):
        corr += np.abs(np.fft.ifft(np.fft.fft(r) * np.conj(np.fft.fft(t))))
    delay = int(np.argmax(corr))
    norm = np.sqrt(np.sum(np.abs(rx) ** 2) * np.sum(np.abs(tx) ** 2))
    if norm == 0 or corr[delay] / norm < threshold:
        raise ValueError("no correlation peak above threshold; upstream processing failed")
    aligned = np.roll(rx, -delay, axis=1)
    ref = frame.pilot_indices if frame.pilot_indices.size else np.arange(rx.shape[1])
    c = np.sum(aligned[:, ref] * np.conj(tx[:, ref]))
    quadrant = int(np.round(np.angle(c) / (np.pi / 2))) % 4
    rotation = (-1j) ** quadrant
    return delay, rotation, aligned * rotation


def foe_coarse(wave: DualPolWaveform, frame: SymbolFrame, samples_per_symbol: int = 1) -> float:
    """Frequency offset (Hz) from the mean phase step between consecutive pilots.

    Offsets beyond half the pilot rate alias; one of exactly the pilot rate
    reads as zero.
    """
    r = wave.stack()[:, ::samples_per_symbol]
    pidx = frame.pilot_indices
    pidx = pidx[pidx < r.shape[1]]
    if pidx.size < 2:
        raise ValueError("frequency offset estimation needs at least two pilots")
    z = np.sum(r[:, pidx] * np.conj(frame.stack()[:, pidx]), axis=0)
    d = np.sum(z[1:] * np.conj(z[:-1]))
    spacing = np.mean(np.diff(pidx)) / frame.symbol_rate
    return float(np.angle(d) / (2 * np.pi * spacing))


def remove_frequency_offset(wave: DualPolWaveform, offset_hz: float) -> DualPolWaveform:
    t = np.arange(len(wave)) / wave.sample_rate
    return wave.scaled(np.exp(-2j * np.pi * offset_hz * t))


def fit_gain(rx, tx, mask=None):
    """Per-polarization complex least-squares gain mapping ``rx`` onto ``tx``."""
    rx = np.asarray(rx)
    tx = np.asarray(tx)
    m = np.ones(rx.shape, dtype=bool) if mask is None else np.broadcast_to(mask, rx.shape)
    gains = np.array([np.vdot(r[mi], t[mi]) / np.vdot(r[mi], r[mi]) for r, t, mi in zip(rx, tx, m)])
    return rx * gains[:, None]
