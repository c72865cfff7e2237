"""Full receiver chains and their evaluation.

Time-domain chain (differentiable)::

    launch-power normalization -> MIMO -> FIR/phase cascade -> output scale
    -> MIMO -> RRC matched filter -> decimate -> pilot CPE

The matched filter runs after the cascade so the nonlinear steps see the
transmitted field rather than a raised-cosine filtered one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import OPS, Eager
from .channel import FiberParams, dbm_to_w
from .dbp import TdDbpModel, edc, fd_dbp, td_chain
from .rx import cpe_attrs, fit_gain
from .signals import DualPolWaveform, SymbolFrame, matched_filter, rrc_taps, snr_estimate


@dataclass(frozen=True)
class ReceiverSettings:
    samples_per_symbol: int = 2
    rolloff: float = 0.1
    rrc_span_symbols: int = 64
    wiener_length: int = 63
    phase_noise_ratio: float = 1e-3
    joint_cpe: bool = True

    def matched_taps(self) -> np.ndarray:
        return rrc_taps(self.rolloff, self.samples_per_symbol, self.rrc_span_symbols).astype(np.complex128)


def normalize_power(x: np.ndarray, power_w: float) -> np.ndarray:
    """Scale a ``(2, n)`` field to total mean power ``power_w``."""
    p = np.sum(np.mean(np.abs(x) ** 2, axis=1))
    return x * math.sqrt(power_w / p)


def edge_symbols(model: TdDbpModel, settings: ReceiverSettings) -> int:
    """Symbols lost to zero-padding transients at each end of a segment."""
    mem = model.memory_samples() + settings.samples_per_symbol * settings.rrc_span_symbols // 2
    return -(-mem // settings.samples_per_symbol) + 1


def valid_range(n_symbols: int, model: TdDbpModel, settings: ReceiverSettings) -> tuple[int, int]:
    e = edge_symbols(model, settings)
    if n_symbols - 2 * e < 2:
        raise ValueError(f"segment of {n_symbols} symbols is shorter than the receiver memory")
    return e, n_symbols - e


def td_receiver_graph(g, x, model: TdDbpModel, frame: SymbolFrame, settings: ReceiverSettings,
                      valid: tuple[int, int], train_gamma: bool = False):
    """Build the time-domain chain on builder ``g`` from normalized input handle ``x``."""
    h = g.apply("mimo", [x], tuple(f"mimo_pre_{n}" for n in ("xx", "xy", "yx", "yy")))
    h = td_chain(g, h, model, train_gamma)
    if model.output_scale != 1:
        h = g.apply("scale", [h], factor=model.output_scale)
    h = g.apply("mimo", [h], tuple(f"mimo_post_{n}" for n in ("xx", "xy", "yx", "yy")))
    h = g.apply("conv", [h], taps=settings.matched_taps())
    h = g.apply("decimate", [h], start=0, step=settings.samples_per_symbol)
    attrs = cpe_attrs(frame, len(frame), settings.wiener_length, settings.phase_noise_ratio,
                      settings.joint_cpe, valid)
    return g.apply("cpe", [h], **attrs)


def prepare_input(wave: DualPolWaveform, model: TdDbpModel, settings: ReceiverSettings,
                  frame: SymbolFrame) -> np.ndarray:
    if abs(wave.sample_rate * model.plan.sample_period_s - 1) > 1e-9:
        raise ValueError(f"waveform rate {wave.sample_rate} does not match model rate {model.sample_rate}")
    if len(wave) != len(frame) * settings.samples_per_symbol:
        raise ValueError(f"waveform of {len(wave)} samples does not match {len(frame)} symbols "
                         f"at {settings.samples_per_symbol} samples/symbol")
    return normalize_power(wave.stack(), dbm_to_w(model.launch_power_dbm))


def run_td_receiver(wave: DualPolWaveform, frame: SymbolFrame, model: TdDbpModel,
                    settings: ReceiverSettings = ReceiverSettings()):
    """Recovered symbols ``(2, n)`` and the valid symbol range of a segment."""
    valid = valid_range(len(frame), model, settings)
    g = Eager(model.parameters())
    x = prepare_input(wave, model, settings, frame)
    return td_receiver_graph(g, g.input(x), model, frame, settings, valid), valid


def td_field_output(wave: DualPolWaveform, model: TdDbpModel) -> DualPolWaveform:
    """Field after MIMO, cascade and MIMO (before matched filtering)."""
    g = Eager(model.parameters())
    x = normalize_power(wave.stack(), dbm_to_w(model.launch_power_dbm))
    h = g.apply("mimo", [x], tuple(f"mimo_pre_{n}" for n in ("xx", "xy", "yx", "yy")))
    h = td_chain(g, h, model)
    h = g.apply("scale", [h], factor=model.output_scale)
    h = g.apply("mimo", [h], tuple(f"mimo_post_{n}" for n in ("xx", "xy", "yx", "yy")))
    return DualPolWaveform.from_array(h, wave.sample_rate)


def symbols_from_field(field: DualPolWaveform, frame: SymbolFrame, settings: ReceiverSettings,
                       valid: tuple[int, int] | None = None) -> np.ndarray:
    """Circular matched filter, decimation and CPE for periodic (frequency-domain) receivers."""
    mf = matched_filter(field, settings.rolloff, settings.samples_per_symbol, settings.rrc_span_symbols)
    sym = mf.stack()[:, ::settings.samples_per_symbol]
    attrs = cpe_attrs(frame, sym.shape[1], settings.wiener_length, settings.phase_noise_ratio,
                      settings.joint_cpe, valid)
    out, _ = OPS["cpe"].forward([sym], [], attrs)
    return out


def run_fd_receiver(wave: DualPolWaveform, frame: SymbolFrame, fiber: FiberParams,
                    launch_power_dbm: float, steps_per_span: int | None = 50, gamma_dbp: float = 0.8,
                    settings: ReceiverSettings = ReceiverSettings()) -> np.ndarray:
    """Frequency-domain DBP (or EDC when ``steps_per_span`` is None) plus the periodic back end."""
    x = normalize_power(wave.stack(), dbm_to_w(launch_power_dbm))
    field = DualPolWaveform.from_array(x, wave.sample_rate)
    if steps_per_span is None:
        field = edc(field, fiber)
    else:
        field = fd_dbp(field, fiber, steps_per_span, gamma_dbp)
    return symbols_from_field(field, frame, settings)


def symbol_snr(symbols: np.ndarray, frame: SymbolFrame, rng: tuple[int, int] | None = None) -> float:
    """SNR (dB) on data symbols in ``rng`` after a per-polarization LS gain."""
    lo, hi = (0, len(frame)) if rng is None else rng
    mask = frame.data_mask.copy()
    mask[:lo] = False
    mask[hi:] = False
    tx = frame.stack()[:, mask]
    rx = fit_gain(symbols[:, mask], tx)
    return snr_estimate(tx, rx)
