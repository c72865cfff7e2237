"""Forward fiber propagation: Manakov split-step, amplifiers and multi-span links."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const

from .signals import DualPolWaveform

CARRIER_HZ = 193.1e12
# Manakov averaging factor for the Kerr term of a randomly birefringent fiber
MANAKOV = 8.0 / 9.0


@dataclass(frozen=True)
class FiberParams:
    alpha_db_per_km: float = 0.16
    beta2_ps2_per_km: float = -20.18
    gamma_per_w_km: float = 1.2
    span_length_km: float = 101.4
    span_count: int = 10

    def __post_init__(self):
        if not self.span_length_km > 0:
            raise ValueError(f"span_length_km must be positive, got {self.span_length_km}")
        if self.span_count < 0:
            raise ValueError(f"span_count must be non-negative, got {self.span_count}")
        if self.alpha_db_per_km < 0:
            raise ValueError(f"alpha_db_per_km must be non-negative, got {self.alpha_db_per_km}")

    @property
    def alpha_power_per_km(self) -> float:
        """Power attenuation coefficient in 1/km (natural units)."""
        return self.alpha_db_per_km * math.log(10) / 10

    @property
    def beta2_s2_per_m(self) -> float:
        return self.beta2_ps2_per_km * 1e-24 / 1e3

    @property
    def gamma_per_w_m(self) -> float:
        return self.gamma_per_w_km / 1e3

    @property
    def span_loss_db(self) -> float:
        return self.alpha_db_per_km * self.span_length_km

    @property
    def link_length_km(self) -> float:
        return self.span_length_km * self.span_count


@dataclass(frozen=True)
class LinkConfig:
    fiber: FiberParams = field(default_factory=FiberParams)
    forward_step_m: float = 100.0
    launch_power_dbm: float = 5.0
    amplifier_noise_figure_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.forward_step_m > 0:
            raise ValueError(f"forward_step_m must be positive, got {self.forward_step_m}")
        nf = self.amplifier_noise_figure_db
        if nf is not None and nf < 3:
            raise ValueError(f"amplifier noise figure must be >= 3 dB, got {nf}")

    @property
    def launch_power_w(self) -> float:
        return dbm_to_w(self.launch_power_dbm)


def dbm_to_w(p_dbm: float) -> float:
    return 1e-3 * 10 ** (p_dbm / 10)


def angular_frequency(n: int, sample_rate: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n, d=1 / sample_rate)


def _step_grid(length_m: float, step_m: float) -> list[float]:
    n_full = int(math.floor(length_m / step_m + 1e-9))
    steps = [step_m] * n_full
    rest = length_m - n_full * step_m
    if rest > 1e-9 * length_m:
        warnings.warn(
            f"step {step_m} m does not divide span {length_m} m; last step is {rest:.6g} m",
            stacklevel=3,
        )
        steps.append(rest)
    return steps


def ssfm_span(wave: DualPolWaveform, fiber: FiberParams, step_m: float = 100.0,
              length_km: float | None = None) -> DualPolWaveform:
    """Propagate one fiber span with the symmetric split-step Fourier method.

    Each step applies half the linear operator (dispersion and field loss), the
    Manakov Kerr rotation ``exp(-j 8/9 gamma dz (|Ex|^2 + |Ey|^2))`` and the
    other linear half. Consecutive linear halves are fused. Boundaries are
    periodic.
    """
    length_m = (fiber.span_length_km if length_km is None else length_km) * 1e3
    if step_m <= 0 or step_m > length_m:
        raise ValueError(f"step_m must lie in (0, span length], got {step_m}")
    e = wave.stack()
    n = e.shape[1]
    w = angular_frequency(n, wave.sample_rate)
    beta2 = fiber.beta2_s2_per_m
    alpha_field = fiber.alpha_power_per_km / 1e3 / 2
    nl = MANAKOV * fiber.gamma_per_w_m

    def linear(dz):
        return np.exp(-1j * (beta2 / 2) * w**2 * dz - alpha_field * dz)

    steps = _step_grid(length_m, step_m)
    ef = np.fft.fft(e, axis=1) * linear(steps[0] / 2)
    for i, dz in enumerate(steps):
        e = np.fft.ifft(ef, axis=1)
        if nl != 0:
            power = np.abs(e[0]) ** 2 + np.abs(e[1]) ** 2
            e = e * np.exp(-1j * nl * dz * power)
        ef = np.fft.fft(e, axis=1)
        nxt = steps[i + 1] if i + 1 < len(steps) else 0.0
        ef = ef * linear(dz / 2 + nxt / 2)
    return DualPolWaveform.from_array(np.fft.ifft(ef, axis=1), wave.sample_rate)


def ase_noise_power(gain_db: float, noise_figure_db: float, sample_rate: float,
                    carrier_hz: float = CARRIER_HZ) -> float:
    """ASE power per polarization over the simulation bandwidth, in W.

    Uses ``n_sp = (NF G - 1) / (2 (G - 1))`` so the per-polarization noise PSD
    is ``(NF G - 1) h nu / 2``.
    """
    g = 10 ** (gain_db / 10)
    nf = 10 ** (noise_figure_db / 10)
    return max(nf * g - 1, 0.0) / 2 * const.h * carrier_hz * sample_rate


def amplify(wave: DualPolWaveform, gain_db: float, noise_figure_db: float | None = None,
            seed=0) -> DualPolWaveform:
    """Scale the field by ``10**(gain_db/20)``, optionally adding circular Gaussian ASE."""
    if not math.isfinite(gain_db):
        raise ValueError(f"gain_db must be finite, got {gain_db}")
    e = wave.stack() * 10 ** (gain_db / 20)
    if noise_figure_db is not None:
        var = ase_noise_power(gain_db, noise_figure_db, wave.sample_rate)
        rng = np.random.default_rng(np.random.SeedSequence(np.atleast_1d(seed).tolist()))
        e = e + np.sqrt(var / 2) * (rng.standard_normal(e.shape) + 1j * rng.standard_normal(e.shape))
    return DualPolWaveform.from_array(e, wave.sample_rate)


def set_power(wave: DualPolWaveform, power_w: float) -> DualPolWaveform:
    """Rescale so the total (dual-polarization) mean power equals ``power_w``."""
    return wave.scaled(math.sqrt(power_w / wave.power))


def propagate_link(wave: DualPolWaveform, cfg: LinkConfig, return_trace: bool = False):
    """Launch ``wave`` at the configured power through ``span_count`` amplified spans.

    Every span is followed by an amplifier whose gain equals the span loss. With
    ``return_trace`` the mean power after each amplifier is returned as well.
    """
    out = set_power(wave, cfg.launch_power_w)
    trace = [out.power]
    fiber = cfg.fiber
    for span in range(fiber.span_count):
        out = ssfm_span(out, fiber, cfg.forward_step_m)
        out = amplify(out, fiber.span_loss_db, cfg.amplifier_noise_figure_db, seed=(cfg.seed, span))
        trace.append(out.power)
    return (out, trace) if return_trace else out


def dispersion_only(wave: DualPolWaveform, beta2_ps2_per_km: float, length_km: float) -> DualPolWaveform:
    """Apply the forward dispersion of ``length_km`` of fiber in one frequency-domain step."""
    w = angular_frequency(len(wave), wave.sample_rate)
    beta2 = beta2_ps2_per_km * 1e-27
    h = np.exp(-1j * (beta2 / 2) * w**2 * length_km * 1e3)
    return DualPolWaveform.from_array(np.fft.ifft(np.fft.fft(wave.stack(), axis=1) * h, axis=1),
                                      wave.sample_rate)
