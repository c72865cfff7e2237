"""Symbol generation, pilots, pulse shaping and the SNR metric."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import resample as _fft_resample


class Modulation(str, enum.Enum):
    QAM64 = "QAM64"
    QPSK = "QPSK"


@dataclass(frozen=True, eq=False)
class DualPolWaveform:
    """Two complex sample sequences (X and Y polarization) at a common rate."""

    samples_x: np.ndarray
    samples_y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.asarray(self.samples_x, dtype=np.complex128)
        y = np.asarray(self.samples_y, dtype=np.complex128)
        if x.ndim != 1 or y.ndim != 1:
            raise ValueError("polarization samples must be one-dimensional")
        if x.shape != y.shape:
            raise ValueError(f"polarization lengths differ: {x.size} != {y.size}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples_x", x)
        object.__setattr__(self, "samples_y", y)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @classmethod
    def from_array(cls, samples, sample_rate: float) -> "DualPolWaveform":
        samples = np.asarray(samples)
        if samples.ndim != 2 or samples.shape[0] != 2:
            raise ValueError(f"expected shape (2, n), got {samples.shape}")
        return cls(samples[0], samples[1], sample_rate)

    def stack(self) -> np.ndarray:
        return np.stack([self.samples_x, self.samples_y])

    def __len__(self) -> int:
        return self.samples_x.size

    @property
    def power(self) -> float:
        """Mean total power summed over both polarizations."""
        return float(np.mean(np.abs(self.samples_x) ** 2) + np.mean(np.abs(self.samples_y) ** 2))

    def scaled(self, factor) -> "DualPolWaveform":
        return DualPolWaveform(self.samples_x * factor, self.samples_y * factor, self.sample_rate)


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """Transmitted symbols per polarization with pilot bookkeeping."""

    symbols_x: np.ndarray
    symbols_y: np.ndarray
    pilot_mask: np.ndarray
    pilot_period: int = 0
    seed: int = 0
    modulation: Modulation = Modulation.QAM64
    symbol_rate: float = field(default=64e9)

    def __post_init__(self):
        x = np.asarray(self.symbols_x, dtype=np.complex128)
        y = np.asarray(self.symbols_y, dtype=np.complex128)
        mask = np.asarray(self.pilot_mask, dtype=bool)
        if not (x.shape == y.shape == mask.shape) or x.ndim != 1:
            raise ValueError("symbols_x, symbols_y and pilot_mask must have equal 1-D shapes")
        object.__setattr__(self, "symbols_x", x)
        object.__setattr__(self, "symbols_y", y)
        object.__setattr__(self, "pilot_mask", mask)
        object.__setattr__(self, "modulation", Modulation(self.modulation))

    def __len__(self) -> int:
        return self.symbols_x.size

    def stack(self) -> np.ndarray:
        return np.stack([self.symbols_x, self.symbols_y])

    @property
    def pilot_indices(self) -> np.ndarray:
        return np.flatnonzero(self.pilot_mask)

    @property
    def data_mask(self) -> np.ndarray:
        return ~self.pilot_mask

    def slice(self, start: int, stop: int) -> "SymbolFrame":
        """Sub-frame over symbol indices ``[start, stop)``."""
        return SymbolFrame(
            self.symbols_x[start:stop],
            self.symbols_y[start:stop],
            self.pilot_mask[start:stop],
            self.pilot_period,
            self.seed,
            self.modulation,
            self.symbol_rate,
        )


def _gray_levels(bits: np.ndarray, n_bits: int) -> np.ndarray:
    # inverse Gray code: adjacent amplitude levels differ in one bit
    idx = bits.copy()
    shift = 1
    while shift < n_bits:
        idx ^= idx >> shift
        shift <<= 1
    return 2 * idx - (2**n_bits - 1)


def constellation(modulation: Modulation | str) -> np.ndarray:
    """Gray-mapped alphabet indexed by symbol label, unit average power."""
    modulation = Modulation(modulation)
    if modulation is Modulation.QPSK:
        n_bits = 1
    elif modulation is Modulation.QAM64:
        n_bits = 3
    else:  # pragma: no cover
        raise ValueError(f"unsupported modulation {modulation!r}")
    labels = np.arange(4**n_bits)
    i_lev = _gray_levels(labels >> n_bits, n_bits)
    q_lev = _gray_levels(labels & (2**n_bits - 1), n_bits)
    points = i_lev + 1j * q_lev
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def _normalize(s: np.ndarray) -> np.ndarray:
    return s / np.sqrt(np.mean(np.abs(s) ** 2))


def generate_symbols(seed: int, count: int, modulation: Modulation | str = Modulation.QAM64,
                     symbol_rate: float = 64e9) -> SymbolFrame:
    """Draw ``count`` random Gray-mapped symbols per polarization.

    Each polarization is rescaled to exactly unit mean power, so the frame is
    fully determined by ``seed``.
    """
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    try:
        modulation = Modulation(modulation)
    except ValueError:
        raise ValueError(f"unsupported modulation {modulation!r}") from None
    alphabet = constellation(modulation)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    labels = rng.integers(0, alphabet.size, size=(2, count))
    sx = _normalize(alphabet[labels[0]])
    sy = _normalize(alphabet[labels[1]])
    return SymbolFrame(sx, sy, np.zeros(count, dtype=bool), 0, seed, modulation, symbol_rate)


def insert_pilots(frame: SymbolFrame, period: int) -> SymbolFrame:
    """Overwrite every ``period``-th symbol (starting at 0) with a known QPSK pilot."""
    if period < 2:
        raise ValueError(f"pilot period must be >= 2, got {period}")
    n = len(frame)
    if period > n:
        raise ValueError(f"pilot period {period} exceeds frame length {n}")
    idx = np.arange(0, n, period)
    rng = np.random.default_rng(np.random.SeedSequence([frame.seed, 1]))
    qpsk = constellation(Modulation.QPSK)
    pilots = qpsk[rng.integers(0, 4, size=(2, idx.size))]
    sx = frame.symbols_x.copy()
    sy = frame.symbols_y.copy()
    sx[idx] = pilots[0]
    sy[idx] = pilots[1]
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return SymbolFrame(sx, sy, mask, period, frame.seed, frame.modulation, frame.symbol_rate)


def make_frame(seed: int, count: int, modulation=Modulation.QAM64, pilot_period: int = 32,
               symbol_rate: float = 64e9) -> SymbolFrame:
    frame = generate_symbols(seed, count, modulation, symbol_rate)
    return insert_pilots(frame, pilot_period) if pilot_period else frame


def rrc_taps(rolloff: float, samples_per_symbol: int, span_symbols: int) -> np.ndarray:
    """Root-raised-cosine impulse response, centered, odd length, unit energy."""
    if not 0 < rolloff <= 1:
        raise ValueError(f"rolloff must lie in (0, 1], got {rolloff}")
    if span_symbols < 8:
        raise ValueError(f"filter span must be at least 8 symbols, got {span_symbols}")
    half = span_symbols * samples_per_symbol // 2
    t = np.arange(-half, half + 1) / samples_per_symbol
    b = rolloff
    h = np.empty_like(t)
    at_zero = np.isclose(t, 0.0)
    at_sing = np.isclose(np.abs(4 * b * t), 1.0)
    reg = ~(at_zero | at_sing)
    tr = t[reg]
    h[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    h[at_zero] = 1 - b + 4 * b / np.pi
    h[at_sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return h / np.linalg.norm(h)


def _circular_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Circular convolution with a centered odd-length filter along the last axis."""
    n = x.shape[-1]
    c = (taps.size - 1) // 2
    kernel = np.zeros(n, dtype=np.complex128)
    idx = (np.arange(taps.size) - c) % n
    np.add.at(kernel, idx, taps)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.fft.fft(kernel), axis=-1)


def resample(wave: DualPolWaveform, factor: Fraction | float) -> DualPolWaveform:
    """Band-limited periodic resampling by ``factor`` (output rate / input rate)."""
    factor = Fraction(factor).limit_denominator(1000)
    n_out = len(wave) * factor
    if n_out.denominator != 1:
        raise ValueError(f"resampling {len(wave)} samples by {factor} is not an integer length")
    out = _fft_resample(wave.stack(), int(n_out), axis=-1)
    return DualPolWaveform.from_array(out, wave.sample_rate * float(factor))


def rrc_shape(frame: SymbolFrame, rolloff: float = 0.1, samples_per_symbol=2,
              filter_span_symbols: int = 64) -> DualPolWaveform:
    """Pulse-shape a frame with a truncated RRC filter.

    Shaping is circular over the frame, which makes the waveform periodic and
    compatible with FFT-based propagation. Symbol ``i`` sits at sample
    ``i * samples_per_symbol``. Non-integer oversampling is reached by shaping
    at the numerator rate and FFT-resampling down.
    """
    sps = Fraction(samples_per_symbol).limit_denominator(1000)
    if not 0 < rolloff <= 1:
        raise ValueError(f"rolloff must lie in (0, 1], got {rolloff}")
    if sps < 1 + Fraction(rolloff).limit_denominator(1000):
        raise ValueError(f"samples_per_symbol {sps} below Nyquist limit 1+rolloff")
    up = sps.numerator
    taps = rrc_taps(rolloff, up, filter_span_symbols)
    symbols = frame.stack()
    upsampled = np.zeros((2, len(frame) * up), dtype=np.complex128)
    upsampled[:, ::up] = symbols
    wave = DualPolWaveform.from_array(_circular_filter(upsampled, taps), frame.symbol_rate * up)
    if sps.denominator != 1:
        wave = resample(wave, Fraction(1, sps.denominator))
    return wave


def matched_filter(wave: DualPolWaveform, rolloff: float = 0.1, samples_per_symbol: int = 2,
                   filter_span_symbols: int = 64) -> DualPolWaveform:
    """Circular RRC matched filter (the RRC is real and symmetric)."""
    taps = rrc_taps(rolloff, samples_per_symbol, filter_span_symbols)
    return DualPolWaveform.from_array(_circular_filter(wave.stack(), taps), wave.sample_rate)


def decimate(wave: DualPolWaveform, samples_per_symbol: int, offset: int = 0) -> np.ndarray:
    return wave.stack()[:, offset::samples_per_symbol]


def snr_estimate(X, Y) -> float:
    """SNR in dB between transmitted ``X`` and received ``Y``.

    Sums over every element, so stacked dual-polarization arrays are averaged
    jointly. Returns ``inf`` when the error power is exactly zero.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.size == 0:
        raise ValueError("cannot estimate SNR of an empty sequence")
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} != {Y.shape}")
    err = np.sum(np.abs(X - Y) ** 2)
    if err == 0:
        return float("inf")
    return float(10 * np.log10(np.sum(np.abs(X) ** 2) / err))


def nmse_db(reference, estimate) -> float:
    """Normalized mean squared error of ``estimate`` against ``reference``, in dB."""
    reference = np.asarray(reference)
    estimate = np.asarray(estimate)
    err = np.sum(np.abs(reference - estimate) ** 2)
    if err == 0:
        return float("-inf")
    return float(10 * np.log10(err / np.sum(np.abs(reference) ** 2)))
