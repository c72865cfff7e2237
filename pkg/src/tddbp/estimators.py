"""Estimator-style wrappers around the receivers.

Every receiver follows the same shape: ``fit(X, y)`` with ``X`` a received
:class:`~tddbp.signals.DualPolWaveform` and ``y`` its
:class:`~tddbp.signals.SymbolFrame`, ``transform(X)`` returning the
back-propagated field, ``predict(X, y)`` returning recovered symbols (the
frame supplies the pilots) and ``score(X, y)`` returning the SNR in dB on data
symbols.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .channel import FiberParams, dbm_to_w
from .dbp import TdDbpModel, edc, fd_dbp, init_model
from .pipeline import (ReceiverSettings, normalize_power, run_td_receiver, symbol_snr,
                       symbols_from_field, td_field_output)
from .signals import DualPolWaveform, SymbolFrame
from .training import TrainConfig, segment
from .training import train as train_model


def check_waveform(X, sample_rate: float | None = None) -> DualPolWaveform:
    """Coerce ``X`` to a waveform; bare ``(2, n)`` arrays need ``sample_rate``."""
    if isinstance(X, DualPolWaveform):
        return X
    if sample_rate is None:
        raise TypeError("expected a DualPolWaveform, or an array together with sample_rate")
    return DualPolWaveform.from_array(np.asarray(X), sample_rate)


def check_frame(y, X: DualPolWaveform, samples_per_symbol: int) -> SymbolFrame:
    if not isinstance(y, SymbolFrame):
        raise TypeError(f"expected a SymbolFrame, got {type(y).__name__}")
    if len(X) != len(y) * samples_per_symbol:
        raise ValueError(f"{len(X)} samples do not match {len(y)} symbols at "
                         f"{samples_per_symbol} samples/symbol")
    return y


def check_symbol_range(symbol_range, n_symbols: int) -> tuple[int, int]:
    lo, hi = (0, n_symbols) if symbol_range is None else (int(symbol_range[0]), int(symbol_range[1]))
    if not 0 <= lo < hi <= n_symbols:
        raise ValueError(f"symbol range {symbol_range} outside [0, {n_symbols}]")
    return lo, hi


class _Receiver(BaseEstimator, TransformerMixin):
    def _settings(self) -> ReceiverSettings:
        return self.settings if self.settings is not None else ReceiverSettings()

    def _fiber(self) -> FiberParams:
        return self.fiber if self.fiber is not None else FiberParams()

    def predict(self, X, y):
        check_is_fitted(self)
        X = check_waveform(X)
        y = check_frame(y, X, self._settings().samples_per_symbol)
        return symbols_from_field(self.transform(X), y, self._settings())

    def score(self, X, y, symbol_range=None) -> float:
        """SNR (dB) on data symbols, optionally restricted to ``symbol_range``."""
        X = check_waveform(X)
        y = check_frame(y, X, self._settings().samples_per_symbol)
        return symbol_snr(self.predict(X, y), y, check_symbol_range(symbol_range, len(y)))


class EDCReceiver(_Receiver):
    """Whole-link linear dispersion compensation."""

    def __init__(self, fiber: FiberParams | None = None, launch_power_dbm: float = 5.0,
                 settings: ReceiverSettings | None = None):
        self.fiber = fiber
        self.launch_power_dbm = launch_power_dbm
        self.settings = settings

    def fit(self, X, y=None):
        check_waveform(X)
        self.fiber_ = self._fiber()
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_waveform(X)
        x = normalize_power(X.stack(), dbm_to_w(self.launch_power_dbm))
        return edc(DualPolWaveform.from_array(x, X.sample_rate), self.fiber_)


class FrequencyDomainDBP(_Receiver):
    """Split-step back-propagation with FFT-based dispersion steps."""

    def __init__(self, fiber: FiberParams | None = None, steps_per_span: int = 50,
                 gamma_dbp: float = 0.8, launch_power_dbm: float = 5.0,
                 step_profile: str = "equidistant", settings: ReceiverSettings | None = None):
        self.fiber = fiber
        self.steps_per_span = steps_per_span
        self.gamma_dbp = gamma_dbp
        self.launch_power_dbm = launch_power_dbm
        self.step_profile = step_profile
        self.settings = settings

    def fit(self, X, y=None):
        check_waveform(X)
        if self.steps_per_span < 1:
            raise ValueError(f"steps_per_span must be >= 1, got {self.steps_per_span}")
        self.fiber_ = self._fiber()
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_waveform(X)
        x = normalize_power(X.stack(), dbm_to_w(self.launch_power_dbm))
        return fd_dbp(DualPolWaveform.from_array(x, X.sample_rate), self.fiber_,
                      self.steps_per_span, self.gamma_dbp, self.step_profile)


class TimeDomainDBP(_Receiver):
    """Learned FIR / nonlinear-phase cascade with MIMO sections on both sides.

    ``fit`` initializes least-squares filters (or starts from ``model``) and
    trains them on the first ``train.train_fraction`` of the symbols.

    Attributes
    ----------
    model_ : TdDbpModel
        Fitted filter bank.
    history_ : TrainHistory
        Per-epoch losses and test SNR.
    """

    def __init__(self, fiber: FiberParams | None = None, steps_per_span: int = 10,
                 total_taps: int | None = 270, gamma_dbp: float = 0.8,
                 launch_power_dbm: float = 5.0, mimo_taps: int = 65, equal_power: bool = True,
                 link_mode: bool = False, residual: bool = False, train: TrainConfig | None = None,
                 settings: ReceiverSettings | None = None, model: TdDbpModel | None = None):
        self.fiber = fiber
        self.steps_per_span = steps_per_span
        self.total_taps = total_taps
        self.gamma_dbp = gamma_dbp
        self.launch_power_dbm = launch_power_dbm
        self.mimo_taps = mimo_taps
        self.equal_power = equal_power
        self.link_mode = link_mode
        self.residual = residual
        self.train = train
        self.settings = settings
        self.model = model

    def initial_model(self, sample_rate: float) -> TdDbpModel:
        if self.model is not None:
            return self.model
        return init_model(self._fiber(), sample_rate, self.steps_per_span, self.total_taps,
                          self.gamma_dbp, self.launch_power_dbm, self.mimo_taps, self.equal_power,
                          self.link_mode, self.residual)

    def fit(self, X, y):
        X = check_waveform(X)
        y = check_frame(y, X, self._settings().samples_per_symbol)
        cfg = self.train if self.train is not None else TrainConfig()
        self.model_, self.history_ = train_model(self.initial_model(X.sample_rate), (X, y), cfg,
                                                 self._settings())
        return self

    @classmethod
    def from_model(cls, model: TdDbpModel, settings: ReceiverSettings | None = None) -> "TimeDomainDBP":
        """Wrap an already trained filter bank."""
        est = cls(fiber=model.fiber, gamma_dbp=model.gamma_dbp,
                  launch_power_dbm=model.launch_power_dbm, settings=settings, model=model)
        est.model_ = model
        return est

    def transform(self, X):
        check_is_fitted(self)
        return td_field_output(check_waveform(X), self.model_)

    def predict(self, X, y):
        """Recovered symbols; those outside the valid range are transient-corrupted."""
        check_is_fitted(self)
        X = check_waveform(X)
        y = check_frame(y, X, self._settings().samples_per_symbol)
        symbols, _ = run_td_receiver(X, y, self.model_, self._settings())
        return symbols

    def score(self, X, y, symbol_range=None) -> float:
        """SNR (dB) on data symbols of ``symbol_range``, edge transients excluded."""
        check_is_fitted(self)
        X = check_waveform(X)
        settings = self._settings()
        y = check_frame(y, X, settings.samples_per_symbol)
        lo, hi = check_symbol_range(symbol_range, len(y))
        X, y = segment(X, y, lo, hi, settings.samples_per_symbol)
        symbols, valid = run_td_receiver(X, y, self.model_, settings)
        return symbol_snr(symbols, y, valid)
