"""Estimator interface of the receivers."""
import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tddbp.channel import FiberParams, LinkConfig, propagate_link
from tddbp.estimators import (EDCReceiver, FrequencyDomainDBP, TimeDomainDBP, check_frame,
                              check_symbol_range, check_waveform)
from tddbp.signals import DualPolWaveform, make_frame, rrc_shape
from tddbp.training import TrainConfig


@pytest.fixture(scope="module")
def data():
    fiber = FiberParams(span_count=1)
    frame = make_frame(11, 2048)
    rx = propagate_link(rrc_shape(frame), LinkConfig(fiber=fiber, forward_step_m=2028.0))
    return fiber, frame, rx


@pytest.mark.parametrize("cls", [EDCReceiver, FrequencyDomainDBP, TimeDomainDBP])
def test_params_and_clone(cls):
    est = cls(launch_power_dbm=3.0)
    params = est.get_params()
    assert params["launch_power_dbm"] == 3.0
    twin = clone(est)
    assert twin is not est and twin.get_params() == params
    assert est.set_params(launch_power_dbm=1.0).launch_power_dbm == 1.0


@pytest.mark.parametrize("cls", [EDCReceiver, FrequencyDomainDBP, TimeDomainDBP])
def test_not_fitted(cls, data):
    _, frame, rx = data
    with pytest.raises(NotFittedError):
        cls().transform(rx)


def test_validation_helpers(data):
    _, frame, rx = data
    assert check_waveform(rx) is rx
    assert len(check_waveform(rx.stack(), 128e9)) == len(rx)
    with pytest.raises(TypeError):
        check_waveform(rx.stack())
    with pytest.raises(ValueError):
        check_frame(frame, rx, 4)
    with pytest.raises(TypeError):
        check_frame(frame.stack(), rx, 2)
    assert check_symbol_range(None, 10) == (0, 10)
    with pytest.raises(ValueError):
        check_symbol_range((5, 11), 10)


def test_fd_beats_edc(data):
    fiber, frame, rx = data
    edc = EDCReceiver(fiber).fit(rx)
    fd = FrequencyDomainDBP(fiber, steps_per_span=20, gamma_dbp=8 / 9 * 1.2).fit(rx)
    assert fd.score(rx, frame) > edc.score(rx, frame) + 3
    assert edc.predict(rx, frame).shape == (2, len(frame))
    assert isinstance(fd.transform(rx), DualPolWaveform)
    with pytest.raises(ValueError):
        FrequencyDomainDBP(fiber, steps_per_span=0).fit(rx)


def test_td_fit_and_from_model(data):
    fiber, frame, rx = data
    est = TimeDomainDBP(fiber, steps_per_span=4, total_taps=60, gamma_dbp=8 / 9 * 1.2, mimo_taps=9,
                        train=TrainConfig(epochs=3, phase1_epochs=1))
    est.fit(rx, frame)
    assert len(est.history_.rows) == 3
    wrapped = TimeDomainDBP.from_model(est.model_)
    test = (1536, 2048)
    assert wrapped.score(rx, frame, test) == est.score(rx, frame, test)
    assert np.isfinite(est.score(rx, frame, test))
    assert est.predict(rx, frame).shape == (2, len(frame))
