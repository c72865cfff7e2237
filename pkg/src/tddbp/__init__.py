"""Learned time-domain digital back-propagation toolkit."""
from .channel import FiberParams, LinkConfig, propagate_link
from .dbp import TdDbpModel, fd_dbp, init_model, td_dbp
from .estimators import EDCReceiver, FrequencyDomainDBP, TimeDomainDBP
from .signals import DualPolWaveform, SymbolFrame, make_frame, rrc_shape
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DualPolWaveform", "EDCReceiver", "FiberParams", "FrequencyDomainDBP", "LinkConfig",
    "SymbolFrame", "TdDbpModel", "TimeDomainDBP", "TrainConfig", "fd_dbp", "init_model",
    "make_frame", "propagate_link", "rrc_shape", "td_dbp", "train",
]
