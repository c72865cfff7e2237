"""Loss recording, gradients and the two-phase training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Eager, Tape, backward
from .dbp import TdDbpModel
from .optim import OptimizerState, radam_step
from .pipeline import (ReceiverSettings, prepare_input, symbol_snr, td_receiver_graph,
                       valid_range)
from .signals import DualPolWaveform, SymbolFrame

log = logging.getLogger(__name__)

SPLIT_BLOCK = 256


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    phase1_epochs: int = 30
    batch_symbols: int | None = None
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-4
    train_fraction: float = 0.8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_gamma: bool = False
    eval_every: int = 1
    divergence_factor: float = 1e3

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.epochs < 0 or self.phase1_epochs < 0:
            raise ValueError("epoch counts must be non-negative")


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    optimizer_state: OptimizerState | None = None

    COLUMNS = ("epoch", "train_loss", "test_loss", "snr_test_db")

    def append(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history: TrainHistory, model: TdDbpModel):
        super().__init__(message)
        self.history = history
        self.model = model


def split_sizes(n_symbols: int, fraction: float = 0.8) -> tuple[int, int]:
    """Train/test symbol counts; the train share is rounded down to whole 256-symbol blocks."""
    n_train = int(math.floor(fraction * n_symbols / SPLIT_BLOCK)) * SPLIT_BLOCK
    if n_train == 0:
        n_train = int(math.floor(fraction * n_symbols))
    return n_train, n_symbols - n_train


def segment(wave: DualPolWaveform, frame: SymbolFrame, start: int, stop: int, sps: int):
    """Symbols ``[start, stop)`` and the matching samples."""
    x = wave.stack()[:, start * sps:stop * sps]
    return DualPolWaveform.from_array(x, wave.sample_rate), frame.slice(start, stop)


def split_dataset(wave: DualPolWaveform, frame: SymbolFrame, fraction: float = 0.8, sps: int = 2):
    """Split by symbol index: the first share trains, the rest tests."""
    n_train, _ = split_sizes(len(frame), fraction)
    return (segment(wave, frame, 0, n_train, sps),
            segment(wave, frame, n_train, len(frame), sps))


def _loss_mask(frame: SymbolFrame, valid: tuple[int, int]) -> np.ndarray:
    mask = frame.data_mask.copy()
    mask[:valid[0]] = False
    mask[valid[1]:] = False
    return mask


def record_forward(model: TdDbpModel, wave: DualPolWaveform, frame: SymbolFrame,
                   settings: ReceiverSettings = ReceiverSettings(), train_gamma: bool = False):
    """MSE of the full time-domain receiver on data symbols, with its tape.

    Pilots and the edge transients of the zero-padded filters are excluded.
    """
    valid = valid_range(len(frame), model, settings)
    tape = Tape(model.parameters(include_gamma=train_gamma))
    x = tape.input(prepare_input(wave, model, settings, frame))
    y = td_receiver_graph(tape, x, model, frame, settings, valid, train_gamma)
    tape.apply("mse", [y], target=frame.stack(), mask=_loss_mask(frame, valid))
    return float(tape.output), tape


def evaluate_loss(model: TdDbpModel, wave: DualPolWaveform, frame: SymbolFrame,
                  settings: ReceiverSettings = ReceiverSettings()) -> tuple[float, float]:
    """(MSE, SNR dB) of ``model`` on a segment, without recording."""
    valid = valid_range(len(frame), model, settings)
    g = Eager(model.parameters())
    y = td_receiver_graph(g, g.input(prepare_input(wave, model, settings, frame)), model, frame,
                          settings, valid)
    loss = float(g.apply("mse", [y], target=frame.stack(), mask=_loss_mask(frame, valid)))
    return loss, symbol_snr(y, frame, valid)


def calibrate_output_scale(model: TdDbpModel, wave: DualPolWaveform, frame: SymbolFrame,
                           settings: ReceiverSettings = ReceiverSettings()) -> TdDbpModel:
    """Fix the constant gain between cascade output and unit-power symbols."""
    probe = model.copy(output_scale=1.0)
    valid = valid_range(len(frame), probe, settings)
    g = Eager(probe.parameters())
    y = td_receiver_graph(g, g.input(prepare_input(wave, probe, settings, frame)), probe, frame,
                          settings, valid)
    mask = _loss_mask(frame, valid)
    t = frame.stack()[:, mask]
    return model.copy(output_scale=float(np.sqrt(np.mean(np.abs(t) ** 2) / np.mean(np.abs(y[:, mask]) ** 2))))


def _mimo_names(model: TdDbpModel) -> list[str]:
    return [n for n in model.parameters() if n.startswith("mimo_")]


def _batches(n_symbols: int, cfg: TrainConfig, edge: int, rng: np.random.Generator):
    if cfg.batch_symbols is None or cfg.batch_symbols >= n_symbols:
        return [(0, n_symbols)]
    step = cfg.batch_symbols
    starts = list(range(0, n_symbols - step - 2 * edge + 1, step))
    rng.shuffle(starts)
    return [(s, s + step + 2 * edge) for s in starts]


def train(model: TdDbpModel, dataset, cfg: TrainConfig = TrainConfig(),
          settings: ReceiverSettings = ReceiverSettings()):
    """Two-phase training on ``dataset = (wave, frame)``.

    Phase one adapts only the MIMO sections; phase two adapts every filter.
    The test split never reaches the optimizer.
    """
    wave, frame = dataset
    sps = settings.samples_per_symbol
    (tr_wave, tr_frame), (te_wave, te_frame) = split_dataset(wave, frame, cfg.train_fraction, sps)
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history
    model = calibrate_output_scale(model, tr_wave, tr_frame, settings)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    edge = valid_range(len(tr_frame), model, settings)[0]
    initial = None
    state = None
    phase = 0
    params = model.parameters(include_gamma=cfg.train_gamma)
    for epoch in range(cfg.epochs):
        new_phase = 1 if epoch < cfg.phase1_epochs else 2
        if new_phase != phase:
            phase = new_phase
            lr = cfg.lr_phase1 if phase == 1 else cfg.lr_phase2
            state = OptimizerState(lr, cfg.beta1, cfg.beta2, cfg.eps)
            names = _mimo_names(model) if phase == 1 else list(params)
        losses = []
        for lo, hi in _batches(len(tr_frame), cfg, edge, rng):
            w_b, f_b = segment(tr_wave, tr_frame, lo, hi, sps)
            loss, tape = record_forward(model, w_b, f_b, settings, cfg.train_gamma)
            if initial is None:
                initial = loss
            if not math.isfinite(loss) or loss > cfg.divergence_factor * initial:
                raise TrainingDiverged(f"loss {loss:.3g} diverged at epoch {epoch}", history, model)
            grads = backward(tape)
            params = radam_step(params, grads, state, names)
            model = model.with_parameters(params)
            history.optimizer_state = state
            losses.append(loss)
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            test_loss, snr = evaluate_loss(model, te_wave, te_frame, settings)
        else:
            test_loss, snr = float("nan"), float("nan")
        history.append(epoch=epoch, train_loss=float(np.mean(losses)), test_loss=test_loss,
                       snr_test_db=snr)
        log.debug("epoch %d phase %d train %.4g test %.4g snr %.2f", epoch, phase,
                  history.rows[-1]["train_loss"], test_loss, snr)
    return model, history
