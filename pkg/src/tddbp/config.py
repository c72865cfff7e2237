"""Project configuration: JSON with comments, unit-suffixed keys, env overrides.

Environment variables ``DBP_<SECTION>__<KEY>`` override single values, for
example ``DBP_LINK__LAUNCH_POWER_DBM=3``; values are parsed as JSON when
possible and taken as strings otherwise.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .channel import FiberParams, LinkConfig
from .pipeline import ReceiverSettings
from .rx import phase_noise_ratio
from .signals import Modulation
from .training import TrainConfig

ENV_PREFIX = "DBP_"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending location."""


@dataclass(frozen=True)
class LinkSection:
    alpha_db_per_km: float = 0.16
    beta2_ps2_per_km: float = -20.18
    gamma_per_w_km: float = 1.2
    span_length_km: float = 101.4
    span_count: int = 10
    forward_step_m: float = 100.0
    launch_power_dbm: float = 5.0
    amplifier_noise_figure_db: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class SignalSection:
    modulation: str = "QAM64"
    symbol_count: int = 65536
    symbol_rate_hz: float = 64e9
    samples_per_symbol: int = 2
    rolloff: float = 0.1
    rrc_span_symbols: int = 64
    pilot_period: int = 32
    seed: int = 1


@dataclass(frozen=True)
class ReceiverSection:
    wiener_length: int = 63
    laser_linewidth_hz: float = 100e3
    snr_estimate_db: float = 20.0
    joint_cpe: bool = True
    mimo_taps: int = 65


@dataclass(frozen=True)
class DbpSection:
    steps_per_span: int = 10
    total_taps: int = 270
    gamma_dbp_per_w_km: float = 0.8
    equal_power: bool = True
    link_mode: bool = False
    residual_mode: bool = False
    fd_steps_per_span: int = 50


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 300
    phase1_epochs: int = 30
    batch_symbols: int | None = None
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-4
    train_fraction: float = 0.8
    train_gamma: bool = False
    eval_every: int = 10
    seed: int = 2


@dataclass(frozen=True)
class SweepSection:
    powers_dbm: tuple = tuple(float(p) for p in range(-6, 9))
    receivers: tuple = ("EDC", "FD-DBP", "TD-DBP")


@dataclass(frozen=True)
class ProjectConfig:
    link: LinkSection = field(default_factory=LinkSection)
    signal: SignalSection = field(default_factory=SignalSection)
    receiver: ReceiverSection = field(default_factory=ReceiverSection)
    dbp: DbpSection = field(default_factory=DbpSection)
    train: TrainSection = field(default_factory=TrainSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output_dir: str = "out"

    # --- derived objects -------------------------------------------------
    @property
    def fiber(self) -> FiberParams:
        l = self.link
        return FiberParams(l.alpha_db_per_km, l.beta2_ps2_per_km, l.gamma_per_w_km,
                           l.span_length_km, l.span_count)

    @property
    def link_config(self) -> LinkConfig:
        l = self.link
        return LinkConfig(self.fiber, l.forward_step_m, l.launch_power_dbm,
                          l.amplifier_noise_figure_db, l.seed)

    @property
    def sample_rate(self) -> float:
        return self.signal.symbol_rate_hz * self.signal.samples_per_symbol

    @property
    def receiver_settings(self) -> ReceiverSettings:
        r = self.receiver
        ratio = phase_noise_ratio(r.laser_linewidth_hz, self.signal.symbol_rate_hz, r.snr_estimate_db)
        return ReceiverSettings(self.signal.samples_per_symbol, self.signal.rolloff,
                                self.signal.rrc_span_symbols, r.wiener_length, ratio, r.joint_cpe)

    @property
    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(epochs=t.epochs, phase1_epochs=t.phase1_epochs, batch_symbols=t.batch_symbols,
                           lr_phase1=t.lr_phase1, lr_phase2=t.lr_phase2,
                           train_fraction=t.train_fraction, seed=t.seed, train_gamma=t.train_gamma,
                           eval_every=t.eval_every)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sweep"] = {k: list(v) for k, v in d["sweep"].items()}
        return d

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ProjectConfig":
        """Derive every seed from one master seed."""
        return dataclasses.replace(
            self, link=dataclasses.replace(self.link, seed=seed),
            signal=dataclasses.replace(self.signal, seed=seed + 1),
            train=dataclasses.replace(self.train, seed=seed + 2))


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ProjectConfig)}
_SECTION_TYPES = {"link": LinkSection, "signal": SignalSection, "receiver": ReceiverSection,
                  "dbp": DbpSection, "train": TrainSection, "sweep": SweepSection}


def strip_comments(text: str) -> str:
    """Remove ``//`` line and ``/* */`` block comments outside string literals.

    Newlines inside block comments are kept so decoder line numbers stay valid.
    """
    pattern = re.compile(r'"(?:\\.|[^"\\])*"|//[^\n]*|/\*.*?\*/', re.S)

    def repl(m):
        s = m.group(0)
        if s.startswith('"'):
            return s
        return "\n" * s.count("\n")
    return pattern.sub(repl, text)


def _coerce(value, type_name: str, where: str):
    """Check ``value`` against a field annotation such as ``"int | None"``."""
    kinds = [k.strip() for k in type_name.split("|")]
    if value is None:
        if "None" in kinds:
            return None
        raise ConfigError(f"{where}: may not be null")
    kind = kinds[0]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if kind == "tuple":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{where}: unsupported field type {type_name}")  # pragma: no cover


def _section(name: str, data) -> object:
    cls = _SECTION_TYPES[name]
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
    values = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            values[f.name] = _coerce(data[f.name], f.type, f"{name}.{f.name}")
    return cls(**values)


def _validate(cfg: ProjectConfig) -> None:
    def check(cond, where, msg):
        if not cond:
            raise ConfigError(f"{where}: {msg}")

    l, s, r, d, t, w = cfg.link, cfg.signal, cfg.receiver, cfg.dbp, cfg.train, cfg.sweep
    check(l.alpha_db_per_km >= 0, "link.alpha_db_per_km", "must be >= 0")
    check(l.span_length_km > 0, "link.span_length_km", "must be > 0")
    check(l.span_count >= 0, "link.span_count", "must be >= 0")
    check(l.forward_step_m > 0, "link.forward_step_m", "must be > 0")
    check(l.amplifier_noise_figure_db is None or l.amplifier_noise_figure_db >= 3,
          "link.amplifier_noise_figure_db", "must be >= 3 dB or null")
    check(s.modulation in Modulation.__members__, "signal.modulation",
          f"must be one of {', '.join(Modulation.__members__)}")
    check(s.symbol_count >= 256, "signal.symbol_count", "must be >= 256")
    check(s.symbol_rate_hz > 0, "signal.symbol_rate_hz", "must be > 0")
    check(s.samples_per_symbol >= 1, "signal.samples_per_symbol", "must be >= 1")
    check(0 <= s.rolloff <= 1, "signal.rolloff", "must lie in [0, 1]")
    check(s.rrc_span_symbols >= 8, "signal.rrc_span_symbols", "must be >= 8")
    check(s.pilot_period >= 1, "signal.pilot_period", "must be >= 1")
    check(r.wiener_length >= 1 and r.wiener_length % 2 == 1, "receiver.wiener_length", "must be odd")
    check(r.laser_linewidth_hz >= 0, "receiver.laser_linewidth_hz", "must be >= 0")
    check(r.mimo_taps >= 1 and r.mimo_taps % 2 == 1, "receiver.mimo_taps", "must be odd")
    check(d.steps_per_span >= 1, "dbp.steps_per_span", "must be >= 1")
    check(d.total_taps >= d.steps_per_span, "dbp.total_taps", "tap budget is smaller than the step count")
    check((d.total_taps - d.steps_per_span) % 2 == 0 or d.link_mode, "dbp.total_taps",
          "odd per-step tap counts need total_taps and steps_per_span of equal parity")
    check(d.gamma_dbp_per_w_km >= 0, "dbp.gamma_dbp_per_w_km", "must be >= 0")
    check(d.fd_steps_per_span >= 1, "dbp.fd_steps_per_span", "must be >= 1")
    check(t.epochs >= 0 and t.phase1_epochs >= 0, "train.epochs", "must be >= 0")
    check(0 < t.train_fraction < 1, "train.train_fraction", "must lie in (0, 1)")
    check(t.lr_phase1 > 0 and t.lr_phase2 > 0, "train.lr_phase2", "learning rates must be > 0")
    check(t.eval_every >= 1, "train.eval_every", "must be >= 1")
    check(all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in w.powers_dbm),
          "sweep.powers_dbm", "must be numbers")
    allowed = {"EDC", "FD-DBP", "TD-DBP", "TD-gamma0", "single-filter"}
    for i, name in enumerate(w.receivers):
        check(name in allowed, f"sweep.receivers[{i}]", f"unknown receiver {name!r} "
              f"(allowed: {', '.join(sorted(allowed))})")


def from_dict(data: dict) -> ProjectConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected an object")
    values = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown key (allowed: {', '.join(_SECTIONS)})")
        if key == "output_dir":
            if not isinstance(value, str):
                raise ConfigError("output_dir: expected a string")
            values[key] = value
        else:
            values[key] = _section(key, value)
    cfg = ProjectConfig(**values)
    _validate(cfg)
    return cfg


def apply_env(data: dict, environ=None) -> dict:
    """Overlay ``DBP_SECTION__KEY`` environment variables onto raw config data."""
    environ = os.environ if environ is None else environ
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if len(path) == 1:
            out[path[0]] = value
        elif len(path) == 2:
            out.setdefault(path[0], {})
            if not isinstance(out[path[0]], dict):
                raise ConfigError(f"{name}: {path[0]} is not a section")
            out[path[0]][path[1]] = value
        else:
            raise ConfigError(f"{name}: expected DBP_<SECTION>__<KEY>")
    return out


def loads(text: str, environ=None) -> ProjectConfig:
    try:
        data = json.loads(strip_comments(text)) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(apply_env(data, environ))


def load(path: str | Path | None, environ=None) -> ProjectConfig:
    """Read a config file (defaults when ``path`` is None) and apply env overrides."""
    if path is None:
        return loads("", environ)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return loads(text, environ)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dumps(cfg: ProjectConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"
