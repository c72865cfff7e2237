"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 file or hash mismatch.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .analysis import (autocorrelation, cascade_response, complexity_report, freq_response,
                       power_sweep, write_complexity_csv)
from .channel import propagate_link, set_power
from .config import ConfigError, ProjectConfig
from .dbp import init_model, make_step_plan
from .estimators import EDCReceiver, FrequencyDomainDBP, TimeDomainDBP
from .io import file_digest, load_filter_bank, read_waveform, save_filter_bank, write_waveform
from .optim import dump_state
from .signals import DualPolWaveform, Modulation, make_frame, rrc_shape
from .training import TrainingDiverged, split_sizes, train

log = logging.getLogger("tddbp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FILE = 0, 2, 3, 4

MANIFEST = "manifest.json"
TX_FILE, LAUNCH_FILE, RX_FILE = "tx_symbols.dbpw", "launch.dbpw", "rx.dbpw"
INIT_FILTERS, FILTERS, LAST_GOOD = "filters_init.json", "filters.json", "filters_last_good.json"


class FileMismatch(RuntimeError):
    """Missing input, unreadable file, or artifact hash mismatch."""


# ---------------------------------------------------------------------------
# helpers


def section_hash(cfg: ProjectConfig, *sections: str) -> str:
    d = cfg.to_dict()
    blob = json.dumps({s: d[s] for s in sections}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def data_hash(cfg: ProjectConfig) -> str:
    """Hash of everything that determines the simulated waveforms."""
    return section_hash(cfg, "link", "signal")


def _frame(cfg: ProjectConfig):
    s = cfg.signal
    return make_frame(s.seed, s.symbol_count, Modulation[s.modulation], s.pilot_period, s.symbol_rate_hz)


def _out_dir(cfg: ProjectConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileMismatch(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _read_manifest(out: Path) -> dict:
    p = out / MANIFEST
    if not p.exists():
        return {"artifacts": {}}
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FileMismatch(f"{p}: corrupt manifest ({exc.msg})") from None


def _record(out: Path, cfg: ProjectConfig, command: str, files: list[str], extra: dict | None = None):
    m = _read_manifest(out)
    for name in files:
        m["artifacts"][name] = {"command": command, "config_hash": cfg.hash(),
                                "data_hash": data_hash(cfg), "sha256": file_digest(out / name)}
    m.setdefault("commands", {})[command] = {"config_hash": cfg.hash(), **(extra or {})}
    m["artifacts"] = dict(sorted(m["artifacts"].items()))
    m["commands"] = dict(sorted(m["commands"].items()))
    (out / MANIFEST).write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")


def _check_artifact(out: Path, name: str, cfg: ProjectConfig, force: bool) -> Path:
    """Ensure ``name`` exists, matches its recorded digest and the current data config."""
    path = out / name
    if not path.exists():
        raise FileMismatch(f"{path} not found; run the producing command first")
    if force:
        return path
    entry = _read_manifest(out)["artifacts"].get(name)
    if entry is None:
        raise FileMismatch(f"{path} is not recorded in {out / MANIFEST} (use --force to accept)")
    if entry["sha256"] != file_digest(path):
        raise FileMismatch(f"{path} changed since it was written (sha256 mismatch)")
    if entry["data_hash"] != data_hash(cfg):
        raise FileMismatch(f"{path} was produced with a different link/signal config (use --force)")
    return path


def _load_model(path: Path, cfg: ProjectConfig, force: bool):
    if not path.exists():
        raise FileMismatch(f"{path} not found")
    try:
        model, prov = load_filter_bank(path)
    except (ValueError, KeyError) as exc:
        raise FileMismatch(f"{path}: {exc}") from None
    if not force and prov.get("data_hash") not in (None, data_hash(cfg)):
        raise FileMismatch(f"{path} was built for a different link/signal config (use --force)")
    return model


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _received(out: Path, cfg: ProjectConfig, force: bool) -> DualPolWaveform:
    try:
        return read_waveform(_check_artifact(out, RX_FILE, cfg, force))
    except ValueError as exc:
        raise FileMismatch(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    frame = _frame(cfg)
    s = cfg.signal
    tx = DualPolWaveform.from_array(frame.stack(), s.symbol_rate_hz)
    launch = set_power(rrc_shape(frame, s.rolloff, s.samples_per_symbol, s.rrc_span_symbols),
                       cfg.link_config.launch_power_w)
    rx = propagate_link(launch, cfg.link_config)
    for name, wave in ((TX_FILE, tx), (LAUNCH_FILE, launch), (RX_FILE, rx)):
        write_waveform(out / name, wave)
    _record(out, cfg, "simulate", [TX_FILE, LAUNCH_FILE, RX_FILE],
            {"launch_power_dbm": cfg.link.launch_power_dbm,
             "seeds": {"link": cfg.link.seed, "signal": cfg.signal.seed}})
    print(f"simulated {s.symbol_count} symbols over {cfg.link.span_count} spans -> {out}")
    return EXIT_OK


def _initial_model(cfg: ProjectConfig):
    d = cfg.dbp
    return init_model(cfg.fiber, cfg.sample_rate, d.steps_per_span, None if d.link_mode else d.total_taps,
                      d.gamma_dbp_per_w_km, cfg.link.launch_power_dbm, cfg.receiver.mimo_taps,
                      d.equal_power, d.link_mode, d.residual_mode)


def _provenance(cfg: ProjectConfig, trained: bool) -> dict:
    return {"seed": cfg.signal.seed, "config_hash": cfg.hash(), "data_hash": data_hash(cfg),
            "train_config_hash": section_hash(cfg, "train") if trained else None}


def cmd_init_filters(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    d = cfg.dbp
    if not d.link_mode and d.total_taps < d.steps_per_span:
        raise ConfigError("dbp.total_taps: tap budget is smaller than the step count")
    model = _initial_model(cfg)
    save_filter_bank(out / INIT_FILTERS, model, _provenance(cfg, False))
    _record(out, cfg, "init-filters", [INIT_FILTERS])
    tag = " (linear only)" if model.linear_only else ""
    print(f"{model.plan.n_steps} filters, {model.total_taps} taps{tag} -> {out / INIT_FILTERS}")
    return EXIT_OK


def cmd_train(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    init_path = Path(args.filters) if args.filters else _check_artifact(out, INIT_FILTERS, cfg, args.force)
    model = _load_model(init_path, cfg, args.force)
    rx = _received(out, cfg, args.force)
    frame = _frame(cfg)
    settings = cfg.receiver_settings
    try:
        trained, history = train(model, (rx, frame), cfg.train_config, settings)
    except (TrainingDiverged, FloatingPointError) as exc:
        last = getattr(exc, "model", model)
        save_filter_bank(out / LAST_GOOD, last, _provenance(cfg, True))
        if isinstance(exc, TrainingDiverged):
            exc.history.to_csv(out / "history.csv")
        print(f"training failed: {exc}; last good filters -> {out / LAST_GOOD}", file=sys.stderr)
        return EXIT_NUMERIC
    save_filter_bank(out / FILTERS, trained, _provenance(cfg, True))
    history.to_csv(out / "history.csv")
    files = [FILTERS, "history.csv"]
    if history.optimizer_state is not None:
        (out / "optimizer.bin").write_bytes(dump_state(history.optimizer_state))
        files.append("optimizer.bin")
    _record(out, cfg, "train", files)
    if history.rows:
        last = history.rows[-1]
        print(f"epochs {len(history.rows)}: train loss {last['train_loss']:.4g}, "
              f"test loss {last['test_loss']:.4g}, test SNR {last['snr_test_db']:.2f} dB")
    else:
        print("0 epochs: filters unchanged")
    return EXIT_OK


def _split_range(cfg: ProjectConfig, split: str) -> tuple[int, int]:
    n_train, _ = split_sizes(cfg.signal.symbol_count, cfg.train.train_fraction)
    return (0, n_train) if split == "train" else (n_train, cfg.signal.symbol_count)


def cmd_evaluate(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    rx = _received(out, cfg, args.force)
    frame = _frame(cfg)
    settings = cfg.receiver_settings
    rng = _split_range(cfg, args.split)
    power = cfg.link.launch_power_dbm
    results = {}
    results["EDC"] = EDCReceiver(cfg.fiber, power, settings).fit(rx).score(rx, frame, rng)
    if args.fd:
        fd = FrequencyDomainDBP(cfg.fiber, cfg.dbp.fd_steps_per_span, cfg.dbp.gamma_dbp_per_w_km,
                                power, settings=settings)
        results[f"FD-DBP-{cfg.dbp.fd_steps_per_span}"] = fd.fit(rx).score(rx, frame, rng)
    models = args.model or ([str(out / FILTERS)] if (out / FILTERS).exists() else [])
    for path in models:
        model = _load_model(Path(path), cfg, args.force)
        if abs(model.sample_rate - rx.sample_rate) > 1e-6 * rx.sample_rate:
            raise FileMismatch(f"{path}: model rate {model.sample_rate} != waveform rate {rx.sample_rate}")
        est = TimeDomainDBP.from_model(model.copy(launch_power_dbm=power), settings)
        results[f"TD-DBP:{Path(path).name}"] = est.score(rx, frame, rng)
    label = "TEST split" if args.split == "test" else "TRAIN split (not a generalization estimate)"
    metrics = {"split": args.split, "split_label": label, "symbol_range": list(rng),
               "config_hash": cfg.hash(), "snr_db": {k: float(v) for k, v in results.items()}}
    name = "metrics.json" if args.split == "test" else "metrics_train_split.json"
    _write_json(out / name, metrics)
    _record(out, cfg, "evaluate", [name])
    print(label)
    for k, v in results.items():
        print(f"  {k:30s} {v:7.2f} dB")
    return EXIT_OK


def _sweep_receivers(cfg: ProjectConfig, args) -> dict:
    settings = cfg.receiver_settings
    power = cfg.link.launch_power_dbm
    models = {"TD-DBP": (args.model, "--model"), "TD-gamma0": (args.model_gamma0, "--model-gamma0"),
              "single-filter": (args.model_single, "--model-single")}
    receivers = {}
    for name in cfg.sweep.receivers:
        if name == "EDC":
            receivers[name] = EDCReceiver(cfg.fiber, power, settings)
        elif name == "FD-DBP":
            receivers[name] = FrequencyDomainDBP(cfg.fiber, cfg.dbp.fd_steps_per_span,
                                                 cfg.dbp.gamma_dbp_per_w_km, power, settings=settings)
        else:
            path, flag = models[name]
            if path is None:
                raise FileMismatch(f"receiver {name} needs a trained filter bank ({flag})")
            receivers[name] = TimeDomainDBP.from_model(_load_model(Path(path), cfg, args.force), settings)
    if not receivers:
        raise ConfigError("sweep.receivers: empty receiver set")
    return receivers


def cmd_sweep(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    if not cfg.sweep.powers_dbm:
        raise ConfigError("sweep.powers_dbm: empty power list")
    receivers = _sweep_receivers(cfg, args)
    table = power_sweep(cfg.link_config, _frame(cfg), receivers, cfg.sweep.powers_dbm,
                        args.threads, cfg.train.train_fraction, cfg.signal.samples_per_symbol,
                        cfg.signal.rolloff)
    table.to_csv(out / "sweep.csv")
    optima = {name: dict(zip(("power_dbm", "snr_db"), table.optimum(name))) for name in receivers}
    _write_json(out / "sweep_optima.json", {"config_hash": cfg.hash(), "optima": optima})
    _record(out, cfg, "sweep", ["sweep.csv", "sweep_optima.json"])
    for name, o in optima.items():
        print(f"  {name:15s} optimum {o['snr_db']:6.2f} dB at {o['power_dbm']:+.1f} dBm")
    return EXIT_OK


def cmd_analyze(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    path = Path(args.model) if args.model else out / (FILTERS if (out / FILTERS).exists() else INIT_FILTERS)
    model = _load_model(path, cfg, args.force)
    bandwidth = cfg.signal.symbol_rate_hz * (1 + cfg.signal.rolloff)
    files, ripples = [], []
    n_points = max(4096, 8 * max(f.size for f in model.filters))
    for k, taps in enumerate(model.filters):
        curve = freq_response(taps, n_points, model.sample_rate)
        ac = autocorrelation(taps, model.sample_rate)
        curve.to_csv(out / f"response_filter_{k:02d}.csv")
        ac.to_csv(out / f"autocorr_filter_{k:02d}.csv")
        files += [f"response_filter_{k:02d}.csv", f"autocorr_filter_{k:02d}.csv"]
        ripples.append(curve.ripple_db(bandwidth))
    cascade = cascade_response(model)
    cascade.to_csv(out / "response_cascade.csv")
    summary = {"model": path.name, "config_hash": cfg.hash(), "signal_bandwidth_hz": bandwidth,
               "filter_ripple_db": ripples, "median_filter_ripple_db": float(np.median(ripples)),
               "cascade_ripple_db": cascade.ripple_db(bandwidth),
               "cascade_group_delay_monotone": cascade.group_delay_monotone(bandwidth)}
    _write_json(out / "analysis.json", summary)
    _record(out, cfg, "analyze", files + ["response_cascade.csv", "analysis.json"])
    print(f"cascade ripple {summary['cascade_ripple_db']:.3f} dB, median filter ripple "
          f"{summary['median_filter_ripple_db']:.3f} dB")
    return EXIT_OK


def cmd_complexity(cfg: ProjectConfig, args) -> int:
    out = _out_dir(cfg)
    d = cfg.dbp
    plan = make_step_plan(cfg.fiber, cfg.sample_rate, d.steps_per_span,
                          None if d.link_mode else d.total_taps, d.equal_power, d.link_mode)
    report = complexity_report(plan, cfg.link.span_count, d.fd_steps_per_span, args.fft_size)
    report["config_hash"] = cfg.hash()
    write_complexity_csv(out / "complexity.csv", report)
    _write_json(out / "complexity.json", report)
    _record(out, cfg, "complexity", ["complexity.csv", "complexity.json"])
    print(f"FD: {report['fd_fft_per_pol']} FFTs/pol, {report['fd_mults_per_sample']:.1f} mults/sample; "
          f"TD: {report['td_mults_per_sample']:.1f} mults/sample; ratio {report['fd_over_td']:.2f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "init-filters": cmd_init_filters, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep, "analyze": cmd_analyze,
            "complexity": cmd_complexity}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="project JSON config (comments allowed)")
    common.add_argument("--seed", type=int, help="master seed; overrides every seed in the config")
    common.add_argument("--out-dir", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--force", action="store_true", help="accept artifacts with mismatched hashes")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="tddbp", description="Learned time-domain digital back-propagation",
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate the link and write waveforms")
    sub.add_parser("init-filters", parents=[common], help="least-squares initial filter bank")
    t = sub.add_parser("train", parents=[common], help="two-phase training of the filter bank")
    t.add_argument("--filters", help="initial filter bank (default: filters_init.json)")
    e = sub.add_parser("evaluate", parents=[common], help="SNR of EDC, FD-DBP and trained models")
    e.add_argument("--model", action="append", help="filter bank to evaluate (repeatable)")
    e.add_argument("--fd", action="store_true", help="include the frequency-domain oracle")
    e.add_argument("--split", choices=("test", "train"), default="test")
    s = sub.add_parser("sweep", parents=[common], help="SNR versus launch power")
    s.add_argument("--model", help="trained TD-DBP filter bank")
    s.add_argument("--model-gamma0", help="trained linear-only filter bank")
    s.add_argument("--model-single", help="trained single-filter (link-mode) bank")
    a = sub.add_parser("analyze", parents=[common], help="responses and autocorrelations")
    a.add_argument("--model", help="filter bank (default: trained, else initial)")
    c = sub.add_parser("complexity", parents=[common], help="FD versus TD multiplication counts")
    c.add_argument("--fft-size", type=int, default=4096)
    return p


def load_config(args) -> ProjectConfig:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.out_dir)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileMismatch as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except (FloatingPointError, TrainingDiverged, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
