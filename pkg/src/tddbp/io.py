"""Waveform and filter-bank files.

DBPW waveform layout (little-endian)::

    b"DBPW" | u32 version | f64 sample_rate | u32 n_pol | u64 n_samples
    | n_pol * n_samples * (f64 re, f64 im), polarization-major
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .channel import FiberParams
from .dbp import StepPlan, TdDbpModel
from .rx import MimoFilter
from .signals import DualPolWaveform

WAVEFORM_MAGIC = b"DBPW"
WAVEFORM_VERSION = 1
_HEADER = struct.Struct("<4sIdIQ")

FILTER_BANK_FORMAT = "tddbp-filter-bank"
FILTER_BANK_VERSION = 1


def waveform_bytes(wave: DualPolWaveform) -> bytes:
    data = np.ascontiguousarray(wave.stack(), dtype="<c16")
    return _HEADER.pack(WAVEFORM_MAGIC, WAVEFORM_VERSION, wave.sample_rate, 2, len(wave)) + data.tobytes()


def write_waveform(path, wave: DualPolWaveform) -> None:
    Path(path).write_bytes(waveform_bytes(wave))


def read_waveform(path) -> DualPolWaveform:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated waveform header")
    magic, version, rate, n_pol, n = _HEADER.unpack_from(blob)
    if magic != WAVEFORM_MAGIC:
        raise ValueError(f"{path}: not a DBPW file")
    if version != WAVEFORM_VERSION:
        raise ValueError(f"{path}: unsupported DBPW version {version}")
    if n_pol != 2:
        raise ValueError(f"{path}: expected 2 polarizations, found {n_pol}")
    expected = _HEADER.size + 16 * n_pol * n
    if len(blob) != expected:
        raise ValueError(f"{path}: size {len(blob)} does not match header ({expected})")
    data = np.frombuffer(blob, dtype="<c16", offset=_HEADER.size).reshape(n_pol, n)
    return DualPolWaveform.from_array(data.astype(np.complex128), rate)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _pairs(taps) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(taps, dtype=np.complex128)]


def _unpairs(pairs) -> np.ndarray:
    a = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return a[:, 0] + 1j * a[:, 1]


def filter_bank_dict(model: TdDbpModel, provenance: dict | None = None) -> dict:
    plan = model.plan
    return {
        "format": FILTER_BANK_FORMAT,
        "version": FILTER_BANK_VERSION,
        "sample_rate": model.sample_rate,
        "plan": {
            "step_lengths_km": list(plan.step_lengths_km),
            "per_step_taps": list(plan.per_step_taps),
            "sample_period_s": plan.sample_period_s,
            "shared_across_spans": plan.shared_across_spans,
            "tap_allocation": "odd counts proportional to |K| per step" if plan.shared_across_spans
            else "tap budget of the full-link dispersion",
            "total_taps": plan.total_taps,
        },
        "gamma_dbp": model.gamma_dbp,
        "linear_only": model.linear_only,
        "residual": model.residual,
        "launch_power_dbm": model.launch_power_dbm,
        "output_scale": model.output_scale,
        "fiber": {
            "alpha_db_per_km": model.fiber.alpha_db_per_km,
            "beta2_ps2_per_km": model.fiber.beta2_ps2_per_km,
            "gamma_per_w_km": model.fiber.gamma_per_w_km,
            "span_length_km": model.fiber.span_length_km,
            "span_count": model.fiber.span_count,
        },
        "filters": [_pairs(f) for f in model.filters],
        "mimo_pre": {n: _pairs(t) for n, t in zip(("xx", "xy", "yx", "yy"), model.mimo_pre.as_tuple())},
        "mimo_post": {n: _pairs(t) for n, t in zip(("xx", "xy", "yx", "yy"), model.mimo_post.as_tuple())},
        "provenance": dict(provenance or {}),
    }


def model_from_dict(d: dict) -> TdDbpModel:
    if d.get("format") != FILTER_BANK_FORMAT:
        raise ValueError("not a filter-bank document")
    if d.get("version") != FILTER_BANK_VERSION:
        raise ValueError(f"unsupported filter-bank version {d.get('version')}")
    p = d["plan"]
    plan = StepPlan(p["step_lengths_km"], p["per_step_taps"], p["sample_period_s"], p["shared_across_spans"])
    mimo = {k: MimoFilter(*[_unpairs(d[k][n]) for n in ("xx", "xy", "yx", "yy")])
            for k in ("mimo_pre", "mimo_post")}
    return TdDbpModel([_unpairs(f) for f in d["filters"]], d["gamma_dbp"], plan, FiberParams(**d["fiber"]),
                      mimo["mimo_pre"], mimo["mimo_post"], d["launch_power_dbm"], d["output_scale"],
                      d.get("residual", False))


def save_filter_bank(path, model: TdDbpModel, provenance: dict | None = None) -> None:
    Path(path).write_text(json.dumps(filter_bank_dict(model, provenance), indent=1) + "\n")


def load_filter_bank(path) -> tuple[TdDbpModel, dict]:
    d = json.loads(Path(path).read_text())
    return model_from_dict(d), d.get("provenance", {})
