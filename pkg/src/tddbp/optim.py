"""Rectified Adam (RAdam) on dictionaries of real or complex arrays."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _as_real(a: np.ndarray) -> np.ndarray:
    # complex entries become independent (re, im) pairs
    a = np.ascontiguousarray(a)
    return a.view(np.float64) if np.iscomplexobj(a) else a.astype(np.float64)


def _from_real(r: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(like):
        return np.ascontiguousarray(r).view(np.complex128).reshape(like.shape)
    return r.reshape(np.shape(like))


def rectification(step: int, beta2: float) -> float | None:
    """Variance rectification factor, or ``None`` while the variance is intractable."""
    rho_inf = 2 / (1 - beta2) - 1
    b2t = beta2**step
    rho = rho_inf - 2 * step * b2t / (1 - b2t)
    if rho <= 4:
        return None
    return math.sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho))


def radam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimizerState, names=None) -> dict[str, np.ndarray]:
    """Apply one RAdam update to ``names`` (default: every key of ``grads``).

    Returns a new parameter dict; arrays are never modified in place. The
    moment estimates in ``state`` are updated for the touched names only.
    """
    names = list(grads) if names is None else list(names)
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        if np.shape(grads[name]) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(grads[name])} != parameter shape "
                             f"{np.shape(params[name])} for {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    r_t = rectification(t, b2)
    out = dict(params)
    for name in names:
        g = _as_real(grads[name])
        m = state.m.get(name, np.zeros_like(g)).reshape(g.shape)
        v = state.v.get(name, np.zeros_like(g)).reshape(g.shape)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        if r_t is None:
            delta = state.lr * m_hat
        else:
            v_hat = v / (1 - b2**t)
            delta = state.lr * r_t * m_hat / (np.sqrt(v_hat) + state.eps)
        p = _as_real(np.asarray(params[name]))
        out[name] = _from_real(p - delta, params[name])
    return out


_MAGIC = b"DBPO"
_VERSION = 1


def dump_state(state: OptimizerState) -> bytes:
    """Versioned little-endian binary blob of the optimizer state."""
    parts = [_MAGIC, struct.pack("<I", _VERSION),
             struct.pack("<4dQ", state.lr, state.beta1, state.beta2, state.eps, state.step),
             struct.pack("<I", len(state.m))]
    for name in sorted(state.m):
        key = name.encode()
        m = np.ascontiguousarray(state.m[name], dtype="<f8").ravel()
        v = np.ascontiguousarray(state.v[name], dtype="<f8").ravel()
        parts += [struct.pack("<I", len(key)), key, struct.pack("<Q", m.size), m.tobytes(), v.tobytes()]
    return b"".join(parts)


def load_state(blob: bytes) -> OptimizerState:
    if blob[:4] != _MAGIC:
        raise ValueError("not an optimizer state blob")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported optimizer state version {version}")
    lr, b1, b2, eps, step = struct.unpack_from("<4dQ", blob, 8)
    off = 8 + struct.calcsize("<4dQ")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    state = OptimizerState(lr, b1, b2, eps, step)
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + klen].decode()
        off += klen
        (n,) = struct.unpack_from("<Q", blob, off)
        off += 8
        state.m[name] = np.frombuffer(blob, "<f8", n, off).copy()
        off += 8 * n
        state.v[name] = np.frombuffer(blob, "<f8", n, off).copy()
        off += 8 * n
    return state
