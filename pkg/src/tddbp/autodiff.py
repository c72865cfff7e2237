"""Reverse-mode differentiation for the receiver graph.

Gradients of the real loss with respect to a complex array ``z`` use the
convention ``dL/dRe(z) + 1j * dL/dIm(z)``; each complex tap is therefore two
independent real parameters. Real parameters get the ordinary derivative.

Graphs are built by code that only calls ``builder.input`` and
``builder.apply``. :class:`Eager` evaluates immediately and keeps nothing,
:class:`Tape` records every node so :func:`backward` can run the adjoints.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.signal import correlate

# ---------------------------------------------------------------------------
# convolution primitives (odd-length taps, centered, zero-padded, same length)


def conv_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """``y[n] = sum_k taps[k] x[n + c - k]`` along the last axis, ``c = (len(taps)-1)//2``."""
    if taps.size % 2 == 0:
        raise ValueError(f"filter length must be odd, got {taps.size}")
    if x.shape[-1] < taps.size:
        raise ValueError(f"signal length {x.shape[-1]} shorter than filter length {taps.size}")
    if x.ndim == 1:
        return np.convolve(x, taps, mode="same")
    return np.stack([np.convolve(row, taps, mode="same") for row in x])


def _conv_input_adjoint(g: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return conv_same(g, np.conj(taps[::-1]))


def _conv_taps_adjoint(g: np.ndarray, x: np.ndarray, n_taps: int) -> np.ndarray:
    c = (n_taps - 1) // 2
    g2 = np.atleast_2d(g)
    x2 = np.atleast_2d(x)
    out = np.zeros(n_taps, dtype=np.complex128)
    for gr, xr in zip(g2, x2):
        xp = np.pad(xr, c)
        # z[m] = sum_n xp[n + m] conj(g[n]),  taps gradient k <-> m = 2c - k
        z = correlate(xp, gr, mode="valid")
        out += np.conj(z[::-1])
    return out


# ---------------------------------------------------------------------------
# op kinds: forward(inputs, params, attrs) -> (out, cache)
#           backward(g, inputs, params, attrs, cache) -> (input grads, param grads)


@dataclass(frozen=True)
class OpKind:
    forward: Callable
    backward: Callable | None


def _conv_fwd(inputs, params, attrs):
    taps = params[0] if params else attrs["taps"]
    return conv_same(inputs[0], taps), None


def _conv_bwd(g, inputs, params, attrs, cache):
    taps = params[0] if params else attrs["taps"]
    gx = _conv_input_adjoint(g, taps)
    gp = [_conv_taps_adjoint(g, inputs[0], taps.size)] if params else []
    return [gx], gp


def _mimo_fwd(inputs, params, attrs):
    x = inputs[0]
    xx, xy, yx, yy = params
    out = np.stack([
        conv_same(x[0], xx) + conv_same(x[1], xy),
        conv_same(x[0], yx) + conv_same(x[1], yy),
    ])
    return out, None


def _mimo_bwd(g, inputs, params, attrs, cache):
    x = inputs[0]
    xx, xy, yx, yy = params
    gx = np.stack([
        _conv_input_adjoint(g[0], xx) + _conv_input_adjoint(g[1], yx),
        _conv_input_adjoint(g[0], xy) + _conv_input_adjoint(g[1], yy),
    ])
    n = xx.size
    gp = [
        _conv_taps_adjoint(g[0], x[0], n),
        _conv_taps_adjoint(g[0], x[1], n),
        _conv_taps_adjoint(g[1], x[0], n),
        _conv_taps_adjoint(g[1], x[1], n),
    ]
    return [gx], gp


def _scale_fwd(inputs, params, attrs):
    return inputs[0] * attrs["factor"], None


def _scale_bwd(g, inputs, params, attrs, cache):
    return [g * np.conj(attrs["factor"])], []


def _phase_rate(params, attrs):
    gamma = params[0] if params else attrs["gamma"]
    return attrs["coeff"] * gamma


def _nl_fwd(inputs, params, attrs):
    # y = x exp(j a P), P = total instantaneous power over rows
    x = inputs[0]
    power = np.sum(np.abs(x) ** 2, axis=0)
    theta = _phase_rate(params, attrs) * power
    rot = np.exp(1j * theta)
    return x * rot, (rot, power)


def _nl_bwd(g, inputs, params, attrs, cache):
    x = inputs[0]
    rot, power = cache
    y = x * rot
    a = _phase_rate(params, attrs)
    s = -np.sum(np.imag(np.conj(g) * y), axis=0)
    gx = g * np.conj(rot) + 2 * a * s * x
    gp = [np.asarray(np.sum(s * attrs["coeff"] * power))] if params else []
    return [gx], gp


def _decimate_fwd(inputs, params, attrs):
    return inputs[0][..., attrs["start"]::attrs["step"]].copy(), inputs[0].shape


def _decimate_bwd(g, inputs, params, attrs, cache):
    gx = np.zeros(cache, dtype=np.complex128)
    gx[..., attrs["start"]::attrs["step"]] = g
    return [gx], []


def _sub_fwd(inputs, params, attrs):
    return inputs[0] - inputs[1], None


def _sub_bwd(g, inputs, params, attrs, cache):
    return [g, -g], []


def _cpe_fwd(inputs, params, attrs):
    r = inputs[0]
    pidx = attrs["pilot_idx"]
    pilots = attrs["pilots"]
    z = r[:, pidx] * np.conj(pilots)
    if attrs["joint"]:
        z = np.sum(z, axis=0, keepdims=True)
    phi = np.unwrap(np.angle(z), axis=-1)
    w, widx = attrs["weights"], attrs["widx"]
    phi_hat = np.sum(w * phi[:, widx], axis=-1)
    rot = np.exp(-1j * phi_hat)
    return r * rot, (z, rot)


def _cpe_bwd(g, inputs, params, attrs, cache):
    r = inputs[0]
    z, rot = cache
    y = r * rot
    gr = g * np.conj(rot)
    g_phat = np.imag(np.conj(g) * y)
    if attrs["joint"]:
        g_phat = np.sum(g_phat, axis=0, keepdims=True)
    w, widx = attrs["weights"], attrs["widx"]
    g_phi = np.zeros(z.shape)
    for row in range(z.shape[0]):
        np.add.at(g_phi[row], widx, w * g_phat[row][:, None])
    gz = g_phi * 1j / np.conj(z)
    pidx = attrs["pilot_idx"]
    gr[:, pidx] += gz * attrs["pilots"]
    return [gr], []


def _mse_fwd(inputs, params, attrs):
    err = inputs[0] - attrs["target"]
    mask = np.broadcast_to(attrs["mask"], err.shape)
    count = np.count_nonzero(mask)
    return np.asarray(np.sum(np.abs(err[mask]) ** 2) / count), (err, mask, count)


def _mse_bwd(g, inputs, params, attrs, cache):
    err, mask, count = cache
    return [np.where(mask, 2 * err / count, 0) * g], []


OPS: dict[str, OpKind] = {
    "conv": OpKind(_conv_fwd, _conv_bwd),
    "mimo": OpKind(_mimo_fwd, _mimo_bwd),
    "scale": OpKind(_scale_fwd, _scale_bwd),
    "nl_phase": OpKind(_nl_fwd, _nl_bwd),
    "decimate": OpKind(_decimate_fwd, _decimate_bwd),
    "sub": OpKind(_sub_fwd, _sub_bwd),
    "cpe": OpKind(_cpe_fwd, _cpe_bwd),
    "mse": OpKind(_mse_fwd, _mse_bwd),
}


# ---------------------------------------------------------------------------
# builders


class Eager:
    """Evaluate ops immediately; handles are the values themselves."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    def input(self, value):
        return np.asarray(value)

    def apply(self, kind: str, inputs, params=(), **attrs):
        out, _ = OPS[kind].forward(list(inputs), [self.params[p] for p in params], attrs)
        return out

    def value(self, handle):
        return handle


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    params: tuple[str, ...]
    attrs: dict[str, Any]
    cache: Any = None


@dataclass
class Tape:
    """Recorded computation trace.

    Handles are node indices. ``params`` is snapshotted at construction so the
    caller may replace arrays afterwards without disturbing the record.
    """

    params: dict[str, np.ndarray]
    nodes: list[Node] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.params = dict(self.params)

    def input(self, value) -> int:
        self.nodes.append(Node("input", (), (), {"value": np.asarray(value)}))
        self.values.append(np.asarray(value))
        return len(self.nodes) - 1

    def apply(self, kind: str, inputs, params=(), **attrs) -> int:
        inputs = tuple(inputs)
        params = tuple(params)
        for p in params:
            if p not in self.params:
                raise KeyError(f"unknown parameter {p!r}")
        out, cache = OPS[kind].forward([self.values[i] for i in inputs],
                                       [self.params[p] for p in params], attrs)
        idx = len(self.nodes)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite output at node {idx} ({kind})")
        self.nodes.append(Node(kind, inputs, params, attrs, cache))
        self.values.append(out)
        return idx

    def value(self, handle: int):
        return self.values[handle]

    @property
    def output(self):
        return self.values[-1]

    def replay(self, params: dict[str, np.ndarray] | None = None):
        """Re-run the recorded graph, optionally with different parameter values."""
        params = self.params if params is None else params
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "input":
                vals.append(node.attrs["value"])
                continue
            out, _ = OPS[node.kind].forward([vals[i] for i in node.inputs],
                                            [params[p] for p in node.params], node.attrs)
            vals.append(out)
        return vals[-1]


def backward(tape: Tape, output: int | None = None, return_inputs: bool = False):
    """Adjoint sweep from a scalar real node (default: the last one).

    Returns the parameter gradients, plus a dict ``{input handle: gradient}``
    when ``return_inputs`` is set.
    """
    out = len(tape.nodes) - 1 if output is None else output
    if np.ndim(tape.values[out]) != 0 or np.iscomplexobj(tape.values[out]):
        raise ValueError("backward needs a real scalar output node")
    adj: list[Any] = [None] * len(tape.nodes)
    adj[out] = np.asarray(1.0)
    grads = {name: np.zeros_like(np.asarray(p)) for name, p in tape.params.items()}
    for i in range(out, -1, -1):
        node = tape.nodes[i]
        if adj[i] is None or node.kind == "input":
            continue
        op = OPS.get(node.kind)
        if op is None or op.backward is None:
            raise NotImplementedError(f"no adjoint for node kind {node.kind!r}")
        g_in, g_par = op.backward(adj[i], [tape.values[j] for j in node.inputs],
                                  [tape.params[p] for p in node.params], node.attrs, node.cache)
        for j, gj in zip(node.inputs, g_in):
            adj[j] = gj if adj[j] is None else adj[j] + gj
        for name, gp in zip(node.params, g_par):
            if np.iscomplexobj(grads[name]):
                grads[name] = grads[name] + gp
            else:
                grads[name] = grads[name] + np.real(gp)
    if return_inputs:
        inputs = {i: (np.zeros_like(tape.values[i], dtype=np.complex128) if adj[i] is None else adj[i])
                  for i, node in enumerate(tape.nodes) if node.kind == "input"}
        return grads, inputs
    return grads
