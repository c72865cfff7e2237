"""Frequency- and time-domain digital back-propagation.

Backward step operators, on a field in sqrt(W):

* linear: ``exp(alpha dz / 2) * exp(j K (w T)^2)`` with ``K = beta2 dz / (2 T^2)``
  (``alpha`` is the power attenuation, so the field gains half of it),
* nonlinear: ``exp(+j gamma_dbp L_eff |E|^2)`` with ``|E|^2`` summed over both
  polarizations and ``L_eff = (1 - exp(-alpha dz)) / alpha``.

After the linear step the field sits at the start of the fiber step, so
weighting its power with ``L_eff`` gives the loss-averaged power over the
step. The nonlinear sign is the exact inverse of the forward model in
:mod:`tddbp.channel`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .autodiff import Eager, conv_same
from .channel import FiberParams, angular_frequency
from .rx import MimoFilter
from .signals import DualPolWaveform


def accumulated_k(beta2_ps2_per_km: float, dz_km: float, T: float) -> float:
    """Normalized dispersion ``K = beta2 dz / (2 T^2)`` of one step (dimensionless)."""
    if not T > 0:
        raise ValueError(f"sample period must be positive, got {T}")
    return beta2_ps2_per_km * 1e-24 * dz_km / (2 * T**2)


def tap_budget(K: float) -> int:
    """Largest useful FIR length ``2 floor(2 pi |K|) + 1`` for a step of dispersion ``K``."""
    return 2 * int(math.floor(2 * math.pi * abs(K))) + 1


def effective_length(dz_km: float, alpha_power_per_km: float) -> float:
    if alpha_power_per_km == 0:
        return dz_km
    return -math.expm1(-alpha_power_per_km * dz_km) / alpha_power_per_km


def partition_equal_power(span_km: float, alpha_db_per_km: float, n_steps: int) -> np.ndarray:
    """Step lengths (km) such that every step loses the same signal power.

    Boundaries are ``z_k = -ln(1 - k (1 - exp(-a L)) / N) / a``; with no loss the
    steps are equidistant.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    a = alpha_db_per_km * math.log(10) / 10
    if a == 0:
        return np.full(n_steps, span_km / n_steps)
    k = np.arange(n_steps + 1)
    z = -np.log1p(-k * (-math.expm1(-a * span_km)) / n_steps) / a
    z[-1] = span_km
    return np.diff(z)


def allocate_taps(ks, total: int) -> list[int]:
    """Split ``total`` taps over steps proportionally to ``|K|``, every share odd."""
    ks = np.abs(np.asarray(ks, dtype=float))
    n = ks.size
    if total < n:
        raise ValueError(f"tap budget {total} cannot give each of {n} steps a tap")
    if (total - n) % 2:
        raise ValueError(f"{n} odd tap counts cannot sum to {total}")
    raw = total * ks / ks.sum() if ks.sum() > 0 else np.full(n, total / n)
    taps = np.maximum(1, 2 * np.round((raw - 1) / 2) + 1).astype(int)
    while taps.sum() < total:
        taps[np.argmax(raw - taps)] += 2
    while taps.sum() > total:
        room = np.where(taps >= 3, raw - taps, np.inf)
        taps[np.argmin(room)] -= 2
    return taps.tolist()


def filter_response(taps, theta) -> np.ndarray:
    """``H(theta) = sum_k taps[k] exp(-j theta (k - c))`` at normalized frequencies ``theta``."""
    taps = np.asarray(taps)
    c = (taps.size - 1) / 2
    k = np.arange(taps.size) - c
    return np.exp(-1j * np.outer(theta, k)) @ taps


def quadrature_grid(n_points: int) -> np.ndarray:
    """Midpoint grid over ``[-pi, pi)``."""
    return -np.pi + (np.arange(n_points) + 0.5) * 2 * np.pi / n_points


def ls_fit(response: Callable[[np.ndarray], np.ndarray], n_taps: int,
           grid_points: int = 8192) -> np.ndarray:
    """Full-band least-squares FIR approximation of ``response(theta)``.

    On a uniform grid the delayed exponentials are orthogonal, so the LS
    solution is the projection onto each of them.
    """
    if n_taps % 2 == 0 or n_taps < 1:
        raise ValueError(f"n_taps must be odd and positive, got {n_taps}")
    grid_points = max(grid_points, 64 * n_taps)
    theta = quadrature_grid(grid_points)
    d = response(theta)
    k = np.arange(n_taps) - (n_taps - 1) // 2
    return np.exp(1j * np.outer(k, theta)) @ d / grid_points


def ls_filter(K: float, n_taps: int, grid_points: int = 8192) -> np.ndarray:
    """LS FIR approximation of the back-propagation all-pass ``exp(j K theta^2)``."""
    return ls_fit(lambda th: np.exp(1j * K * th**2), n_taps, grid_points)


def ls_error(taps, response: Callable, grid_points: int = 8192) -> float:
    """Mean squared deviation of the FIR response from ``response`` over the full band."""
    theta = quadrature_grid(grid_points)
    return float(np.mean(np.abs(filter_response(taps, theta) - response(theta)) ** 2))


@dataclass(frozen=True)
class StepPlan:
    step_lengths_km: tuple[float, ...]
    per_step_taps: tuple[int, ...]
    sample_period_s: float
    shared_across_spans: bool = True

    def __post_init__(self):
        object.__setattr__(self, "step_lengths_km", tuple(float(x) for x in self.step_lengths_km))
        object.__setattr__(self, "per_step_taps", tuple(int(x) for x in self.per_step_taps))
        if len(self.step_lengths_km) != len(self.per_step_taps):
            raise ValueError("step lengths and tap counts differ in length")
        if any(t < 1 or t % 2 == 0 for t in self.per_step_taps):
            raise ValueError(f"tap counts must be odd and >= 1, got {self.per_step_taps}")
        if not self.sample_period_s > 0:
            raise ValueError("sample period must be positive")

    @property
    def n_steps(self) -> int:
        return len(self.step_lengths_km)

    @property
    def total_taps(self) -> int:
        return sum(self.per_step_taps)

    @property
    def length_km(self) -> float:
        return sum(self.step_lengths_km)


def make_step_plan(fiber: FiberParams, sample_rate: float, steps_per_span: int = 10,
                   total_taps: int | None = 270, equal_power: bool = True,
                   link_mode: bool = False) -> StepPlan:
    """Step lengths and per-step tap counts for one span (or the whole link).

    In link mode a single step covers the full link dispersion and its length
    defaults to the tap budget of that step.
    """
    T = 1 / sample_rate
    if link_mode:
        length = fiber.link_length_km
        K = accumulated_k(fiber.beta2_ps2_per_km, length, T)
        return StepPlan((length,), (total_taps or tap_budget(K),), T, shared_across_spans=False)
    if equal_power:
        lengths = partition_equal_power(fiber.span_length_km, fiber.alpha_db_per_km, steps_per_span)
    else:
        lengths = np.full(steps_per_span, fiber.span_length_km / steps_per_span)
    ks = [accumulated_k(fiber.beta2_ps2_per_km, dz, T) for dz in lengths]
    if total_taps is None:
        taps = [tap_budget(k) for k in ks]
    else:
        taps = allocate_taps(ks, total_taps)
    return StepPlan(tuple(lengths), tuple(taps), T, True)


def _filter_name(k: int) -> str:
    return f"filter_{k:02d}"


MIMO_NAMES = ("xx", "xy", "yx", "yy")


@dataclass(eq=False)
class TdDbpModel:
    """Trainable time-domain back-propagation receiver core.

    ``filters[k]`` implements the dispersion of plan step ``k``; the same tap
    vector serves both polarizations and every span. In residual mode step
    ``k`` owns two branch filters, ``filters[2k]`` (``1 - H^1/2``) and
    ``filters[2k + 1]`` (``1 + H^1/2``).
    """

    filters: list[np.ndarray]
    gamma_dbp: float
    plan: StepPlan
    fiber: FiberParams
    mimo_pre: MimoFilter = field(default_factory=MimoFilter.identity)
    mimo_post: MimoFilter = field(default_factory=MimoFilter.identity)
    launch_power_dbm: float = 5.0
    output_scale: float = 1.0
    residual: bool = False

    def __post_init__(self):
        self.filters = [np.asarray(f, dtype=np.complex128) for f in self.filters]
        per_step = 2 if self.residual else 1
        if len(self.filters) != per_step * self.plan.n_steps:
            raise ValueError(f"{len(self.filters)} filters for a {self.plan.n_steps}-step plan")
        sizes = [n for n in self.plan.per_step_taps for _ in range(per_step)]
        for k, (f, n) in enumerate(zip(self.filters, sizes)):
            if f.size != n:
                raise ValueError(f"filter {k} has {f.size} taps, plan says {n}")
            if not np.all(np.isfinite(f)):
                raise ValueError(f"filter {k} has non-finite taps")

    @property
    def span_repeats(self) -> int:
        return self.fiber.span_count if self.plan.shared_across_spans else 1

    @property
    def linear_only(self) -> bool:
        return self.gamma_dbp == 0

    @property
    def total_taps(self) -> int:
        return self.plan.total_taps

    @property
    def sample_rate(self) -> float:
        return 1 / self.plan.sample_period_s

    def memory_samples(self) -> int:
        """One-sided impulse-response memory of the full receiver cascade."""
        per_step = 2 if self.residual else 1
        dbp = self.span_repeats * per_step * sum((n - 1) // 2 for n in self.plan.per_step_taps)
        return dbp + (self.mimo_pre.n_taps - 1) // 2 + (self.mimo_post.n_taps - 1) // 2

    def parameters(self, include_gamma: bool = False) -> dict[str, np.ndarray]:
        p = {_filter_name(k): f for k, f in enumerate(self.filters)}
        for prefix, m in (("mimo_pre", self.mimo_pre), ("mimo_post", self.mimo_post)):
            for name, taps in zip(MIMO_NAMES, m.as_tuple()):
                p[f"{prefix}_{name}"] = taps
        if include_gamma:
            p["gamma_dbp"] = np.asarray(float(self.gamma_dbp))
        return p

    def with_parameters(self, params: dict[str, np.ndarray]) -> "TdDbpModel":
        filters = [params.get(_filter_name(k), f) for k, f in enumerate(self.filters)]
        mimos = {}
        for prefix in ("mimo_pre", "mimo_post"):
            old = getattr(self, prefix)
            mimos[prefix] = MimoFilter(*[params.get(f"{prefix}_{n}", t)
                                         for n, t in zip(MIMO_NAMES, old.as_tuple())])
        gamma = float(params["gamma_dbp"]) if "gamma_dbp" in params else self.gamma_dbp
        return replace(self, filters=filters, gamma_dbp=gamma, **mimos)

    def copy(self, **changes) -> "TdDbpModel":
        return replace(self, **changes)


def init_model(fiber: FiberParams, sample_rate: float, steps_per_span: int = 10,
               total_taps: int | None = 270, gamma_dbp: float = 0.8,
               launch_power_dbm: float = 5.0, mimo_taps: int = 65, equal_power: bool = True,
               link_mode: bool = False, residual: bool = False) -> TdDbpModel:
    """Model with least-squares dispersion filters and identity MIMO sections.

    With ``residual`` each step becomes a residual block whose branch filters
    approximate ``1 -/+ exp(j K theta^2 / 2)``.
    """
    plan = make_step_plan(fiber, sample_rate, steps_per_span, total_taps, equal_power, link_mode)
    T = plan.sample_period_s
    filters = []
    for dz, n in zip(plan.step_lengths_km, plan.per_step_taps):
        K = accumulated_k(fiber.beta2_ps2_per_km, dz, T)
        # backward direction: H^-1 = exp(+j K theta^2) = half-steps of exp(-j (-K) theta^2)
        filters.extend(half_step_taps(-K, n) if residual else [ls_filter(K, n)])
    return TdDbpModel(filters, gamma_dbp, plan, fiber, MimoFilter.identity(mimo_taps),
                      MimoFilter.identity(mimo_taps), launch_power_dbm, residual=residual)


def td_chain(g, h, model: TdDbpModel, train_gamma: bool = False):
    """Append the back-propagation cascade of ``model`` to builder ``g``.

    Spans run last to first; each starts by undoing the amplifier gain, and
    within a span the steps run from the fiber end back to its start.
    """
    fiber = model.fiber
    plan = model.plan
    shared = plan.shared_across_spans
    alpha = fiber.alpha_power_per_km if shared else 0.0
    nonlinear = train_gamma or model.gamma_dbp != 0
    gamma_kw = {"params": ("gamma_dbp",)} if train_gamma else {"gamma": model.gamma_dbp}
    for _ in range(model.span_repeats):
        if alpha:
            h = g.apply("scale", [h], factor=10 ** (-fiber.span_loss_db / 20))
        for k in reversed(range(plan.n_steps)):
            dz = plan.step_lengths_km[k]
            coeff = effective_length(dz, alpha)
            if model.residual:
                b = g.apply("conv", [h], (_filter_name(2 * k),))
                if nonlinear:
                    b = g.apply("nl_phase", [b], coeff=coeff, **gamma_kw)
                b = g.apply("conv", [b], (_filter_name(2 * k + 1),))
                h = g.apply("sub", [h, b])
                if alpha:
                    h = g.apply("scale", [h], factor=math.exp(alpha * dz / 2))
                continue
            h = g.apply("conv", [h], (_filter_name(k),))
            if alpha:
                h = g.apply("scale", [h], factor=math.exp(alpha * dz / 2))
            if nonlinear:
                h = g.apply("nl_phase", [h], coeff=coeff, **gamma_kw)
    return h


def td_dbp(wave: DualPolWaveform, model: TdDbpModel) -> DualPolWaveform:
    """Apply the FIR cascade of ``model`` (no MIMO sections) to a field in sqrt(W)."""
    if abs(wave.sample_rate * model.plan.sample_period_s - 1) > 1e-9:
        raise ValueError(f"waveform rate {wave.sample_rate} does not match model rate {model.sample_rate}")
    g = Eager(model.parameters())
    out = td_chain(g, g.input(wave.stack()), model)
    return DualPolWaveform.from_array(out, wave.sample_rate)


def fd_dbp(wave: DualPolWaveform, fiber: FiberParams, steps_per_span: int = 50,
           gamma_dbp: float = 0.8, step_profile: str = "equidistant", return_stats: bool = False):
    """Frequency-domain back-propagation of a received field in sqrt(W).

    ``step_profile`` chooses equidistant or equal-power-loss steps. With
    ``return_stats`` a dict with the FFT count per polarization is returned too.
    """
    if steps_per_span < 1:
        raise ValueError(f"steps_per_span must be >= 1, got {steps_per_span}")
    if not wave.sample_rate > 0:  # pragma: no cover - the waveform type enforces it
        raise ValueError("zero sample rate")
    if step_profile == "equidistant":
        lengths = np.full(steps_per_span, fiber.span_length_km / steps_per_span)
    elif step_profile == "equal_power":
        lengths = partition_equal_power(fiber.span_length_km, fiber.alpha_db_per_km, steps_per_span)
    else:
        raise ValueError(f"unknown step profile {step_profile!r}")
    e = wave.stack()
    w = angular_frequency(e.shape[1], wave.sample_rate)
    beta2 = fiber.beta2_ps2_per_km * 1e-24
    alpha = fiber.alpha_power_per_km
    ops = [np.exp(alpha * dz / 2 + 1j * (beta2 / 2) * w**2 * dz) for dz in lengths]
    leff = [effective_length(dz, alpha) for dz in lengths]
    n_fft = 0
    for _ in range(fiber.span_count):
        e = e * 10 ** (-fiber.span_loss_db / 20)
        for k in reversed(range(steps_per_span)):
            e = np.fft.ifft(np.fft.fft(e, axis=1) * ops[k], axis=1)
            n_fft += 2
            if gamma_dbp != 0:
                power = np.abs(e[0]) ** 2 + np.abs(e[1]) ** 2
                e = e * np.exp(1j * gamma_dbp * leff[k] * power)
    out = DualPolWaveform.from_array(e, wave.sample_rate)
    return (out, {"fft_per_pol": n_fft}) if return_stats else out


def edc(wave: DualPolWaveform, fiber: FiberParams) -> DualPolWaveform:
    """Linear chromatic dispersion compensation of the whole link in one step."""
    w = angular_frequency(len(wave), wave.sample_rate)
    h = np.exp(1j * (fiber.beta2_ps2_per_km * 1e-24 / 2) * w**2 * fiber.link_length_km)
    return DualPolWaveform.from_array(np.fft.ifft(np.fft.fft(wave.stack(), axis=1) * h, axis=1),
                                      wave.sample_rate)


# ---------------------------------------------------------------------------
# residual block: x -> x - (1 + H^1/2) NL (1 - H^1/2) x, with H = exp(-j K (wT)^2)


def _fd_operator(response: Callable[[np.ndarray], np.ndarray]):
    def apply(x: np.ndarray) -> np.ndarray:
        theta = 2 * np.pi * np.fft.fftfreq(x.shape[-1])
        return np.fft.ifft(np.fft.fft(x, axis=-1) * response(theta), axis=-1)
    return apply


def dispersion_operator(K: float):
    """Exact frequency-domain operator ``x -> x exp(-j K (wT)^2)``."""
    return _fd_operator(lambda th: np.exp(-1j * K * th**2))


def half_step_operators(K: float):
    """Exact ``(1 - H^1/2, 1 + H^1/2)`` operators for ``H = exp(-j K (wT)^2)``."""
    minus = _fd_operator(lambda th: 1 - np.exp(-0.5j * K * th**2))
    plus = _fd_operator(lambda th: 1 + np.exp(-0.5j * K * th**2))
    return minus, plus


def half_step_taps(K: float, n_taps: int, grid_points: int = 8192):
    """LS FIR approximations of ``(1 - H^1/2, 1 + H^1/2)``."""
    minus = ls_fit(lambda th: 1 - np.exp(-0.5j * K * th**2), n_taps, grid_points)
    plus = ls_fit(lambda th: 1 + np.exp(-0.5j * K * th**2), n_taps, grid_points)
    return minus, plus


def residual_block(wave, half_step_minus, half_step_plus, gamma_dbp: float = 0.0, dz: float = 1.0):
    """Residual dispersion block with a nonlinear phase at its midpoint.

    The branch operators are tap vectors (zero-padded convolution) or callables
    on ``(2, n)`` arrays. The branch phase is ``exp(-j gamma dz |E|^2)``.
    """
    x = wave.stack() if isinstance(wave, DualPolWaveform) else np.asarray(wave, dtype=np.complex128)
    if not callable(half_step_minus) and not callable(half_step_plus):
        if np.size(half_step_minus) != np.size(half_step_plus):
            raise ValueError("residual branch filters must have equal lengths")

    def run(op, v):
        return op(v) if callable(op) else conv_same(v, np.asarray(op, dtype=np.complex128))

    b = run(half_step_minus, x)
    if gamma_dbp != 0:
        b = b * np.exp(-1j * gamma_dbp * dz * np.sum(np.abs(b) ** 2, axis=0))
    out = x - run(half_step_plus, b)
    if isinstance(wave, DualPolWaveform):
        return DualPolWaveform.from_array(out, wave.sample_rate)
    return out
