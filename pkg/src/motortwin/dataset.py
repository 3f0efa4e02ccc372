"""Waveform generation, trace logging, augmentation and windowing.

Traces are paired (pwm, rpm) sequences logged from the plant. The waveform
families are sinusoids, steps, impulses and trapezoids at varying slopes and
peaks; sign-flip augmentation doubles a corpus by adding (-pwm, -rpm) for
every trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from .plant import PlantParams, simulate

ProfileKind = Literal["sinusoid", "step", "impulse", "trapezoid"]
Direction = Literal["pwm_to_rpm", "rpm_to_pwm"]

PWM_TO_RPM: Direction = "pwm_to_rpm"
RPM_TO_PWM: Direction = "rpm_to_pwm"


@dataclass(frozen=True)
class Trace:
    """Time-aligned PWM command and RPM reading sequences."""

    dt: float
    pwm: np.ndarray
    rpm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pwm", np.asarray(self.pwm, dtype=float))
        object.__setattr__(self, "rpm", np.asarray(self.rpm, dtype=float))
        if len(self.pwm) != len(self.rpm):
            raise ValueError("pwm and rpm must have equal length")
        if len(self.pwm) and not (np.all(np.isfinite(self.pwm)) and np.all(np.isfinite(self.rpm))):
            raise ValueError("trace contains non-finite values")

    def __len__(self) -> int:
        return len(self.pwm)


@dataclass(frozen=True)
class ProfileSpec:
    """One input waveform: kind, scale and timing, with its own seed."""

    kind: ProfileKind
    amplitude: float
    period_or_width: float      # seconds: sinusoid period, impulse width, trapezoid plateau
    length: int                 # samples
    seed: int
    slope: float = 1.0          # PWM units per second (trapezoid ramps)
    dt: float = 0.01

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")
        if abs(self.amplitude) > 1.0:
            raise ValueError("amplitude must lie in [-1, 1]")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")


def gen_profile(spec: ProfileSpec) -> np.ndarray:
    """Render a ProfileSpec to a PWM sequence. Deterministic for a given spec."""
    rng = np.random.default_rng(spec.seed)
    n, a, dt = spec.length, spec.amplitude, spec.dt
    out = np.zeros(n, dtype=float)

    if spec.kind == "sinusoid":
        if spec.period_or_width <= 0.0:
            raise ValueError("sinusoid period must be positive")
        phase = rng.uniform(0.0, 2.0 * math.pi)
        t = np.arange(n) * dt
        out = a * np.sin(2.0 * math.pi * t / spec.period_or_width + phase)
    elif spec.kind == "step":
        onset = int(rng.integers(max(1, n // 10), max(2, n // 3)))
        out[min(onset, n - 1):] = a
    elif spec.kind == "impulse":
        width = max(1, int(round(spec.period_or_width / dt)))
        lo = max(1, n // 10)
        hi = max(lo + 1, n - width - n // 10)
        start = int(rng.integers(lo, hi))
        out[start:start + width] = a
    elif spec.kind == "trapezoid":
        if spec.slope <= 0.0:
            raise ValueError("trapezoid slope must be positive")
        onset = int(rng.integers(0, max(1, n // 10)))
        plateau = max(1, int(round(spec.period_or_width / dt)))
        rise = spec.slope * dt
        sign = 1.0 if a >= 0 else -1.0
        mag = abs(a)
        k = 0  # samples since ramp start; level(k) = min(mag, k*rise)
        level = 0.0
        held = 0
        i = onset
        while i < n and level < mag:
            k += 1
            level = min(mag, k * rise)
            out[i] = sign * level
            i += 1
        while i < n and held < plateau:
            out[i] = sign * mag
            held += 1
            i += 1
        while i < n and level > 0.0:
            level = max(0.0, level - rise)
            out[i] = sign * level
            i += 1
    else:
        raise ValueError(f"unknown profile kind: {spec.kind!r}")
    return out


def augment_signflip(traces: Sequence[Trace]) -> List[Trace]:
    """Double a corpus by appending the sign-flipped copy of every trace."""
    flipped = [Trace(dt=t.dt, pwm=-t.pwm, rpm=-t.rpm) for t in traces]
    return list(traces) + flipped


@dataclass(frozen=True)
class WindowConfig:
    x: int
    direction: Direction = PWM_TO_RPM

    def __post_init__(self):
        if self.x < 1:
            raise ValueError("window length x must be >= 1")
        if self.direction not in (PWM_TO_RPM, RPM_TO_PWM):
            raise ValueError(f"unknown direction: {self.direction!r}")


@dataclass(frozen=True)
class NormStats:
    """Affine per-channel normalization: v_norm = (v - offset) / scale."""

    input_offset: float = 0.0
    input_scale: float = 1.0
    target_offset: float = 0.0
    target_scale: float = 1.0


@dataclass(frozen=True)
class SampleSet:
    """Supervised windows: inputs (N, x) from one channel, scalar targets from the other."""

    inputs: np.ndarray
    targets: np.ndarray
    x: int
    direction: Direction
    norm_stats: Optional[NormStats] = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.x:
            raise ValueError("every input window must have exactly x entries")

    def __len__(self) -> int:
        return len(self.targets)


def windowize(trace: Trace, cfg: WindowConfig) -> SampleSet:
    """Cut a trace into stride-1 windows of x samples predicting the next
    sample of the opposite channel."""
    x = cfg.x
    if len(trace) <= x:
        raise ValueError(f"trace of length {len(trace)} is too short for window x={x}")
    if cfg.direction == PWM_TO_RPM:
        src, dst = trace.pwm, trace.rpm
    else:
        src, dst = trace.rpm, trace.pwm
    windows = np.lib.stride_tricks.sliding_window_view(src, x)[:-1].copy()
    targets = dst[x:].copy()
    return SampleSet(inputs=windows, targets=targets, x=x, direction=cfg.direction)


def concat_samples(parts: Sequence[SampleSet]) -> SampleSet:
    if not parts:
        raise ValueError("cannot concatenate an empty list of sample sets")
    x, direction = parts[0].x, parts[0].direction
    for p in parts[1:]:
        if p.x != x or p.direction != direction:
            raise ValueError("sample sets disagree on window length or direction")
    return SampleSet(
        inputs=np.concatenate([p.inputs for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        x=x,
        direction=direction,
        norm_stats=parts[0].norm_stats,
    )


def split(samples: SampleSet, test_fraction: float) -> Tuple[SampleSet, SampleSet]:
    """Contiguous-block split: the trailing block becomes the test set.

    Block assignment (rather than per-sample shuffling) keeps overlapping
    windows from leaking between train and test.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    cut = n - n_test
    mk = lambda lo, hi: SampleSet(
        inputs=samples.inputs[lo:hi].copy(),
        targets=samples.targets[lo:hi].copy(),
        x=samples.x,
        direction=samples.direction,
        norm_stats=samples.norm_stats,
    )
    return mk(0, cut), mk(cut, n)


def compute_norm_stats(samples: SampleSet) -> NormStats:
    """Per-channel mean/std from a (train) sample set; zero-variance channels
    keep scale 1 so normalization never divides by zero."""
    in_off = float(np.mean(samples.inputs)) if len(samples) else 0.0
    in_scale = float(np.std(samples.inputs)) if len(samples) else 1.0
    t_off = float(np.mean(samples.targets)) if len(samples) else 0.0
    t_scale = float(np.std(samples.targets)) if len(samples) else 1.0
    return NormStats(
        input_offset=in_off,
        input_scale=in_scale if in_scale > 0.0 else 1.0,
        target_offset=t_off,
        target_scale=t_scale if t_scale > 0.0 else 1.0,
    )


def normalize(samples: SampleSet, stats: Optional[NormStats] = None) -> SampleSet:
    """Apply (or compute, then apply) affine normalization to a sample set."""
    if stats is None:
        stats = compute_norm_stats(samples)
    return SampleSet(
        inputs=(samples.inputs - stats.input_offset) / stats.input_scale,
        targets=(samples.targets - stats.target_offset) / stats.target_scale,
        x=samples.x,
        direction=samples.direction,
        norm_stats=stats,
    )


def denormalize(value, offset: float, scale: float):
    return value * scale + offset


def build_corpus(params: PlantParams, profiles: Sequence[ProfileSpec], base_seed: int) -> List[Trace]:
    """Log one trace per profile from the plant; trace i simulates with seed
    base_seed + i."""
    traces = []
    for i, spec in enumerate(profiles):
        if spec.dt != params.dt:
            spec = replace(spec, dt=params.dt)
        pwm = gen_profile(spec)
        rpm = simulate(params, pwm, seed=base_seed + i)
        traces.append(Trace(dt=params.dt, pwm=pwm, rpm=rpm))
    return traces


def default_profiles(seed: int, dt: float = 0.01) -> List[ProfileSpec]:
    """The shipped desk-scale corpus mix (~20k samples before augmentation):
    sinusoids, steps, impulses and trapezoids at varying slopes and peaks."""
    specs: List[ProfileSpec] = []
    k = 0

    def add(kind, amplitude, pow_, length, slope=1.0):
        nonlocal k
        specs.append(ProfileSpec(kind=kind, amplitude=amplitude, period_or_width=pow_,
                                 length=length, seed=seed + k, slope=slope, dt=dt))
        k += 1

    for period, amp in [(4.0, 0.3), (2.5, 0.5), (1.6, 0.7), (1.0, 0.45), (0.7, 0.6)]:
        add("sinusoid", amp, period, 1200)
    for amp in [0.2, 0.4, 0.6, 0.75]:
        add("step", amp, 0.0, 1000)
    for width, amp in [(0.05, 0.5), (0.1, 0.7), (0.2, 0.6), (0.4, 0.4)]:
        add("impulse", amp, width, 900)
    for slope, amp, hold in [(0.5, 0.3, 2.0), (1.0, 0.5, 1.5), (2.0, 0.75, 1.0),
                             (3.0, 0.6, 0.8), (4.0, 0.4, 0.5)]:
        add("trapezoid", amp, hold, 1200, slope=slope)
    return specs


def trace_to_csv(trace: Trace) -> str:
    """CSV with header t,pwm,rpm; one row per sample."""
    lines = ["t,pwm,rpm"]
    for n in range(len(trace)):
        lines.append(f"{n * trace.dt!r},{trace.pwm[n]!r},{trace.rpm[n]!r}")
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str, dt: Optional[float] = None) -> Trace:
    rows = [r for r in text.strip().splitlines()[1:] if r]
    t = np.array([float(r.split(",")[0]) for r in rows])
    pwm = np.array([float(r.split(",")[1]) for r in rows])
    rpm = np.array([float(r.split(",")[2]) for r in rows])
    if dt is None:
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.01
    return Trace(dt=dt, pwm=pwm, rpm=rpm)
