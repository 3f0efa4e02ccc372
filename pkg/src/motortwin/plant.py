"""Discrete-time stand-in for a PWM-driven motor.

First-order lag plus a pure transport delay, with optional input deadband and
saturation. PWM is normalized to [-1, 1]; the RPM scale is set by the gain.
Measurement noise is added to the returned reading only, never to the state,
so the noiseless trajectory stays recoverable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Tuple

import numpy as np

Nonlinearity = Literal["linear", "saturating", "deadband+saturating"]


@dataclass(frozen=True)
class PlantParams:
    """Parameters of the simulated motor (PWM in, RPM out)."""

    gain_k: float = 100.0      # steady-state RPM per unit PWM
    tau: float = 0.03          # inertial time constant, seconds
    dt: float = 0.01           # sample period, seconds
    dead_time_steps: int = 3   # transport delay, samples
    sat_pwm: float = 0.8       # symmetric input saturation bound
    deadband: float = 0.05     # |pwm| below this gives zero drive
    noise_std: float = 0.5     # measurement noise std, RPM
    nonlinearity: Nonlinearity = "deadband+saturating"

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.dt >= self.tau:
            raise ValueError("dt must be smaller than tau (sampling must resolve the lag)")
        if self.sat_pwm <= 0.0:
            raise ValueError("sat_pwm must be positive")
        if self.dead_time_steps < 0:
            raise ValueError("dead_time_steps must be >= 0")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
        if self.nonlinearity not in ("linear", "saturating", "deadband+saturating"):
            raise ValueError(f"unknown nonlinearity mode: {self.nonlinearity!r}")

    def noiseless(self) -> "PlantParams":
        return replace(self, noise_std=0.0)


@dataclass(frozen=True)
class PlantState:
    """Motor shaft speed plus the in-flight delayed inputs (oldest first)."""

    rpm: float = 0.0
    delay_buffer: Tuple[float, ...] = ()


def init_state(params: PlantParams) -> PlantState:
    return PlantState(rpm=0.0, delay_buffer=(0.0,) * params.dead_time_steps)


def _effective_drive(params: PlantParams, u: float) -> float:
    if params.nonlinearity == "deadband+saturating" and abs(u) < params.deadband:
        u = 0.0
    if params.nonlinearity != "linear":
        u = max(-params.sat_pwm, min(params.sat_pwm, u))
    return u


def plant_step(
    params: PlantParams,
    state: PlantState,
    pwm: float,
    rng: np.random.Generator,
) -> Tuple[PlantState, float]:
    """Advance the motor one sample.

    Order of effects: transport delay, deadband, saturation, first-order lag,
    then additive measurement noise on the returned reading.
    """
    pwm = float(pwm)
    if not math.isfinite(pwm):
        raise ValueError(f"non-finite pwm input: {pwm!r}")
    if len(state.delay_buffer) != params.dead_time_steps:
        raise ValueError("plant state was not initialized for these params")

    if params.dead_time_steps > 0:
        u = state.delay_buffer[0]
        buf = state.delay_buffer[1:] + (pwm,)
    else:
        u = pwm
        buf = ()

    u = _effective_drive(params, u)
    alpha = params.dt / params.tau
    rpm = state.rpm + alpha * (params.gain_k * u - state.rpm)

    measured = rpm
    if params.noise_std > 0.0:
        measured = rpm + params.noise_std * rng.standard_normal()
    return PlantState(rpm=rpm, delay_buffer=buf), measured


def simulate(params: PlantParams, pwm_trace, seed: int) -> np.ndarray:
    """Run a PWM sequence through the motor from rest; returns measured RPM.

    Output is a pure function of (params, pwm_trace, seed). An empty input
    yields an empty output.
    """
    pwm_trace = np.asarray(pwm_trace, dtype=float)
    if pwm_trace.size and not np.all(np.isfinite(pwm_trace)):
        raise ValueError("pwm trace contains non-finite values")

    rng = np.random.default_rng(seed)
    state = init_state(params)
    out = np.empty(len(pwm_trace), dtype=float)
    for n, u in enumerate(pwm_trace):
        state, out[n] = plant_step(params, state, u, rng)
    return out
