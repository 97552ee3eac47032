"""Discrete-time simulation of decoupled UAV SISO loops.

Each loop is a linear chain: delayed command -> first-order propulsion ->
rigid body with linear drag.  External forces (human pulls, wind, pushes)
enter the rigid-body equation directly, bypassing propulsion and delay.
Integration uses exact zero-order-hold discretization of the continuous
state space, so step size only affects input quantization, not the
integrator order.  The loop delay is rounded to the nearest whole sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .platforms import (
    CHANNEL_NAMES,
    ControlledLoop,
    LoopKind,
    LoopModel,
    PDGains,
    PlatformModel,
    StateTrace,
)

__all__ = [
    "SimulationDivergedError",
    "OscillationNotSteadyError",
    "LoopSimulator",
    "OscillationRecord",
    "simulate_closed_loop",
    "mrft_command",
    "run_mrft",
    "run_mrft_on_plant",
    "ise_cost",
    "default_dt",
    "WAVEFORM_POINTS",
]

WAVEFORM_POINTS = 256


class SimulationDivergedError(RuntimeError):
    def __init__(self, kind, gains, bound):
        super().__init__(
            f"closed-loop simulation diverged (|state| > {bound:g}) for loop "
            f"{kind} with gains {gains}"
        )
        self.kind = kind
        self.gains = gains


class OscillationNotSteadyError(RuntimeError):
    def __init__(self, periods):
        super().__init__(
            f"relay oscillation did not reach a steady period; last periods: {periods}"
        )
        self.periods = periods


def default_dt(model: LoopModel) -> float:
    """Step small enough to resolve propulsion and represent the delay."""
    dt = model.prop.t_prop / 8.0
    if model.prop.delay > 0:
        dt = min(dt, model.prop.delay / 4.0)
    return float(np.clip(dt, 1e-5, 2e-3))


class LoopSimulator:
    """Stepwise simulator for one controlled loop.

    States are [position, velocity, actuator-force] (yaw drops the drag term
    and folds propulsion into the velocity state).  ``step`` advances one
    sample with the external force and, optionally, an explicit command that
    replaces the PD law (used by the relay test).
    """

    def __init__(
        self,
        model: LoopModel,
        gains: PDGains | None,
        dt: float,
        reference: float = 0.0,
        divergence_bound: float | None = None,
    ):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if dt > model.prop.t_prop / 5.0:
            raise ValueError(
                f"dt={dt} too coarse for propulsion time constant "
                f"{model.prop.t_prop} (need dt <= t_prop/5)"
            )
        self.model = model
        self.gains = gains
        self.dt = dt
        self.reference = reference
        self.divergence_bound = (
            divergence_bound
            if divergence_bound is not None
            else 1e6 * max(1.0, abs(reference))
        )
        self.delay_samples = int(round(model.prop.delay / dt))
        self.delay_rounding = model.prop.delay - self.delay_samples * dt

        m = model.inertia
        kp = model.prop.k_gain
        tp = model.prop.t_prop
        if model.kind is LoopKind.YAW:
            # T_p * v' + v = k_eq * u_d + F / inertia
            a = np.array([[0.0, 1.0], [0.0, -1.0 / tp]])
            b = np.array([[0.0, 0.0], [model.k_eq / tp, 1.0 / (m * tp)]])
        else:
            drag = 1.0 / model.t_drag if model.t_drag > 0 else 0.0
            a = np.array(
                [[0.0, 1.0, 0.0], [0.0, -drag, 1.0 / m], [0.0, 0.0, -1.0 / tp]]
            )
            b = np.array([[0.0, 0.0], [0.0, 1.0 / m], [kp / tp, 0.0]])
        n = a.shape[0]
        blk = np.zeros((n + 2, n + 2))
        blk[:n, :n] = a
        blk[:n, n:] = b
        ed = expm(blk * dt)
        self._ad = ed[:n, :n].copy()
        self._bd = ed[:n, n:].copy()
        self._n = n
        self.state = np.zeros(n)
        self._buf = [0.0] * self.delay_samples
        self._bi = 0
        self._last_command = 0.0

    def discrete_system(self):
        """Exact zero-order-hold update matrices (state, [command, force])."""
        return self._ad, self._bd

    def reset(self, state=None) -> None:
        self.state = np.zeros(self._n) if state is None else np.asarray(state, float).copy()
        self._buf = [0.0] * self.delay_samples
        self._bi = 0
        self._last_command = 0.0

    @property
    def position(self) -> float:
        return float(self.state[0])

    @property
    def velocity(self) -> float:
        return float(self.state[1])

    def error(self) -> float:
        return self.reference - self.state[0]

    def acceleration(self, force: float = 0.0) -> float:
        m = self.model.inertia
        if self.model.kind is LoopKind.YAW:
            ud = self._buf[self._bi] if self.delay_samples else self._last_command
            return (self.model.k_eq * ud + force / m - self.state[1]) / self.model.prop.t_prop
        drag = self.state[1] / self.model.t_drag if self.model.t_drag > 0 else 0.0
        return (self.state[2] + force) / m - drag

    def step(self, force: float = 0.0, command: float | None = None) -> float:
        """Advance one sample; returns the command that was applied."""
        if command is None:
            if self.gains is None:
                raise ValueError("no PD gains configured and no explicit command given")
            e = self.reference - self.state[0]
            command = self.gains.kc * e - self.gains.kd * self.state[1]
        self._last_command = command
        if self.delay_samples:
            ud = self._buf[self._bi]
            self._buf[self._bi] = command
            self._bi = (self._bi + 1) % self.delay_samples
        else:
            ud = command
        self.state = self._ad @ self.state + self._bd @ (ud, force)
        if abs(self.state[0]) > self.divergence_bound:
            raise SimulationDivergedError(self.model.kind, self.gains, self.divergence_bound)
        return command


def simulate_closed_loop(
    platform: PlatformModel,
    loop_kind: LoopKind,
    force: np.ndarray,
    duration: float,
    dt: float,
    reference: float = 0.0,
) -> StateTrace:
    """Run one PD-controlled loop under an external force series.

    The force series is sampled at ``dt`` and must cover ``duration``.  The
    returned trace fills the channels owned by the loop kind; the remaining
    channels are zero.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration / dt))
    force = np.asarray(force, float)
    if len(force) < n:
        raise ValueError(f"force series too short: {len(force)} < {n} samples")
    cl = platform.loop(loop_kind)
    sim = LoopSimulator(cl.model, cl.gains, dt, reference=reference)
    pos = np.empty(n)
    vel = np.empty(n)
    acc = np.empty(n)
    cmd = np.empty(n)
    for i in range(n):
        pos[i] = sim.position
        vel[i] = sim.velocity
        acc[i] = sim.acceleration(force[i])
        cmd[i] = sim.step(force[i])
    channels = {name: np.zeros(n) for name in CHANNEL_NAMES}
    channels["u"] = cmd
    if loop_kind is LoopKind.ALTITUDE:
        channels["e_z"] = reference - pos
        channels["vz"] = vel
        channels["az"] = acc
        channels["a_norm"] = np.abs(acc)
    elif loop_kind is LoopKind.ATTITUDE:
        channels["eta"] = pos
    else:
        channels["yaw"] = pos
    return StateTrace(dt=dt, channels=channels)


def mrft_command(error: float, prev_command: float, b1: float, b2: float, h: float) -> float:
    """Hysteresis relay output: +h or -h, never anything in between."""
    if h <= 0:
        raise ValueError("relay amplitude h must be positive")
    if error >= b1 or (error > -b2 and prev_command > 0):
        return h
    if error <= -b2 or (error < b1 and prev_command < 0):
        return -h
    return prev_command


@dataclass
class OscillationRecord:
    """Steady relay oscillation: amplitude, period, and one normalized cycle.

    ``waveform`` holds one period of the error signal resampled to a fixed
    number of points, peak-normalized to 1 and starting at the positive-going
    relay switch.
    """

    amplitude: float
    period: float
    waveform: np.ndarray
    periods: list[float] = field(default_factory=list)


def _steady(up_crossings, amplitudes, tol: float = 0.003) -> bool:
    """Recent cycles stable in both period and amplitude.

    The gate is deliberately tighter than the 1% reporting tolerance: the
    start-up transient from rest grows by a fraction of a percent per cycle
    and would otherwise pass while still a percent away from the limit
    cycle.
    """
    periods = np.diff(up_crossings[-7:])
    if len(periods) < 6 or len(amplitudes) < 6:
        return False
    amps = amplitudes[-6:]
    return (periods.max() - periods.min()) <= tol * periods.mean() and (
        max(amps) - min(amps)
    ) <= tol * np.mean(amps)


def run_mrft_on_plant(plant, beta: float, h: float, duration: float) -> OscillationRecord:
    """Relay-feedback test on any plant exposing ``dt``, ``position`` and
    ``step(force, command)``; the loop error is the negative position.

    Switching follows the hysteresis relay law with thresholds adapted each
    half-period (b1 from the running error minimum, b2 from the maximum).
    Switches are gated on the crossing direction, which realizes the same law
    for phase-lead (negative beta) thresholds where a pure level rule is
    ambiguous.  The first oscillation runs with zero thresholds until both
    extrema have been observed.
    """
    if not 0 <= abs(beta) < 1:
        raise ValueError("beta must satisfy 0 <= |beta| < 1")
    dt = plant.dt
    n = int(round(duration / dt))
    u = h
    errors = np.empty(n)
    prev_e = 0.0
    cur_max = cur_min = 0.0  # error extrema of the ongoing half-period
    dwell = max(2, getattr(plant, "delay_samples", 0)) + 1
    since_switch = dwell
    up_crossings: list[float] = []  # interpolated times of switches to +h
    amplitudes: list[float] = []  # per-cycle half peak-to-peak
    steady = False
    i_last = n - 1
    for i in range(n):
        e = -plant.position
        errors[i] = e
        rising = e > prev_e
        falling = e < prev_e
        cur_max = max(cur_max, e)
        cur_min = min(cur_min, e)
        since_switch += 1
        if since_switch >= dwell:
            if u > 0 and falling and e <= -beta * cur_max:
                u = -h
                cur_min = e
                since_switch = 0
            elif u < 0 and rising and e >= -beta * cur_min:
                b1 = -beta * cur_min
                t_cross = i * dt
                if i > 0 and e != prev_e:
                    frac = (b1 - prev_e) / (e - prev_e)
                    t_cross = (i - 1 + min(max(frac, 0.0), 1.0)) * dt
                if up_crossings:
                    j0 = int(round(up_crossings[-1] / dt))
                    seg = errors[j0 : i + 1]
                    amplitudes.append(0.5 * (seg.max() - seg.min()))
                up_crossings.append(t_cross)
                u = h
                cur_max = e
                since_switch = 0
                if len(up_crossings) >= 5 and _steady(up_crossings, amplitudes):
                    steady = True
                    i_last = i
                    break
        prev_e = e
        plant.step(0.0, u)
    periods = list(np.diff(up_crossings))
    if not steady:
        if len(periods) < 3 or not _steady(up_crossings, amplitudes):
            raise OscillationNotSteadyError(periods[-2:])
    period = float(np.mean(periods[-3:]))
    # extract the final full cycle of the error signal
    start = int(round(up_crossings[-2] / dt))
    stop = int(round(up_crossings[-1] / dt))
    cycle = errors[start:stop]
    amplitude = 0.5 * (cycle.max() - cycle.min())
    phase = np.linspace(0.0, 1.0, WAVEFORM_POINTS, endpoint=False)
    src = np.linspace(0.0, 1.0, len(cycle), endpoint=False)
    waveform = np.interp(phase, src, cycle)
    peak = np.max(np.abs(waveform))
    if peak > 0:
        waveform = waveform / peak
    return OscillationRecord(
        amplitude=float(amplitude),
        period=period,
        waveform=waveform,
        periods=periods,
    )


def run_mrft(
    platform_or_loop,
    loop_kind: LoopKind | None = None,
    beta: float = -0.73,
    h: float = 0.1,
    duration: float = 30.0,
    dt: float | None = None,
    initial_position: float = 0.0,
) -> OscillationRecord:
    """Relay-feedback test on a platform loop (or a bare LoopModel)."""
    if isinstance(platform_or_loop, PlatformModel):
        model = platform_or_loop.loop(loop_kind).model
    elif isinstance(platform_or_loop, ControlledLoop):
        model = platform_or_loop.model
    else:
        model = platform_or_loop
    if dt is None:
        # Relay switch times quantize to the grid; near 1 ms two distinct
        # sample-locked limit cycles can coexist for the same plant (~1.4%
        # apart in amplitude), so the relay runs finer than step-response
        # simulations need.
        dt = min(default_dt(model), 5e-4)
    sim = LoopSimulator(model, None, dt)
    if initial_position:
        sim.state[0] = initial_position
    return run_mrft_on_plant(sim, beta, h, duration)


def ise_cost(
    plant: LoopModel,
    controller: PDGains,
    horizon: float = 4.0,
    dt: float | None = None,
    control_dt: float | None = None,
) -> float:
    """Mean squared error of the unit step response over the horizon.

    ``dt`` is the integration step; ``control_dt`` optionally fixes the PD
    update interval independently, so refining ``dt`` converges instead of
    changing the sampled-data controller itself.  Returns ``inf`` when the
    closed loop diverges.
    """
    if dt is None:
        dt = default_dt(plant)
    hold = 1 if control_dt is None else max(1, int(round(control_dt / dt)))
    n = int(round(horizon / dt))
    try:
        sim = LoopSimulator(plant, controller, dt, reference=1.0, divergence_bound=1e6)
    except ValueError:
        raise
    total = 0.0
    command = 0.0
    try:
        for i in range(n):
            e = sim.error()
            total += e * e
            if i % hold == 0:
                command = controller.kc * e - controller.kd * sim.velocity
            sim.step(0.0, command=command)
    except SimulationDivergedError:
        return math.inf
    if not math.isfinite(total):
        return math.inf
    return total * dt / horizon
