"""Transformation of physical-domain signals into the base UAV's training
and inference domain (TID).

The carrier is a proper continuous-time rational filter built from the two
platforms' identified parameters; discretization is bilinear (trapezoidal),
which preserves stability and DC gain.  Signals are filtered at their native
rate first and resampled to the TID rate afterwards, so filter coefficients
never see interpolated samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .platforms import PlatformModel, StateTrace

__all__ = [
    "InvalidTransformError",
    "RateMismatchError",
    "RationalFilter",
    "TransformSet",
    "altitude_transform",
    "altitude_transform_full",
    "tilt_transform",
    "tilt_transform_full",
    "derivative_transforms",
    "apply_filter",
    "apply_frequency_response",
    "resample",
    "resample_series",
    "TID_RATE",
]

TID_RATE = 1000.0


class InvalidTransformError(ValueError):
    pass


class RateMismatchError(ValueError):
    pass


def _trim(coeffs) -> np.ndarray:
    """Drop trailing (highest-power) zero coefficients."""
    c = np.asarray(coeffs, float)
    nz = np.nonzero(c)[0]
    if len(nz) == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1]


@dataclass
class RationalFilter:
    """Proper continuous-time rational transfer function plus its bilinear
    discrete realization at a fixed step.

    Coefficients are in ascending powers of s.  An exactly identical
    numerator and denominator short-circuits to a bit-exact pass-through.
    """

    num: np.ndarray
    den: np.ndarray
    dt: float
    b: np.ndarray = field(init=False)
    a: np.ndarray = field(init=False)
    identity: bool = field(init=False)

    def __post_init__(self):
        self.num = _trim(self.num)
        self.den = _trim(self.den)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.num) > len(self.den):
            raise InvalidTransformError("numerator degree exceeds denominator degree")
        if self.den[-1] <= 0:
            raise InvalidTransformError(
                f"nonpositive leading denominator coefficient: {self.den[-1]}"
            )
        if len(self.den) > 1:
            roots = np.roots(self.den[::-1])
            if np.any(roots.real >= 0):
                raise InvalidTransformError(f"unstable denominator roots: {roots}")
        self.identity = np.array_equal(self.num, self.den)
        if self.identity:
            self.b = np.array([1.0])
            self.a = np.array([1.0])
        else:
            self.b, self.a = sps.bilinear(self.num[::-1], self.den[::-1], fs=1.0 / self.dt)

    def dc_gain(self) -> float:
        return float(self.num[0] / self.den[0])

    def frequency_response(self, omega) -> np.ndarray:
        s = 1j * np.asarray(omega, float)
        return np.polyval(self.num[::-1], s) / np.polyval(self.den[::-1], s)

    def to_dict(self) -> dict:
        return {
            "num_ascending_s": [float(c) for c in self.num],
            "den_ascending_s": [float(c) for c in self.den],
            "dt": self.dt,
            "discrete_b": [float(c) for c in self.b],
            "discrete_a": [float(c) for c in self.a],
        }


def apply_filter(filt: RationalFilter, x: np.ndarray, dt: float | None = None) -> np.ndarray:
    """Causal filtering from zero initial state; output length equals input."""
    if dt is not None and not np.isclose(dt, filt.dt, rtol=1e-9):
        raise RateMismatchError(f"signal dt {dt} != filter dt {filt.dt}")
    x = np.asarray(x, float)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    if filt.identity:
        return x.copy()
    return sps.lfilter(filt.b, filt.a, x)


def _altitude_params(p: PlatformModel):
    cl = p.altitude
    return cl.gains.kc, cl.gains.kd, cl.model.prop.k_gain, cl.model.prop.t_prop, p.mass


def altitude_transform(source: PlatformModel, base: PlatformModel,
                       dt: float | None = None) -> RationalFilter:
    """Second-order ratio mapping the source's altitude error into the base
    domain (index 1 = base, 2 = source)."""
    kc1, kd1, kp1, tp1, m1 = _altitude_params(base)
    kc2, kd2, kp2, tp2, m2 = _altitude_params(source)
    num = [kc2 * kp2, kp2 * (tp1 * kc2 + kd2), tp1 * kd2 * kp2 + m2]
    den = [kc1 * kp1, kp1 * (tp2 * kc1 + kd1), tp2 * kd1 * kp1 + m1]
    if dt is None:
        dt = 1.0 / source.sample_rate
    return RationalFilter(np.array(num), np.array(den), dt)


def altitude_transform_full(source: PlatformModel, base: PlatformModel):
    """Fourth-order altitude ratio retaining the jerk and snap terms.

    Returned as raw (num, den) ascending-power coefficient arrays for
    frequency-domain evaluation; not realized as a time-domain filter.
    """
    kc1, kd1, kp1, tp1, m1 = _altitude_params(base)
    kc2, kd2, kp2, tp2, m2 = _altitude_params(source)
    num = np.array([
        kc2 * kp2,
        kp2 * (tp1 * kc2 + kd2),
        tp1 * kd2 * kp2 + m2,
        m2 * (tp1 + tp2),
        m2 * tp1 * tp2,
    ])
    den = np.array([
        kc1 * kp1,
        kp1 * (tp2 * kc1 + kd1),
        tp2 * kd1 * kp1 + m1,
        m1 * (tp2 + tp1),
        m1 * tp2 * tp1,
    ])
    return num, den


def _attitude_params(p: PlatformModel):
    cl = p.attitude
    return cl.gains.kc, cl.gains.kd, cl.model.prop.k_gain, cl.model.prop.t_prop


def tilt_transform(source: PlatformModel, base: PlatformModel,
                   dt: float | None = None) -> RationalFilter:
    """First-order tilt-angle ratio, independent of inertia and arm length."""
    kc1, kd1, kp1, tp1 = _attitude_params(base)
    kc2, kd2, kp2, tp2 = _attitude_params(source)
    num = [kc2 * kp2, kp2 * (tp1 * kc2 + kd2)]
    den = [kc1 * kp1, kp1 * (tp2 * kc1 + kd1)]
    if dt is None:
        dt = 1.0 / source.sample_rate
    return RationalFilter(np.array(num), np.array(den), dt)


def tilt_transform_full(source: PlatformModel, base: PlatformModel,
                        inertia_over_arm_source: float,
                        inertia_over_arm_base: float,
                        dt: float | None = None) -> RationalFilter:
    """Second-order tilt ratio; needs rotational inertia over arm length,
    which is not identified in flight (exercised with synthetic values)."""
    kc1, kd1, kp1, tp1 = _attitude_params(base)
    kc2, kd2, kp2, tp2 = _attitude_params(source)
    num = [kc2 * kp2, kp2 * (tp1 * kc2 + kd2),
           tp1 * kd2 * kp2 + inertia_over_arm_source]
    den = [kc1 * kp1, kp1 * (tp2 * kc1 + kd1),
           tp2 * kd1 * kp1 + inertia_over_arm_base]
    if dt is None:
        dt = 1.0 / source.sample_rate
    return RationalFilter(np.array(num), np.array(den), dt)


def derivative_transforms(source: PlatformModel, base: PlatformModel,
                          dt: float | None = None):
    """Velocity and acceleration filters from the altitude ratio.

    The velocity filter drops the constant (position) terms and cancels one
    power of s; the acceleration filter additionally drops the first-order
    terms, leaving a pure gain.  The acceleration-norm channel reuses the
    acceleration filter.
    """
    kc1, kd1, kp1, tp1, m1 = _altitude_params(base)
    kc2, kd2, kp2, tp2, m2 = _altitude_params(source)
    if dt is None:
        dt = 1.0 / source.sample_rate
    vel_num = [kp2 * (tp1 * kc2 + kd2), tp1 * kd2 * kp2 + m2]
    vel_den = [kp1 * (tp2 * kc1 + kd1), tp2 * kd1 * kp1 + m1]
    acc_num = [tp1 * kd2 * kp2 + m2]
    acc_den = [tp2 * kd1 * kp1 + m1]
    if vel_num[-1] == 0 or vel_den[-1] == 0 or acc_den[0] == 0:
        raise InvalidTransformError("degenerate derivative transform coefficients")
    velocity = RationalFilter(np.array(vel_num), np.array(vel_den), dt)
    accel = RationalFilter(np.array(acc_num), np.array(acc_den), dt)
    return velocity, accel


def apply_frequency_response(num, den, x: np.ndarray, dt: float) -> np.ndarray:
    """Apply a continuous-time rational ratio spectrally on a finite window.

    Used for the full-order ratio whose higher derivatives are not available
    as states; test/oracle use only.
    """
    x = np.asarray(x, float)
    omega = 2 * np.pi * np.fft.rfftfreq(len(x), dt)
    s = 1j * omega
    h = np.polyval(np.asarray(num)[::-1], s) / np.polyval(np.asarray(den)[::-1], s)
    return np.fft.irfft(np.fft.rfft(x) * h, len(x))


@dataclass
class TransformSet:
    """All per-channel filters mapping one source platform into the TID."""

    altitude_error: RationalFilter
    altitude_velocity: RationalFilter
    altitude_accel: RationalFilter
    tilt: RationalFilter
    source: PlatformModel
    base: PlatformModel

    @classmethod
    def build(cls, source: PlatformModel, base: PlatformModel,
              dt: float | None = None) -> "TransformSet":
        if dt is None:
            dt = 1.0 / source.sample_rate
        velocity, accel = derivative_transforms(source, base, dt)
        return cls(
            altitude_error=altitude_transform(source, base, dt),
            altitude_velocity=velocity,
            altitude_accel=accel,
            tilt=tilt_transform(source, base, dt),
            source=source,
            base=base,
        )

    def apply_to_trace(self, trace: StateTrace) -> StateTrace:
        """Filter each feature channel with its transform; yaw and command
        pass through unchanged (no yaw-domain transformation is defined)."""
        if not np.isclose(trace.dt, self.altitude_error.dt, rtol=1e-9):
            raise RateMismatchError(
                f"trace dt {trace.dt} != transform dt {self.altitude_error.dt}"
            )
        mapping = {
            "e_z": self.altitude_error,
            "vz": self.altitude_velocity,
            "az": self.altitude_accel,
            "a_norm": self.altitude_accel,
            "eta": self.tilt,
        }
        channels = {}
        for name, series in trace.channels.items():
            filt = mapping.get(name)
            channels[name] = apply_filter(filt, series) if filt else series.copy()
        return StateTrace(dt=trace.dt, channels=channels, events=list(trace.events))


def resample_series(x: np.ndarray, dt: float, target_rate: float) -> np.ndarray:
    """Resample one channel: linear interpolation up, first-order zero-phase
    anti-alias (cutoff 0.4x target) plus decimation down."""
    x = np.asarray(x, float)
    if len(x) == 0:
        raise ValueError("empty input")
    rate = 1.0 / dt
    duration = len(x) * dt
    n_out = int(round(duration * target_rate))
    t_in = np.arange(len(x)) * dt
    t_out = np.arange(n_out) / target_rate
    if np.isclose(target_rate, rate, rtol=1e-9):
        return x.copy()
    if target_rate > rate:
        return np.interp(t_out, t_in, x)
    # downsample: zero-phase first-order low-pass at 0.4 * target rate
    wc = 2 * np.pi * 0.4 * target_rate
    b, a = sps.bilinear([wc], [1.0, wc], fs=rate)
    pad = min(len(x) - 1, max(12, int(round(3.0 * rate / wc))))
    filtered = sps.filtfilt(b, a, x, padlen=pad)
    return np.interp(t_out, t_in, filtered)


def resample(trace: StateTrace, target_rate: float) -> StateTrace:
    """Resample every channel to the target rate; timestamps become exact
    multiples of 1/target_rate.  Event times are preserved."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if len(trace) == 0:
        raise ValueError("empty trace")
    channels = {
        name: resample_series(series, trace.dt, target_rate)
        for name, series in trace.channels.items()
    }
    return StateTrace(dt=1.0 / target_rate, channels=channels, events=list(trace.events))
