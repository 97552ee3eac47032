import numpy as np
import pytest
from hypothesis import given, strategies as st

from uavtid import LoopKind, base_platform
from uavtid import test_platform as second_platform
from uavtid.simulate import simulate_closed_loop
from uavtid.transform import (
    InvalidTransformError,
    RateMismatchError,
    RationalFilter,
    TransformSet,
    altitude_transform,
    altitude_transform_full,
    apply_filter,
    apply_frequency_response,
    derivative_transforms,
    resample,
    resample_series,
    tilt_transform,
    tilt_transform_full,
)

DT = 2e-3


@pytest.fixture(scope="module")
def base():
    return base_platform()


@pytest.fixture(scope="module")
def hexa():
    return second_platform()


def _pull_trace(platform, duration=8.0, dt=DT, amp=-4.0, width=0.5):
    n = int(duration / dt)
    t = np.arange(n) * dt
    force = np.where(
        (t >= 1) & (t <= 1 + width), amp * np.sin(np.pi * (t - 1) / width), 0.0
    )
    return simulate_closed_loop(platform, LoopKind.ALTITUDE, force, duration, dt), force


def _nrmse(y, ref):
    return np.sqrt(np.mean((y - ref) ** 2)) / np.sqrt(np.mean(ref ** 2))


class TestRationalFilter:
    def test_dc_gain_of_step_response(self, base, hexa):
        filt = altitude_transform(hexa, base, dt=DT)
        kc1, kp1 = base.altitude.gains.kc, base.altitude.model.prop.k_gain
        kc2, kp2 = hexa.altitude.gains.kc, hexa.altitude.model.prop.k_gain
        assert filt.dc_gain() == pytest.approx(kc2 * kp2 / (kc1 * kp1), rel=1e-12)
        y = apply_filter(filt, np.ones(int(10 / DT)))
        assert y[-1] == pytest.approx(filt.dc_gain(), rel=0.001)

    def test_identity_is_bit_exact(self, base):
        filt = altitude_transform(base, base, dt=DT)
        assert filt.identity
        rng = np.random.default_rng(0)
        x = rng.normal(0, 1, 4000)
        y = apply_filter(filt, x)
        assert np.max(np.abs(y - x)) <= 1e-12 * np.max(np.abs(x))

    def test_unstable_denominator_rejected(self):
        with pytest.raises(InvalidTransformError):
            RationalFilter(np.array([1.0]), np.array([-1.0, 1.0]), DT)

    def test_nonpositive_leading_coefficient_rejected(self):
        with pytest.raises(InvalidTransformError):
            RationalFilter(np.array([1.0]), np.array([1.0, -2.0]), DT)

    def test_improper_ratio_rejected(self):
        with pytest.raises(InvalidTransformError):
            RationalFilter(np.array([1.0, 1.0, 1.0]), np.array([1.0, 1.0]), DT)

    def test_rate_mismatch_rejected(self, base, hexa):
        filt = altitude_transform(hexa, base, dt=DT)
        with pytest.raises(RateMismatchError):
            apply_filter(filt, np.zeros(10), dt=2 * DT)

    @given(tau=st.floats(0.05, 2.0), gain=st.floats(0.1, 10.0))
    def test_first_order_step_settles_to_dc_gain(self, tau, gain):
        dt = 1e-3
        filt = RationalFilter(np.array([gain]), np.array([1.0, tau]), dt)
        y = apply_filter(filt, np.ones(int(round(12 * tau / dt))))
        assert y[-1] == pytest.approx(gain, rel=0.01)


class TestAltitudeTransform:
    def test_reduced_ratio_matches_full_order_oracle(self, base, hexa):
        # slow pull keeps the signal energy below the lightly damped modes
        # of the drag-free full-order ratio, where the order truncation is
        # valid; error measured as RMSE relative to peak
        tr, _ = _pull_trace(hexa, duration=14.0, width=2.0)
        ez = tr.channels["e_z"]
        reduced = apply_filter(altitude_transform(hexa, base, dt=DT), ez)
        num, den = altitude_transform_full(hexa, base)
        full = apply_frequency_response(num, den, ez, DT)
        rmse = np.sqrt(np.mean((reduced - full) ** 2))
        assert rmse / np.max(np.abs(full)) < 0.05

    def test_cross_platform_invariance(self, base, hexa):
        # the same pull on either platform should look alike in the base
        # domain after transformation, and unlike without it
        tr_base, force = _pull_trace(base)
        tr_hexa, _ = _pull_trace(hexa)
        ref = tr_base.channels["e_z"]
        raw = tr_hexa.channels["e_z"]
        mapped = apply_filter(altitude_transform(hexa, base, dt=DT), raw)

        def err(y):
            return np.sqrt(np.mean((y - ref) ** 2)) / np.max(np.abs(ref))

        assert err(mapped) < 0.10
        assert err(mapped) < err(raw)

    def test_full_order_identity(self, base):
        num, den = altitude_transform_full(base, base)
        assert np.array_equal(num, den)
        rng = np.random.default_rng(1)
        x = np.sin(2 * np.pi * 1.3 * np.arange(2000) * DT) + rng.normal(0, 0.01, 2000)
        y = apply_frequency_response(num, den, x, DT)
        assert np.max(np.abs(y - x)) < 1e-10


class TestTiltTransform:
    def test_dc_gain(self, base, hexa):
        filt = tilt_transform(hexa, base, dt=DT)
        kc1, kp1 = base.attitude.gains.kc, base.attitude.model.prop.k_gain
        kc2, kp2 = hexa.attitude.gains.kc, hexa.attitude.model.prop.k_gain
        assert filt.dc_gain() == pytest.approx(kc2 * kp2 / (kc1 * kp1), rel=1e-12)

    def test_identity(self, base):
        assert tilt_transform(base, base, dt=DT).identity

    def test_full_variant_agrees_at_low_frequency(self, base, hexa):
        first = tilt_transform(hexa, base, dt=DT)
        second = tilt_transform_full(hexa, base, 0.02, 0.01, dt=DT)
        w = np.array([0.1, 0.5, 1.0])
        h1 = first.frequency_response(w)
        h2 = second.frequency_response(w)
        assert np.allclose(h1, h2, rtol=0.05)

    def test_full_variant_identity_requires_matching_inertia(self, base):
        assert tilt_transform_full(base, base, 0.02, 0.02, dt=DT).identity
        assert not tilt_transform_full(base, base, 0.02, 0.03, dt=DT).identity


class TestDerivativeTransforms:
    def test_acceleration_filter_is_constant_gain(self, base, hexa):
        _, accel = derivative_transforms(hexa, base, dt=DT)
        kd1, kp1, tp1 = (base.altitude.gains.kd, base.altitude.model.prop.k_gain,
                         base.altitude.model.prop.t_prop)
        kd2, kp2, tp2 = (hexa.altitude.gains.kd, hexa.altitude.model.prop.k_gain,
                         hexa.altitude.model.prop.t_prop)
        expected = (tp1 * kd2 * kp2 + hexa.mass) / (tp2 * kd1 * kp1 + base.mass)
        assert len(accel.num) == 1 and len(accel.den) == 1
        assert accel.dc_gain() == pytest.approx(expected, rel=1e-12)
        x = np.linspace(-1, 1, 100)
        assert np.allclose(apply_filter(accel, x), expected * x, rtol=1e-9)

    def test_identity_when_source_equals_base(self, base):
        velocity, accel = derivative_transforms(base, base, dt=DT)
        assert velocity.identity and accel.identity

    def test_velocity_filter_shares_high_order_terms(self, base, hexa):
        position = altitude_transform(hexa, base, dt=DT)
        velocity, _ = derivative_transforms(hexa, base, dt=DT)
        assert np.array_equal(velocity.num, position.num[1:])
        assert np.array_equal(velocity.den, position.den[1:])


class TestTransformSet:
    def test_apply_to_trace_channels(self, base, hexa):
        ts = TransformSet.build(hexa, base, dt=DT)
        tr, _ = _pull_trace(hexa)
        out = ts.apply_to_trace(tr)
        assert set(out.channels) == set(tr.channels)
        expected = apply_filter(ts.altitude_error, tr.channels["e_z"])
        assert np.array_equal(out.channels["e_z"], expected)
        # command has no transform and passes through
        assert np.array_equal(out.channels["u"], tr.channels["u"])
        assert out.events == tr.events

    def test_apply_to_trace_rate_mismatch(self, base, hexa):
        ts = TransformSet.build(hexa, base, dt=DT)
        tr, _ = _pull_trace(hexa, dt=4e-3)
        with pytest.raises(RateMismatchError):
            ts.apply_to_trace(tr)

    def test_identity_set_is_lossless(self, base):
        ts = TransformSet.build(base, base, dt=DT)
        tr, _ = _pull_trace(base)
        out = ts.apply_to_trace(tr)
        for name in tr.channels:
            ref = np.max(np.abs(tr.channels[name])) or 1.0
            assert np.max(np.abs(out.channels[name] - tr.channels[name])) <= 1e-12 * ref


class TestResample:
    def test_round_trip_correlation(self, hexa):
        tr, _ = _pull_trace(hexa)
        up = resample(tr, 1000.0)
        assert up.dt == pytest.approx(1e-3)
        back = resample(up, 1.0 / DT)
        n = min(len(back), len(tr))
        a = back.channels["e_z"][:n]
        b = tr.channels["e_z"][:n]
        corr = np.corrcoef(a, b)[0, 1]
        assert corr > 0.999

    def test_output_length(self):
        x = np.zeros(500)
        assert len(resample_series(x, 2e-3, 1000.0)) == 1000
        assert len(resample_series(x, 2e-3, 250.0)) == 250

    def test_downsample_attenuates_above_nyquist(self):
        dt = 1e-3
        t = np.arange(8000) * dt
        hi = np.sin(2 * np.pi * 400 * t)
        lo = np.sin(2 * np.pi * 2 * t)
        down_hi = resample_series(hi, dt, 250.0)
        down_lo = resample_series(lo, dt, 250.0)
        assert np.std(down_hi) < 0.15 * np.std(hi)
        assert np.std(down_lo) == pytest.approx(np.std(lo), rel=0.02)

    def test_events_preserved(self, hexa):
        tr, _ = _pull_trace(hexa)
        tr.events.append((1.0, "pull:start"))
        tr.events.append((1.5, "pull:end"))
        out = resample(tr, 1000.0)
        assert out.events == tr.events
        assert out.event_intervals("pull") == [(1.0, 1.5)]

    def test_same_rate_is_copy(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, 300)
        y = resample_series(x, 1e-3, 1000.0)
        assert np.array_equal(x, y)
