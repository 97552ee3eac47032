import numpy as np
import pytest

from uavtid.datagen import (
    CHANNEL_SCALES,
    FEATURE_CHANNELS,
    TID_RATE,
    WINDOW_LENGTHS,
    DatasetGenerationError,
    HandModel,
    Scenario,
    ScenarioKind,
    ScenarioRejectedError,
    _run_scenario_loops,
    generate_dataset,
    hand_force,
    load_dataset,
    make_plan,
    minimum_jerk,
    full_scale_plan,
    sample_hands,
    save_dataset,
    simulate_scenario,
    wind_force,
)
from uavtid.platforms import base_platform
from uavtid import test_platform as second_platform


@pytest.fixture(scope="module")
def bp():
    return base_platform()


class TestHandForce:
    def test_zero_relative_motion_zero_force(self):
        hand = HandModel(k2=100.0, b2=5.0, pull_amplitude=0.2, pull_duration=0.5)
        times = np.arange(0, 1.0, 1e-3)
        tau = times / hand.pull_duration
        position = -hand.pull_amplitude * minimum_jerk(tau)
        from uavtid.datagen import minimum_jerk_rate

        velocity = -hand.pull_amplitude * minimum_jerk_rate(tau, hand.pull_duration)
        force = hand_force(hand, times, position, velocity, onset=0.0)
        assert np.allclose(force, 0.0, atol=1e-12)

    def test_static_spring_law(self):
        # frozen UAV, hand ends 0.1 m below: F = k2 * 0.1 = 10 N
        hand = HandModel(k2=100.0, b2=0.0, pull_amplitude=0.1, pull_duration=0.4)
        times = np.arange(0, 0.4, 1e-3)
        force = hand_force(hand, times, np.zeros_like(times), np.zeros_like(times))
        assert force[-1] == pytest.approx(10.0, rel=1e-3)

    def test_safety_bound_rejects(self):
        hand = HandModel(k2=1000.0, b2=0.0, pull_amplitude=1.0, pull_duration=0.4)
        times = np.arange(0, 0.4, 1e-3)
        with pytest.raises(ScenarioRejectedError):
            hand_force(hand, times, np.zeros_like(times), np.zeros_like(times))

    def test_population_peak_spread_within_ten_percent(self, bp):
        hands = sample_hands(seed=0, n=7, platform=bp)
        peaks = []
        for hand in hands:
            scenario = Scenario(kind=ScenarioKind.SDP, seed=1, hand=hand)
            _, peak = _run_scenario_loops(bp, scenario, hand)
            peaks.append(peak)
        spread = (max(peaks) - min(peaks)) / np.mean(peaks)
        assert spread <= 0.10

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            HandModel(k2=-1.0, b2=0.0, pull_amplitude=0.1, pull_duration=0.4)
        with pytest.raises(ValueError):
            HandModel(k2=100.0, b2=-0.1, pull_amplitude=0.1, pull_duration=0.4)


class TestWindForce:
    def test_zero_speed_zero_force(self):
        assert np.all(wind_force(seed=0, duration=2.0, mean_speed=0.0) == 0.0)

    def test_deterministic(self):
        a = wind_force(seed=42, duration=3.0, mean_speed=5.0)
        b = wind_force(seed=42, duration=3.0, mean_speed=5.0)
        np.testing.assert_array_equal(a, b)

    def test_sustained_and_band_limited(self):
        w = wind_force(seed=7, duration=20.0, mean_speed=5.0, dt=1e-3)
        assert w.mean() > 0
        spectrum = np.abs(np.fft.rfft(w - w.mean())) ** 2
        freqs = np.fft.rfftfreq(len(w), 1e-3)
        assert spectrum[freqs > 5.0].sum() < 0.01 * spectrum.sum()

    def test_speed_limit(self):
        with pytest.raises(ValueError):
            wind_force(seed=0, duration=1.0, mean_speed=9.0)


class TestScenarios:
    def test_double_pull_gap_bounds(self):
        with pytest.raises(ValueError):
            Scenario(kind=ScenarioKind.CDDP, seed=0, gap=0.1)
        with pytest.raises(ValueError):
            Scenario(kind=ScenarioKind.CDDP, seed=0, gap=1.5)

    def test_single_pull_events(self, bp):
        trace = simulate_scenario(bp, Scenario(kind=ScenarioKind.SDP, seed=3))
        intervals = trace.event_intervals("sdp")
        assert len(intervals) == 1
        start, end = intervals[0]
        assert start == pytest.approx(2.0)
        assert 0.3 <= end - start <= 0.6
        assert trace.channels["e_z"].max() > 0.05

    def test_double_pull_interval_spans_both(self, bp):
        sc = Scenario(kind=ScenarioKind.CDDP, seed=4, gap=0.4)
        trace = simulate_scenario(bp, sc)
        (start, end), = trace.event_intervals("cddp")
        hand_duration = end - start
        # two pulls plus the gap
        assert hand_duration > 0.4 + 2 * 0.3 - 1e-9

    def test_yaw_twist_targets_yaw_loop(self, bp):
        trace = simulate_scenario(bp, Scenario(kind=ScenarioKind.SYT, seed=5))
        assert np.abs(trace.channels["yaw"]).max() > 1e-3
        assert np.abs(trace.channels["u"]).max() > 1e-4
        assert np.abs(trace.channels["e_z"]).max() < 1e-9

    def test_idle_is_exactly_zero(self, bp):
        trace = simulate_scenario(bp, Scenario(kind=ScenarioKind.IDLE, seed=6))
        for name, series in trace.channels.items():
            assert np.all(series == 0.0), name
        assert trace.events == []

    def test_random_push_disturbs_without_events(self, bp):
        trace = simulate_scenario(
            bp, Scenario(kind=ScenarioKind.RANDOM_PUSH, seed=7)
        )
        assert np.abs(trace.channels["e_z"]).max() > 1e-3
        assert trace.events == []

    def test_wind_overlay_on_pull(self, bp):
        sc = Scenario(kind=ScenarioKind.SDP, seed=8, with_wind=True, mean_wind=5.0)
        trace = simulate_scenario(bp, sc)
        assert len(trace.event_intervals("sdp")) == 1
        # wind keeps exciting the loop long after the pull released
        late = trace.channels["e_z"][int(5.0 * bp.sample_rate) :]
        assert np.abs(late).max() > 1e-3


@pytest.fixture(scope="module")
def small_split(bp):
    plan = make_plan(
        {ScenarioKind.SDP: 4, ScenarioKind.WIND: 4, ScenarioKind.IDLE: 4}, seed=5
    )
    return plan, generate_dataset(bp, plan, ScenarioKind.SDP, augment=True, seed=9)


class TestGenerateDataset:
    def test_window_geometry(self, small_split):
        _, split = small_split
        window = WINDOW_LENGTHS[ScenarioKind.SDP]
        names = FEATURE_CHANNELS[ScenarioKind.SDP]
        for bucket in split:
            for seq in bucket:
                assert len(seq) == window
                assert seq.channel_names == names
                assert seq.data.shape == (window, len(names))

    def test_no_positive_window_from_negative_scenarios(self, small_split):
        _, split = small_split
        for bucket in split:
            for seq in bucket:
                if seq.kind is not ScenarioKind.SDP:
                    assert seq.label == 0

    def test_positive_windows_contain_full_support(self, small_split, bp):
        plan, split = small_split
        window = WINDOW_LENGTHS[ScenarioKind.SDP]
        for bucket in split:
            for seq in bucket:
                if seq.label != 1:
                    continue
                trace = simulate_scenario(bp, plan[seq.scenario_index])
                (start, end), = trace.event_intervals("sdp")
                t_lo = seq.offset / TID_RATE
                t_hi = (seq.offset + window - 1) / TID_RATE
                assert t_lo <= start and end <= t_hi

    def test_split_disjoint_by_scenario(self, small_split):
        _, split = small_split
        owners = [
            {seq.scenario_index for seq in bucket} for bucket in split
        ]
        assert not (owners[0] & owners[1])
        assert not (owners[0] & owners[2])
        assert not (owners[1] & owners[2])

    def test_augmentation_doubles_and_offsets(self, small_split):
        _, split = small_split
        for bucket in split:
            clean = [s for s in bucket if not s.augmented]
            noisy = [s for s in bucket if s.augmented]
            assert len(clean) == len(noisy)
            delta = noisy[0].data - clean[0].data
            assert delta.mean() == pytest.approx(0.05, abs=0.001)
            assert delta.std() == pytest.approx(0.0025, rel=0.2)

    def test_bit_reproducible(self, bp):
        plan = make_plan({ScenarioKind.SDP: 1, ScenarioKind.IDLE: 1}, seed=2)
        a = generate_dataset(bp, plan, ScenarioKind.SDP, augment=True, seed=3)
        b = generate_dataset(bp, plan, ScenarioKind.SDP, augment=True, seed=3)
        for bucket_a, bucket_b in zip(a, b):
            assert len(bucket_a) == len(bucket_b)
            for x, y in zip(bucket_a, bucket_b):
                np.testing.assert_array_equal(x.data, y.data)
                assert x.label == y.label

    def test_idle_only_plan_all_negative(self, bp):
        plan = make_plan({ScenarioKind.IDLE: 4}, seed=0, duration=3.0)
        split = generate_dataset(bp, plan, ScenarioKind.SDP, augment=False)
        assert all(seq.label == 0 for bucket in split for seq in bucket)

    def test_full_scale_arithmetic(self, bp):
        plan = full_scale_plan()
        split = generate_dataset(bp, plan, ScenarioKind.SDP, augment=False)
        assert split.counts() == (7326, 3663, 3663)
        doubled = generate_dataset(bp, plan, ScenarioKind.SDP, augment=True)
        assert doubled.counts() == (14652, 7326, 7326)

    def test_failure_carries_scenario_id(self, bp):
        bad_hand = HandModel(
            k2=4000.0, b2=0.0, pull_amplitude=0.5, pull_duration=0.3
        )
        plan = [
            Scenario(kind=ScenarioKind.IDLE, seed=0, duration=3.0),
            Scenario(kind=ScenarioKind.SDP, seed=1, hand=bad_hand),
        ]
        with pytest.raises(DatasetGenerationError) as info:
            generate_dataset(bp, plan, ScenarioKind.SDP, augment=False)
        assert info.value.scenario_index == 1
        assert info.value.kind is ScenarioKind.SDP

    def test_cross_platform_transform_path(self, bp):
        plan = make_plan({ScenarioKind.SDP: 1}, seed=4, duration=4.0)
        split = generate_dataset(
            second_platform(), plan, ScenarioKind.SDP, augment=False, base=bp
        )
        total = sum(len(bucket) for bucket in split)
        assert total > 0
        assert any(seq.label == 1 for bucket in split for seq in bucket)


class TestPersistence:
    def test_round_trip(self, small_split, tmp_path):
        _, split = small_split
        trimmed = type(split)(
            train=split.train[:5], validation=split.validation[:5], test=split.test[:5]
        )
        save_dataset(trimmed, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        for bucket_a, bucket_b in zip(trimmed, loaded):
            assert len(bucket_a) == len(bucket_b)
            for x, y in zip(bucket_a, bucket_b):
                # stored as float32 channel blocks
                np.testing.assert_allclose(y.data, x.data, atol=1e-6)
                assert y.label == x.label
                assert y.kind == x.kind
                assert y.offset == x.offset
                assert y.augmented == x.augmented
