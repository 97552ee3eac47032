from types import SimpleNamespace

import numpy as np
import pytest

from uavtid.detector import (
    DetectionEvent,
    DetectorConfig,
    LabeledTrace,
    RejectedSampleError,
    StreamingDetector,
    evaluate,
)
from uavtid.lstm import init_model


class ProbeDetector(StreamingDetector):
    """Stub whose per-sample probability is the sample value itself."""

    def __init__(self, config=None):
        model = SimpleNamespace(input_width=1, hidden_sizes=(1,))
        super().__init__(model, config)

    def _advance(self, x):
        return float(x[0])


def stream(detector, probs):
    events = []
    for p in probs:
        event = detector.push_sample([p])
        if event is not None:
            events.append(event)
    return events


class TestConfig:
    def test_defaults_give_fifty_samples(self):
        cfg = DetectorConfig()
        assert cfg.threshold == 0.5
        assert cfg.sustain_samples == 50

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            DetectorConfig(threshold=0.0)
        with pytest.raises(ValueError):
            DetectorConfig(threshold=1.0)

    def test_sustain_must_cover_one_sample(self):
        with pytest.raises(ValueError):
            DetectorConfig(sustain=1e-5, tid_rate=1000.0)
        assert DetectorConfig(sustain=1e-3, tid_rate=1000.0).sustain_samples == 1


class TestGating:
    def test_forty_nine_samples_do_not_fire(self):
        det = ProbeDetector()
        assert stream(det, [0.6] * 49 + [0.4]) == []

    def test_fifty_samples_fire_exactly_once(self):
        det = ProbeDetector()
        events = []
        for k in range(200):
            event = det.push_sample([0.6])
            if event is not None:
                events.append((k, event))
        assert len(events) == 1
        fired_at, event = events[0]
        assert fired_at == 49  # the 50th sample
        assert event.onset == 0.0
        assert event.confirm == pytest.approx(0.05)
        assert event.peak == 0.6

    def test_latency_equals_sustain_exactly(self):
        det = ProbeDetector()
        (event,) = stream(det, [0.1] * 30 + [0.7] * 50)
        assert event.onset == pytest.approx(0.030)
        assert event.confirm - event.onset == pytest.approx(det.config.sustain)

    def test_alternating_never_fires(self):
        det = ProbeDetector()
        assert stream(det, [0.6, 0.4] * 500) == []

    def test_separate_runs_fire_separately(self):
        det = ProbeDetector()
        probs = [0.6] * 60 + [0.2] * 10 + [0.6] * 60
        events = stream(det, probs)
        assert len(events) == 2
        assert events[1].onset == pytest.approx(0.070)

    def test_peak_tracks_run_maximum(self):
        det = ProbeDetector()
        probs = [0.55] * 20 + [0.93] + [0.55] * 29
        (event,) = stream(det, probs)
        assert event.peak == 0.93

    def test_reset_mid_sustain_clears_counter(self):
        det = ProbeDetector()
        stream(det, [0.6] * 49)
        det.reset()
        assert det.sustain_counter == 0
        # needs a full fresh run after the reset
        assert stream(det, [0.6] * 49) == []
        assert len(stream(det, [0.6])) == 1

    def test_non_finite_sample_rejected_without_state_change(self):
        det = ProbeDetector()
        stream(det, [0.6] * 10)
        with pytest.raises(RejectedSampleError) as info:
            det.push_sample([np.nan])
        assert info.value.sample_index == 10
        assert det.sustain_counter == 10
        assert det.samples_seen == 10

    def test_sample_width_checked(self):
        det = ProbeDetector()
        with pytest.raises(ValueError):
            det.push_sample([0.1, 0.2])

    def test_threshold_is_strict(self):
        det = ProbeDetector()
        assert stream(det, [0.5] * 200) == []


class TestWithRealModel:
    def test_zero_weight_model_never_fires(self):
        model = init_model(input_width=2, hidden_sizes=(4, 3), dense_units=3)
        for p in model.params.values():
            p[:] = 0.0
        det = StreamingDetector(model)
        assert det.run(np.zeros((300, 2))) == []

    def test_replay_after_reset_is_identical(self):
        model = init_model(input_width=2, hidden_sizes=(4, 3), dense_units=3, seed=1)
        det = StreamingDetector(model, DetectorConfig(threshold=0.4, sustain=0.01))
        data = np.abs(np.random.default_rng(0).normal(size=(120, 2)))
        first = det.run(data)
        second = det.run(data)
        assert first == second
        assert all(isinstance(e, DetectionEvent) for e in first)


class TestEvaluate:
    def make_traces(self):
        quiet = np.full((200, 1), 0.1)
        loud = np.concatenate([np.full((60, 1), 0.1), np.full((80, 1), 0.8), np.full((60, 1), 0.1)])
        return [
            LabeledTrace(data=loud, intervals=[(0.05, 0.15)]),   # TP
            LabeledTrace(data=quiet, intervals=[(0.05, 0.15)]),  # FN
            LabeledTrace(data=loud),                             # FP
            LabeledTrace(data=quiet),                            # TN
        ]

    def test_confusion_counts_and_accuracy(self):
        report = evaluate(ProbeDetector(), self.make_traces())
        assert (
            report.true_positives,
            report.false_negatives,
            report.false_positives,
            report.true_negatives,
        ) == (1, 1, 1, 1)
        assert report.total == 4
        assert report.accuracy == pytest.approx(0.5)
        assert [v for _, v in report.verdicts] == ["TP", "FN", "FP", "TN"]

    def test_all_idle_with_never_positive_stub(self):
        traces = [LabeledTrace(data=np.full((100, 1), 0.1)) for _ in range(5)]
        report = evaluate(ProbeDetector(), traces)
        assert report.true_negatives == 5
        assert report.accuracy == 1.0

    def test_boundary_overlap_counts(self):
        # event spans [0.0, 0.05]; interval starts exactly at confirm time
        trace = LabeledTrace(data=np.full((60, 1), 0.8), intervals=[(0.05, 0.10)])
        report = evaluate(ProbeDetector(), [trace])
        assert report.true_positives == 1

    def test_independent_of_probability_magnitude(self):
        loud = np.full((100, 1), 0.51)
        louder = np.full((100, 1), 0.99)
        a = evaluate(ProbeDetector(), [LabeledTrace(data=loud, intervals=[(0.0, 0.1)])])
        b = evaluate(ProbeDetector(), [LabeledTrace(data=louder, intervals=[(0.0, 0.1)])])
        assert (a.true_positives, a.accuracy) == (b.true_positives, b.accuracy)

    def test_positive_scenario_with_only_outside_event_is_fp(self):
        # events confined to the first 0.15 s, truth interval much later
        data = np.concatenate([np.full((100, 1), 0.8), np.full((400, 1), 0.1)])
        trace = LabeledTrace(data=data, intervals=[(0.3, 0.4)])
        report = evaluate(ProbeDetector(), [trace])
        assert report.false_positives == 1
