"""Streaming two-stage interaction discriminator.

Stage one thresholds the classifier's per-sample probability; stage two
requires the probability to stay above threshold for a sustained duration
before an event is declared.  One :class:`StreamingDetector` serves one
1 kHz feature stream; instances are independent and may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lstm
from .lstm import LstmModel, RecurrentState

__all__ = [
    "DetectorConfig",
    "DetectionEvent",
    "EvalReport",
    "LabeledTrace",
    "RejectedSampleError",
    "StreamingDetector",
    "evaluate",
]


class RejectedSampleError(ValueError):
    """A non-finite sample was pushed; the detector state is unchanged."""

    def __init__(self, sample_index: int):
        super().__init__(f"non-finite feature sample at stream index {sample_index}")
        self.sample_index = sample_index


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float = 0.5
    sustain: float = 0.05
    tid_rate: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.sustain <= 0 or self.tid_rate <= 0:
            raise ValueError("sustain and tid_rate must be positive")
        if self.sustain_samples < 1:
            raise ValueError("sustain shorter than one sample period")

    @property
    def sustain_samples(self) -> int:
        return int(round(self.sustain * self.tid_rate))


@dataclass(frozen=True)
class DetectionEvent:
    """One confirmed detection.

    ``onset`` is the time of the first supra-threshold sample and
    ``confirm`` the end of the sustain window, so ``confirm - onset``
    equals the configured sustain duration exactly.
    """

    onset: float
    confirm: float
    peak: float


@dataclass
class EvalReport:
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    accuracy: float
    verdicts: list[tuple[int, str]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return (
            self.true_positives
            + self.false_positives
            + self.true_negatives
            + self.false_negatives
        )


@dataclass
class LabeledTrace:
    """Feature stream plus ground-truth interaction intervals (seconds)."""

    data: np.ndarray
    intervals: list[tuple[float, float]] = field(default_factory=list)


class StreamingDetector:
    """Wraps a stateful classifier with threshold-plus-sustain gating.

    ``push_sample`` advances every recurrent layer by one sample and
    returns a :class:`DetectionEvent` exactly when the probability has
    stayed above threshold for ``sustain_samples`` consecutive samples.
    At most one event is emitted per contiguous supra-threshold run; a
    sub-threshold sample re-arms the gate.
    """

    def __init__(self, model: LstmModel, config: DetectorConfig | None = None):
        self.model = model
        self.config = config or DetectorConfig()
        self.state = RecurrentState.zeros(model)
        self._samples = 0
        self._counter = 0
        self._run_onset = 0
        self._run_peak = 0.0
        self._fired = False

    @property
    def sustain_counter(self) -> int:
        return self._counter

    @property
    def samples_seen(self) -> int:
        return self._samples

    def reset(self) -> None:
        """Zero the recurrent state and the sustain counter."""
        self.state.reset()
        self._samples = 0
        self._counter = 0
        self._run_peak = 0.0
        self._fired = False

    def push_sample(self, sample) -> DetectionEvent | None:
        x = np.asarray(sample, float)
        if x.shape != (self.model.input_width,):
            raise ValueError(
                f"sample width {x.shape} does not match model input width "
                f"{self.model.input_width}"
            )
        if not np.all(np.isfinite(x)):
            raise RejectedSampleError(self._samples)
        prob = self._advance(x)
        index = self._samples
        return self._gate(prob, index)

    def _advance(self, x) -> float:
        prob, _ = lstm.step(self.model, x, self.state)
        return prob

    def _gate(self, prob: float, index: int) -> DetectionEvent | None:
        self._samples += 1
        cfg = self.config
        if prob > cfg.threshold:
            if self._counter == 0:
                self._run_onset = index
                self._run_peak = prob
                self._fired = False
            self._counter += 1
            self._run_peak = max(self._run_peak, prob)
            if self._counter == cfg.sustain_samples and not self._fired:
                self._fired = True
                onset = self._run_onset / cfg.tid_rate
                return DetectionEvent(
                    onset=onset, confirm=onset + cfg.sustain, peak=self._run_peak
                )
        else:
            self._counter = 0
            self._fired = False
        return None

    def run(self, trace) -> list[DetectionEvent]:
        """Reset, stream a whole trace, and collect the emitted events."""
        data = trace.data if hasattr(trace, "data") else np.asarray(trace, float)
        self.reset()
        events = []
        for row in np.asarray(data, float):
            event = self.push_sample(row)
            if event is not None:
                events.append(event)
        return events


def _overlaps(event: DetectionEvent, intervals) -> bool:
    # closed intervals: touching a boundary sample counts as overlap
    return any(
        event.onset <= end and start <= event.confirm for start, end in intervals
    )


def evaluate(detector: StreamingDetector, traces) -> EvalReport:
    """Score labeled traces; one verdict per trace.

    A trace with truth intervals counts as a true positive when at least
    one event overlaps an interval (closed-boundary convention); events
    on a trace with no intervals make it a false positive.  The verdict
    depends only on event times versus intervals, never on probability
    magnitudes.
    """
    tp = fp = tn = fn = 0
    verdicts: list[tuple[int, str]] = []
    for index, trace in enumerate(traces):
        events = detector.run(trace)
        intervals = list(getattr(trace, "intervals", []) or [])
        if intervals:
            if any(_overlaps(e, intervals) for e in events):
                verdict = "TP"
                tp += 1
            elif events:
                verdict = "FP"
                fp += 1
            else:
                verdict = "FN"
                fn += 1
        else:
            if events:
                verdict = "FP"
                fp += 1
            else:
                verdict = "TN"
                tn += 1
        verdicts.append((index, verdict))
    total = max(1, len(verdicts))
    return EvalReport(
        true_positives=tp,
        false_positives=fp,
        true_negatives=tn,
        false_negatives=fn,
        accuracy=(tp + tn) / total,
        verdicts=verdicts,
    )
