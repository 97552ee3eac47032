"""Synthetic labeled interaction datasets.

Positive scenarios co-simulate a spring-damper hand pulling the UAV along a
minimum-jerk trajectory (single pull, double pull, or a yaw twist); negative
scenarios apply gusty wind, short random pushes, or nothing.  Each scenario
is simulated at the platform's native rate, optionally mapped into the base
platform's training-and-inference domain, resampled to 1 kHz, normalized per
channel, cut into fixed-length windows, labeled, and split by scenario into
train/validation/test.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.signal as sps

from .platforms import LoopKind, PlatformModel, StateTrace
from .simulate import LoopSimulator, SimulationDivergedError
from .transform import TransformSet, resample

__all__ = [
    "ScenarioKind",
    "HandModel",
    "Scenario",
    "FeatureSequence",
    "DatasetSplit",
    "ScenarioRejectedError",
    "DatasetGenerationError",
    "hand_force",
    "wind_force",
    "sample_hands",
    "simulate_scenario",
    "generate_dataset",
    "make_plan",
    "full_scale_plan",
    "save_dataset",
    "load_dataset",
    "trace_features",
    "TID_RATE",
    "WINDOW_LENGTHS",
    "FEATURE_CHANNELS",
    "CHANNEL_SCALES",
]

TID_RATE = 1000.0
NEGATIVE_STRIDE = 100
FORCE_SAFETY_BOUND = 50.0
AUGMENT_BIAS = 0.05
AUGMENT_NOISE_STD = 0.0025
WIND_CUTOFF_HZ = 2.0
WIND_TURBULENCE = 0.30
WIND_FORCE_PER_SPEED_SQ = 0.4  # N per (m/s)^2 of mean speed
MAX_WIND_SPEED = 8.0


class ScenarioKind(enum.Enum):
    SDP = "sdp"  # single downward pull
    CDDP = "cddp"  # consecutive double downward pull
    SYT = "syt"  # single yaw twist
    RANDOM_PUSH = "random_push"
    WIND = "wind"
    IDLE = "idle"


POSITIVE_KINDS = frozenset({ScenarioKind.SDP, ScenarioKind.CDDP, ScenarioKind.SYT})

WINDOW_LENGTHS = {
    ScenarioKind.SDP: 1000,
    ScenarioKind.CDDP: 2500,
    ScenarioKind.SYT: 1500,
}

FEATURE_CHANNELS = {
    ScenarioKind.SDP: ("e_z", "a_norm", "eta"),
    ScenarioKind.CDDP: ("e_z", "a_norm", "eta"),
    ScenarioKind.SYT: ("eta", "yaw", "a_norm", "u"),
}

# Fixed physical scale per channel so the dimensionless augmentation
# constants (bias 0.05, noise sigma 0.0025) are meaningful on every channel.
CHANNEL_SCALES = {
    "e_z": 0.5,  # m
    "vz": 1.0,  # m/s
    "az": 9.81,  # m/s^2
    "a_norm": 9.81,  # m/s^2
    "eta": 0.3,  # rad
    "yaw": 0.5,  # rad
    "u": 5.0,  # command units
}


class ScenarioRejectedError(RuntimeError):
    """Simulated interaction force exceeded the configured safety bound."""


class DatasetGenerationError(RuntimeError):
    def __init__(self, scenario_index: int, kind: ScenarioKind, cause: Exception):
        super().__init__(
            f"scenario {scenario_index} ({kind.value}) failed: {cause}"
        )
        self.scenario_index = scenario_index
        self.kind = kind


@dataclass(frozen=True)
class HandModel:
    """Spring-damper arm: F = k2*(x - x_h) + b2*(xdot - x_h_dot)."""

    k2: float  # N/m (or N.m/rad for yaw twists)
    b2: float  # N.s/m
    pull_amplitude: float  # m (or rad)
    pull_duration: float  # s

    def __post_init__(self):
        if self.k2 <= 0:
            raise ValueError(f"k2 must be positive, got {self.k2}")
        if self.b2 < 0:
            raise ValueError(f"b2 must be nonnegative, got {self.b2}")
        if self.pull_amplitude <= 0:
            raise ValueError(f"pull_amplitude must be positive, got {self.pull_amplitude}")
        if self.pull_duration <= 0:
            raise ValueError(f"pull_duration must be positive, got {self.pull_duration}")


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    seed: int
    duration: float = 8.0
    onset: float = 2.0
    gap: float = 0.5  # between the two pulls of a double pull
    hand: HandModel | None = None
    mean_wind: float = 5.0
    with_wind: bool = False  # overlay wind on a positive scenario

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.kind is ScenarioKind.CDDP and not 0.2 <= self.gap <= 1.0:
            raise ValueError(f"double-pull gap must lie in [0.2, 1.0] s, got {self.gap}")
        if self.kind in POSITIVE_KINDS and self.onset <= 0:
            raise ValueError("interaction onset must be positive")


def minimum_jerk(tau):
    """Smooth 0-to-1 profile with zero end velocity/acceleration."""
    tau = np.clip(tau, 0.0, 1.0)
    return 10 * tau**3 - 15 * tau**4 + 6 * tau**5


def minimum_jerk_rate(tau, duration: float):
    tau = np.asarray(tau, float)
    inside = (tau > 0) & (tau < 1)
    tau = np.clip(tau, 0.0, 1.0)
    return np.where(inside, (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / duration, 0.0)


def _pull_schedule(hand: HandModel, kind: ScenarioKind, onset: float, gap: float):
    """(start, end) engagement windows of each pull."""
    pulls = [(onset, onset + hand.pull_duration)]
    if kind is ScenarioKind.CDDP:
        t2 = pulls[0][1] + gap
        pulls.append((t2, t2 + hand.pull_duration))
    return pulls


class _HandPull:
    """Stateful hand model for co-simulation.

    On engagement the hand grabs at the current position and commands a
    minimum-jerk displacement of the pull amplitude; release drops the force
    to zero instantly.
    """

    def __init__(self, hand: HandModel, kind: ScenarioKind, onset: float, gap: float,
                 safety_bound: float | None = FORCE_SAFETY_BOUND):
        self.hand = hand
        self.pulls = _pull_schedule(hand, kind, onset, gap)
        self.safety_bound = safety_bound
        self._grab: dict[int, float] = {}
        self.peak_force = 0.0

    def force(self, t: float, position: float, velocity: float) -> float:
        h = self.hand
        for idx, (t0, t1) in enumerate(self.pulls):
            if t0 <= t < t1:
                if idx not in self._grab:
                    self._grab[idx] = position
                tau = (t - t0) / h.pull_duration
                x_h = self._grab[idx] - h.pull_amplitude * float(minimum_jerk(tau))
                xdot_h = -h.pull_amplitude * float(
                    minimum_jerk_rate(tau, h.pull_duration)
                )
                f = h.k2 * (position - x_h) + h.b2 * (velocity - xdot_h)
                self.peak_force = max(self.peak_force, abs(f))
                if self.safety_bound is not None and abs(f) > self.safety_bound:
                    raise ScenarioRejectedError(
                        f"hand force {f:.1f} N exceeds safety bound "
                        f"{self.safety_bound} N"
                    )
                return f
        return 0.0

    def interval(self) -> tuple[float, float]:
        """Ground-truth support: first grab to last release."""
        return self.pulls[0][0], self.pulls[-1][1]


def hand_force(
    hand: HandModel,
    times,
    position,
    velocity=None,
    kind: ScenarioKind = ScenarioKind.SDP,
    onset: float = 0.0,
    gap: float = 0.5,
    safety_bound: float | None = FORCE_SAFETY_BOUND,
) -> np.ndarray:
    """Hand force along a given position series (spring-damper law)."""
    times = np.asarray(times, float)
    position = np.asarray(position, float)
    if velocity is None:
        velocity = np.gradient(position, times) if len(times) > 1 else np.zeros_like(position)
    pull = _HandPull(hand, kind, onset, gap, safety_bound)
    return np.array(
        [pull.force(t, x, v) for t, x, v in zip(times, position, velocity)]
    )


def wind_force(seed, duration: float, mean_speed: float, dt: float = 1e-3) -> np.ndarray:
    """Gusty low-frequency force: mean proportional to speed squared with
    30% turbulence intensity, band-limited below 2 Hz."""
    if mean_speed < 0:
        raise ValueError("mean_speed must be nonnegative")
    if mean_speed > MAX_WIND_SPEED:
        raise ValueError(f"mean_speed must be <= {MAX_WIND_SPEED} m/s")
    n = int(round(duration / dt))
    if mean_speed == 0.0 or n == 0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    pad = int(round(2.0 / (WIND_CUTOFF_HZ * dt)))  # settle the filter chain
    white = rng.standard_normal(n + pad)
    alpha = dt / (1.0 / (2 * np.pi * WIND_CUTOFF_HZ) + dt)
    gust = white
    for _ in range(4):
        gust = sps.lfilter([alpha], [1.0, alpha - 1.0], gust)
    gust = gust[pad:]
    std = gust.std()
    if std > 0:
        gust = gust / std
    mean_force = WIND_FORCE_PER_SPEED_SQ * mean_speed**2
    return mean_force * (1.0 + WIND_TURBULENCE * gust)


def _random_push_force(rng, n: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """A few short half-sine bumps; returns (force, torque) series."""
    force = np.zeros(n)
    torque = np.zeros(n)
    duration = n * dt
    for _ in range(int(rng.integers(1, 4))):
        width = float(rng.uniform(0.1, 0.3))
        t0 = float(rng.uniform(0.5, max(0.6, duration - width - 0.5)))
        amp = float(rng.uniform(3.0, 12.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        i0 = int(round(t0 / dt))
        i1 = min(n, i0 + int(round(width / dt)))
        if i1 <= i0:
            continue
        pulse = amp * np.sin(np.pi * np.arange(i1 - i0) / (i1 - i0))
        force[i0:i1] += pulse
        torque[i0:i1] += 0.2 * pulse
    return force, torque


def _default_hand(rng, kind: ScenarioKind) -> HandModel:
    """Draw hand parameters; amplitude is calibrated afterwards."""
    return HandModel(
        k2=float(rng.uniform(80.0, 120.0)),
        b2=float(rng.uniform(2.0, 6.0)),
        pull_amplitude=1.0,
        pull_duration=float(rng.uniform(0.3, 0.6)),
    )


def _target_peak(kind: ScenarioKind) -> float:
    return 1.0 if kind is ScenarioKind.SYT else 15.0


def _calibrated_hand(
    hand: HandModel, platform: PlatformModel, scenario: Scenario, target_peak: float
) -> HandModel:
    """Scale the pull amplitude so the simulated peak force hits the target.

    The coupled UAV-plus-hand system is linear and the commanded hand
    trajectory scales with the amplitude, so the peak force is exactly
    proportional to it and one probe simulation calibrates it.
    """
    probe = replace(hand, pull_amplitude=1.0)
    _, peak = _run_scenario_loops(platform, scenario, probe, safety_bound=None)
    if peak <= 0:
        raise ScenarioRejectedError("probe pull produced no force")
    return replace(hand, pull_amplitude=target_peak / peak)


def sample_hands(
    seed,
    n: int,
    platform: PlatformModel | None = None,
    kind: ScenarioKind = ScenarioKind.SDP,
    target_peak: float | None = None,
) -> list[HandModel]:
    """Sample a hand population with calibrated, matched peak forces."""
    from .platforms import base_platform

    platform = platform or base_platform()
    target = target_peak if target_peak is not None else _target_peak(kind)
    rng = np.random.default_rng(seed)
    hands = []
    for _ in range(n):
        draw = _default_hand(rng, kind)
        scenario = Scenario(kind=kind, seed=0, hand=draw)
        hands.append(_calibrated_hand(draw, platform, scenario, target))
    return hands


def _run_scenario_loops(
    platform: PlatformModel,
    scenario: Scenario,
    hand: HandModel | None,
    safety_bound: float | None = FORCE_SAFETY_BOUND,
) -> tuple[StateTrace, float]:
    """Co-simulate all three loops under the scenario's external forces."""
    dt = 1.0 / platform.sample_rate
    n = int(round(scenario.duration / dt))
    rng = np.random.default_rng(scenario.seed)
    kind = scenario.kind

    alt_force = np.zeros(n)
    att_torque = np.zeros(n)
    yaw_torque = np.zeros(n)
    if kind is ScenarioKind.WIND or (kind in POSITIVE_KINDS and scenario.with_wind):
        wind = wind_force(scenario.seed, scenario.duration, scenario.mean_wind, dt)
        alt_force += wind
        att_torque += 0.15 * (wind - wind.mean())
    if kind is ScenarioKind.RANDOM_PUSH:
        push_f, push_t = _random_push_force(rng, n, dt)
        alt_force += push_f
        att_torque += push_t

    pull = None
    if kind in POSITIVE_KINDS:
        if hand is None:
            raise ValueError("positive scenario requires a hand model")
        pull = _HandPull(hand, kind, scenario.onset, scenario.gap, safety_bound)

    idle = (
        pull is None
        and not alt_force.any()
        and not att_torque.any()
        and not yaw_torque.any()
    )
    channels = {
        name: np.zeros(n)
        for name in ("e_z", "vz", "az", "a_norm", "eta", "yaw", "u", "u_yaw")
    }
    peak = 0.0
    if not idle:
        alt = LoopSimulator(platform.altitude.model, platform.altitude.gains, dt)
        att = LoopSimulator(platform.attitude.model, platform.attitude.gains, dt)
        yaw = LoopSimulator(platform.yaw.model, platform.yaw.gains, dt)
        for i in range(n):
            t = i * dt
            fa = alt_force[i]
            ty = yaw_torque[i]
            if pull is not None:
                if kind is ScenarioKind.SYT:
                    ty -= pull.force(t, yaw.position, yaw.velocity)
                else:
                    fa -= pull.force(t, alt.position, alt.velocity)
            channels["e_z"][i] = -alt.position
            channels["vz"][i] = alt.velocity
            az = alt.acceleration(fa)
            channels["az"][i] = az
            channels["a_norm"][i] = abs(az)
            channels["eta"][i] = att.position
            channels["yaw"][i] = yaw.position
            channels["u"][i] = alt.step(fa)
            att.step(att_torque[i])
            channels["u_yaw"][i] = yaw.step(ty)
        peak = pull.peak_force if pull is not None else 0.0

    events = []
    if pull is not None:
        t0, t1 = pull.interval()
        events = [(t0, f"{kind.value}:start"), (t1, f"{kind.value}:end")]
    # the command channel follows the loop the interaction targets
    u_yaw = channels.pop("u_yaw")
    if kind is ScenarioKind.SYT:
        channels["u"] = u_yaw
    return StateTrace(dt=dt, channels=channels, events=events), peak


def simulate_scenario(platform: PlatformModel, scenario: Scenario) -> StateTrace:
    """Simulate one scenario at the platform's native rate.

    For positive scenarios without an explicit hand model, one is drawn from
    the scenario seed and its amplitude calibrated to the standard peak
    force.  Ground-truth interaction markers are recorded as events.
    """
    hand = scenario.hand
    if scenario.kind in POSITIVE_KINDS and hand is None:
        rng = np.random.default_rng(scenario.seed)
        hand = _calibrated_hand(
            _default_hand(rng, scenario.kind),
            platform,
            scenario,
            _target_peak(scenario.kind),
        )
    trace, _ = _run_scenario_loops(platform, scenario, hand)
    return trace


@dataclass
class FeatureSequence:
    """One fixed-length, channel-normalized window at the 1 kHz TID rate."""

    data: np.ndarray  # (length, n_channels)
    channel_names: tuple[str, ...]
    label: int
    kind: ScenarioKind
    scenario_index: int
    offset: int
    augmented: bool = False

    def __len__(self) -> int:
        return len(self.data)


@dataclass
class DatasetSplit:
    train: list[FeatureSequence] = field(default_factory=list)
    validation: list[FeatureSequence] = field(default_factory=list)
    test: list[FeatureSequence] = field(default_factory=list)

    def __iter__(self):
        return iter((self.train, self.validation, self.test))

    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def make_plan(counts: dict[ScenarioKind, int], seed: int = 0, **overrides) -> list[Scenario]:
    """Expand per-kind scenario counts into concrete seeded scenarios."""
    rng = np.random.default_rng(seed)
    plan = []
    for kind in ScenarioKind:
        for _ in range(counts.get(kind, 0)):
            kwargs = dict(overrides)
            if kind is ScenarioKind.CDDP:
                kwargs.setdefault("gap", float(rng.uniform(0.2, 1.0)))
            plan.append(
                Scenario(kind=kind, seed=int(rng.integers(0, 2**31 - 1)), **kwargs)
            )
    return plan


def full_scale_plan(seed: int = 0) -> list[Scenario]:
    """36 idle scenarios sized to yield exactly 14652 one-second windows."""
    # 41.6 s at 1 kHz gives 41600 samples -> 407 windows of 1000 at stride 100
    return make_plan({ScenarioKind.IDLE: 36}, seed=seed, duration=41.6)


def _window_label(
    kind: ScenarioKind,
    isp_kind: ScenarioKind,
    intervals: list[tuple[float, float]],
    t_lo: float,
    t_hi: float,
) -> int:
    if kind is not isp_kind or not intervals:
        return 0
    t0, t1 = intervals[0][0], intervals[-1][1]
    return int(t_lo <= t0 and t1 <= t_hi)


def trace_features(trace: StateTrace, channel_names, channel_scales=None) -> np.ndarray:
    """Stack and normalize the named channels of a trace into (L, C) floats."""
    names = tuple(channel_names)
    if channel_scales is None:
        scales = np.array([CHANNEL_SCALES[n] for n in names])
    else:
        scales = np.asarray(channel_scales, float)
    return np.column_stack([trace.channels[n] for n in names]) / scales


def generate_dataset(
    platform: PlatformModel,
    plan: list[Scenario],
    isp_kind: ScenarioKind,
    augment: bool = True,
    base: PlatformModel | None = None,
    stride: int = NEGATIVE_STRIDE,
    seed: int = 0,
) -> DatasetSplit:
    """Simulate a scenario plan and assemble the windowed, labeled dataset.

    ``isp_kind`` selects the interaction profile the dataset targets: its
    window length and feature channel set.  When ``base`` is given, signals
    are mapped through the platform-to-base transforms at native rate before
    resampling to 1 kHz (exact pass-through when the platforms are equal).
    Splits are stratified per kind, 50/25/25, disjoint by scenario.
    """
    if isp_kind not in POSITIVE_KINDS:
        raise ValueError(f"isp_kind must be a positive interaction kind, got {isp_kind}")
    window = WINDOW_LENGTHS[isp_kind]
    names = FEATURE_CHANNELS[isp_kind]
    scales = np.array([CHANNEL_SCALES[n] for n in names])
    tset = TransformSet.build(platform, base) if base is not None else None

    sequences: list[list[FeatureSequence]] = []
    for index, scenario in enumerate(plan):
        try:
            trace = simulate_scenario(platform, scenario)
            if tset is not None:
                trace = tset.apply_to_trace(trace)
            trace = resample(trace, TID_RATE)
        except (SimulationDivergedError, ScenarioRejectedError, ValueError) as exc:
            raise DatasetGenerationError(index, scenario.kind, exc) from exc
        feats = np.column_stack([trace.channels[n] for n in names]) / scales
        intervals = trace.event_intervals(scenario.kind.value)
        dt = trace.dt
        windows = []
        for off in range(0, len(feats) - window + 1, stride):
            label = _window_label(
                scenario.kind, isp_kind, intervals, off * dt, (off + window - 1) * dt
            )
            windows.append(
                FeatureSequence(
                    data=feats[off : off + window],
                    channel_names=names,
                    label=label,
                    kind=scenario.kind,
                    scenario_index=index,
                    offset=off,
                )
            )
        if scenario.kind is isp_kind and not any(w.label for w in windows):
            raise DatasetGenerationError(
                index,
                scenario.kind,
                ValueError("no window fully contains the interaction support"),
            )
        sequences.append(windows)

    split = DatasetSplit()
    buckets = (split.train, split.validation, split.train, split.test)
    per_kind_position: dict[ScenarioKind, int] = {}
    for index, scenario in enumerate(plan):
        pos = per_kind_position.get(scenario.kind, 0)
        per_kind_position[scenario.kind] = pos + 1
        buckets[pos % 4].extend(sequences[index])

    if augment:
        for bucket in (split.train, split.validation, split.test):
            originals = list(bucket)
            for sequence in originals:
                rng = np.random.default_rng(
                    (seed, sequence.scenario_index, sequence.offset)
                )
                noisy = (
                    sequence.data
                    + AUGMENT_BIAS
                    + rng.normal(0.0, AUGMENT_NOISE_STD, sequence.data.shape)
                ).astype(np.float32)
                bucket.append(replace(sequence, data=noisy, augmented=True))
    return split


# ---------------------------------------------------------------------------
# Disk format: one directory per split; a JSON-lines manifest plus a binary
# file of records, each record a sequence of length-prefixed float32 channel
# blocks in manifest channel order.
# ---------------------------------------------------------------------------


def _write_split(sequences: list[FeatureSequence], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "sequences.bin", "wb") as blob, open(
        directory / "manifest.jsonl", "w"
    ) as manifest:
        for sequence in sequences:
            start = blob.tell()
            for column in sequence.data.T:
                block = np.asarray(column, np.float32).tobytes()
                blob.write(struct.pack("<I", len(column)))
                blob.write(block)
            manifest.write(
                json.dumps(
                    {
                        "kind": sequence.kind.value,
                        "label": sequence.label,
                        "scenario": sequence.scenario_index,
                        "offset": sequence.offset,
                        "augmented": sequence.augmented,
                        "channels": list(sequence.channel_names),
                        "length": len(sequence),
                        "byte_offset": start,
                    }
                )
                + "\n"
            )


def _read_split(directory: Path) -> list[FeatureSequence]:
    sequences = []
    with open(directory / "sequences.bin", "rb") as blob, open(
        directory / "manifest.jsonl"
    ) as manifest:
        for line in manifest:
            meta = json.loads(line)
            blob.seek(meta["byte_offset"])
            columns = []
            for _ in meta["channels"]:
                (length,) = struct.unpack("<I", blob.read(4))
                columns.append(
                    np.frombuffer(blob.read(4 * length), dtype=np.float32)
                )
            sequences.append(
                FeatureSequence(
                    data=np.column_stack(columns),
                    channel_names=tuple(meta["channels"]),
                    label=int(meta["label"]),
                    kind=ScenarioKind(meta["kind"]),
                    scenario_index=int(meta["scenario"]),
                    offset=int(meta["offset"]),
                    augmented=bool(meta["augmented"]),
                )
            )
    return sequences


def save_dataset(split: DatasetSplit, directory) -> None:
    directory = Path(directory)
    _write_split(split.train, directory / "train")
    _write_split(split.validation, directory / "validation")
    _write_split(split.test, directory / "test")


def load_dataset(directory) -> DatasetSplit:
    directory = Path(directory)
    return DatasetSplit(
        train=_read_split(directory / "train"),
        validation=_read_split(directory / "validation"),
        test=_read_split(directory / "test"),
    )
