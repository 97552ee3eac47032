"""Platform models: per-loop identified dynamics, controller gains, and config I/O.

A platform is described by decoupled SISO loops (altitude, attitude/tilt, yaw).
Each loop carries the identified plant parameters [k_eq, t_drag, t_prop, delay]
plus the propulsion static gain, and the PD gains used to close the loop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

__all__ = [
    "LoopKind",
    "PropulsionParams",
    "PDGains",
    "LoopModel",
    "ControlledLoop",
    "PlatformModel",
    "StateTrace",
    "base_platform",
    "test_platform",
    "load_platform",
    "save_platform",
]

CHANNEL_NAMES = ("e_z", "vz", "az", "a_norm", "eta", "yaw", "u")


class LoopKind(enum.Enum):
    ALTITUDE = "altitude"
    ATTITUDE = "attitude"
    YAW = "yaw"


@dataclass(frozen=True)
class PropulsionParams:
    """First-order-plus-delay actuator: gain (N or N.m per unit command),
    time constant and total loop delay, both in seconds."""

    k_gain: float
    t_prop: float
    delay: float

    def __post_init__(self):
        if self.k_gain <= 0:
            raise ValueError(f"k_gain must be positive, got {self.k_gain}")
        if self.t_prop <= 0:
            raise ValueError(f"t_prop must be positive, got {self.t_prop}")
        if self.delay < 0:
            raise ValueError(f"delay must be nonnegative, got {self.delay}")


@dataclass(frozen=True)
class PDGains:
    kc: float
    kd: float

    def __post_init__(self):
        if self.kc <= 0:
            raise ValueError(f"kc must be positive, got {self.kc}")
        if self.kd < 0:
            raise ValueError(f"kd must be nonnegative, got {self.kd}")


@dataclass(frozen=True)
class LoopModel:
    """Identified SISO loop plant.

    ``k_eq`` is the equivalent loop gain, ``t_drag`` the drag time constant
    (zero means no drag; structurally absent for the yaw loop).  The effective
    inertia of the loop is ``prop.k_gain / k_eq`` so that the command-to-output
    chain has equivalent gain k_eq.
    """

    k_eq: float
    t_drag: float
    prop: PropulsionParams
    kind: LoopKind

    def __post_init__(self):
        if self.k_eq <= 0:
            raise ValueError(f"k_eq must be positive, got {self.k_eq}")
        if self.t_drag < 0:
            raise ValueError(f"t_drag must be nonnegative, got {self.t_drag}")
        if self.kind is LoopKind.YAW and self.t_drag != 0.0:
            raise ValueError("yaw loop is structurally second order; t_drag must be 0")

    @property
    def inertia(self) -> float:
        """Effective mass (kg) or rotational inertia of the loop."""
        return self.prop.k_gain / self.k_eq


@dataclass(frozen=True)
class ControlledLoop:
    model: LoopModel
    gains: PDGains


@dataclass(frozen=True)
class PlatformModel:
    """One UAV: mass, the three controlled loops, and the native sample rate."""

    mass: float
    altitude: ControlledLoop
    attitude: ControlledLoop
    yaw: ControlledLoop
    sample_rate: float

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        alt = self.altitude.model
        if not np.isclose(alt.prop.k_gain, alt.k_eq * self.mass, rtol=1e-6):
            raise ValueError(
                "altitude loop must satisfy k_gain == k_eq * mass; got "
                f"k_gain={alt.prop.k_gain}, k_eq*mass={alt.k_eq * self.mass}"
            )

    def loop(self, kind: LoopKind) -> ControlledLoop:
        return {
            LoopKind.ALTITUDE: self.altitude,
            LoopKind.ATTITUDE: self.attitude,
            LoopKind.YAW: self.yaw,
        }[kind]


@dataclass
class StateTrace:
    """Uniformly sampled multichannel record of simulated loop states.

    Channels: e_z (m), vz (m/s), az (m/s^2), a_norm (m/s^2), eta (rad),
    yaw (rad), u (command).  ``events`` holds (time, label) ground-truth
    interaction markers; interval markers use labels "<kind>:start" /
    "<kind>:end".
    """

    dt: float
    channels: dict[str, np.ndarray]
    events: list[tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths: {lengths}")
        for name, v in self.channels.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"channel {name!r} contains non-finite samples")

    def __len__(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def save(self, path: str | Path) -> None:
        """Write as CSV (time + channels); events go to a YAML sidecar."""
        path = Path(path)
        names = list(self.channels)
        data = np.column_stack([self.times] + [self.channels[n] for n in names])
        header = ",".join(["time"] + names)
        np.savetxt(path, data, delimiter=",", header=header, comments="")
        sidecar = path.with_suffix(path.suffix + ".events.yaml")
        with open(sidecar, "w") as f:
            yaml.safe_dump(
                {"events": [[float(t), str(lbl)] for t, lbl in self.events]}, f
            )

    @classmethod
    def load(cls, path: str | Path) -> "StateTrace":
        path = Path(path)
        with open(path) as f:
            names = f.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        times = data[:, 0]
        if len(times) > 1:
            dt = float(times[1] - times[0])
        else:
            dt = 1.0
        channels = {n: data[:, i] for i, n in enumerate(names) if i > 0}
        events: list[tuple[float, str]] = []
        sidecar = path.with_suffix(path.suffix + ".events.yaml")
        if sidecar.exists():
            with open(sidecar) as f:
                doc = yaml.safe_load(f) or {}
            events = [(float(t), str(lbl)) for t, lbl in doc.get("events", [])]
        return cls(dt=dt, channels=channels, events=events)

    def event_intervals(self, kind: str | None = None) -> list[tuple[float, float]]:
        """Ground-truth interaction intervals recorded by the generator."""
        starts: dict[str, float] = {}
        out = []
        for t, label in self.events:
            name, _, edge = label.partition(":")
            if kind is not None and name != kind:
                continue
            if edge == "start":
                starts[name] = t
            elif edge == "end" and name in starts:
                out.append((starts.pop(name), t))
        return out


# ---------------------------------------------------------------------------
# Reference platforms.  Altitude rows follow the published identification of
# the two vehicles (quadrotor base at 1.0 kg, hexarotor test at 2.26 kg); the
# attitude and yaw loops are synthetic but stable defaults, since only the
# altitude channel was identified on hardware.
# ---------------------------------------------------------------------------


def base_platform(sample_rate: float = 500.0) -> PlatformModel:
    mass = 1.0
    return PlatformModel(
        mass=mass,
        altitude=ControlledLoop(
            LoopModel(
                k_eq=0.1415,
                t_drag=0.2776,
                prop=PropulsionParams(k_gain=0.1415 * mass, t_prop=0.0224, delay=0.0656),
                kind=LoopKind.ALTITUDE,
            ),
            PDGains(kc=75.0, kd=13.0),
        ),
        attitude=ControlledLoop(
            LoopModel(
                k_eq=2.0,
                t_drag=0.15,
                prop=PropulsionParams(k_gain=0.4, t_prop=0.0224, delay=0.03),
                kind=LoopKind.ATTITUDE,
            ),
            PDGains(kc=18.0, kd=3.0),
        ),
        yaw=ControlledLoop(
            LoopModel(
                k_eq=1.2,
                t_drag=0.0,
                prop=PropulsionParams(k_gain=0.25, t_prop=0.06, delay=0.03),
                kind=LoopKind.YAW,
            ),
            PDGains(kc=6.0, kd=1.2),
        ),
        sample_rate=sample_rate,
    )


def test_platform(sample_rate: float = 250.0) -> PlatformModel:
    mass = 2.26
    return PlatformModel(
        mass=mass,
        altitude=ControlledLoop(
            LoopModel(
                k_eq=0.5090,
                t_drag=0.2,
                prop=PropulsionParams(k_gain=0.5090 * mass, t_prop=0.3, delay=0.0128),
                kind=LoopKind.ALTITUDE,
            ),
            PDGains(kc=24.809, kd=7.4476),
        ),
        attitude=ControlledLoop(
            LoopModel(
                k_eq=1.1,
                t_drag=0.12,
                prop=PropulsionParams(k_gain=0.9, t_prop=0.08, delay=0.02),
                kind=LoopKind.ATTITUDE,
            ),
            PDGains(kc=10.0, kd=2.2),
        ),
        yaw=ControlledLoop(
            LoopModel(
                k_eq=0.8,
                t_drag=0.0,
                prop=PropulsionParams(k_gain=0.5, t_prop=0.09, delay=0.02),
                kind=LoopKind.YAW,
            ),
            PDGains(kc=5.0, kd=1.0),
        ),
        sample_rate=sample_rate,
    )


# ---------------------------------------------------------------------------
# Config I/O.  Field names mirror the dataclasses; no single-letter symbols.
# ---------------------------------------------------------------------------


def _loop_to_dict(cl: ControlledLoop) -> dict:
    return {
        "k_eq": cl.model.k_eq,
        "t_drag": cl.model.t_drag,
        "k_gain": cl.model.prop.k_gain,
        "t_prop": cl.model.prop.t_prop,
        "delay": cl.model.prop.delay,
        "kc": cl.gains.kc,
        "kd": cl.gains.kd,
    }


def _loop_from_dict(d: dict, kind: LoopKind) -> ControlledLoop:
    return ControlledLoop(
        LoopModel(
            k_eq=float(d["k_eq"]),
            t_drag=float(d["t_drag"]),
            prop=PropulsionParams(
                k_gain=float(d["k_gain"]),
                t_prop=float(d["t_prop"]),
                delay=float(d["delay"]),
            ),
            kind=kind,
        ),
        PDGains(kc=float(d["kc"]), kd=float(d["kd"])),
    )


def save_platform(platform: PlatformModel, path: str | Path) -> None:
    doc = {
        "mass": platform.mass,
        "sample_rate": platform.sample_rate,
        "altitude": _loop_to_dict(platform.altitude),
        "attitude": _loop_to_dict(platform.attitude),
        "yaw": _loop_to_dict(platform.yaw),
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_platform(path: str | Path) -> PlatformModel:
    with open(path) as f:
        doc = yaml.safe_load(f)
    return PlatformModel(
        mass=float(doc["mass"]),
        altitude=_loop_from_dict(doc["altitude"], LoopKind.ALTITUDE),
        attitude=_loop_from_dict(doc["attitude"], LoopKind.ATTITUDE),
        yaw=_loop_from_dict(doc["yaw"], LoopKind.YAW),
        sample_rate=float(doc["sample_rate"]),
    )
