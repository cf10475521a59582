"""Synthetic radar scenarios: ground-truth trajectories plus noisy,
multi-pass detection samples with Doppler, clutter and dropouts.

Objects follow piecewise maneuver schedules (straight, constant-turn,
stopped). Detection noise has two levels: a per-frame common offset shared
by all passes (the detector seeing one frame is consistently wrong the same
way) and an independent per-pass jitter (the stochastic spread an MC-dropout
detector shows across passes). Clutter boxes are Poisson per pass with
uniform positions and Dopplers.

Everything is deterministic given the spec's seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fusion import SampleSet
from .geometry import Box3D, Detection, KinematicState, radial_velocity, yaw_normalize
from .io import make_manifest, read_jsonl, write_jsonl
from .predictor import History

SEGMENT_KINDS = ("cv", "turn", "stop")

# clutter boxes are drawn uniformly from these ranges
CLUTTER_XY_RANGE = (-120.0, 120.0)
CLUTTER_Z_RANGE = (-1.0, 1.0)
CLUTTER_DOPPLER_RANGE = (-30.0, 30.0)
CLUTTER_LENGTH_RANGE = (3.0, 5.0)
CLUTTER_WIDTH_RANGE = (1.5, 2.5)
CLUTTER_HEIGHT_RANGE = (1.2, 2.0)

_TRUE_CONF_MEAN, _TRUE_CONF_STD = 0.8, 0.1
_CLUTTER_CONF_MEAN, _CLUTTER_CONF_STD = 0.35, 0.15
_CONF_CLIP = (0.01, 1.0)


@dataclass(frozen=True)
class SegmentSpec:
    """One maneuver leg: kind, length in frames, and parameters.

    ``speed`` overrides the object's cruise speed for this leg (ignored for
    ``stop``, which always means zero speed); ``omega`` is the yaw rate in
    rad/s for ``turn`` segments.
    """

    kind: str
    duration: int
    omega: float = 0.0
    speed: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"segment kind must be one of {SEGMENT_KINDS}, got {self.kind!r}")
        if self.duration < 1:
            raise ValueError("segment duration must be >= 1 frame")
        if self.kind == "turn" and self.omega == 0.0:
            raise ValueError("turn segment requires a nonzero omega")
        if self.speed is not None and self.speed < 0.0:
            raise ValueError("segment speed must be >= 0")


@dataclass(frozen=True)
class ObjectSpec:
    object_id: int
    x: float
    y: float
    yaw: float
    speed: float
    segments: tuple[SegmentSpec, ...]
    z: float = 0.0
    l: float = 4.0
    w: float = 2.0
    h: float = 1.6

    def __post_init__(self) -> None:
        if self.speed < 0.0:
            raise ValueError("cruise speed must be >= 0")
        if not self.segments:
            raise ValueError("object needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class SensorNoise:
    """Noise scales; all standard deviations.

    ``pose_sigma`` (x, y, z, yaw) is drawn once per frame per object and
    shared by every pass; ``jitter_sigma`` perturbs x, y, z independently
    per pass.
    """

    pose_sigma: tuple[float, float, float, float] = (0.3, 0.3, 0.1, 0.05)
    doppler_sigma: float = 0.5
    jitter_sigma: float = 0.15

    def __post_init__(self) -> None:
        sigmas = (*self.pose_sigma, self.doppler_sigma, self.jitter_sigma)
        if any(s < 0.0 for s in sigmas):
            raise ValueError("noise sigmas must be >= 0")
        object.__setattr__(self, "pose_sigma", tuple(float(s) for s in self.pose_sigma))


@dataclass(frozen=True)
class ScenarioSpec:
    duration: int
    objects: tuple[ObjectSpec, ...]
    frame_rate: float = 10.0
    noise: SensorNoise = field(default_factory=SensorNoise)
    clutter_rate: float = 1.0  # Poisson mean false alarms per pass
    p_detect: float = 0.9
    n_d: int = 10
    seed: int = 0
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("duration must be >= 1 frame")
        if self.frame_rate <= 0.0:
            raise ValueError("frame_rate must be positive")
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must be in [0, 1]")
        if self.clutter_rate < 0.0:
            raise ValueError("clutter_rate must be >= 0")
        if self.n_d < 1:
            raise ValueError("n_d must be >= 1")
        ids = [o.object_id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError("object ids must be unique")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "sensor_origin", tuple(float(v) for v in self.sensor_origin))

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate


@dataclass(frozen=True)
class GroundTruthObject:
    object_id: int
    box: Box3D
    velocity: tuple[float, float, float]


@dataclass(frozen=True)
class GroundTruthFrame:
    frame_index: int
    objects: tuple[GroundTruthObject, ...]


def _advance(x: float, y: float, yaw: float, speed: float, segment: SegmentSpec, dt: float):
    """Integrate one frame of motion exactly (closed-form circular arcs)."""
    if segment.kind == "stop" or speed == 0.0:
        return x, y, yaw
    if segment.kind == "cv":
        return x + speed * math.cos(yaw) * dt, y + speed * math.sin(yaw) * dt, yaw
    omega = segment.omega
    new_yaw = yaw + omega * dt
    radius = speed / omega
    x = x + radius * (math.sin(new_yaw) - math.sin(yaw))
    y = y - radius * (math.cos(new_yaw) - math.cos(yaw))
    return x, y, new_yaw


def _trajectory(obj: ObjectSpec, duration: int, dt: float) -> list[tuple[int, Box3D, tuple]]:
    """Per-frame (frame, box, velocity) while the schedule covers the frame."""
    out = []
    x, y, yaw = obj.x, obj.y, obj.yaw
    frame = 0
    for segment in obj.segments:
        speed = 0.0 if segment.kind == "stop" else (
            obj.speed if segment.speed is None else segment.speed
        )
        for _ in range(segment.duration):
            if frame >= duration:
                return out
            vx, vy = speed * math.cos(yaw), speed * math.sin(yaw)
            box = Box3D(x=x, y=y, z=obj.z, l=obj.l, w=obj.w, h=obj.h, yaw=yaw_normalize(yaw))
            out.append((frame, box, (vx, vy, 0.0)))
            x, y, yaw = _advance(x, y, yaw, speed, segment, dt)
            frame += 1
    return out


def _true_doppler(box: Box3D, velocity: tuple, origin: tuple) -> float:
    position = np.array([box.x, box.y, box.z])
    if np.array_equal(position, np.asarray(origin, dtype=float)):
        return 0.0
    state = KinematicState(
        x=box.x, y=box.y, z=box.z, yaw=box.yaw,
        vx=velocity[0], vy=velocity[1], vz=velocity[2],
    )
    return radial_velocity(state, np.asarray(origin, dtype=float))


def _clip_conf(value: float) -> float:
    return float(min(max(value, _CONF_CLIP[0]), _CONF_CLIP[1]))


def generate(spec: ScenarioSpec) -> tuple[list[GroundTruthFrame], list[SampleSet]]:
    """Simulate a scenario: exact trajectories plus noisy MC sample sets."""
    per_object = {o.object_id: dict() for o in spec.objects}
    for obj in spec.objects:
        for frame, box, velocity in _trajectory(obj, spec.duration, spec.dt):
            per_object[obj.object_id][frame] = (box, velocity)

    gt_frames: list[GroundTruthFrame] = []
    for frame in range(spec.duration):
        present = [
            GroundTruthObject(object_id=oid, box=entry[frame][0], velocity=entry[frame][1])
            for oid, entry in sorted(per_object.items())
            if frame in entry
        ]
        gt_frames.append(GroundTruthFrame(frame_index=frame, objects=tuple(present)))

    frame_seeds = np.random.SeedSequence(spec.seed).spawn(spec.duration)
    sample_sets: list[SampleSet] = []
    sigma = np.asarray(spec.noise.pose_sigma)
    for frame, gt in enumerate(gt_frames):
        rng = np.random.default_rng(frame_seeds[frame])
        common = {
            obj.object_id: rng.normal(0.0, sigma, size=4) for obj in gt.objects
        }
        passes: list[list[Detection]] = []
        for _ in range(spec.n_d):
            detections: list[Detection] = []
            for obj in gt.objects:
                detected = rng.random() < spec.p_detect
                jitter = rng.normal(0.0, spec.noise.jitter_sigma, size=3)
                doppler_noise = rng.normal(0.0, spec.noise.doppler_sigma)
                confidence = _clip_conf(rng.normal(_TRUE_CONF_MEAN, _TRUE_CONF_STD))
                if not detected:
                    continue
                offset = common[obj.object_id]
                box = Box3D(
                    x=obj.box.x + offset[0] + jitter[0],
                    y=obj.box.y + offset[1] + jitter[1],
                    z=obj.box.z + offset[2] + jitter[2],
                    l=obj.box.l, w=obj.box.w, h=obj.box.h,
                    yaw=yaw_normalize(obj.box.yaw + offset[3]),
                )
                doppler = _true_doppler(obj.box, obj.velocity, spec.sensor_origin)
                detections.append(
                    Detection(box=box, doppler=doppler + doppler_noise, confidence=confidence)
                )
            n_clutter = rng.poisson(spec.clutter_rate)
            for _ in range(n_clutter):
                cx, cy = rng.uniform(*CLUTTER_XY_RANGE, size=2)
                cz = rng.uniform(*CLUTTER_Z_RANGE)
                detections.append(
                    Detection(
                        box=Box3D(
                            x=cx, y=cy, z=cz,
                            l=rng.uniform(*CLUTTER_LENGTH_RANGE),
                            w=rng.uniform(*CLUTTER_WIDTH_RANGE),
                            h=rng.uniform(*CLUTTER_HEIGHT_RANGE),
                            yaw=rng.uniform(-math.pi, math.pi),
                        ),
                        doppler=rng.uniform(*CLUTTER_DOPPLER_RANGE),
                        confidence=_clip_conf(
                            rng.normal(_CLUTTER_CONF_MEAN, _CLUTTER_CONF_STD)
                        ),
                    )
                )
            passes.append(detections)
        sample_sets.append(SampleSet(samples=passes, frame=frame))
    return gt_frames, sample_sets


PRESET_NAMES = ("crossing_doppler", "regime_switch", "dense_parallel", "stopgo")


def preset(name: str, seed: int = 0) -> ScenarioSpec:
    """Named stress scenarios used throughout the experiments."""
    if name == "crossing_doppler":
        # Two objects whose paths intersect at (0, 60) at frame 50, arriving
        # simultaneously with radial speeds +10 and -10 m/s as seen from the
        # origin.  The detector's frame-level pose error (0.55 m, common to
        # all passes of a frame, so invisible in the sample spread) is made
        # deliberately larger than a well-tuned filter expects, so position
        # gating alone misplaces identities while radial velocity still
        # separates the two objects cleanly; the long tail after the crossing
        # gives those confusions room to compound.
        cross_speed = 10.0 / math.cos(math.pi / 4)
        objects = (
            ObjectSpec(object_id=0, x=0.0, y=10.0, yaw=math.pi / 2, speed=10.0,
                       segments=(SegmentSpec("cv", 200),)),
            ObjectSpec(object_id=1, x=50.0, y=110.0, yaw=-3.0 * math.pi / 4,
                       speed=cross_speed, segments=(SegmentSpec("cv", 200),)),
        )
        noise = SensorNoise(pose_sigma=(0.55, 0.55, 0.1, 0.05),
                            doppler_sigma=0.5, jitter_sigma=0.15)
        return ScenarioSpec(duration=200, objects=objects, noise=noise,
                            seed=seed, name=name)
    if name == "regime_switch":
        # alternate straight and hard-turn legs every 30 frames
        def schedule(first_omega: float) -> tuple[SegmentSpec, ...]:
            return (
                SegmentSpec("cv", 30),
                SegmentSpec("turn", 30, omega=first_omega),
                SegmentSpec("cv", 30),
                SegmentSpec("turn", 30, omega=-first_omega),
                SegmentSpec("cv", 30),
            )

        objects = (
            ObjectSpec(object_id=0, x=-40.0, y=20.0, yaw=0.0, speed=10.0,
                       segments=schedule(1.2)),
            ObjectSpec(object_id=1, x=40.0, y=-20.0, yaw=math.pi, speed=8.0,
                       segments=schedule(-1.0)),
            ObjectSpec(object_id=2, x=-30.0, y=-40.0, yaw=math.pi / 3, speed=12.0,
                       segments=schedule(1.4)),
        )
        return ScenarioSpec(duration=150, objects=objects, seed=seed, name=name)
    if name == "dense_parallel":
        # ten objects in adjacent lanes 4 m apart, near-equal speeds
        objects = tuple(
            ObjectSpec(object_id=i, x=-50.0 - 2.0 * i, y=-18.0 + 4.0 * i, yaw=0.0,
                       speed=9.0 + 0.2 * i, segments=(SegmentSpec("cv", 100),))
            for i in range(10)
        )
        return ScenarioSpec(duration=100, objects=objects, seed=seed, name=name)
    if name == "stopgo":
        objects = (
            ObjectSpec(object_id=0, x=-40.0, y=8.0, yaw=0.0, speed=9.0,
                       segments=(SegmentSpec("cv", 40), SegmentSpec("stop", 30),
                                 SegmentSpec("cv", 30))),
            ObjectSpec(object_id=1, x=50.0, y=-8.0, yaw=math.pi, speed=11.0,
                       segments=(SegmentSpec("stop", 20), SegmentSpec("cv", 50),
                                 SegmentSpec("stop", 30))),
            ObjectSpec(object_id=2, x=-60.0, y=-30.0, yaw=math.pi / 2, speed=7.0,
                       segments=(SegmentSpec("cv", 100),)),
        )
        return ScenarioSpec(duration=100, objects=objects, seed=seed, name=name)
    raise ValueError(f"unknown preset {name!r}; available: {PRESET_NAMES}")


def export_training_set(
    gt_frames: Sequence[GroundTruthFrame], horizon: int
) -> list[tuple[History, np.ndarray]]:
    """Sliding (history, next pose) windows over each ground-truth trajectory.

    Each sample pairs ``horizon`` consecutive poses with the following one;
    trajectories shorter than ``horizon + 1`` contribute nothing.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    tracks: dict[int, list[np.ndarray]] = {}
    for gt in gt_frames:
        for obj in gt.objects:
            pose = np.array([obj.box.x, obj.box.y, obj.box.z, obj.box.yaw])
            tracks.setdefault(obj.object_id, []).append(pose)
    samples: list[tuple[History, np.ndarray]] = []
    for oid in sorted(tracks):
        poses = np.asarray(tracks[oid])
        for start in range(len(poses) - horizon):
            window = poses[start:start + horizon]
            target = poses[start + horizon]
            samples.append((History(window.copy()), target.copy()))
    return samples


# ---------------------------------------------------------------------------
# spec <-> dict conversion and scenario files


def spec_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "name": spec.name,
        "duration": spec.duration,
        "frame_rate": spec.frame_rate,
        "seed": spec.seed,
        "n_d": spec.n_d,
        "p_detect": spec.p_detect,
        "clutter_rate": spec.clutter_rate,
        "sensor_origin": list(spec.sensor_origin),
        "noise": {
            "pose_sigma": list(spec.noise.pose_sigma),
            "doppler_sigma": spec.noise.doppler_sigma,
            "jitter_sigma": spec.noise.jitter_sigma,
        },
        "objects": [
            {
                "object_id": o.object_id,
                "x": o.x, "y": o.y, "z": o.z, "yaw": o.yaw, "speed": o.speed,
                "l": o.l, "w": o.w, "h": o.h,
                "segments": [
                    {"kind": s.kind, "duration": s.duration, "omega": s.omega,
                     "speed": s.speed}
                    for s in o.segments
                ],
            }
            for o in spec.objects
        ],
    }


def spec_from_dict(data: dict) -> ScenarioSpec:
    noise = data.get("noise", {})
    objects = tuple(
        ObjectSpec(
            object_id=int(o["object_id"]),
            x=float(o["x"]), y=float(o["y"]), z=float(o.get("z", 0.0)),
            yaw=float(o["yaw"]), speed=float(o["speed"]),
            l=float(o.get("l", 4.0)), w=float(o.get("w", 2.0)), h=float(o.get("h", 1.6)),
            segments=tuple(
                SegmentSpec(
                    kind=s["kind"], duration=int(s["duration"]),
                    omega=float(s.get("omega", 0.0)),
                    speed=None if s.get("speed") is None else float(s["speed"]),
                )
                for s in o["segments"]
            ),
        )
        for o in data["objects"]
    )
    return ScenarioSpec(
        duration=int(data["duration"]),
        objects=objects,
        frame_rate=float(data.get("frame_rate", 10.0)),
        noise=SensorNoise(
            pose_sigma=tuple(noise.get("pose_sigma", (0.3, 0.3, 0.1, 0.05))),
            doppler_sigma=float(noise.get("doppler_sigma", 0.5)),
            jitter_sigma=float(noise.get("jitter_sigma", 0.15)),
        ),
        clutter_rate=float(data.get("clutter_rate", 1.0)),
        p_detect=float(data.get("p_detect", 0.9)),
        n_d=int(data.get("n_d", 10)),
        seed=int(data.get("seed", 0)),
        sensor_origin=tuple(data.get("sensor_origin", (0.0, 0.0, 0.0))),
        name=str(data.get("name", "custom")),
    )


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)


def _box_record(box: Box3D) -> list[float]:
    return [box.x, box.y, box.z, box.l, box.w, box.h, box.yaw]


def _box_from_record(values: Sequence[float]) -> Box3D:
    x, y, z, l, w, h, yaw = (float(v) for v in values)
    return Box3D(x=x, y=y, z=z, l=l, w=w, h=h, yaw=yaw)


def write_ground_truth(path: str | Path, gt_frames: Sequence[GroundTruthFrame],
                       spec: ScenarioSpec) -> None:
    header = make_manifest("ground_truth", seed=spec.seed, config=spec_to_dict(spec))
    header["scenario"] = spec_to_dict(spec)
    records = (
        {
            "frame": gt.frame_index,
            "objects": [
                {"object_id": o.object_id, "box": _box_record(o.box),
                 "velocity": list(o.velocity)}
                for o in gt.objects
            ],
        }
        for gt in gt_frames
    )
    write_jsonl(path, header, records)


def read_ground_truth(path: str | Path) -> list[GroundTruthFrame]:
    _, records = read_jsonl(path, expect_kind="ground_truth")
    return [
        GroundTruthFrame(
            frame_index=int(rec["frame"]),
            objects=tuple(
                GroundTruthObject(
                    object_id=int(o["object_id"]),
                    box=_box_from_record(o["box"]),
                    velocity=tuple(float(v) for v in o["velocity"]),
                )
                for o in rec["objects"]
            ),
        )
        for rec in records
    ]


def read_scenario_header(path: str | Path) -> ScenarioSpec:
    """Recover the generating scenario from a ground-truth or samples file."""
    header, _ = read_jsonl(path)
    if "scenario" not in header:
        raise ValueError(f"{path}: file header carries no scenario description")
    return spec_from_dict(header["scenario"])


def write_sample_sets(path: str | Path, sample_sets: Sequence[SampleSet],
                      spec: ScenarioSpec) -> None:
    header = make_manifest("detection_samples", seed=spec.seed, config=spec_to_dict(spec))
    header["scenario"] = spec_to_dict(spec)
    header["n_d"] = spec.n_d
    records = (
        {
            "frame": ss.frame,
            "passes": [
                [
                    {"box": _box_record(d.box), "doppler": d.doppler,
                     "confidence": d.confidence}
                    for d in single_pass
                ]
                for single_pass in ss.samples
            ],
        }
        for ss in sample_sets
    )
    write_jsonl(path, header, records)


def read_sample_sets(path: str | Path) -> list[SampleSet]:
    _, records = read_jsonl(path, expect_kind="detection_samples")
    out = []
    for rec in records:
        passes = [
            [
                Detection(
                    box=_box_from_record(d["box"]),
                    doppler=float(d["doppler"]),
                    confidence=float(d["confidence"]),
                )
                for d in single_pass
            ]
            for single_pass in rec["passes"]
        ]
        out.append(SampleSet(samples=passes, frame=int(rec["frame"])))
    return out
