"""Per-frame tracking pipeline: predict, associate, update, manage lifecycles.

The state vector is [x, y, z, yaw, vx, vy, vz] with a constant-velocity
transition; the measurement is the pose [x, y, z, yaw] of a fused
detection. Process and measurement noise are either fixed diagonals or
adapted per step: the Monte-Carlo prediction variance can replace the pose
block of Q, and the fused detection's sample variance can replace R. Both
adaptive modes are floored at the fixed baseline by default so that
coincidentally identical samples cannot collapse the filter's uncertainty;
the un-floored variants exist to study exactly that failure mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .association import AssociationConfig, AssociationResult, TrackPrediction, associate
from .fusion import DEFAULT_MIN_SUPPORT, DEFAULT_TAU_IOU, SampleSet, fuse_frame
from .geometry import (
    Box3D,
    Detection,
    KinematicState,
    radial_velocity,
    wrap_residual,
    yaw_normalize,
)
from .predictor import (
    History,
    PredictionDistribution,
    PredictorModel,
    cv_predict,
    mc_predict,
)

STATE_DIM = 7
POSE_DIM = 4

# measurement matrix: pose rows of the state
_H = np.zeros((POSE_DIM, STATE_DIM))
_H[:4, :4] = np.eye(4)

# indices of the pose entries inside Box3D.params() order (x y z l w h yaw)
_BOX_POSE_IDX = (0, 1, 2, 6)

_SIZE_ALPHA = 0.5  # exponential smoothing factor for box extents
_SCORE_ALPHA = 0.7  # exponential moving average factor for track score
_HISTORY_CAP = 10  # poses retained per track; covers every supported horizon

PROCESS_MODES = ("fixed", "mc_variance")
MEASUREMENT_MODES = ("fixed", "detection_variance")
MOTION_MODES = ("cv", "predictor")


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass
class NoiseConfig:
    """Kalman noise setup; diagonals are variances.

    ``q0`` covers the full state, ``r0`` and ``p0``'s first four entries the
    pose. With ``floor_process``/``floor_measurement`` enabled (the default)
    adaptive variances never drop below the fixed baselines.
    """

    mode_process: str = "fixed"
    mode_measurement: str = "fixed"
    q0: np.ndarray = field(
        default_factory=lambda: np.array([0.25, 0.25, 0.1, 0.05, 1.0, 1.0, 0.25])
    )
    r0: np.ndarray = field(default_factory=lambda: np.array([0.09, 0.09, 0.04, 0.01]))
    p0: np.ndarray = field(
        default_factory=lambda: np.array([0.25, 0.25, 0.1, 0.05, 25.0, 25.0, 4.0])
    )
    floor_process: bool = True
    floor_measurement: bool = True

    def __post_init__(self) -> None:
        if self.mode_process not in PROCESS_MODES:
            raise ValueError(f"mode_process must be one of {PROCESS_MODES}")
        if self.mode_measurement not in MEASUREMENT_MODES:
            raise ValueError(f"mode_measurement must be one of {MEASUREMENT_MODES}")
        self.q0 = np.asarray(self.q0, dtype=float)
        self.r0 = np.asarray(self.r0, dtype=float)
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.q0.shape != (STATE_DIM,) or self.p0.shape != (STATE_DIM,):
            raise ValueError("q0 and p0 must be length-7 diagonals")
        if self.r0.shape != (POSE_DIM,):
            raise ValueError("r0 must be a length-4 diagonal")
        for name, diag in (("q0", self.q0), ("r0", self.r0), ("p0", self.p0)):
            if np.any(diag <= 0):
                raise ValueError(f"{name} diagonal entries must be positive")


@dataclass
class LifecycleParams:
    min_hits: int = 2
    max_age: int = 3
    init_score_min: float = 0.3

    def __post_init__(self) -> None:
        if self.min_hits < 1 or self.max_age < 0:
            raise ValueError("require min_hits >= 1 and max_age >= 0")
        if not 0.0 <= self.init_score_min <= 1.0:
            raise ValueError("init_score_min must be in [0, 1]")


@dataclass(eq=False)
class Track:
    id: int
    state: KinematicState
    cov: np.ndarray
    history: History
    l: float
    w: float
    h: float
    score: float
    hits: int = 1
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE

    @property
    def box(self) -> Box3D:
        return Box3D(
            x=self.state.x, y=self.state.y, z=self.state.z,
            l=self.l, w=self.w, h=self.h, yaw=self.state.yaw,
        )

    def record_pose(self) -> None:
        """Append the current pose to the history, keeping a bounded window."""
        poses = np.vstack([self.history.poses, self.state.pose])[-_HISTORY_CAP:]
        self.history = History(poses)


@dataclass(frozen=True)
class TrackSnapshot:
    track_id: int
    box: Box3D
    velocity: tuple[float, float, float]
    score: float


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    tracks: tuple[TrackSnapshot, ...]
    # (track_id, detection_index) pairs rescued by the velocity-aware second
    # association stage this frame; empty under plain Mahalanobis matching
    stage2_pairs: tuple[tuple[int, int], ...] = ()


def transition_matrix(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 4] = F[1, 5] = F[2, 6] = dt
    return F


def start_track(track_id: int, detection: Detection, noise: NoiseConfig) -> Track:
    """Birth a tentative track from an unmatched detection (zero velocity prior)."""
    box = detection.box
    state = KinematicState(x=box.x, y=box.y, z=box.z, yaw=box.yaw, vx=0.0, vy=0.0, vz=0.0)
    return Track(
        id=track_id,
        state=state,
        cov=np.diag(noise.p0.copy()),
        history=History(state.pose[None, :]),
        l=box.l, w=box.w, h=box.h,
        score=detection.confidence,
    )


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kf_predict(
    track: Track,
    prediction: PredictionDistribution,
    noise: NoiseConfig,
    dt: float,
) -> Track:
    """Advance a track to the predicted pose and inflate its covariance.

    The mean comes from the motion predictor; velocity is re-derived by
    finite-differencing consecutive poses, since the predictor outputs pose
    only. In ``mc_variance`` mode the pose block of Q is the prediction's
    sample variance (floored at q0 unless disabled).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    old = track.state
    mean = prediction.mean
    track.state = KinematicState(
        x=float(mean[0]), y=float(mean[1]), z=float(mean[2]),
        yaw=yaw_normalize(float(mean[3])),
        vx=(float(mean[0]) - old.x) / dt,
        vy=(float(mean[1]) - old.y) / dt,
        vz=(float(mean[2]) - old.z) / dt,
    )

    q = noise.q0.copy()
    if noise.mode_process == "mc_variance":
        pose_var = np.asarray(prediction.variance, dtype=float)
        if noise.floor_process:
            pose_var = np.maximum(pose_var, noise.q0[:POSE_DIM])
        q[:POSE_DIM] = pose_var

    F = transition_matrix(dt)
    track.cov = _symmetrize(F @ track.cov @ F.T + np.diag(q))
    return track


def measurement_noise(detection: Detection, noise: NoiseConfig) -> np.ndarray:
    """Diagonal R for one detection under the configured measurement mode."""
    r = noise.r0.copy()
    if noise.mode_measurement == "detection_variance":
        pose_var = detection.box_std[list(_BOX_POSE_IDX)] ** 2
        if noise.floor_measurement:
            pose_var = np.maximum(pose_var, noise.r0)
        r = pose_var
    return r


def kf_update(track: Track, detection: Detection, noise: NoiseConfig) -> Track:
    """Kalman correction with the detection pose; smooths size and score."""
    R = np.diag(measurement_noise(detection, noise))
    z = np.array([detection.box.x, detection.box.y, detection.box.z, detection.box.yaw])

    x = track.state.as_vector()
    nu = z - _H @ x
    nu[3] = wrap_residual(nu[3])
    S = _H @ track.cov @ _H.T + R
    K = track.cov @ _H.T @ np.linalg.inv(S)
    x = x + K @ nu
    x[3] = yaw_normalize(x[3])
    track.state = KinematicState.from_vector(x)

    I_KH = np.eye(STATE_DIM) - K @ _H
    track.cov = _symmetrize(I_KH @ track.cov @ I_KH.T + K @ R @ K.T)

    track.l = _SIZE_ALPHA * detection.box.l + (1.0 - _SIZE_ALPHA) * track.l
    track.w = _SIZE_ALPHA * detection.box.w + (1.0 - _SIZE_ALPHA) * track.w
    track.h = _SIZE_ALPHA * detection.box.h + (1.0 - _SIZE_ALPHA) * track.h
    track.score = _SCORE_ALPHA * detection.confidence + (1.0 - _SCORE_ALPHA) * track.score
    track.hits += 1
    track.misses = 0
    return track


def lifecycle_step(
    tracks: Sequence[Track],
    assoc: AssociationResult,
    detections: Sequence[Detection],
    params: LifecycleParams,
    noise: NoiseConfig,
    next_track_id: int,
) -> tuple[list[Track], list[Track], list[int]]:
    """Apply miss/birth/death/confirmation rules after matching.

    Matched tracks must already be measurement-updated. Returns the
    surviving tracks, freshly born tentative tracks, and ids removed this
    frame. A track dies once its consecutive misses exceed ``max_age``.
    """
    matched_ids = {m.track_id for m in assoc.matches}
    survivors: list[Track] = []
    dead: list[int] = []
    for track in tracks:
        if track.id not in matched_ids:
            track.misses += 1
        if track.misses > params.max_age:
            track.status = TrackStatus.DEAD
            dead.append(track.id)
            continue
        if track.status is TrackStatus.TENTATIVE and track.hits >= params.min_hits:
            track.status = TrackStatus.CONFIRMED
        survivors.append(track)

    born: list[Track] = []
    for det_index in assoc.unmatched_detections:
        det = detections[det_index]
        if det.confidence >= params.init_score_min:
            born.append(start_track(next_track_id + len(born), det, noise))
    return survivors, born, dead


@dataclass
class TrackerConfig:
    motion_mode: str = "cv"
    n_p: int = 10
    dt: float = 0.1
    seed: int = 0
    tau_iou: float = DEFAULT_TAU_IOU
    min_support: float = DEFAULT_MIN_SUPPORT
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    lifecycle: LifecycleParams = field(default_factory=LifecycleParams)

    def __post_init__(self) -> None:
        if self.motion_mode not in MOTION_MODES:
            raise ValueError(f"motion_mode must be one of {MOTION_MODES}")
        if self.n_p < 1:
            raise ValueError("n_p must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")


class FrameProcessingError(RuntimeError):
    """Wraps an error raised while processing one frame, with its index."""

    def __init__(self, frame_index: int, cause: Exception):
        super().__init__(f"frame {frame_index}: {cause}")
        self.frame_index = frame_index
        self.__cause__ = cause


def _predict_distribution(
    track: Track, config: TrackerConfig, model: PredictorModel | None, frame_index: int
) -> PredictionDistribution:
    """Motion prediction for one track: the network when there is enough
    history (two or more poses), constant velocity otherwise."""
    use_net = (
        config.motion_mode == "predictor"
        and model is not None
        and len(track.history) >= 2
    )
    if use_net:
        seed = np.random.SeedSequence([config.seed, frame_index, track.id])
        return mc_predict(model, track.history, n_p=config.n_p, rng_seed=seed)
    advanced = cv_predict(track.state, config.dt)
    return PredictionDistribution(mean=advanced.pose, variance=np.zeros(POSE_DIM))


def _snapshot(track: Track) -> TrackSnapshot:
    return TrackSnapshot(
        track_id=track.id,
        box=track.box,
        velocity=(track.state.vx, track.state.vy, track.state.vz),
        score=track.score,
    )


def track_sequence(
    frames: Sequence[SampleSet],
    config: TrackerConfig | None = None,
    model: PredictorModel | None = None,
) -> list[FrameResult]:
    """Run the full pipeline over a time-ordered sequence of sample sets.

    Per frame: fuse the detection samples, predict every live track,
    associate, update matched tracks, apply lifecycle rules, and emit the
    confirmed tracks. Deterministic given the config seed.
    """
    if config is None:
        config = TrackerConfig()
    if config.motion_mode == "predictor" and model is None:
        raise ValueError("motion_mode 'predictor' requires a model")

    tracks: list[Track] = []
    next_id = 0
    results: list[FrameResult] = []
    for frame_index, sample_set in enumerate(frames):
        try:
            fused = fuse_frame(
                sample_set, tau_iou=config.tau_iou, min_support=config.min_support
            )

            for track in tracks:
                dist = _predict_distribution(track, config, model, frame_index)
                kf_predict(track, dist, config.noise, config.dt)

            predictions = [
                TrackPrediction(
                    track_id=track.id,
                    pose=track.state.pose,
                    innovation_cov=(
                        _H @ track.cov @ _H.T + np.diag(config.noise.r0)
                    ),
                    radial_speed=_track_radial_speed(track),
                )
                for track in tracks
            ]
            assoc = associate(predictions, fused, config.association)

            by_id = {track.id: track for track in tracks}
            for match in assoc.matches:
                kf_update(by_id[match.track_id], fused[match.det_index], config.noise)

            survivors, born, _ = lifecycle_step(
                tracks, assoc, fused, config.lifecycle, config.noise, next_id
            )
            next_id += len(born)
            for track in survivors:
                track.record_pose()
            tracks = survivors + born

            # only confirmed tracks that were actually updated this frame are
            # reported; coasting tracks survive internally but a stale
            # predicted pose is not presented as an observation
            confirmed = [
                t for t in tracks
                if t.status is TrackStatus.CONFIRMED and t.misses == 0
            ]
            results.append(
                FrameResult(
                    frame_index=frame_index,
                    tracks=tuple(_snapshot(t) for t in confirmed),
                    stage2_pairs=tuple(
                        (m.track_id, m.det_index)
                        for m in assoc.matches if m.stage == 2
                    ),
                )
            )
        except Exception as exc:  # pragma: no cover - rewrap path exercised in tests
            if isinstance(exc, FrameProcessingError):
                raise
            raise FrameProcessingError(frame_index, exc) from exc
    return results


def _track_radial_speed(track: Track) -> float:
    """Predicted line-of-sight speed; zero at the sensor origin itself."""
    if np.linalg.norm(track.state.position) == 0.0:
        return 0.0
    return radial_velocity(track.state, np.zeros(3))


def write_track_results(path, results: Sequence[FrameResult], *,
                        seed: int = 0, config: dict | None = None) -> None:
    """One JSON line per frame: emitted tracks plus stage-2 match pairs."""
    from .io import make_manifest, write_jsonl

    header = make_manifest("track_output", seed=seed, config=config or {})
    records = (
        {
            "frame": r.frame_index,
            "tracks": [
                {
                    "track_id": s.track_id,
                    "box": [s.box.x, s.box.y, s.box.z, s.box.l, s.box.w, s.box.h,
                            s.box.yaw],
                    "velocity": list(s.velocity),
                    "score": s.score,
                }
                for s in r.tracks
            ],
            "stage2_pairs": [list(pair) for pair in r.stage2_pairs],
        }
        for r in results
    )
    write_jsonl(path, header, records)


def read_track_results(path) -> list[FrameResult]:
    from .io import read_jsonl

    _, records = read_jsonl(path, expect_kind="track_output")
    out = []
    for rec in records:
        tracks = tuple(
            TrackSnapshot(
                track_id=int(t["track_id"]),
                box=Box3D(x=float(t["box"][0]), y=float(t["box"][1]),
                          z=float(t["box"][2]), l=float(t["box"][3]),
                          w=float(t["box"][4]), h=float(t["box"][5]),
                          yaw=float(t["box"][6])),
                velocity=tuple(float(v) for v in t["velocity"]),
                score=float(t["score"]),
            )
            for t in rec["tracks"]
        )
        out.append(FrameResult(
            frame_index=int(rec["frame"]),
            tracks=tracks,
            stage2_pairs=tuple((int(a), int(b)) for a, b in rec["stage2_pairs"]),
        ))
    return out
