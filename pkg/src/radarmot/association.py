"""Track-to-detection assignment.

Stage 1 matches on the Mahalanobis distance between each track's predicted
pose and the detection pose, gated at the 99% chi-square quantile. Pairs
that survive gating are assigned one-to-one by the Hungarian algorithm.

Stage 2 re-examines the leftovers with a combined cost that adds a radial
velocity (Doppler) affinity term: a detection whose measured radial speed
agrees with the track's predicted one is cheap to match even when its pose
sits slightly outside the first gate. This is what keeps identities from
swapping when two objects cross: their poses become interchangeable for a
few frames, but their Doppler signatures stay far apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2

from .geometry import Detection, wrap_residual

# 99% quantile of the chi-square distribution with 4 degrees of freedom
# (pose innovation dimension), on the distance scale.
DEFAULT_GATE1 = float(math.sqrt(chi2.ppf(0.99, df=4)))

ASSOCIATION_MODES = ("two_stage", "mahalanobis")

# Forbidden pairs get this finite cost instead of inf so that the assignment
# problem stays feasible; such matches are stripped after solving.
_SENTINEL = 1.0e9


class DegenerateCovarianceError(ValueError):
    """Raised when an innovation covariance is not positive definite."""


@dataclass
class AssociationConfig:
    """Weights and gates for the two-stage assignment.

    ``gate2`` defaults to ``w1 * gate1 + 0.5 * w2``: a pair whose pose part
    sits exactly at the first gate still passes stage 2 if its velocity
    affinity is at least one half.
    """

    w1: float = 1.0
    w2: float = 2.0
    sigma_v: float = 2.0
    gate1: float = DEFAULT_GATE1
    gate2: float | None = None
    mode: str = "two_stage"

    def __post_init__(self) -> None:
        if self.w1 <= 0.0 or self.w2 < 0.0:
            raise ValueError("require w1 > 0 and w2 >= 0")
        if self.sigma_v <= 0.0:
            raise ValueError("sigma_v must be positive")
        if self.gate1 <= 0.0:
            raise ValueError("gate1 must be positive")
        if self.gate2 is None:
            self.gate2 = self.w1 * self.gate1 + 0.5 * self.w2
        if self.gate2 <= 0.0:
            raise ValueError("gate2 must be positive")
        if self.mode not in ASSOCIATION_MODES:
            raise ValueError(f"mode must be one of {ASSOCIATION_MODES}, got {self.mode!r}")


@dataclass(eq=False)
class TrackPrediction:
    """What the tracker knows about one track at association time."""

    track_id: int
    pose: np.ndarray  # (4,) predicted x, y, z, yaw
    innovation_cov: np.ndarray  # (4, 4) predicted pose covariance plus measurement noise
    radial_speed: float  # predicted line-of-sight velocity toward the sensor

    def __post_init__(self) -> None:
        self.pose = np.asarray(self.pose, dtype=float)
        self.innovation_cov = np.asarray(self.innovation_cov, dtype=float)
        if self.pose.shape != (4,):
            raise ValueError(f"pose must have shape (4,), got {self.pose.shape}")
        if self.innovation_cov.shape != (4, 4):
            raise ValueError(
                f"innovation_cov must have shape (4, 4), got {self.innovation_cov.shape}"
            )


@dataclass(frozen=True)
class Match:
    track_id: int
    det_index: int
    cost: float
    stage: int


@dataclass(frozen=True)
class AssociationResult:
    matches: tuple[Match, ...]
    unmatched_tracks: tuple[int, ...]
    unmatched_detections: tuple[int, ...]


def mahalanobis(pred_pose: np.ndarray, det_pose: np.ndarray, cov: np.ndarray) -> float:
    """Mahalanobis distance between poses, with the yaw difference wrapped."""
    nu = np.asarray(det_pose, dtype=float) - np.asarray(pred_pose, dtype=float)
    nu[3] = wrap_residual(nu[3])
    try:
        factor = scipy.linalg.cho_factor(cov, lower=True)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise DegenerateCovarianceError(
            f"innovation covariance is not positive definite: {exc}"
        ) from exc
    solved = scipy.linalg.cho_solve(factor, nu)
    return float(math.sqrt(nu @ solved))


def velocity_affinity(radial_a: float, radial_b: float, sigma_v: float) -> float:
    """Gaussian kernel on the radial speed difference, in (0, 1]."""
    if sigma_v <= 0.0:
        raise ValueError("sigma_v must be positive")
    dv = radial_a - radial_b
    return math.exp(-(dv * dv) / (2.0 * sigma_v * sigma_v))


def combined_cost(distance: float, affinity: float, w1: float, w2: float) -> float:
    """Stage-2 cost: pose distance plus a penalty for Doppler disagreement."""
    return w1 * distance + w2 * (1.0 - affinity)


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment on a rectangular cost matrix."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def _solve_stage(
    cost: np.ndarray, gate: float
) -> list[tuple[int, int, float]]:
    """Assign under a gate; entries above it are excluded from the solution."""
    gated = np.where(cost <= gate, cost, _SENTINEL)
    pairs = hungarian(gated)
    return [(r, c, float(cost[r, c])) for r, c in pairs if cost[r, c] <= gate]


def associate(
    tracks: Sequence[TrackPrediction],
    detections: Sequence[Detection],
    config: AssociationConfig | None = None,
) -> AssociationResult:
    """Two-stage assignment of detections to tracks.

    Every track id and detection index appears in exactly one of: a match,
    ``unmatched_tracks``, or ``unmatched_detections``. With
    ``mode="mahalanobis"`` only the first stage runs.
    """
    if config is None:
        config = AssociationConfig()
    n_t, n_d = len(tracks), len(detections)
    if n_t == 0 or n_d == 0:
        return AssociationResult(
            matches=(),
            unmatched_tracks=tuple(t.track_id for t in tracks),
            unmatched_detections=tuple(range(n_d)),
        )

    distance = np.empty((n_t, n_d))
    for i, track in enumerate(tracks):
        for j, det in enumerate(detections):
            pose = np.array([det.box.x, det.box.y, det.box.z, det.box.yaw])
            distance[i, j] = mahalanobis(track.pose, pose, track.innovation_cov)

    matches: list[Match] = []
    matched_t: set[int] = set()
    matched_d: set[int] = set()
    for i, j, cost in _solve_stage(distance, config.gate1):
        matches.append(Match(tracks[i].track_id, j, cost, stage=1))
        matched_t.add(i)
        matched_d.add(j)

    if config.mode == "two_stage":
        left_t = [i for i in range(n_t) if i not in matched_t]
        left_d = [j for j in range(n_d) if j not in matched_d]
        if left_t and left_d:
            cost2 = np.empty((len(left_t), len(left_d)))
            for a, i in enumerate(left_t):
                for b, j in enumerate(left_d):
                    affinity = velocity_affinity(
                        tracks[i].radial_speed, detections[j].doppler, config.sigma_v
                    )
                    cost2[a, b] = combined_cost(
                        distance[i, j], affinity, config.w1, config.w2
                    )
            for a, b, cost in _solve_stage(cost2, config.gate2):
                i, j = left_t[a], left_d[b]
                matches.append(Match(tracks[i].track_id, j, cost, stage=2))
                matched_t.add(i)
                matched_d.add(j)

    matches.sort(key=lambda m: m.det_index)
    return AssociationResult(
        matches=tuple(matches),
        unmatched_tracks=tuple(tracks[i].track_id for i in range(n_t) if i not in matched_t),
        unmatched_detections=tuple(j for j in range(n_d) if j not in matched_d),
    )
