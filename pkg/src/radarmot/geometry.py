"""Shared geometric and kinematic types plus exact geometry kernels.

Provides the oriented 3D box / detection / kinematic-state value types used
throughout the tracker, rotated bird's-eye-view IoU via convex polygon
clipping, and the radial (line-of-sight) velocity projection that relates a
track's Cartesian velocity to a radar Doppler measurement.

All types are immutable value objects and all functions are pure, so they are
safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Doppler sign convention used everywhere in this package: radial velocity is
# the projection of the velocity onto the unit line of sight pointing from the
# sensor towards the object, so negative values mean the object approaches
# the sensor.


class DegenerateGeometryError(ValueError):
    """Raised when a geometric operation has no defined answer."""


def yaw_normalize(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi].

    Idempotent, and the output is congruent to the input mod 2*pi.
    """
    if not math.isfinite(theta):
        raise ValueError(f"yaw must be finite, got {theta!r}")
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped > math.pi:
        wrapped -= TWO_PI
    elif wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def wrap_residual(delta):
    """Wrap angle differences to (-pi, pi] (for innovations and deviations).

    Accepts a scalar or an ndarray; uses the same convention as
    ``yaw_normalize`` (the seam maps to +pi).
    """
    arr = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("angle differences must be finite")
    wrapped = math.pi - np.mod(math.pi - arr, TWO_PI)
    if np.ndim(delta) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box: center, extents and heading.

    ``l`` is the extent along the heading axis, ``w`` across it, ``h``
    vertical. ``yaw`` is stored normalized to (-pi, pi].
    """

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "l", "w", "h", "yaw"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"Box3D.{name} must be finite, got {v!r}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(
                f"Box3D extents must be positive, got l={self.l} w={self.w} h={self.h}"
            )
        object.__setattr__(self, "yaw", yaw_normalize(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def pose(self) -> np.ndarray:
        """The 4-vector [x, y, z, yaw] this box contributes to association."""
        return np.array([self.x, self.y, self.z, self.yaw])

    def params(self) -> np.ndarray:
        """All 7 parameters as [x, y, z, l, w, h, yaw]."""
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.yaw])

    def corners_bev(self) -> np.ndarray:
        """The 4 footprint corners in the x-y plane, counter-clockwise, (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.l, 0.5 * self.w
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class Detection:
    """A fused per-frame radar observation.

    ``doppler`` is the measured radial velocity (negative toward the sensor).
    ``box_std`` holds per-parameter sample standard deviations in the same
    order as :meth:`Box3D.params`; raw single-pass detections carry zeros.
    """

    box: Box3D
    doppler: float
    confidence: float
    box_std: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def __post_init__(self) -> None:
        if not math.isfinite(self.doppler):
            raise ValueError(f"doppler must be finite, got {self.doppler!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence!r}")
        std = np.asarray(self.box_std, dtype=float)
        if std.shape != (7,):
            raise ValueError(f"box_std must have shape (7,), got {std.shape}")
        if not np.all(np.isfinite(std)) or np.any(std < 0):
            raise ValueError("box_std entries must be finite and >= 0")
        object.__setattr__(self, "box_std", std)


@dataclass(frozen=True)
class KinematicState:
    """Pose plus linear velocity, the 7-vector [x, y, z, yaw, vx, vy, vz]."""

    x: float
    y: float
    z: float
    yaw: float
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "yaw", "vx", "vy", "vz"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"KinematicState.{name} must be finite, got {v!r}")
        object.__setattr__(self, "yaw", yaw_normalize(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw, self.vx, self.vy, self.vz])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "KinematicState":
        v = np.asarray(v, dtype=float)
        if v.shape != (7,):
            raise ValueError(f"state vector must have shape (7,), got {v.shape}")
        return cls(*v)


def validate_covariance(P: np.ndarray, *, rel_tol: float = 1e-9) -> np.ndarray:
    """Check a 7x7 covariance for symmetry and positive semi-definiteness.

    Symmetry is checked to a relative tolerance; eigenvalues may be negative
    by at most ``rel_tol * trace``. Returns the symmetrized matrix.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (7, 7):
        raise ValueError(f"covariance must be 7x7, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("covariance contains non-finite entries")
    scale = max(np.abs(P).max(), 1.0)
    if np.abs(P - P.T).max() > rel_tol * scale:
        raise ValueError("covariance is not symmetric")
    sym = 0.5 * (P + P.T)
    eigvals = np.linalg.eigvalsh(sym)
    floor = -rel_tol * max(np.trace(sym), 1.0)
    if eigvals.min() < floor:
        raise ValueError(f"covariance is not PSD (min eigenvalue {eigvals.min():.3e})")
    return sym


def _polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a polygon given as (n, 2) vertices (CCW positive)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex ``subject`` polygon by convex ``clip``.

    Both polygons must be counter-clockwise. Returns the intersection
    polygon vertices (possibly empty).
    """
    output = subject
    n = len(clip)
    for i in range(n):
        if len(output) == 0:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        # 2D cross product; > 0 means inside (left of edge) for CCW polygons
        rel = output - a
        d = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
        clipped: list[np.ndarray] = []
        m = len(output)
        for j in range(m):
            k = (j + 1) % m
            pj_in, pk_in = d[j] >= 0.0, d[k] >= 0.0
            if pj_in:
                clipped.append(output[j])
            if pj_in != pk_in:
                t = d[j] / (d[j] - d[k])
                clipped.append(output[j] + t * (output[k] - output[j]))
        output = np.array(clipped) if clipped else np.empty((0, 2))
    return output


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection over union of the two yaw-rotated footprints in x-y.

    Height is ignored. Symmetric in its arguments by construction: the pair
    is canonically ordered before clipping.
    """
    # canonical argument order makes bev_iou(a, b) bitwise equal to bev_iou(b, a)
    ka = (a.x, a.y, a.yaw, a.l, a.w)
    kb = (b.x, b.y, b.yaw, b.l, b.w)
    if kb < ka:
        a, b = b, a
    pa = a.corners_bev()
    pb = b.corners_bev()
    inter = _polygon_area(_clip_convex(pa, pb))
    if inter == 0.0:
        return 0.0
    area_a = a.l * a.w
    area_b = b.l * b.w
    union = area_a + area_b - inter
    return inter / union


def bev_center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centers in the x-y plane."""
    return math.hypot(a.x - b.x, a.y - b.y)


def radial_velocity(state: KinematicState, sensor_origin: np.ndarray) -> float:
    """Project a state's velocity onto the line of sight from the sensor.

    The line of sight points from the sensor towards the object, so the
    result is negative for approaching objects, matching
    :attr:`Detection.doppler`.
    """
    origin = np.asarray(sensor_origin, dtype=float)
    if origin.shape != (3,):
        raise ValueError(f"sensor_origin must have shape (3,), got {origin.shape}")
    los = state.position - origin
    rng = np.linalg.norm(los)
    if rng == 0.0:
        raise DegenerateGeometryError(
            "radial velocity undefined: position coincides with the sensor origin"
        )
    return float(np.dot(state.velocity, los / rng))
