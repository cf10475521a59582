"""Fuse stochastic detection samples into per-frame detections with uncertainty.

A detector run repeatedly with dropout produces several detection lists per
frame. Boxes from different passes are greedily clustered by rotated BEV IoU
against each cluster's running mean; each cluster is collapsed into one fused
detection whose box parameters are the member means (yaw averaged circularly)
and whose per-parameter standard deviations quantify detection uncertainty.
Clusters seen by few passes tend to be false alarms, so fused confidence is
penalized by pass support and low-support clusters can be dropped outright.

Also provides the variance-attenuated regression objective used to train the
motion predictor: each residual is down-weighted by a learned per-input noise
variance (predicted in log space for positivity) plus a log-variance penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, Detection, bev_iou, wrap_residual

DEFAULT_TAU_IOU = 0.3
DEFAULT_MIN_SUPPORT = 0.3


@dataclass(frozen=True, init=False)
class SampleSet:
    """Detection lists from stochastic forward passes over one frame."""

    samples: tuple[tuple[Detection, ...], ...]
    frame: int

    def __init__(self, samples, frame: int = 0):
        object.__setattr__(self, "samples", tuple(tuple(s) for s in samples))
        object.__setattr__(self, "frame", int(frame))
        if self.n_d < 1:
            raise ValueError("SampleSet needs at least one pass")

    @property
    def n_d(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class Cluster:
    """A group of corresponding boxes across passes and their fused detection."""

    members: tuple[tuple[int, Detection], ...]
    fused: Detection

    @property
    def support(self) -> int:
        """Number of distinct passes contributing a member."""
        return len({p for p, _ in self.members})


def _circular_mean(angles: np.ndarray) -> float:
    return float(np.arctan2(np.mean(np.sin(angles)), np.mean(np.cos(angles))))


def _mean_box(boxes: list[Box3D]) -> Box3D:
    params = np.array([b.params() for b in boxes])
    mean = params[:, :6].mean(axis=0)
    yaw = _circular_mean(params[:, 6])
    return Box3D(x=mean[0], y=mean[1], z=mean[2], l=mean[3], w=mean[4], h=mean[5], yaw=yaw)


def _box_population_std(boxes: list[Box3D], mean_box: Box3D) -> np.ndarray:
    """Population standard deviation per box parameter, yaw deviations wrapped.

    Columns are shifted by the first member before taking moments so that a
    constant parameter reports exactly zero spread rather than summation
    dust; the shift leaves the deviations mathematically unchanged.
    """
    params = np.array([b.params() for b in boxes])
    std = np.empty(7)
    std[:6] = (params[:, :6] - params[0, :6]).std(axis=0)
    yaw = params[:, 6]
    if np.all(yaw == yaw[0]):
        std[6] = 0.0
    else:
        dev = wrap_residual(yaw - mean_box.yaw)
        std[6] = math.sqrt(float(np.mean(dev**2)))
    return std


class _ClusterBuilder:
    __slots__ = ("members", "join_iou", "mean")

    def __init__(self, pass_idx: int, det: Detection):
        self.members: list[tuple[int, Detection]] = [(pass_idx, det)]
        self.join_iou: list[float] = [1.0]
        self.mean: Box3D = det.box

    def pass_member(self, pass_idx: int) -> int | None:
        for i, (p, _) in enumerate(self.members):
            if p == pass_idx:
                return i
        return None

    def add(self, pass_idx: int, det: Detection, iou: float) -> None:
        self.members.append((pass_idx, det))
        self.join_iou.append(iou)
        self._refresh()

    def evict(self, index: int) -> tuple[int, Detection]:
        member = self.members.pop(index)
        self.join_iou.pop(index)
        self._refresh()
        return member

    def _refresh(self) -> None:
        self.mean = _mean_box([d.box for _, d in self.members])


def _candidate_iou(det: Detection, builder: _ClusterBuilder) -> float:
    # cheap reject: footprints cannot overlap beyond half the diagonal sum
    a, b = det.box, builder.mean
    reach = 0.5 * (math.hypot(a.l, a.w) + math.hypot(b.l, b.w))
    if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > reach**2:
        return 0.0
    return bev_iou(a, b)


def cluster_samples(sample_set: SampleSet, tau_iou: float = DEFAULT_TAU_IOU) -> list[Cluster]:
    """Greedy IoU agglomeration of detection samples across passes.

    A box joins the cluster whose running-mean box it overlaps most, provided
    the IoU reaches ``tau_iou``. A cluster holds at most one box per pass:
    on a collision the higher-IoU box stays and the loser seeds a new
    cluster. Every input box ends up in exactly one cluster.
    """
    if not 0.0 < tau_iou <= 1.0:
        raise ValueError(f"tau_iou must be in (0, 1], got {tau_iou}")
    builders: list[_ClusterBuilder] = []
    for pass_idx, detections in enumerate(sample_set.samples):
        for det in detections:
            best_iou, best = 0.0, None
            for builder in builders:
                iou = _candidate_iou(det, builder)
                if iou >= tau_iou and iou > best_iou:
                    best_iou, best = iou, builder
            if best is None:
                builders.append(_ClusterBuilder(pass_idx, det))
                continue
            incumbent = best.pass_member(pass_idx)
            if incumbent is None:
                best.add(pass_idx, det, best_iou)
            elif best_iou > best.join_iou[incumbent]:
                loser_pass, loser_det = best.evict(incumbent)
                best.add(pass_idx, det, best_iou)
                builders.append(_ClusterBuilder(loser_pass, loser_det))
            else:
                builders.append(_ClusterBuilder(pass_idx, det))
    return [_finalize(b, sample_set.n_d) for b in builders]


def _finalize(builder: _ClusterBuilder, n_d: int) -> Cluster:
    boxes = [d.box for _, d in builder.members]
    mean_box = _mean_box(boxes)
    std = _box_population_std(boxes, mean_box)
    doppler = float(np.mean([d.doppler for _, d in builder.members]))
    mean_conf = float(np.mean([d.confidence for _, d in builder.members]))
    support = len({p for p, _ in builder.members})
    fused = Detection(
        box=mean_box,
        doppler=doppler,
        confidence=mean_conf * support / n_d,
        box_std=std,
    )
    return Cluster(members=tuple(builder.members), fused=fused)


def fuse_confidence(cluster: Cluster, n_d: int) -> float:
    """Mean member confidence scaled by the fraction of passes that saw it.

    High-uncertainty clusters supported by few passes are usually false
    alarms, so support directly discounts the score.
    """
    if not cluster.members:
        raise ValueError("cluster has no members")
    mean_conf = float(np.mean([d.confidence for _, d in cluster.members]))
    return mean_conf * cluster.support / n_d


def fuse_frame(
    sample_set: SampleSet,
    tau_iou: float = DEFAULT_TAU_IOU,
    min_support: float = DEFAULT_MIN_SUPPORT,
) -> list[Detection]:
    """Cluster one frame's passes and return the surviving fused detections.

    Clusters supported by fewer than ``min_support * n_d`` passes are
    dropped; pass ``min_support=0`` to keep everything.
    """
    fused = []
    for cluster in cluster_samples(sample_set, tau_iou):
        if cluster.support >= min_support * sample_set.n_d:
            fused.append(cluster.fused)
    return fused


def attenuated_loss(residuals: np.ndarray, log_vars: np.ndarray) -> float:
    """Variance-attenuated mean regression loss.

    ``(1/N) * sum(r_i^2 / (2 sigma_i^2) + 0.5 * log sigma_i^2)`` with
    ``sigma_i^2 = exp(log_vars[i])``. Residuals with high predicted noise are
    down-weighted at the price of the log-variance penalty.
    """
    r = np.asarray(residuals, dtype=float)
    lv = np.asarray(log_vars, dtype=float)
    if r.ndim != 1 or r.shape != lv.shape:
        raise ValueError("residuals and log_vars must be 1-D arrays of equal length")
    if r.size == 0:
        raise ValueError("attenuated_loss needs at least one residual")
    with np.errstate(over="ignore"):  # extreme log-variances give an inf loss
        inv_var = np.exp(-lv)
        return float(np.mean(0.5 * r**2 * inv_var + 0.5 * lv))


def attenuated_loss_grad(
    residuals: np.ndarray, log_vars: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic partials of :func:`attenuated_loss` w.r.t. residuals and log-variances."""
    r = np.asarray(residuals, dtype=float)
    lv = np.asarray(log_vars, dtype=float)
    if r.ndim != 1 or r.shape != lv.shape:
        raise ValueError("residuals and log_vars must be 1-D arrays of equal length")
    if r.size == 0:
        raise ValueError("attenuated_loss_grad needs at least one residual")
    n = r.size
    with np.errstate(over="ignore"):
        inv_var = np.exp(-lv)
        d_r = r * inv_var / n
        d_lv = (0.5 - 0.5 * r**2 * inv_var) / n
    return d_r, d_lv
