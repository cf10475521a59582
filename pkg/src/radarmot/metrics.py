"""Multi-object tracking evaluation: recall-averaged accuracy and precision.

Matching is greedy by ascending bird's-eye center distance with a 2 m gate,
one-to-one per frame; identity switches are counted whenever a ground-truth
object is matched to a different track id than the last one it was matched
to. Accuracy is averaged over a 40-point recall grid: for each target
recall the score threshold with the closest achieved recall from above is
selected and its error counts are recall-normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import format_float, make_manifest, write_csv, write_json

DEFAULT_DIST_THRESHOLD = 2.0
RECALL_GRID = tuple(k / 40.0 for k in range(1, 41))
MAX_SCORE_THRESHOLDS = 256


@dataclass(frozen=True)
class FrameMatch:
    """One frame's assignment: (gt_id, track_id, distance) triples plus leftovers."""

    matches: tuple[tuple[int, int, float], ...]
    unmatched_gt: tuple[int, ...]
    unmatched_tracks: tuple[int, ...]


@dataclass(frozen=True)
class ThresholdRow:
    """Error counts at one recall target's operating point."""

    recall_target: float
    threshold: float | None
    recall: float
    tp: int
    fp: int
    fn: int
    ids: int
    motar: float
    motp: float


@dataclass(frozen=True)
class MetricsReport:
    amota: float
    amotp: float
    rows: tuple[ThresholdRow, ...]
    best: ThresholdRow
    total_gt: int
    dist_threshold: float


def _bev_xy(box) -> tuple[float, float]:
    return float(box.x), float(box.y)


def match_frame(
    gt_objects: Sequence,
    tracks: Sequence,
    dist_threshold: float = DEFAULT_DIST_THRESHOLD,
) -> FrameMatch:
    """Greedily pair ground truth with tracks by ascending BEV distance.

    Ties at equal distance go to the lower track id, then the lower gt id.
    ``gt_objects`` need ``object_id`` and ``box``; ``tracks`` need
    ``track_id`` and ``box``.
    """
    if not gt_objects or not tracks:
        return FrameMatch(
            matches=(),
            unmatched_gt=tuple(g.object_id for g in gt_objects),
            unmatched_tracks=tuple(t.track_id for t in tracks),
        )
    gt_xy = np.array([_bev_xy(g.box) for g in gt_objects])
    tr_xy = np.array([_bev_xy(t.box) for t in tracks])
    dists = np.hypot(
        gt_xy[:, 0][:, None] - tr_xy[:, 0][None, :],
        gt_xy[:, 1][:, None] - tr_xy[:, 1][None, :],
    )
    candidates = []
    for gi, ti in zip(*np.nonzero(dists <= dist_threshold)):
        candidates.append(
            (float(dists[gi, ti]), int(tracks[ti].track_id),
             int(gt_objects[gi].object_id), int(gi), int(ti))
        )
    candidates.sort()
    gt_taken: set[int] = set()
    tr_taken: set[int] = set()
    matches = []
    for dist, track_id, gt_id, gi, ti in candidates:
        if gi in gt_taken or ti in tr_taken:
            continue
        gt_taken.add(gi)
        tr_taken.add(ti)
        matches.append((gt_id, track_id, dist))
    return FrameMatch(
        matches=tuple(matches),
        unmatched_gt=tuple(g.object_id for i, g in enumerate(gt_objects)
                           if i not in gt_taken),
        unmatched_tracks=tuple(t.track_id for i, t in enumerate(tracks)
                               if i not in tr_taken),
    )


@dataclass
class _Stats:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    dist_sum: float = 0.0


def _accumulate(gt_by_frame, tracks_by_frame, threshold, dist_threshold) -> _Stats:
    """CLEAR-style counts over the whole sequence at one score threshold."""
    stats = _Stats()
    last_track_of: dict[int, int] = {}
    for frame in sorted(set(gt_by_frame) | set(tracks_by_frame)):
        gt_objects = gt_by_frame.get(frame, ())
        tracks = [t for t in tracks_by_frame.get(frame, ()) if t.score >= threshold]
        result = match_frame(gt_objects, tracks, dist_threshold)
        stats.tp += len(result.matches)
        stats.fp += len(result.unmatched_tracks)
        stats.fn += len(result.unmatched_gt)
        for gt_id, track_id, dist in result.matches:
            stats.dist_sum += dist
            previous = last_track_of.get(gt_id)
            if previous is not None and previous != track_id:
                stats.ids += 1
            last_track_of[gt_id] = track_id
    return stats


def _candidate_thresholds(tracks_by_frame, max_thresholds: int) -> list[float]:
    scores = sorted({float(t.score) for frame in tracks_by_frame.values() for t in frame})
    if len(scores) > max_thresholds:
        # keep evenly spaced actual score values, always including both ends
        idx = np.unique(np.linspace(0, len(scores) - 1, max_thresholds).round().astype(int))
        scores = [scores[i] for i in idx]
    return scores


def motar_value(recall_target: float, stats: _Stats, total_gt: int) -> float:
    """Recall-normalized accuracy, clamped into [0, 1].

    Errors up to the (1 - r) * P budget implied by the missed-recall are
    forgiven; the remainder is normalized by the r * P boxes in scope.
    """
    budget = stats.ids + stats.fp + stats.fn - (1.0 - recall_target) * total_gt
    raw = 1.0 - budget / (recall_target * total_gt)
    return min(1.0, max(0.0, raw))


def evaluate(
    gt_frames: Sequence,
    track_frames: Sequence,
    dist_threshold: float = DEFAULT_DIST_THRESHOLD,
    max_thresholds: int = MAX_SCORE_THRESHOLDS,
) -> MetricsReport:
    """Score a tracker run against ground truth.

    ``gt_frames`` need ``frame_index`` and ``objects``; ``track_frames``
    need ``frame_index`` and ``tracks`` (each with ``track_id``, ``box``
    and ``score``). Raises ``ValueError`` when the ground truth contains
    no objects at all.
    """
    gt_by_frame = {g.frame_index: g.objects for g in gt_frames}
    tracks_by_frame = {t.frame_index: t.tracks for t in track_frames}
    total_gt = sum(len(objs) for objs in gt_by_frame.values())
    if total_gt == 0:
        raise ValueError("ground truth contains no objects; nothing to evaluate")

    per_threshold = [
        (threshold, _accumulate(gt_by_frame, tracks_by_frame, threshold, dist_threshold))
        for threshold in _candidate_thresholds(tracks_by_frame, max_thresholds)
    ]
    # order by achieved recall; ties resolved toward the stricter threshold
    # (fewer false alarms at the same recall)
    per_threshold.sort(key=lambda pair: (pair[1].tp, -pair[0]))

    rows = []
    for recall_target in RECALL_GRID:
        chosen = None
        for threshold, stats in per_threshold:
            if stats.tp / total_gt >= recall_target:
                chosen = (threshold, stats)
                break
        if chosen is None:
            rows.append(ThresholdRow(
                recall_target=recall_target, threshold=None, recall=0.0,
                tp=0, fp=0, fn=total_gt, ids=0, motar=0.0, motp=dist_threshold,
            ))
            continue
        threshold, stats = chosen
        motp = stats.dist_sum / stats.tp if stats.tp else dist_threshold
        rows.append(ThresholdRow(
            recall_target=recall_target,
            threshold=threshold,
            recall=stats.tp / total_gt,
            tp=stats.tp, fp=stats.fp, fn=stats.fn, ids=stats.ids,
            motar=motar_value(recall_target, stats, total_gt),
            motp=motp,
        ))
    rows = tuple(rows)
    best = max(rows, key=lambda row: (row.motar, row.recall_target))
    return MetricsReport(
        amota=float(np.mean([row.motar for row in rows])),
        amotp=float(np.mean([row.motp for row in rows])),
        rows=rows,
        best=best,
        total_gt=total_gt,
        dist_threshold=dist_threshold,
    )


def _row_dict(row: ThresholdRow) -> dict:
    return {
        "recall_target": row.recall_target,
        "threshold": row.threshold,
        "recall": row.recall,
        "tp": row.tp, "fp": row.fp, "fn": row.fn, "ids": row.ids,
        "motar": row.motar, "motp": row.motp,
    }


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "amota": report.amota,
        "amotp": report.amotp,
        "total_gt": report.total_gt,
        "dist_threshold": report.dist_threshold,
        "best": _row_dict(report.best),
        "rows": [_row_dict(row) for row in report.rows],
    }


def write_report_json(path: str | Path, report: MetricsReport, seed: int = 0,
                      config: dict | None = None) -> None:
    payload = make_manifest("metrics_report", seed=seed, config=config or {})
    payload.update(report_to_dict(report))
    write_json(path, payload)


def write_report_csv(path: str | Path, report: MetricsReport) -> None:
    header = ["recall_target", "threshold", "recall", "tp", "fp", "fn", "ids",
              "motar", "motp"]
    rows = (
        [row.recall_target,
         "" if row.threshold is None else format_float(row.threshold),
         row.recall, row.tp, row.fp, row.fn, row.ids, row.motar, row.motp]
        for row in report.rows
    )
    write_csv(path, header, rows)
