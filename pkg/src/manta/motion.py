"""Primary motion tracker: constant-velocity Kalman filter per track, optimal
IoU assignment, and observation-centric re-update (ORU) when a lost track is
matched again.

State is ``(cx, cy, s, r, vcx, vcy, vs)`` with ``s`` the box area and ``r``
the aspect ratio ``w / h`` (held constant). This follows the SORT/OC-SORT
conventions; OC-SORT's velocity-direction cost term is not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from manta.formats import Detection
from manta.geometry import BBox, iou_matrix


class OutOfOrderFrameError(ValueError):
    pass


@dataclass(frozen=True)
class TrackerConfig:
    iou_threshold: float = 0.3
    max_age: int = 30
    min_hits: int = 3
    min_score: float = 0.1
    process_noise: float = 1.0
    measurement_noise: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.max_age < 1 or self.min_hits < 1:
            raise ValueError("max_age and min_hits must be >= 1")


_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.eye(4, 7)


def box_to_z(b: BBox) -> np.ndarray:
    cx, cy = b.center
    return np.array([cx, cy, b.w * b.h, b.w / b.h])


def z_to_box(x: np.ndarray) -> BBox:
    s, r = max(float(x[2]), 1e-6), max(float(x[3]), 1e-6)
    w = np.sqrt(s * r)
    h = s / w
    return BBox.from_center(float(x[0]), float(x[1]), float(w), float(h))


class KalmanBoxTrack:
    def __init__(self, track_id: int, det: BBox, frame: int, config: TrackerConfig = TrackerConfig()):
        self.id = track_id
        self.config = config
        self.x = np.zeros(7)
        self.x[:4] = box_to_z(det)
        self.P = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])
        self.Q = np.diag([1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4]) * config.process_noise
        self.R = np.diag([1.0, 1.0, 10.0, 10.0]) * config.measurement_noise
        self.time_since_update = 0
        self.hits = 1
        self.hit_streak = 1
        self.age = 0
        self.ever_confirmed = False
        self.last_observation = det
        self.last_frame = frame
        self._frozen = (self.x.copy(), self.P.copy())

    @property
    def bbox(self) -> BBox:
        return z_to_box(self.x)

    def velocity(self) -> tuple[float, float]:
        return float(self.x[4]), float(self.x[5])

    def _predict(self) -> None:
        if self.x[2] + self.x[6] <= 0:
            self.x[6] = 0.0
        self.x = _F @ self.x
        self.P = _F @ self.P @ _F.T + self.Q

    def _update(self, z: np.ndarray) -> None:
        y = z - _H @ self.x
        S = _H @ self.P @ _H.T + self.R
        K = np.linalg.solve(S, _H @ self.P).T
        self.x = self.x + K @ y
        self.P = (np.eye(7) - K @ _H) @ self.P

    def predict(self) -> BBox:
        self._predict()
        self.age += 1
        if self.time_since_update > 0:
            self.hit_streak = 0
        self.time_since_update += 1
        return self.bbox

    def update(self, det: BBox, frame: int) -> None:
        gap = self.time_since_update
        if gap > 1:
            self._reupdate(det, gap)
        else:
            self._update(box_to_z(det))
        self.time_since_update = 0
        self.hits += 1
        self.hit_streak += 1
        self.last_observation = det
        self.last_frame = frame
        self._frozen = (self.x.copy(), self.P.copy())

    def _reupdate(self, det: BBox, gap: int) -> None:
        """Re-run the filter through the gap along a virtual trajectory that
        linearly interpolates the last and the new observation."""
        self.x, self.P = (a.copy() for a in self._frozen)
        (ax, ay), (bx, by) = self.last_observation.center, det.center
        aw, ah, bw, bh = self.last_observation.w, self.last_observation.h, det.w, det.h
        for i in range(1, gap + 1):
            f = i / gap
            virtual = BBox.from_center(ax + f * (bx - ax), ay + f * (by - ay), aw + f * (bw - aw), ah + f * (bh - ah))
            self._predict()
            self._update(box_to_z(virtual))

    def status(self, frame: int, min_hits: int) -> str:
        if self.time_since_update > 0:
            return "lost" if self.ever_confirmed else "tentative"
        if self.hit_streak >= min_hits or frame <= min_hits:
            return "confirmed"
        return "tentative"


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]
    # sum of 1 - IoU over the optimal assignment before gating
    cost: float = 0.0


def associate(track_boxes: Sequence[BBox] | np.ndarray, det_boxes: Sequence[BBox] | np.ndarray,
              iou_threshold: float = 0.3) -> Assignment:
    """Optimal one-to-one assignment minimizing total ``1 - IoU``; pairs
    below ``iou_threshold`` are discarded afterwards."""
    ta = _as_array(track_boxes)
    da = _as_array(det_boxes)
    nt, nd = len(ta), len(da)
    if nt == 0 or nd == 0:
        return Assignment([], list(range(nt)), list(range(nd)))
    ious = iou_matrix(ta, da)
    rows, cols = linear_sum_assignment(1.0 - ious)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if ious[r, c] >= iou_threshold]
    mt = {r for r, _ in matches}
    md = {c for _, c in matches}
    return Assignment(
        sorted(matches),
        [i for i in range(nt) if i not in mt],
        [j for j in range(nd) if j not in md],
        float((1.0 - ious)[rows, cols].sum()),
    )


def _as_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4)
    return np.array([b.as_tuple() for b in boxes], dtype=float).reshape(-1, 4)


@dataclass
class TrackOutput:
    track_id: int
    bbox: BBox
    score: float = 1.0


@dataclass
class MotionTracker:
    """Sequence-local tracker state; call :meth:`step` once per frame, in order."""

    config: TrackerConfig = field(default_factory=TrackerConfig)
    tracks: list[KalmanBoxTrack] = field(default_factory=list)
    frame: int = 0
    next_id: int = 1

    def step(self, frame: int, detections: Sequence[Detection]) -> list[TrackOutput]:
        if frame != self.frame + 1:
            raise OutOfOrderFrameError(f"expected frame {self.frame + 1}, got {frame}")
        self.frame = frame
        cfg = self.config
        dets = [d for d in detections if d.score >= cfg.min_score]
        predicted = [t.predict() for t in self.tracks]
        result = associate(predicted, [d.bbox for d in dets], cfg.iou_threshold)
        scores: dict[int, float] = {}
        for ti, di in result.matches:
            self.tracks[ti].update(dets[di].bbox, frame)
            scores[self.tracks[ti].id] = dets[di].score
        for di in result.unmatched_detections:
            trk = KalmanBoxTrack(self.next_id, dets[di].bbox, frame, cfg)
            scores[trk.id] = dets[di].score
            self.next_id += 1
            self.tracks.append(trk)
        out = []
        for trk in self.tracks:
            if trk.status(frame, cfg.min_hits) == "confirmed":
                trk.ever_confirmed = trk.ever_confirmed or trk.hit_streak >= cfg.min_hits
                out.append(TrackOutput(trk.id, trk.bbox, scores.get(trk.id, 1.0)))
        self.tracks = [t for t in self.tracks if t.time_since_update <= cfg.max_age]
        out.sort(key=lambda o: o.track_id)
        return out


def run_tracker(detections_by_frame: dict[int, list[Detection]], n_frames: int,
                config: TrackerConfig = TrackerConfig()) -> dict[int, list[Detection]]:
    """Run the tracker over frames ``1..n_frames``; returns ID-labelled detections per frame."""
    tracker = MotionTracker(config)
    out: dict[int, list[Detection]] = {}
    for t in range(1, n_frames + 1):
        outs = tracker.step(t, detections_by_frame.get(t, []))
        out[t] = [Detection(t, o.bbox, o.score, o.track_id) for o in outs]
    return out
