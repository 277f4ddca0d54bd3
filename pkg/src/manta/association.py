"""Vision-guided secondary association.

Turns ID-labelled primary tracks plus a first-frame anchor box into a single
target trajectory. Every frame runs the cascade

    initialize -> history_reuse -> retain_active -> reacquire -> local_search

and the first step that succeeds sets the frame's box; if none does, the
previous box is carried forward. The step that fired is recorded per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from manta.embedder import Embedder, EmbeddingStore, sequence_hash
from manta.formats import Detection
from manta.geometry import BBox, ScoreWeights, SimilarityThresholds, are_similar, composite_score
from manta.physics import EmptyCropError, clip_region, crop

SENTINEL = -1

STEPS = ("initialize", "history_reuse", "retain_active", "reacquire", "local_search", "carry_forward")


@dataclass(frozen=True)
class SearchConfig:
    stride_factor: float = 0.5
    expansion_factor: float = 1.5
    theta_cos: float = 0.9
    max_size_ratio: float = 2.0
    w_dist: float = 1.0
    w_scale: float = 1.0
    reacquire_floor: float = 0.5
    reacquire_ref: str = "previous"
    history_capacity: int = 30
    local_search: bool = True
    search_updates_embedding: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.stride_factor <= 1.0:
            raise ValueError("stride_factor must lie in (0, 1]")
        if self.expansion_factor < 1.0:
            raise ValueError("expansion_factor must be >= 1")
        if self.reacquire_ref not in ("previous", "anchor"):
            raise ValueError("reacquire_ref must be 'previous' or 'anchor'")
        if self.history_capacity < 1:
            raise ValueError("history_capacity must be >= 1")

    @property
    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.w_dist, self.w_scale)

    @property
    def thresholds(self) -> SimilarityThresholds:
        return SimilarityThresholds(self.theta_cos, self.max_size_ratio)


class HistoryStack:
    """Bounded most-recently-used list of track ids, front = most recent."""

    def __init__(self, capacity: int = 30):
        self.capacity = capacity
        self._ids: list[int] = [SENTINEL]

    def peek(self) -> int:
        return self._ids[0]

    @property
    def is_sentinel(self) -> bool:
        return self._ids[0] == SENTINEL

    def push(self, track_id: int) -> None:
        if track_id == SENTINEL:
            return
        ids = [i for i in self._ids if i != track_id and i != SENTINEL]
        self._ids = [track_id] + ids[: self.capacity - 1]

    def __iter__(self):
        return iter(list(self._ids))

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, track_id: int) -> bool:
        return track_id in self._ids

    def as_list(self) -> list[int]:
        return list(self._ids)


class Appearance:
    """Embeddings of boxes in frames.

    Crops come from ``frames`` (0-based list, frame ``t`` at ``t - 1``) and are
    embedded with ``embedder``; detection embeddings may instead come from a
    precomputed ``store`` keyed by ``(sequence hash, frame, box index)``.
    Returns ``None`` when neither source can answer.
    """

    def __init__(self, embedder: Embedder | None = None, frames: Sequence[np.ndarray] | None = None,
                 store: EmbeddingStore | None = None, sequence_id: str = ""):
        self.embedder = embedder or Embedder()
        self.frames = frames
        self.store = store
        self.seq = sequence_hash(sequence_id)
        self._memo_frame = 0
        self._memo: dict[int, np.ndarray | None] = {}

    def frame(self, t: int) -> np.ndarray | None:
        if self.frames is None or not 1 <= t <= len(self.frames):
            return None
        return self.frames[t - 1]

    def box(self, t: int, box: BBox) -> np.ndarray | None:
        img = self.frame(t)
        if img is None:
            return None
        try:
            return self.embedder.embed(crop(img, box))
        except EmptyCropError:
            return None

    def boxes(self, t: int, boxes: Sequence[BBox]) -> list[np.ndarray | None]:
        img = self.frame(t)
        if img is None:
            return [None] * len(boxes)
        crops, keep = [], []
        for i, b in enumerate(boxes):
            if clip_region(b, img.shape[0], img.shape[1]) is not None:
                crops.append(crop(img, b))
                keep.append(i)
        out: list[np.ndarray | None] = [None] * len(boxes)
        for i, e in zip(keep, self.embedder.embed_many(crops)):
            out[i] = e
        return out

    def detection(self, t: int, index: int, det: Detection) -> np.ndarray | None:
        # several cascade steps may ask for the same detection within a frame
        if t != self._memo_frame:
            self._memo_frame, self._memo = t, {}
        if index not in self._memo:
            v = self.store.get(self.seq, t, index) if self.store is not None else None
            self._memo[index] = v.astype(np.float64) if v is not None else self.box(t, det.bbox)
        return self._memo[index]


@dataclass
class AuditRecord:
    frame: int
    step: str
    score: float = math.nan
    cos: float = math.nan
    track_id: int = SENTINEL


@dataclass
class AssociationResult:
    trajectory: list[BBox]
    audit: list[AuditRecord]

    def steps(self) -> list[str]:
        return [a.step for a in self.audit]


def best_by_score(ref: BBox, dets: Sequence[Detection], weights: ScoreWeights) -> tuple[int, float] | None:
    """Index and score of the detection maximizing the composite score;
    ties go to the lowest index."""
    if not dets:
        return None
    scores = [composite_score(ref, d.bbox, weights) for d in dets]
    i = max(range(len(dets)), key=lambda k: (scores[k], -k))
    return i, scores[i]


def search_windows(prev: BBox, config: SearchConfig, height: int | None = None,
                   width: int | None = None) -> list[BBox]:
    """Candidate windows for the local search.

    Windows keep the size of ``prev``; their centres sit on a grid anchored
    at the centre of ``prev`` with spacing ``stride_factor * (w, h)`` and are
    limited to the ``expansion_factor``-scaled region around ``prev`` (and to
    the image, when its size is given). Ordered centre first, then by
    increasing grid distance.
    """
    cx, cy = prev.center
    sx, sy = config.stride_factor * prev.w, config.stride_factor * prev.h
    half = config.expansion_factor / 2.0
    n = int(math.floor(half / config.stride_factor + 1e-9))
    cells = sorted(((i, j) for j in range(-n, n + 1) for i in range(-n, n + 1)),
                   key=lambda ij: (abs(ij[0]) + abs(ij[1]), ij[1], ij[0]))
    out = []
    for i, j in cells:
        wx, wy = cx + i * sx, cy + j * sy
        if width is not None and not 0 <= wx < width:
            continue
        if height is not None and not 0 <= wy < height:
            continue
        out.append(BBox.from_center(wx, wy, prev.w, prev.h))
    return out


class SecondaryAssociator:
    """Per-sequence cascade state: history, current box and target embedding."""

    def __init__(self, anchor: BBox, config: SearchConfig = SearchConfig(), appearance: Appearance | None = None):
        self.anchor = anchor
        self.config = config
        self.appearance = appearance
        self.history = HistoryStack(config.history_capacity)
        self.current = anchor
        self.target_embedding: np.ndarray | None = None
        self._anchor_embedded = False

    def _emb(self, t: int, i: int, d: Detection) -> np.ndarray | None:
        return None if self.appearance is None else self.appearance.detection(t, i, d)

    def _similar(self, t: int, i: int, d: Detection):
        e = self._emb(t, i, d)
        ok = are_similar(self.current, d.bbox, self.target_embedding, e, self.config.thresholds)
        cos = float(np.dot(self.target_embedding, e)) if (e is not None and self.target_embedding is not None) else math.nan
        return ok, e, cos

    def _adopt(self, box: BBox, emb: np.ndarray | None) -> None:
        self.current = box
        if emb is not None:
            self.target_embedding = emb

    # cascade steps ------------------------------------------------------------------

    def initialize(self, t: int, dets: Sequence[Detection]) -> AuditRecord:
        if not self._anchor_embedded and self.appearance is not None:
            self.target_embedding = self.appearance.box(t, self.anchor)
            self._anchor_embedded = True
        self.current = self.anchor
        best = best_by_score(self.anchor, dets, self.config.weights)
        if best is None:
            return AuditRecord(t, "initialize")
        i, s = best
        self.history.push(dets[i].track_id)
        return AuditRecord(t, "initialize", s, track_id=dets[i].track_id)

    def history_reuse(self, t: int, dets: Sequence[Detection]) -> AuditRecord | None:
        for h in self.history.as_list()[1:]:
            for i, d in enumerate(dets):
                if d.track_id != h:
                    continue
                ok, e, cos = self._similar(t, i, d)
                if ok:
                    self.history.push(h)
                    self._adopt(d.bbox, e)
                    return AuditRecord(t, "history_reuse", cos=cos, track_id=h)
        return None

    def retain_active(self, t: int, dets: Sequence[Detection]) -> AuditRecord | None:
        front = self.history.peek()
        for i, d in enumerate(dets):
            if d.track_id != front:
                continue
            ok, e, cos = self._similar(t, i, d)
            if ok:
                self._adopt(d.bbox, e)
                return AuditRecord(t, "retain_active", cos=cos, track_id=front)
        return None

    def reacquire(self, t: int, dets: Sequence[Detection]) -> AuditRecord | None:
        ref = self.current if self.config.reacquire_ref == "previous" else self.anchor
        best = best_by_score(ref, dets, self.config.weights)
        if best is None or best[1] < self.config.reacquire_floor:
            return None
        i, s = best
        d = dets[i]
        self.history.push(d.track_id)
        self._adopt(d.bbox, self._emb(t, i, d))
        return AuditRecord(t, "reacquire", s, track_id=d.track_id)

    def local_search(self, t: int) -> AuditRecord | None:
        if not self.config.local_search or self.appearance is None or self.target_embedding is None:
            return None
        img = self.appearance.frame(t)
        if img is None:
            return None
        windows = search_windows(self.current, self.config, img.shape[0], img.shape[1])
        embs = self.appearance.boxes(t, windows)
        best_i, best_cos = -1, -math.inf
        for i, e in enumerate(embs):
            if e is None:
                continue
            c = float(np.dot(self.target_embedding, e))
            if c > best_cos:
                best_i, best_cos = i, c
        if best_i < 0 or best_cos < self.config.theta_cos:
            return None
        self._adopt(windows[best_i], embs[best_i] if self.config.search_updates_embedding else None)
        return AuditRecord(t, "local_search", cos=best_cos)

    def process(self, t: int, dets: Sequence[Detection]) -> tuple[BBox, AuditRecord]:
        if self.history.is_sentinel:
            rec = self.initialize(t, dets)
            return self.current, rec
        rec = (
            self.history_reuse(t, dets)
            or self.retain_active(t, dets)
            or self.reacquire(t, dets)
            or self.local_search(t)
        )
        if rec is None:
            rec = AuditRecord(t, "carry_forward")
        return self.current, rec


def associate_sequence(
    tracks_by_frame: dict[int, Sequence[Detection]],
    anchor: BBox,
    n_frames: int,
    config: SearchConfig = SearchConfig(),
    appearance: Appearance | None = None,
) -> AssociationResult:
    """Run the cascade over frames ``1..n_frames``; exactly one box per frame."""
    assoc = SecondaryAssociator(anchor, config, appearance)
    traj, audit = [], []
    for t in range(1, n_frames + 1):
        box, rec = assoc.process(t, list(tracks_by_frame.get(t, [])))
        traj.append(box)
        audit.append(rec)
    return AssociationResult(traj, audit)


def primary_only_trajectory(
    tracks_by_frame: dict[int, Sequence[Detection]],
    anchor: BBox,
    n_frames: int,
    weights: ScoreWeights = ScoreWeights(),
) -> AssociationResult:
    """Baseline without secondary association: pick the track id that best
    matches the anchor when one first appears, follow that id, and hold the
    last box whenever it is absent."""
    target = SENTINEL
    current = anchor
    traj, audit = [], []
    for t in range(1, n_frames + 1):
        dets = list(tracks_by_frame.get(t, []))
        if target == SENTINEL:
            best = best_by_score(anchor, dets, weights)
            if best is not None:
                target = dets[best[0]].track_id
            traj.append(anchor)
            audit.append(AuditRecord(t, "initialize", track_id=target))
            continue
        hit = next((d for d in dets if d.track_id == target), None)
        if hit is not None:
            current = hit.bbox
            audit.append(AuditRecord(t, "retain_active", track_id=target))
        else:
            audit.append(AuditRecord(t, "carry_forward"))
        traj.append(current)
    return AssociationResult(traj, audit)
