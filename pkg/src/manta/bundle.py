"""On-disk sequence bundles.

Layout of a bundle directory::

    frames/000001.png ...   one RGB image per frame (sorted by name)
    detections.csv          frame,track_id,x,y,w,h,score
    groundtruth.txt         x,y,w,h per frame (all zeros = target absent)
    depth/000001.png ...    optional 16-bit depth maps
    meta.json               optional; at least {"sequence_id": ...}
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from manta.formats import Detection, FormatError, read_boxes, read_detections, write_boxes, write_detections
from manta.geometry import BBox
from manta.imageio import list_frames, read_depth, read_image, write_depth_png, write_image

FRAMES_DIR = "frames"
DEPTH_DIR = "depth"
DETECTIONS_FILE = "detections.csv"
GT_FILE = "groundtruth.txt"
META_FILE = "meta.json"


class DirFrames(Sequence):
    """Frames read lazily from image files, with a small LRU cache."""

    def __init__(self, paths: Sequence[Path], cache_size: int = 4, loader=read_image):
        self.paths = list(paths)
        self.cache_size = cache_size
        self._loader = loader
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if i in self._cache:
            self._cache.move_to_end(i)
            return self._cache[i]
        img = self._loader(self.paths[i])
        self._cache[i] = img
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return img


@dataclass
class SequenceBundle:
    """Imagery, detections and ground truth of one sequence.

    ``frames`` is indexable by 0-based position (frame ``t`` lives at
    ``frames[t - 1]``); ``gt`` is an ``(N, 4)`` xywh array with all-zero rows
    marking frames where the target is absent.
    """

    sequence_id: str
    frames: Sequence[np.ndarray] | None
    detections: list[Detection]
    gt: np.ndarray
    depths: Sequence[np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.gt)

    @property
    def anchor(self) -> BBox:
        return BBox.from_seq(self.gt[0])

    def detections_by_frame(self) -> dict[int, list[Detection]]:
        out: dict[int, list[Detection]] = {t: [] for t in range(1, self.n_frames + 1)}
        for d in self.detections:
            out.setdefault(d.frame, []).append(d)
        return out

    def validate(self) -> None:
        if self.n_frames == 0:
            raise FormatError(f"{self.sequence_id}: ground truth is empty")
        if self.frames is not None and len(self.frames) != self.n_frames:
            raise FormatError(
                f"{self.sequence_id}: {len(self.frames)} frames but {self.n_frames} ground-truth lines"
            )
        bad = [d.frame for d in self.detections if not 1 <= d.frame <= self.n_frames]
        if bad:
            raise FormatError(f"{self.sequence_id}: detections reference frame {bad[0]} outside 1..{self.n_frames}")


def bundle_sequence_id(path: str | Path) -> str:
    """Sequence id of a bundle directory: ``meta.json`` when present, else the directory name."""
    path = Path(path).resolve()
    meta = path / META_FILE
    if meta.exists():
        return json.loads(meta.read_text(encoding="utf-8")).get("sequence_id", path.name)
    return path.name


def load_bundle(path: str | Path, depth_scale: float = 10.0) -> SequenceBundle:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"bundle directory {path} does not exist")
    meta = {}
    if (path / META_FILE).exists():
        meta = json.loads((path / META_FILE).read_text(encoding="utf-8"))
    gt = read_boxes(path / GT_FILE)
    dets = read_detections(path / DETECTIONS_FILE) if (path / DETECTIONS_FILE).exists() else []
    frames = DirFrames(list_frames(path / FRAMES_DIR)) if (path / FRAMES_DIR).is_dir() else None
    depths = None
    if (path / DEPTH_DIR).is_dir():
        loader = lambda p: read_depth(p, depth_scale)  # noqa: E731
        depth_paths = sorted((path / DEPTH_DIR).iterdir())
        depths = DirFrames(depth_paths, loader=loader)
    bundle = SequenceBundle(bundle_sequence_id(path), frames, dets, gt, depths, meta)
    bundle.validate()
    return bundle


def write_bundle(bundle: SequenceBundle, path: str | Path, depth_scale: float = 10.0) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if bundle.frames is not None:
        (path / FRAMES_DIR).mkdir(exist_ok=True)
        for t, img in enumerate(bundle.frames, 1):
            write_image(path / FRAMES_DIR / f"{t:06d}.png", img)
    if bundle.depths is not None:
        (path / DEPTH_DIR).mkdir(exist_ok=True)
        for t, d in enumerate(bundle.depths, 1):
            write_depth_png(path / DEPTH_DIR / f"{t:06d}.png", d, depth_scale)
    write_detections(path / DETECTIONS_FILE, bundle.detections)
    write_boxes(path / GT_FILE, bundle.gt)
    meta = dict(bundle.meta)
    meta["sequence_id"] = bundle.sequence_id
    (path / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def crop_sequence(bundle: SequenceBundle, label: int | None = None):
    """Ground-truth crops of a bundle as a contrastive training sequence."""
    from manta.contrastive import CropSequence
    from manta.physics import EmptyCropError, crop

    if bundle.frames is None:
        raise FormatError(f"{bundle.sequence_id}: bundle has no frames to crop")
    frames, crops, depths = [], [], []
    for t in range(1, bundle.n_frames + 1):
        g = bundle.gt[t - 1]
        if np.all(g == 0):
            continue
        box = BBox.from_seq(g)
        try:
            crops.append(crop(bundle.frames[t - 1], box))
            if bundle.depths is not None:
                depths.append(crop(bundle.depths[t - 1][..., None], box)[..., 0])
        except EmptyCropError:
            continue
        frames.append(t)
    return CropSequence(bundle.sequence_id, frames, crops, depths if bundle.depths is not None else None, label)
