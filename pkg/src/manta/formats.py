"""Text file formats.

* Detections / tracks: CSV ``frame,track_id,x,y,w,h,score`` (``track_id = -1``
  for raw detections), optional header line.
* Ground truth and predictions: one ``x,y,w,h`` line per frame, frame index
  implicit and 1-based; an all-zero line marks the target as absent.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from manta.geometry import BBox, InvalidBoxError

DET_HEADER = ("frame", "track_id", "x", "y", "w", "h", "score")


class FormatError(ValueError):
    """Malformed input file; message carries the file and line number."""


@dataclass(frozen=True)
class Detection:
    frame: int
    bbox: BBox
    score: float = 1.0
    track_id: int = -1

    def __post_init__(self) -> None:
        if self.frame < 1:
            raise ValueError(f"frame index must be >= 1, got {self.frame}")


def fmt(v: float) -> str:
    """Shortest text that round-trips the float exactly."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _split(line: str) -> list[str]:
    return [f for f in re.split(r"[,\s]+", line.strip()) if f]


def parse_detection_line(line: str, lineno: int = 1, source: str = "<string>") -> Detection:
    fields = _split(line)
    if len(fields) < 7:
        raise FormatError(f"{source}:{lineno}: expected 7 fields frame,track_id,x,y,w,h,score, got {len(fields)}")
    try:
        frame = int(float(fields[0]))
        tid = int(float(fields[1]))
        x, y, w, h, score = (float(f) for f in fields[2:7])
        return Detection(frame, BBox(x, y, w, h), score, tid)
    except (ValueError, InvalidBoxError) as exc:
        raise FormatError(f"{source}:{lineno}: {exc}") from exc


def read_detections(path: str | Path) -> list[Detection]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"detections file {path} does not exist")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if lineno == 1 and line.lower().startswith("frame"):
                continue
            out.append(parse_detection_line(line, lineno, str(path)))
    return out


def format_detections(dets: Iterable[Detection], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(DET_HEADER)
    for d in dets:
        b = d.bbox
        writer.writerow([d.frame, d.track_id, fmt(b.x), fmt(b.y), fmt(b.w), fmt(b.h), fmt(d.score)])
    return buf.getvalue()


def write_detections(path: str | Path, dets: Iterable[Detection], header: bool = True) -> None:
    Path(path).write_text(format_detections(dets, header), encoding="utf-8")


def parse_box_line(line: str, lineno: int = 1, source: str = "<string>") -> np.ndarray:
    fields = _split(line)
    if len(fields) != 4:
        raise FormatError(f"{source}:{lineno}: expected 4 fields x,y,w,h, got {len(fields)}")
    try:
        vals = np.array([float(f) for f in fields])
    except ValueError as exc:
        raise FormatError(f"{source}:{lineno}: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{source}:{lineno}: non-finite value")
    return vals


def read_boxes(path: str | Path) -> np.ndarray:
    """Per-frame ``x,y,w,h`` lines as an ``(N, 4)`` array."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"box file {path} does not exist")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rows.append(parse_box_line(line, lineno, str(path)))
    return np.array(rows).reshape(-1, 4)


def format_boxes(boxes: Sequence) -> str:
    lines = []
    for b in boxes:
        vals = b.as_tuple() if isinstance(b, BBox) else tuple(b)
        lines.append(",".join(fmt(v) for v in vals))
    return "\n".join(lines) + ("\n" if lines else "")


def write_boxes(path: str | Path, boxes: Sequence) -> None:
    Path(path).write_text(format_boxes(boxes), encoding="utf-8")


def parse_bbox_arg(text: str) -> BBox:
    """``"x,y,w,h"`` command-line form."""
    vals = parse_box_line(text, 1, "--anchor")
    return BBox.from_seq(vals)
