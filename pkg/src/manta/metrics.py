"""Single-object tracking metrics over per-frame predicted/ground-truth boxes.

All functions take ``(N, 4)`` xywh arrays (a single box is also accepted).

* Success curve: fraction of frames with IoU strictly greater than each
  overlap threshold; AUC is the arithmetic mean over the threshold grid.
* Precision curve: fraction of frames with pixel centre error <= each
  threshold; AUC is the mean over the grid.
* CSC: fraction of frames with normalized centre error and both relative
  size errors strictly below their thresholds.
* GAS: ``exp(-e_c**2 / sigma_c**2) * exp(-e_s / sigma_s**2)`` per frame, with
  ``e_s`` the squared size error normalized by the squared GT diagonal.

Frames whose ground truth is all zeros (target absent) are dropped before
any metric is computed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


class EmptySequenceError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


def _grid(start: float, stop: float, n: int) -> tuple[float, ...]:
    return tuple(start + (stop - start) * k / (n - 1) for k in range(n))


@dataclass(frozen=True)
class MetricConfig:
    tau_c: float = 0.2
    tau_s: float = 0.2
    sigma_c: float = 0.5
    sigma_s: float = 0.5
    overlap_thresholds: tuple[float, ...] = _grid(0.0, 1.0, 21)
    center_thresholds: tuple[float, ...] = _grid(0.0, 50.0, 51)
    success_at: float = 0.5
    precision_at: float = 20.0

    def __post_init__(self) -> None:
        for name in ("tau_c", "tau_s", "sigma_c", "sigma_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for grid in (self.overlap_thresholds, self.center_thresholds):
            if len(grid) < 1 or np.any(np.diff(grid) <= 0):
                raise ValueError("threshold grids must be strictly increasing")


def _boxes(a) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(-1, 4)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _boxes(pred), _boxes(gt)
    if len(p) != len(g):
        raise LengthMismatchError(f"{len(p)} predictions vs {len(g)} ground-truth frames")
    return p, g


def centers(b: np.ndarray) -> np.ndarray:
    return b[:, :2] + b[:, 2:] / 2.0


def center_error_px(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    return np.linalg.norm(centers(p) - centers(g), axis=1)


def center_error_norm(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    return np.linalg.norm(centers(p) - centers(g), axis=1) / np.hypot(g[:, 2], g[:, 3])


def scale_errors(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _pair(pred, gt)
    return np.abs(p[:, 2] - g[:, 2]) / g[:, 2], np.abs(p[:, 3] - g[:, 3]) / g[:, 3]


def frame_iou(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    px2, py2 = p[:, 0] + p[:, 2], p[:, 1] + p[:, 3]
    gx2, gy2 = g[:, 0] + g[:, 2], g[:, 1] + g[:, 3]
    iw = np.clip(np.minimum(px2, gx2) - np.maximum(p[:, 0], g[:, 0]), 0, None)
    ih = np.clip(np.minimum(py2, gy2) - np.maximum(p[:, 1], g[:, 1]), 0, None)
    inter = iw * ih
    # areas from the same extents as the intersection: identical boxes give exactly 1
    union = (px2 - p[:, 0]) * (py2 - p[:, 1]) + (gx2 - g[:, 0]) * (gy2 - g[:, 1]) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def csc_indicator(pred, gt, tau_c: float = 0.2, tau_s: float = 0.2) -> np.ndarray:
    e_c = center_error_norm(pred, gt)
    e_w, e_h = scale_errors(pred, gt)
    return (e_c < tau_c) & (e_w < tau_s) & (e_h < tau_s)


def csc(pred, gt, tau_c: float = 0.2, tau_s: float = 0.2) -> float:
    ind = csc_indicator(pred, gt, tau_c, tau_s)
    if ind.size == 0:
        raise EmptySequenceError("CSC over an empty sequence")
    return float(np.mean(ind))


def size_error(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    return ((p[:, 2] - g[:, 2]) ** 2 + (p[:, 3] - g[:, 3]) ** 2) / (g[:, 2] ** 2 + g[:, 3] ** 2)


def gas(pred, gt, sigma_c: float = 0.5, sigma_s: float = 0.5) -> np.ndarray:
    e_c = center_error_norm(pred, gt)
    e_s = size_error(pred, gt)
    return np.exp(-(e_c**2) / sigma_c**2) * np.exp(-e_s / sigma_s**2)


@dataclass
class Curve:
    thresholds: list[float]
    values: list[float]

    @property
    def auc(self) -> float:
        return float(np.mean(self.values))

    def at(self, threshold: float) -> float:
        idx = int(np.argmin(np.abs(np.asarray(self.thresholds) - threshold)))
        if not np.isclose(self.thresholds[idx], threshold):
            raise KeyError(f"threshold {threshold} is not on the grid")
        return self.values[idx]


def success_curve(pred, gt, thresholds: Sequence[float] = MetricConfig().overlap_thresholds) -> Curve:
    ious = frame_iou(pred, gt)
    if ious.size == 0:
        raise EmptySequenceError("success curve over an empty sequence")
    th = np.asarray(thresholds, dtype=float)
    vals = np.mean(ious[None, :] > th[:, None], axis=1)
    return Curve([float(t) for t in th], [float(v) for v in vals])


def precision_curve(pred, gt, thresholds: Sequence[float] = MetricConfig().center_thresholds) -> Curve:
    err = center_error_px(pred, gt)
    if err.size == 0:
        raise EmptySequenceError("precision curve over an empty sequence")
    th = np.asarray(thresholds, dtype=float)
    vals = np.mean(err[None, :] <= th[:, None], axis=1)
    return Curve([float(t) for t in th], [float(v) for v in vals])


@dataclass
class MetricReport:
    success_auc: float
    success_at_05: float
    precision_auc: float
    precision_at_20px: float
    miou: float
    mgas: float
    mcsc: float
    success: Curve
    precision: Curve
    n_frames: int = 0
    n_excluded: int = 0
    per_sequence: dict[str, "MetricReport"] = field(default_factory=dict)

    SCALARS = ("success_auc", "success_at_05", "precision_auc", "precision_at_20px", "miou", "mgas", "mcsc")

    def scalars(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.SCALARS}

    def to_dict(self) -> dict:
        out = {k: float(v) for k, v in self.scalars().items()}
        out["n_frames"] = self.n_frames
        out["n_excluded"] = self.n_excluded
        out["success_curve"] = asdict(self.success)
        out["precision_curve"] = asdict(self.precision)
        if self.per_sequence:
            out["per_sequence"] = {k: v.to_dict() for k, v in self.per_sequence.items()}
        return out


def present_mask(gt) -> np.ndarray:
    g = _boxes(gt)
    return ~np.all(g == 0, axis=1)


def report(pred, gt, config: MetricConfig = MetricConfig()) -> MetricReport:
    p, g = _pair(pred, gt)
    keep = present_mask(g)
    if not np.all(g[keep, 2:] > 0):
        raise ValueError("ground-truth boxes must have positive width and height")
    p, g = p[keep], g[keep]
    if len(g) == 0:
        raise EmptySequenceError("no frames with the target present")
    succ = success_curve(p, g, config.overlap_thresholds)
    prec = precision_curve(p, g, config.center_thresholds)
    return MetricReport(
        success_auc=succ.auc,
        success_at_05=succ.at(config.success_at),
        precision_auc=prec.auc,
        precision_at_20px=prec.at(config.precision_at),
        miou=float(np.mean(frame_iou(p, g))),
        mgas=float(np.mean(gas(p, g, config.sigma_c, config.sigma_s))),
        mcsc=csc(p, g, config.tau_c, config.tau_s),
        success=succ,
        precision=prec,
        n_frames=int(len(g)),
        n_excluded=int((~keep).sum()),
    )


def aggregate(reports: dict[str, MetricReport]) -> MetricReport:
    """Sequence-level average: curves and scalars are means over sequences,
    reduced in sorted sequence-id order."""
    if not reports:
        raise EmptySequenceError("nothing to aggregate")
    names = sorted(reports)
    rs = [reports[n] for n in names]

    def mean_curve(attr: str) -> Curve:
        cs = [getattr(r, attr) for r in rs]
        return Curve(list(cs[0].thresholds), [float(v) for v in np.mean([c.values for c in cs], axis=0)])

    scal = {k: float(np.mean([getattr(r, k) for r in rs])) for k in MetricReport.SCALARS}
    return MetricReport(
        **scal,
        success=mean_curve("success"),
        precision=mean_curve("precision"),
        n_frames=sum(r.n_frames for r in rs),
        n_excluded=sum(r.n_excluded for r in rs),
        per_sequence={n: reports[n] for n in names},
    )


def write_curve_csv(path, curve: Curve) -> None:
    lines = ["threshold,value"] + [f"{t!r},{v!r}" for t, v in zip(curve.thresholds, curve.values)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
