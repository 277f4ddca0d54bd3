"""Synthetic single-target sequences with exact ground truth.

Frames show a water-coloured background with flat-shaded objects; every
object has a fixed colour and a seeded, smooth speckle texture that moves and
scales with it. Detections are the true boxes plus configurable noise, with
the target left undetected inside occlusion windows (the target stays
visible in the imagery, only the detector misses it).
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from manta.bundle import SequenceBundle
from manta.embedder import resize_bilinear
from manta.formats import Detection
from manta.geometry import BBox
from manta.physics import AttenuationParams, beer_lambert, clip_region, linear_depth


@dataclass(frozen=True)
class ObjectSpec:
    """Piecewise-linear path: ``waypoints`` are ``(frame, cx, cy)``, ``sizes`` are ``(frame, w, h)``."""

    waypoints: tuple[tuple[float, float, float], ...]
    sizes: tuple[tuple[float, float, float], ...]
    hue: float = 0.08
    saturation: float = 0.85
    value: float = 0.9
    shape: str = "rect"
    texture_seed: int = 0

    def box_at(self, frame: int) -> BBox:
        wf, wx, wy = (np.array(c, dtype=float) for c in zip(*self.waypoints))
        sf, sw, sh = (np.array(c, dtype=float) for c in zip(*self.sizes))
        cx, cy = np.interp(frame, wf, wx), np.interp(frame, wf, wy)
        w, h = np.interp(frame, sf, sw), np.interp(frame, sf, sh)
        return BBox.from_center(float(cx), float(cy), float(w), float(h))

    @property
    def rgb(self) -> np.ndarray:
        return np.array(colorsys.hsv_to_rgb(self.hue, self.saturation, self.value))


@dataclass(frozen=True)
class NoiseSpec:
    center_jitter: float = 0.0
    size_jitter: float = 0.0
    miss_prob: float = 0.0
    fp_rate: float = 0.0

    def __post_init__(self) -> None:
        if min(self.center_jitter, self.size_jitter, self.miss_prob, self.fp_rate) < 0:
            raise ValueError("noise parameters must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    n_frames: int = 100
    width: int = 320
    height: int = 240
    target: ObjectSpec = ObjectSpec(
        waypoints=((1, 80, 120), (100, 240, 120)), sizes=((1, 40, 40), (100, 40, 40))
    )
    distractors: tuple[ObjectSpec, ...] = ()
    occlusions: tuple[tuple[int, int], ...] = ()
    noise: NoiseSpec = NoiseSpec()
    background: tuple[float, float, float] = (0.12, 0.35, 0.45)
    sensor_noise: float = 0.01
    water_beta: float = 0.0
    seed: int = 0
    sequence_id: str = "synthetic"

    def __post_init__(self) -> None:
        if self.n_frames < 1 or self.width < 1 or self.height < 1:
            raise ValueError("frame count and image size must be positive")
        for a, b in self.occlusions:
            if not 1 <= a <= b <= self.n_frames:
                raise ValueError(f"occlusion window {(a, b)} outside frames 1..{self.n_frames}")

    def occluded(self, frame: int) -> bool:
        return any(a <= frame <= b for a, b in self.occlusions)


def _texture(seed: int, size: int = 48) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    tex = gaussian_filter(rng.standard_normal((size, size)), sigma=6.0, mode="wrap")
    tex -= tex.min()
    return tex / max(tex.max(), 1e-12)


def _background(cfg: SynthConfig) -> np.ndarray:
    rows = np.linspace(1.15, 0.85, cfg.height)[:, None, None]
    return np.clip(np.asarray(cfg.background)[None, None, :] * rows * np.ones((1, cfg.width, 1)), 0, 1)


def _paint(canvas: np.ndarray, obj: ObjectSpec, box: BBox, tex: np.ndarray) -> None:
    bounds = clip_region(box, canvas.shape[0], canvas.shape[1])
    if bounds is None:
        return
    r0, r1, c0, c1 = bounds
    rows = (np.arange(r0, r1) + 0.5 - box.y) / box.h
    cols = (np.arange(c0, c1) + 0.5 - box.x) / box.w
    full = resize_bilinear(tex, max(int(round(box.h)), 1), max(int(round(box.w)), 1))
    ri = np.clip((rows * full.shape[0]).astype(int), 0, full.shape[0] - 1)
    ci = np.clip((cols * full.shape[1]).astype(int), 0, full.shape[1] - 1)
    shade = 0.55 + 0.45 * full[np.ix_(ri, ci)]
    color = obj.rgb[None, None, :] * shade[..., None]
    if obj.shape == "ellipse":
        mask = ((rows[:, None] - 0.5) ** 2 + (cols[None, :] - 0.5) ** 2) <= 0.25
        region = canvas[r0:r1, c0:c1]
        region[mask] = color[mask]
    else:
        canvas[r0:r1, c0:c1] = color


def render_frame(cfg: SynthConfig, frame: int, rng: np.random.Generator, textures=None) -> np.ndarray:
    objs = list(cfg.distractors) + [cfg.target]
    textures = textures or [_texture(o.texture_seed) for o in objs]
    canvas = _background(cfg).copy()
    for obj, tex in zip(objs, textures):
        _paint(canvas, obj, obj.box_at(frame), tex)
    if cfg.water_beta > 0:
        depth = linear_depth(cfg.height, cfg.width, 0.5, 3.0)
        canvas = beer_lambert(canvas, depth, AttenuationParams(cfg.water_beta))
    if cfg.sensor_noise > 0:
        canvas = canvas + rng.normal(0.0, cfg.sensor_noise, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def _noisy(box: BBox, noise: NoiseSpec, rng: np.random.Generator) -> BBox:
    cx, cy = box.center
    w, h = box.w, box.h
    if noise.center_jitter > 0:
        cx += rng.normal(0.0, noise.center_jitter)
        cy += rng.normal(0.0, noise.center_jitter)
    if noise.size_jitter > 0:
        w *= max(0.2, 1.0 + rng.normal(0.0, noise.size_jitter))
        h *= max(0.2, 1.0 + rng.normal(0.0, noise.size_jitter))
    return BBox.from_center(cx, cy, w, h)


def _round_box(box: BBox) -> BBox:
    return BBox(round(box.x, 2), round(box.y, 2), max(round(box.w, 2), 0.01), max(round(box.h, 2), 0.01))


def _visible(box: BBox, cfg: SynthConfig) -> bool:
    return clip_region(box, cfg.height, cfg.width) is not None


def generate_synthetic(cfg: SynthConfig, render: bool = True) -> SequenceBundle:
    """Render frames and derive detections and ground truth; deterministic in ``cfg.seed``."""
    det_rng = np.random.default_rng([cfg.seed, 1])
    img_rng = np.random.default_rng([cfg.seed, 2])
    objs = list(cfg.distractors) + [cfg.target]
    textures = [_texture(o.texture_seed) for o in objs]
    gt = np.array([_round_box(cfg.target.box_at(t)).as_tuple() for t in range(1, cfg.n_frames + 1)])
    dets: list[Detection] = []
    frames = [] if render else None
    for t in range(1, cfg.n_frames + 1):
        for k, obj in enumerate(objs):
            is_target = k == len(objs) - 1
            box = obj.box_at(t)
            if not _visible(box, cfg):
                continue
            if is_target and cfg.occluded(t):
                continue
            if det_rng.random() < cfg.noise.miss_prob:
                continue
            score = round(float(det_rng.uniform(0.7, 0.99)), 3)
            dets.append(Detection(t, _round_box(_noisy(box, cfg.noise, det_rng)), score))
        for _ in range(det_rng.poisson(cfg.noise.fp_rate) if cfg.noise.fp_rate > 0 else 0):
            w = float(det_rng.uniform(15, 60))
            h = float(det_rng.uniform(15, 60))
            x = float(det_rng.uniform(0, cfg.width - w))
            y = float(det_rng.uniform(0, cfg.height - h))
            dets.append(Detection(t, _round_box(BBox(x, y, w, h)), round(float(det_rng.uniform(0.15, 0.6)), 3)))
        if render:
            frames.append(render_frame(cfg, t, img_rng, textures))
    meta = {"sequence_id": cfg.sequence_id, "n_frames": cfg.n_frames, "width": cfg.width, "height": cfg.height,
            "seed": cfg.seed, "occlusions": [list(o) for o in cfg.occlusions]}
    return SequenceBundle(cfg.sequence_id, frames, dets, gt, meta=meta)


# --- scenario factories --------------------------------------------------------------


def _palette_hue(rng: np.random.Generator, avoid: float, min_gap: float = 0.18) -> float:
    while True:
        h = float(rng.uniform(0, 1))
        d = abs(h - avoid)
        if min(d, 1 - d) >= min_gap:
            return h


def occlusion_scenario(
    seed: int,
    n_frames: int = 120,
    gap: tuple[int, int] | tuple[()] | None = None,
    n_distractors: int = 2,
    width: int = 320,
    height: int = 240,
    noise: NoiseSpec = NoiseSpec(center_jitter=1.0, size_jitter=0.03, miss_prob=0.02, fp_rate=0.1),
) -> SynthConfig:
    """Target drifting through the lower band, distractors in the upper band,
    and one detector blackout longer than the default ``max_age`` (30)."""
    rng = np.random.default_rng([seed, 99])
    size = float(rng.uniform(34, 46))
    x0 = float(rng.uniform(50, 90))
    y0 = float(rng.uniform(150, 185))
    direction = 1.0 if rng.random() < 0.5 else -1.0
    speed = float(rng.uniform(1.0, 1.4))
    if direction < 0:
        x0 = width - x0
    xs = x0 + direction * speed * (n_frames - 1)
    ys = y0 + float(rng.uniform(-15, 15))
    target = ObjectSpec(
        waypoints=((1, x0, y0), (n_frames, xs, ys)),
        sizes=((1, size, size * 0.9), (n_frames, size * 1.1, size)),
        hue=float(rng.uniform(0.0, 0.12)),
        saturation=0.9,
        value=0.95,
        shape="rect",
        texture_seed=seed * 31 + 1,
    )
    distractors = []
    for k in range(n_distractors):
        dy = float(rng.uniform(35, 70))
        dx0, dx1 = float(rng.uniform(30, width - 30)), float(rng.uniform(30, width - 30))
        ds = float(rng.uniform(30, 50))
        distractors.append(
            ObjectSpec(
                waypoints=((1, dx0, dy), (n_frames, dx1, dy + float(rng.uniform(-10, 10)))),
                sizes=((1, ds, ds), (n_frames, ds, ds)),
                hue=_palette_hue(rng, target.hue),
                saturation=0.8,
                value=0.85,
                shape="ellipse",
                texture_seed=seed * 31 + 2 + k,
            )
        )
    if gap is None:
        start = int(rng.integers(30, 45))
        gap = (start, start + int(rng.integers(34, 42)))
        # short sequences keep whatever part of the blackout fits
        gap = (gap[0], min(gap[1], n_frames)) if gap[0] <= n_frames else ()
    return SynthConfig(
        n_frames=n_frames,
        width=width,
        height=height,
        target=target,
        distractors=tuple(distractors),
        occlusions=(gap,) if gap else (),
        noise=noise,
        seed=seed,
        sequence_id=f"occlusion-{seed:03d}",
    )


def clean_scenario(seed: int = 0, n_frames: int = 60) -> SynthConfig:
    """No occlusion, near-perfect detections."""
    cfg = occlusion_scenario(seed, n_frames=n_frames, gap=(), noise=NoiseSpec(center_jitter=0.3, size_jitter=0.01))
    return replace(cfg, sequence_id=f"clean-{seed:03d}")


def example_scenario() -> SynthConfig:
    """The small checked-in documentation bundle."""
    cfg = occlusion_scenario(7, n_frames=20, gap=(8, 12), n_distractors=1, width=160, height=120,
                             noise=NoiseSpec(center_jitter=0.5, size_jitter=0.02, fp_rate=0.2))
    t = cfg.target
    target = replace(t, waypoints=((1, 40, 80), (20, 100, 84)), sizes=((1, 24, 22), (20, 26, 24)))
    d = replace(cfg.distractors[0], waypoints=((1, 30, 25), (20, 130, 30)), sizes=((1, 22, 22), (20, 22, 22)))
    return replace(cfg, target=target, distractors=(d,), sequence_id="example")


def corpus_configs(n_sequences: int = 16, n_frames: int = 12, seed: int = 0) -> list[SynthConfig]:
    """Two appearance classes (warm / cool hues), one moving object per sequence."""
    rng = np.random.default_rng([seed, 5])
    out = []
    for i in range(n_sequences):
        label = i % 2
        hue = float(rng.uniform(0.0, 0.1)) if label == 0 else float(rng.uniform(0.5, 0.65))
        size = float(rng.uniform(30, 44))
        x0, y0 = float(rng.uniform(40, 80)), float(rng.uniform(40, 80))
        vx, vy = float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
        target = ObjectSpec(
            waypoints=((1, x0, y0), (n_frames, x0 + vx * n_frames, y0 + vy * n_frames)),
            sizes=((1, size, size), (n_frames, size * float(rng.uniform(0.9, 1.1)), size)),
            hue=hue,
            saturation=float(rng.uniform(0.6, 0.95)),
            value=float(rng.uniform(0.7, 0.95)),
            shape="rect",
            texture_seed=seed * 1000 + i,
        )
        out.append(SynthConfig(n_frames=n_frames, width=128, height=128, target=target,
                               seed=seed * 1000 + i, sequence_id=f"corpus-{i:03d}-c{label}"))
    return out


def split_track_scenario() -> SynthConfig:
    """Canonical id-switch case: seed 0 occlusion scenario, detector blackout
    over frames 30-67 (38 frames, longer than ``max_age``)."""
    return replace(occlusion_scenario(0), sequence_id="split-track")
