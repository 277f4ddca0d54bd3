"""Beer-Lambert underwater image formation.

An image ``I`` seen through water of relative depth ``D`` is modelled as

    I_BL(p) = I(p) * T(p) + B * (1 - T(p)),    T(p) = exp(-beta * D(p))

with a scalar attenuation coefficient ``beta`` shared by the three channels
and an RGB background (water) colour ``B``. Images are float arrays of shape
``(H, W, 3)`` in ``[0, 1]``; depth maps are ``(H, W)`` and non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from manta.geometry import BBox

DEFAULT_BACKGROUND = (0.6, 0.8, 0.9)
DEFAULT_BETA_RANGE = (0.1, 0.5)


class DimensionMismatchError(ValueError):
    pass


class EmptyCropError(ValueError):
    pass


@dataclass(frozen=True)
class AttenuationParams:
    beta: float
    background: tuple[float, float, float] = DEFAULT_BACKGROUND

    def __post_init__(self) -> None:
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if len(self.background) != 3 or not all(0.0 <= c <= 1.0 for c in self.background):
            raise ValueError(f"background must be an RGB triple in [0, 1], got {self.background}")


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return np.exp(-beta * np.asarray(depth, dtype=float))


def beer_lambert(image: np.ndarray, depth: np.ndarray, params: AttenuationParams) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if image.ndim != 3 or image.shape[:2] != depth.shape:
        raise DimensionMismatchError(
            f"image {image.shape} and depth {depth.shape} are not spatially aligned"
        )
    t = transmission(depth, params.beta)[..., None]
    bg = np.asarray(params.background, dtype=float)
    out = image * t + bg * (1.0 - t)
    # the mix can round one ulp past B when t underflows; clamp to the exact range
    return np.clip(out, np.minimum(image, bg), np.maximum(image, bg))


def sample_beta(
    rng: np.random.Generator, low: float = DEFAULT_BETA_RANGE[0], high: float = DEFAULT_BETA_RANGE[1]
) -> float:
    """Uniform draw of an attenuation coefficient from ``[low, high]``."""
    if low < 0 or low > high:
        raise ValueError(f"invalid beta range [{low}, {high}]")
    if low == high:
        return float(low)
    return float(rng.uniform(low, high))


def clip_region(region: BBox, height: int, width: int) -> tuple[int, int, int, int] | None:
    """Integer pixel bounds ``(r0, r1, c0, c1)`` of ``region`` inside an image.

    Pixel ``(r, c)`` belongs to the region when its center lies in the box.
    Returns ``None`` when nothing of the region is inside the image.
    """
    c0 = max(0, int(np.ceil(region.x - 0.5)))
    c1 = min(width, int(np.ceil(region.x2 - 0.5)))
    r0 = max(0, int(np.ceil(region.y - 0.5)))
    r1 = min(height, int(np.ceil(region.y2 - 0.5)))
    if c1 <= c0 or r1 <= r0:
        return None
    return r0, r1, c0, c1


def crop(image: np.ndarray, region: BBox) -> np.ndarray:
    bounds = clip_region(region, image.shape[0], image.shape[1])
    if bounds is None:
        raise EmptyCropError(f"region {region.as_tuple()} does not intersect a {image.shape[:2]} image")
    r0, r1, c0, c1 = bounds
    return image[r0:r1, c0:c1]


def augment_crop(
    image: np.ndarray, region: BBox, depth: np.ndarray, params: AttenuationParams
) -> np.ndarray:
    """Beer-Lambert transform of the part of ``image`` under ``region``.

    The region is clipped to the image; ``EmptyCropError`` if nothing is left.
    """
    image = np.asarray(image, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if image.shape[:2] != depth.shape:
        raise DimensionMismatchError(
            f"image {image.shape} and depth {depth.shape} are not spatially aligned"
        )
    bounds = clip_region(region, image.shape[0], image.shape[1])
    if bounds is None:
        raise EmptyCropError(f"region {region.as_tuple()} does not intersect a {image.shape[:2]} image")
    r0, r1, c0, c1 = bounds
    return beer_lambert(image[r0:r1, c0:c1], depth[r0:r1, c0:c1], params)


def linear_depth(height: int, width: int, near: float = 0.5, far: float = 3.0, axis: int = 0) -> np.ndarray:
    """Synthetic depth ramp from ``near`` to ``far`` along ``axis`` (0 = top to bottom)."""
    if height <= 0 or width <= 0:
        raise ValueError("depth map dimensions must be positive")
    n = height if axis == 0 else width
    ramp = np.linspace(near, far, n) if n > 1 else np.full(1, near)
    if axis == 0:
        return np.repeat(ramp[:, None], width, axis=1)
    return np.repeat(ramp[None, :], height, axis=0)
