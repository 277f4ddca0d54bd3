"""Image and depth-map file I/O.

RGB images are read from PNG/JPEG into float ``[0, 1]`` arrays and written as
8-bit PNG (quantization happens only here). Depth maps are 16-bit PNG, scaled
by ``value / 65535 * depth_scale``, or 32-bit float PFM.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_DEPTH_SCALE = 10.0

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class ImageFormatError(ValueError):
    pass


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG", optimize=False)


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise ImageFormatError(f"{path}: not a PFM file")
        channels = 1 if header == b"Pf" else 3
        dims = fh.readline().decode("ascii")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ImageFormatError(f"{path}: malformed PFM dimensions {dims!r}")
        width, height = int(m.group(1)), int(m.group(2))
        scale = float(fh.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    expected = width * height * channels
    if data.size != expected:
        raise ImageFormatError(f"{path}: expected {expected} floats, found {data.size}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    # PFM rows are stored bottom to top
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path: str | Path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ImageFormatError("only single-channel PFM is supported for writing")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(depth).tobytes())


def read_depth(path: str | Path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        depth = read_pfm(path)
        if depth.ndim == 3:
            depth = depth[..., 0]
    else:
        with Image.open(path) as im:
            raw = np.asarray(im)
        if raw.ndim != 2:
            raise ImageFormatError(f"{path}: depth PNG must be single-channel")
        if raw.dtype == np.uint8:
            raw = raw.astype(np.float64) * (65535.0 / 255.0)
        depth = raw.astype(np.float64) / 65535.0 * depth_scale
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ImageFormatError(f"{path}: depth values must be finite and >= 0")
    return depth


def write_depth_png(path: str | Path, depth: np.ndarray, depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    raw = np.clip(np.rint(np.asarray(depth) / depth_scale * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path, format="PNG")


def list_frames(frames_dir: str | Path) -> list[Path]:
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frames directory {frames_dir} does not exist")
    return sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
