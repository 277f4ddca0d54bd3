"""Appearance embeddings: crop -> unit-norm 128-d vector.

The feature extractor is handcrafted and dataset-free:

1. the crop is bilinearly resized to a canonical 32x32,
2. a soft per-channel intensity histogram (``histogram_bins`` per channel),
3. the canonical crop lightly blurred and resized to ``patch_size`` x
   ``patch_size`` grayscale, mean-centred,

each block L2-normalized and weighted, then concatenated. Both blocks weight
pixels by a centred Gaussian window (``window_sigma``), since the border of
a box is the part that changes most when the box shifts or grows by a pixel. A projection head
maps features to 128-d and L2-normalizes. The ``handcrafted`` kind uses a
fixed seeded matrix with orthonormal rows; the ``trainable`` kind is
affine -> tanh -> affine and is fit by :mod:`manta.contrastive`.
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.ndimage import gaussian_filter1d

EMBED_DIM = 128
CANONICAL_SIZE = 32
MAGIC = b"MNTAEMB1"
_NORM_EPS = 1e-12


class EmbeddingError(ValueError):
    pass


class EmbeddingFormatError(EmbeddingError):
    pass


class EmbeddingDimError(EmbeddingError):
    pass


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "handcrafted"
    patch_size: int = 16
    histogram_bins: int = 8
    hist_weight: float = 0.8
    window_sigma: float = 0.3
    patch_blur: float = 1.0
    seed: int = 0
    hidden_dim: int = 64

    def __post_init__(self) -> None:
        if self.kind not in ("handcrafted", "trainable"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.patch_size < 4:
            raise ValueError("patch_size must be >= 4")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")
        if not 0.0 <= self.hist_weight <= 1.0:
            raise ValueError("hist_weight must lie in [0, 1]")
        if self.window_sigma < 0 or self.patch_blur < 0:
            raise ValueError("window_sigma and patch_blur must be >= 0")

    @property
    def feature_dim(self) -> int:
        return 3 * self.histogram_bins + self.patch_size**2


@lru_cache(maxsize=1024)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights, half-pixel convention."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - (pos - lo))
    np.add.at(m, (rows, hi), pos - lo)
    m.setflags(write=False)
    return m


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment (half-pixel convention)."""
    image = np.asarray(image, dtype=float)
    ry = _interp_matrix(image.shape[0], out_h)
    rx = _interp_matrix(image.shape[1], out_w)
    if image.ndim == 2:
        return ry @ image @ rx.T
    rows = (ry @ image.reshape(image.shape[0], -1)).reshape((out_h,) + image.shape[1:])
    return np.matmul(rx, rows)


def soft_histogram(values: np.ndarray, bins: int, weights: np.ndarray | None = None) -> np.ndarray:
    """Histogram over ``[0, 1]`` with linear interpolation between bin centres.

    A 2-d ``values`` array of shape (n, c) gives one histogram per column,
    concatenated. Optional per-row ``weights`` of shape (n,); each histogram
    sums to 1.
    """
    v = np.asarray(values, dtype=float)
    v = v.reshape(-1, 1) if v.ndim == 1 else v.reshape(-1, v.shape[-1])
    n, c = v.shape
    pos = np.clip(v * bins - 0.5, 0.0, bins - 1)
    lo = pos.astype(np.intp)
    frac = pos - lo
    idx = (lo + np.arange(c) * bins).ravel()
    if weights is None:
        w_lo, w_hi, total = 1.0 - frac, frac, n
    else:
        wt = np.asarray(weights, dtype=float).reshape(-1, 1)
        w_lo, w_hi, total = (1.0 - frac) * wt, frac * wt, wt.sum()
    hist = np.bincount(idx, w_lo.ravel(), bins * c)
    # upper neighbour is bin lo + 1; at the last bin frac is 0, so the shift
    # into the next channel's first bin adds nothing
    hist[1:] += np.bincount(idx, w_hi.ravel(), bins * c)[:-1]
    return hist / total


@lru_cache(maxsize=16)
def _patch_matrix(n_in: int, n_out: int, blur: float) -> np.ndarray:
    """(n_out, n_in) separable operator: Gaussian blur (edge-replicated) then
    bilinear resize, so a gray image maps to its patch as ``m @ g @ m.T``."""
    g = np.eye(n_in)
    if blur > 0:
        g = gaussian_filter1d(g, blur, axis=0, mode="nearest")
    m = _interp_matrix(n_in, n_out) @ g
    m.setflags(write=False)
    return m


@lru_cache(maxsize=16)
def center_window(n: int, sigma: float) -> np.ndarray:
    """(n, n) Gaussian weights over the unit square, peak 1 at the centre.

    ``sigma`` is a fraction of the side; 0 gives uniform weights.
    """
    if sigma <= 0:
        w = np.ones((n, n))
    else:
        u = (np.arange(n) + 0.5) / n - 0.5
        w = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2.0 * sigma**2))
    w.setflags(write=False)
    return w


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.sqrt(v @ v)
    return v / n if n > _NORM_EPS else np.zeros_like(v)


_LUMA = np.array([0.299, 0.587, 0.114])


def extract_features(crop: np.ndarray, config: EmbedderConfig = EmbedderConfig()) -> np.ndarray:
    crop = np.asarray(crop, dtype=float)
    if crop.ndim != 3 or crop.shape[0] == 0 or crop.shape[1] == 0:
        raise EmbeddingError(f"empty or malformed crop of shape {crop.shape}")
    canon = resize_bilinear(crop, CANONICAL_SIZE, CANONICAL_SIZE)
    # centre weighting: border pixels move most under small box changes
    hist = soft_histogram(canon, config.histogram_bins, center_window(CANONICAL_SIZE, config.window_sigma))
    m = _patch_matrix(CANONICAL_SIZE, config.patch_size, config.patch_blur)
    patch = (m @ (canon @ _LUMA) @ m.T).ravel()
    pw = center_window(config.patch_size, config.window_sigma).ravel()
    patch = (patch - (patch @ pw) / pw.sum()) * pw
    wh = np.sqrt(config.hist_weight)
    wg = np.sqrt(1.0 - config.hist_weight)
    return np.concatenate([wh * _unit(hist), wg * _unit(patch)])


def extract_features_batch(crops, config: EmbedderConfig = EmbedderConfig()) -> np.ndarray:
    return np.stack([extract_features(c, config) for c in crops])


class LinearProjection:
    """``e = normalize(W x + b)``."""

    kind = "linear"

    def __init__(self, W: np.ndarray, b: np.ndarray | None = None):
        self.W = np.asarray(W, dtype=float)
        self.b = np.zeros(self.W.shape[0]) if b is None else np.asarray(b, dtype=float)

    @classmethod
    def orthonormal(cls, in_dim: int, out_dim: int = EMBED_DIM, seed: int = 0) -> "LinearProjection":
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((max(in_dim, out_dim), min(in_dim, out_dim)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        W = q.T if in_dim >= out_dim else q
        return cls(W)

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def _pre(self, x: np.ndarray) -> dict:
        return {"x": x, "y": x @ self.W.T + self.b}

    def _back_pre(self, cache: dict, g_y: np.ndarray) -> dict[str, np.ndarray]:
        return {"W": g_y.T @ cache["x"], "b": g_y.sum(axis=0)}

    def forward(self, x: np.ndarray, return_cache: bool = False):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.in_dim:
            raise EmbeddingDimError(f"feature length {x.shape[1]} != projection input dim {self.in_dim}")
        cache = self._pre(x)
        y = cache["y"]
        norm = np.sqrt(np.einsum("ij,ij->i", y, y))[:, None]
        if np.any(norm <= _NORM_EPS):
            raise EmbeddingError("projection output has zero norm and cannot be normalized")
        e = cache["y"] / norm
        cache.update(norm=norm, e=e)
        return (e, cache) if return_cache else e

    def backward(self, cache: dict, g_e: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given ``dL/de`` for each row of the batch."""
        e, norm = cache["e"], cache["norm"]
        g_y = (g_e - np.sum(g_e * e, axis=1, keepdims=True) * e) / norm
        return self._back_pre(cache, g_y)

    def apply_update(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            setattr(self, name, getattr(self, name) - lr * g)

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.params().items()})


class MLPProjection(LinearProjection):
    """``e = normalize(W2 tanh(W1 x + b1) + b2)``."""

    kind = "mlp"

    def __init__(self, W1, b1, W2, b2):
        self.W1 = np.asarray(W1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.W2 = np.asarray(W2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)

    @classmethod
    def init(cls, in_dim: int, hidden: int = 64, out_dim: int = EMBED_DIM, seed: int = 0) -> "MLPProjection":
        rng = np.random.default_rng(seed)
        W1 = rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim)
        W2 = rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden)
        return cls(W1, np.zeros(hidden), W2, np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def _pre(self, x: np.ndarray) -> dict:
        hid = np.tanh(x @ self.W1.T + self.b1)
        return {"x": x, "h": hid, "y": hid @ self.W2.T + self.b2}

    def _back_pre(self, cache: dict, g_y: np.ndarray) -> dict[str, np.ndarray]:
        hid = cache["h"]
        g_a = (g_y @ self.W2) * (1.0 - hid**2)
        return {
            "W1": g_a.T @ cache["x"],
            "b1": g_a.sum(axis=0),
            "W2": g_y.T @ hid,
            "b2": g_y.sum(axis=0),
        }


def project(features: np.ndarray, params: LinearProjection) -> np.ndarray:
    """Apply a projection head; a 1-d input returns a 1-d embedding."""
    out = params.forward(features)
    return out[0] if np.ndim(features) == 1 else out


def save_projection(path: str | Path, proj: LinearProjection) -> None:
    np.savez(path, kind=np.array(proj.kind), **proj.params())


def load_projection(path: str | Path) -> LinearProjection:
    with np.load(path) as data:
        kind = str(data["kind"])
        arrays = {k: data[k] for k in data.files if k != "kind"}
    if kind == "mlp":
        return MLPProjection(**arrays)
    if kind == "linear":
        return LinearProjection(**arrays)
    raise EmbeddingFormatError(f"{path}: unknown projection kind {kind!r}")


class Embedder:
    """Feature extractor plus projection head; pure given its configuration."""

    def __init__(self, config: EmbedderConfig = EmbedderConfig(), projection: LinearProjection | None = None):
        self.config = config
        if projection is None:
            if config.kind == "handcrafted":
                projection = LinearProjection.orthonormal(config.feature_dim, EMBED_DIM, config.seed)
            else:
                projection = MLPProjection.init(config.feature_dim, config.hidden_dim, EMBED_DIM, config.seed)
        if projection.in_dim != config.feature_dim:
            raise EmbeddingDimError(
                f"projection expects {projection.in_dim} features, config produces {config.feature_dim}"
            )
        self.projection = projection

    def features(self, crop: np.ndarray) -> np.ndarray:
        return extract_features(crop, self.config)

    def embed(self, crop: np.ndarray) -> np.ndarray:
        return project(self.features(crop), self.projection)

    def embed_many(self, crops) -> np.ndarray:
        if not crops:
            return np.zeros((0, EMBED_DIM))
        return self.projection.forward(extract_features_batch(crops, self.config))


def embed(crop: np.ndarray, config: EmbedderConfig = EmbedderConfig()) -> np.ndarray:
    return Embedder(config).embed(crop)


def sequence_hash(sequence_id: str) -> int:
    return zlib.crc32(sequence_id.encode("utf-8")) & 0xFFFFFFFF


Key = tuple[int, int, int]


@dataclass
class EmbeddingStore:
    """``(sequence hash, frame, box index) -> unit-norm float32 vector``."""

    dim: int = EMBED_DIM
    vectors: dict[Key, np.ndarray] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def put(self, seq: int, frame: int, box: int, vec: np.ndarray) -> None:
        v = np.asarray(vec, dtype=np.float32).ravel()
        if v.size != self.dim:
            raise EmbeddingDimError(f"vector of dim {v.size} in a dim-{self.dim} store")
        if abs(float(np.linalg.norm(v.astype(np.float64))) - 1.0) > 1e-6:
            raise EmbeddingError(f"vector for {(seq, frame, box)} is not unit norm")
        with self._lock:
            self.vectors[(int(seq), int(frame), int(box))] = v

    def get(self, seq: int, frame: int, box: int) -> np.ndarray | None:
        return self.vectors.get((int(seq), int(frame), int(box)))

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self) -> Iterator[Key]:
        return iter(self.vectors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingStore) or self.dim != other.dim:
            return False
        if self.vectors.keys() != other.vectors.keys():
            return False
        return all(np.array_equal(self.vectors[k], other.vectors[k]) for k in self.vectors)


_HEADER = struct.Struct("<8sII")


def save_embeddings(path: str | Path, store: EmbeddingStore) -> None:
    rec = struct.Struct(f"<III{store.dim}f")
    with store._lock:
        items = sorted(store.vectors.items())
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(items), store.dim))
        for (seq, frame, box), vec in items:
            fh.write(rec.pack(seq, frame, box, *vec.tolist()))


def load_embeddings(path: str | Path, expected_dim: int | None = EMBED_DIM) -> EmbeddingStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, count, dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if expected_dim is not None and dim != expected_dim:
        raise EmbeddingDimError(f"{path}: file holds dim-{dim} vectors, pipeline expects {expected_dim}")
    rec_dtype = np.dtype([("seq", "<u4"), ("frame", "<u4"), ("box", "<u4"), ("vec", "<f4", (dim,))])
    body = blob[_HEADER.size:]
    if len(body) != count * rec_dtype.itemsize:
        raise EmbeddingFormatError(f"{path}: expected {count} records, body has {len(body)} bytes")
    recs = np.frombuffer(body, dtype=rec_dtype)
    store = EmbeddingStore(dim=dim)
    for r in recs:
        store.vectors[(int(r["seq"]), int(r["frame"]), int(r["box"]))] = np.array(r["vec"], dtype=np.float32)
    return store
