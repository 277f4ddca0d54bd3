"""Dual-positive contrastive loss with analytic gradients.

For anchor ``z_i`` with a temporal positive ``z_i^t``, a Beer-Lambert
positive ``z_i^b`` and negatives ``z_i^{n_k}`` (all unit vectors, similarity
is the dot product)::

    L_i = -log( (exp(s_t/tau) + exp(s_b/tau)) / sum_k exp(s_nk/tau) )
    L_c = mean_i L_i

Positives sit only in the numerator. Because of that ``L_i`` can be negative.
``denominator="include-positives"`` adds both positive terms to the
denominator (the usual InfoNCE form).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from manta.embedder import Embedder, EmbedderConfig, LinearProjection, MLPProjection, extract_features
from manta.physics import AttenuationParams, DEFAULT_BACKGROUND, beer_lambert, linear_depth, sample_beta

log = logging.getLogger(__name__)

DENOMINATORS = ("negatives", "include-positives")


class InsufficientSequencesError(ValueError):
    pass


class NoTemporalPositiveError(ValueError):
    pass


@dataclass
class ContrastiveBatch:
    """Embeddings for one batch.

    ``negatives[i]`` holds the ``K`` negatives of anchor ``i``. When the batch
    was built from a corpus, ``negative_index[i, k]`` points into the pool
    ``concat(anchors, temporal, physics)`` so that gradients can be routed
    back to the vectors the negatives were copied from.
    """

    anchors: np.ndarray
    temporal: np.ndarray
    physics: np.ndarray
    negatives: np.ndarray
    tau: float = 0.1
    negative_index: np.ndarray | None = None
    meta: list["PairSample"] = field(default_factory=list)

    def __post_init__(self) -> None:
        n, d = self.anchors.shape
        if self.temporal.shape != (n, d) or self.physics.shape != (n, d):
            raise ValueError("anchor and positive arrays must share shape (N, d)")
        if self.negatives.ndim != 3 or self.negatives.shape[0] != n or self.negatives.shape[2] != d:
            raise ValueError("negatives must have shape (N, K, d)")
        if self.negatives.shape[1] < 1:
            raise ValueError("need at least one negative per anchor")
        if not self.tau > 0:
            raise ValueError("temperature must be positive")

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    @property
    def k(self) -> int:
        return self.negatives.shape[1]


@dataclass
class BatchGrad:
    anchors: np.ndarray
    temporal: np.ndarray
    physics: np.ndarray
    negatives: np.ndarray


def similarities(batch: ContrastiveBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s_t = np.einsum("nd,nd->n", batch.anchors, batch.temporal)
    s_b = np.einsum("nd,nd->n", batch.anchors, batch.physics)
    s_n = np.einsum("nd,nkd->nk", batch.anchors, batch.negatives)
    return s_t, s_b, s_n


def _lse(x: np.ndarray) -> np.ndarray:
    # sorting first makes the row reduction independent of column order
    return logsumexp(np.sort(x, axis=1), axis=1)


def per_sample_loss_from_sims(
    s_t: np.ndarray, s_b: np.ndarray, s_n: np.ndarray, tau: float, denominator: str = "negatives"
) -> np.ndarray:
    s_t, s_b, s_n = np.atleast_1d(s_t), np.atleast_1d(s_b), np.atleast_2d(s_n)
    pos = np.stack([s_t, s_b], axis=1) / tau
    den = s_n / tau
    if denominator == "include-positives":
        den = np.concatenate([pos, den], axis=1)
    elif denominator != "negatives":
        raise ValueError(f"unknown denominator {denominator!r}")
    return _lse(den) - _lse(pos)


def per_sample_loss(batch: ContrastiveBatch, denominator: str = "negatives") -> np.ndarray:
    return per_sample_loss_from_sims(*similarities(batch), batch.tau, denominator)


def loss(batch: ContrastiveBatch, denominator: str = "negatives") -> float:
    return float(np.mean(per_sample_loss(batch, denominator)))


def loss_grad(batch: ContrastiveBatch, denominator: str = "negatives") -> tuple[float, BatchGrad]:
    """``L_c`` and its gradient with respect to every vector in the batch."""
    tau, n = batch.tau, batch.size
    s_t, s_b, s_n = similarities(batch)
    pos = np.stack([s_t, s_b], axis=1) / tau
    w_pos = softmax(pos, axis=1)
    if denominator == "include-positives":
        w_den = softmax(np.concatenate([pos, s_n / tau], axis=1), axis=1)
        g_pos = (w_den[:, :2] - w_pos) / tau
        g_neg = w_den[:, 2:] / tau
        per = _lse(np.concatenate([pos, s_n / tau], axis=1)) - _lse(pos)
    elif denominator == "negatives":
        g_pos = -w_pos / tau
        g_neg = softmax(s_n / tau, axis=1) / tau
        per = _lse(s_n / tau) - _lse(pos)
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    g_pos /= n
    g_neg /= n
    a = batch.anchors
    g_a = (
        g_pos[:, :1] * batch.temporal
        + g_pos[:, 1:] * batch.physics
        + np.einsum("nk,nkd->nd", g_neg, batch.negatives)
    )
    grads = BatchGrad(
        anchors=g_a,
        temporal=g_pos[:, :1] * a,
        physics=g_pos[:, 1:] * a,
        negatives=g_neg[:, :, None] * a[:, None, :],
    )
    return float(np.mean(per)), grads


# --- finite-difference verification -------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_batch_grad(batch: ContrastiveBatch, denominator: str = "negatives", h: float = 1e-5) -> BatchGrad:
    """Central differences of ``L_c``.

    ``L_i`` reads only row ``i`` of each array, so one coordinate is perturbed
    in all rows at once and each row's derivative is read off its own
    per-sample loss.
    """
    n = batch.size
    out = {}
    for name in ("anchors", "temporal", "physics", "negatives"):
        arr = getattr(batch, name)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape[1:]):
            sl = (slice(None),) + idx
            orig = arr[sl].copy()
            arr[sl] = orig + h
            lp = per_sample_loss(batch, denominator)
            arr[sl] = orig - h
            lm = per_sample_loss(batch, denominator)
            arr[sl] = orig
            g[sl] = (lp - lm) / (2 * h) / n
        out[name] = g
    return BatchGrad(**out)


def random_unit(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    v = rng.standard_normal(tuple(shape))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_batch(rng: np.random.Generator, n: int, k: int, dim: int, tau: float) -> ContrastiveBatch:
    return ContrastiveBatch(
        anchors=random_unit(rng, (n, dim)),
        temporal=random_unit(rng, (n, dim)),
        physics=random_unit(rng, (n, dim)),
        negatives=random_unit(rng, (n, k, dim)),
        tau=tau,
    )


@dataclass
class GradcheckReport:
    n_batches: int
    max_rel_error: float
    worst: tuple
    param_max_rel_error: float

    @property
    def overall(self) -> float:
        return max(self.max_rel_error, self.param_max_rel_error)


def gradcheck(
    seed: int = 0,
    taus: Sequence[float] = (0.05, 0.1, 0.5, 1.0),
    ks: Sequence[int] = (1, 4, 16),
    repeats: int = 9,
    dim: int = 16,
    n: int = 3,
    h: float = 1e-5,
    denominators: Sequence[str] = DENOMINATORS,
) -> GradcheckReport:
    """Compare analytic and central-difference gradients on random batches.

    Covers the embedding gradients for every (tau, K) combination ``repeats``
    times, plus projection-parameter gradients of a small MLP head.
    """
    rng = np.random.default_rng(seed)
    worst_err, worst = 0.0, ()
    count = 0
    for tau in taus:
        for k in ks:
            for r in range(repeats):
                denom = denominators[r % len(denominators)]
                batch = random_batch(rng, n, k, dim, tau)
                _, ga = loss_grad(batch, denom)
                gn = numeric_batch_grad(batch, denom, h)
                for name in ("anchors", "temporal", "physics", "negatives"):
                    err = relative_error(getattr(ga, name), getattr(gn, name))
                    if err > worst_err:
                        worst_err, worst = err, (tau, k, denom, name)
                count += 1
    param_err = 0.0
    for tau in taus:
        for denom in denominators:
            param_err = max(param_err, _param_gradcheck(rng, tau, denom, h))
    return GradcheckReport(count, worst_err, worst, param_err)


def _param_gradcheck(rng: np.random.Generator, tau: float, denominator: str, h: float) -> float:
    in_dim, n = 10, 4
    proj = MLPProjection.init(in_dim, hidden=6, out_dim=8, seed=int(rng.integers(1 << 31)))
    pool_feats = rng.standard_normal((3 * n, in_dim))
    neg_index = _negative_index(n, include_positives=False)

    def objective() -> float:
        pool = proj.forward(pool_feats)
        return loss(_assemble(pool, n, neg_index, tau), denominator)

    pool, cache = proj.forward(pool_feats, return_cache=True)
    batch = _assemble(pool, n, neg_index, tau)
    _, g = loss_grad(batch, denominator)
    analytic = proj.backward(cache, _pool_grad(g, n, neg_index))
    worst = 0.0
    for name, arr in proj.params().items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            lp = objective()
            arr[idx] = orig - h
            lm = objective()
            arr[idx] = orig
            num[idx] = (lp - lm) / (2 * h)
        worst = max(worst, relative_error(analytic[name], num))
    return worst


# --- batch construction from a crop corpus ------------------------------------------


@dataclass
class CropSequence:
    """Crops of one object through a sequence; ``frames`` are frame indices."""

    seq_id: str
    frames: list[int]
    crops: list[np.ndarray]
    depths: list[np.ndarray] | None = None
    label: int | None = None

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.crops):
            raise ValueError(f"sequence {self.seq_id}: frames and crops differ in length")
        if self.depths is not None and len(self.depths) != len(self.crops):
            raise ValueError(f"sequence {self.seq_id}: depths and crops differ in length")


@dataclass(frozen=True)
class PairSpec:
    temporal_window: int = 4
    beta_range: tuple[float, float] = (0.1, 0.5)
    seed: int = 0
    background: tuple[float, float, float] = DEFAULT_BACKGROUND
    depth_range: tuple[float, float] = (0.5, 3.0)
    positives_as_negatives: bool = False

    def __post_init__(self) -> None:
        if self.temporal_window < 1:
            raise ValueError("temporal_window must be >= 1")


@dataclass(frozen=True)
class PairSample:
    seq_id: str
    anchor_frame: int
    temporal_frame: int
    beta: float


def temporal_partners(frames: Sequence[int], i: int, window: int) -> list[int]:
    """Positions ``j`` whose frame is 1..window steps after position ``i``."""
    f = frames[i]
    return [j for j, g in enumerate(frames) if 1 <= g - f <= window]


def _negative_index(n: int, include_positives: bool) -> np.ndarray:
    rows = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        idx = list(others)
        if include_positives:
            idx += [n + j for j in others] + [2 * n + j for j in others]
        rows.append(idx)
    return np.array(rows, dtype=int)


def _assemble(pool: np.ndarray, n: int, neg_index: np.ndarray, tau: float, meta=None) -> ContrastiveBatch:
    return ContrastiveBatch(
        anchors=pool[:n],
        temporal=pool[n : 2 * n],
        physics=pool[2 * n :],
        negatives=pool[neg_index],
        tau=tau,
        negative_index=neg_index,
        meta=list(meta or []),
    )


def _pool_grad(g: BatchGrad, n: int, neg_index: np.ndarray) -> np.ndarray:
    pool = np.concatenate([g.anchors, g.temporal, g.physics])
    np.add.at(pool, neg_index.ravel(), g.negatives.reshape(-1, g.negatives.shape[-1]))
    return pool


@dataclass
class FeatureBatch:
    """Sampled crops turned into features; ``pool`` rows are anchors, temporal, physics."""

    pool: np.ndarray
    negative_index: np.ndarray
    meta: list[PairSample]

    @property
    def size(self) -> int:
        return len(self.meta)

    def embed(self, projection: LinearProjection, tau: float) -> ContrastiveBatch:
        return _assemble(projection.forward(self.pool), self.size, self.negative_index, tau, self.meta)


def sample_features(
    sequences: Sequence[CropSequence],
    pairing: PairSpec,
    config: EmbedderConfig,
    rng: np.random.Generator,
) -> FeatureBatch:
    """Draw one anchor per sequence, its temporal and physics positives."""
    if len(sequences) < 2:
        raise InsufficientSequencesError(f"need >= 2 sequences per batch, got {len(sequences)}")
    anchors, temporal, physics, meta = [], [], [], []
    for seq in sequences:
        valid = [i for i in range(len(seq.frames)) if temporal_partners(seq.frames, i, pairing.temporal_window)]
        if not valid:
            raise NoTemporalPositiveError(
                f"sequence {seq.seq_id}: no crop pair within {pairing.temporal_window} frames"
            )
        i = valid[int(rng.integers(len(valid)))]
        partners = temporal_partners(seq.frames, i, pairing.temporal_window)
        j = partners[int(rng.integers(len(partners)))]
        beta = sample_beta(rng, *pairing.beta_range)
        crop = np.asarray(seq.crops[i], dtype=float)
        depth = seq.depths[i] if seq.depths is not None else linear_depth(crop.shape[0], crop.shape[1], *pairing.depth_range)
        aug = beer_lambert(crop, depth, AttenuationParams(beta, pairing.background))
        anchors.append(extract_features(crop, config))
        temporal.append(extract_features(seq.crops[j], config))
        physics.append(extract_features(aug, config))
        meta.append(PairSample(seq.seq_id, seq.frames[i], seq.frames[j], beta))
    pool = np.stack(anchors + temporal + physics)
    return FeatureBatch(pool, _negative_index(len(sequences), pairing.positives_as_negatives), meta)


def build_batch(
    sequences: Sequence[CropSequence],
    pairing: PairSpec,
    embedder: Embedder | None = None,
    tau: float = 0.1,
    rng: np.random.Generator | None = None,
) -> ContrastiveBatch:
    """One contrastive batch: one anchor per sequence, negatives from the others."""
    embedder = embedder or Embedder()
    rng = rng if rng is not None else np.random.default_rng(pairing.seed)
    return sample_features(sequences, pairing, embedder.config, rng).embed(embedder.projection, tau)


# --- training ------------------------------------------------------------------------


@dataclass
class TrainResult:
    projection: MLPProjection
    history: list[float]
    train_history: list[float]
    separation_before: float
    separation_after: float


def separation(projection: LinearProjection, batches: Sequence[FeatureBatch]) -> float:
    """Mean cos(anchor, physics positive) minus mean cos(anchor, negative)."""
    pos, neg = [], []
    for fb in batches:
        b = fb.embed(projection, 1.0)
        _, s_b, s_n = similarities(b)
        pos.append(s_b)
        neg.append(s_n.ravel())
    return float(np.mean(np.concatenate(pos)) - np.mean(np.concatenate(neg)))


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def train(
    corpus: Sequence[CropSequence],
    pairing: PairSpec = PairSpec(),
    epochs: int = 50,
    lr: float = 1e-2,
    batch_size: int = 8,
    tau: float = 0.1,
    config: EmbedderConfig = EmbedderConfig(kind="trainable"),
    denominator: str = "negatives",
    projection: MLPProjection | None = None,
    eval_batches: int = 4,
) -> TrainResult:
    """Plain SGD on the projection head.

    ``history[e]`` is the mean loss over a fixed, seeded set of evaluation
    batches after epoch ``e``; ``train_history`` is the running mean of the
    training-batch losses (those batches are resampled every epoch).
    """
    if len(corpus) < 2:
        raise InsufficientSequencesError("training corpus needs >= 2 sequences")
    rng = np.random.default_rng(pairing.seed)
    eval_rng = np.random.default_rng([pairing.seed, 1])
    proj = projection.copy() if projection is not None else MLPProjection.init(
        config.feature_dim, config.hidden_dim, seed=pairing.seed
    )
    evals = [
        sample_features([corpus[i] for i in chunk], pairing, config, eval_rng)
        for _ in range(eval_batches)
        for chunk in _batches(eval_rng.permutation(len(corpus)), batch_size)
    ]

    def eval_loss() -> float:
        return float(np.mean([loss(fb.embed(proj, tau), denominator) for fb in evals]))

    sep_before = separation(proj, evals)
    history, train_history = [], []
    for epoch in range(epochs):
        losses = []
        for chunk in _batches(rng.permutation(len(corpus)), batch_size):
            fb = sample_features([corpus[i] for i in chunk], pairing, config, rng)
            pool, cache = proj.forward(fb.pool, return_cache=True)
            batch = _assemble(pool, fb.size, fb.negative_index, tau)
            value, g = loss_grad(batch, denominator)
            grads = proj.backward(cache, _pool_grad(g, fb.size, fb.negative_index))
            proj.apply_update(grads, lr)
            losses.append(value)
        train_history.append(float(np.mean(losses)))
        history.append(eval_loss())
        log.debug("epoch %d: train %.5f eval %.5f", epoch + 1, train_history[-1], history[-1])
    return TrainResult(proj, history, train_history, sep_before, separation(proj, evals))
