"""Loss terms for training: content, directional, masked directional and
second-order temporal smoothness, plus mask sampling and the guidance map."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import ModelParams, TextEmbedding, encode_frame
from .tensor import ShapeError, Tensor

IMAGE_EMBED_SEED = 0x5EED
IMAGE_POOL = 8
GUIDANCE_SEED = 0
SOURCE_PROMPT = "a photo"
DEGENERATE_NORM = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.8
    lambda4: float = 0.3

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class MaskSet:
    mask: np.ndarray  # bool [T, H, W], True = excluded
    seed: int
    ratio: float
    patch: tuple[int, int]  # (spatial, temporal)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.mask.shape

    @classmethod
    def empty(cls, t: int, h: int, w: int) -> "MaskSet":
        return cls(np.zeros((t, h, w), dtype=bool), 0, 0.0, (1, 1))


@dataclass(frozen=True)
class GuidanceParams:
    gain: np.ndarray  # [3], in [0.5, 1.5]
    bias: np.ndarray  # [3], in [-0.25, 0.25]

    @classmethod
    def identity(cls) -> "GuidanceParams":
        return cls(np.ones(3), np.zeros(3))


def guidance_params(e: TextEmbedding, seed: int = GUIDANCE_SEED) -> GuidanceParams:
    """Seeded linear map of the prompt embedding onto squashed per-channel gain and bias."""
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0, (6, e.dim))
    z = proj @ e.vector.data.astype(np.float64)
    return GuidanceParams(1.0 + 0.5 * np.tanh(z[:3]), 0.25 * np.tanh(z[3:]))


def sample_masks(t: int, h: int, w: int, ratio: float, patch: tuple[int, int] = (8, 2),
                 seed: int = 0) -> MaskSet:
    """Mask whole spatiotemporal patches independently with probability ``ratio``.

    ``patch`` is ``(spatial, temporal)``; edge patches are truncated. A spatial
    patch at least as large as the frame masks entire frames.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    ps, pt = patch
    if ps < 1 or pt < 1:
        raise ValueError(f"patch dims must be >= 1, got {patch}")
    rng = np.random.default_rng(seed)
    grid = rng.random((-(-t // pt), -(-h // ps), -(-w // ps))) < ratio
    full = grid.repeat(pt, axis=0).repeat(ps, axis=1).repeat(ps, axis=2)[:t, :h, :w]
    return MaskSet(np.ascontiguousarray(full), seed, ratio, (ps, pt))


def spatial_gradient(img: Tensor) -> Tensor:
    """Forward differences ``[H, W, 3, 2]`` (x then y), zero on the last column/row."""
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ShapeError(f"spatial_gradient needs H, W >= 2, got {img.shape}")
    zc = T.zeros((h, 1) + img.shape[2:], dtype=img.dtype)
    zr = T.zeros((1, w) + img.shape[2:], dtype=img.dtype)
    dx = T.concat([img[:, 1:] - img[:, :-1], zc], axis=1)
    dy = T.concat([img[1:] - img[:-1], zr], axis=0)
    return T.stack([dx, dy], axis=-1)


def guidance(img: Tensor, g: GuidanceParams) -> Tensor:
    gain = np.broadcast_to(g.gain, img.shape)
    bias = np.broadcast_to(g.bias, img.shape)
    return T.clamp(img * gain + bias, 0.0, 1.0)


def _check_frames(frames: Sequence[Tensor]) -> tuple:
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ShapeError(f"frames differ in shape: {sorted(shapes)}")
    return next(iter(shapes))


def tmd_loss(frames_hat: Sequence[Tensor], g: GuidanceParams, masks: MaskSet,
             detach_guidance: bool = False) -> Tensor:
    """Masked squared mismatch between image gradients and guided-image gradients."""
    shape = _check_frames(frames_hat)
    if masks.shape != (len(frames_hat),) + shape[:2]:
        raise ShapeError(f"mask shape {masks.shape} does not match video {(len(frames_hat),) + shape[:2]}")
    total = None
    for t, frame in enumerate(frames_hat):
        target = guidance(frame, g)
        if detach_guidance:
            target = target.detach()
        diff = spatial_gradient(frame) - spatial_gradient(target)
        keep = np.broadcast_to((~masks.mask[t])[:, :, None, None], diff.shape)
        term = T.tsum(T.square(diff) * keep)
        total = term if total is None else total + term
    return total


def tso_loss(frames_hat: Sequence[Tensor]) -> Tensor:
    """Sum of squared second temporal differences; exactly 0 for fewer than 3 frames."""
    if len(frames_hat) < 3:
        dtype = frames_hat[0].dtype if frames_hat else np.float32
        return T.zeros((), dtype=dtype)
    _check_frames(frames_hat)
    total = None
    for t in range(2, len(frames_hat)):
        acc = frames_hat[t] - 2.0 * frames_hat[t - 1] + frames_hat[t - 2]
        term = T.tsum(T.square(acc))
        total = term if total is None else total + term
    return total


def content_loss(frames_hat: Sequence[Tensor], frames: Sequence[Tensor], params: ModelParams,
                 frozen: ModelParams | None = None) -> Tensor:
    """Per-frame pixel MSE plus encoder-feature MSE, averaged over frames.

    Encoder weights are detached here; only the stylized frames receive gradient.
    ``frozen`` supplies an already-detached copy to use instead.
    """
    if len(frames_hat) != len(frames):
        raise ShapeError(f"{len(frames_hat)} stylized frames vs {len(frames)} source frames")
    frozen = frozen if frozen is not None else params.detached()
    total = None
    for out, src in zip(frames_hat, frames):
        if out.shape != src.shape:
            raise ShapeError(f"content_loss: {out.shape} vs {src.shape}")
        src = T.as_tensor(src, like=out).detach()
        term = T.mean(T.square(out - src))
        feats = encode_frame(out, frozen) - encode_frame(src, frozen)
        term = term + T.mean(T.square(feats))
        total = term if total is None else total + term
    return total / float(len(frames))


@lru_cache(maxsize=None)
def _embed_projection(n_in: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(IMAGE_EMBED_SEED)
    proj = rng.normal(0.0, 1.0, (n_in, dim)) / np.sqrt(n_in)
    proj.setflags(write=False)
    return proj


def embed_image(img: Tensor, dim: int) -> Tensor:
    """Unit-norm image embedding: 8x8 average pooling, then a fixed random projection."""
    pooled = T.avg_pool(img, IMAGE_POOL)
    flat = pooled.reshape(1, pooled.size)
    proj = T.as_tensor(_embed_projection(pooled.size, dim), like=img)
    v = T.matmul(flat, proj).reshape(dim)
    return v / T.sqrt(T.tsum(T.square(v)))


def direction_term(img_delta: Tensor, text_delta: np.ndarray) -> Tensor:
    """``1 - cos(img_delta, text_delta)``, or the constant 1 when either is degenerate."""
    tnorm = float(np.linalg.norm(text_delta))
    if tnorm < DEGENERATE_NORM or float(np.linalg.norm(img_delta.data)) < DEGENERATE_NORM:
        return T.ones((), dtype=img_delta.dtype)
    unit = T.as_tensor(text_delta / tnorm, like=img_delta)
    cos = T.tsum(img_delta * unit) / T.sqrt(T.tsum(T.square(img_delta)))
    return 1.0 - cos


def dir_loss(frames_hat: Sequence[Tensor], frames: Sequence[Tensor], e_style: TextEmbedding,
             e_source: TextEmbedding) -> Tensor:
    if len(frames_hat) != len(frames) or not frames:
        raise ShapeError("dir_loss needs equally many (>= 1) stylized and source frames")
    text_delta = e_style.vector.data.astype(np.float64) - e_source.vector.data.astype(np.float64)
    total = None
    for out, src in zip(frames_hat, frames):
        src = T.as_tensor(src, like=out).detach()
        delta = embed_image(out, e_style.dim) - embed_image(src, e_style.dim)
        term = direction_term(delta, text_delta)
        total = term if total is None else total + term
    return total / float(len(frames))


@dataclass
class LossTerms:
    content: Tensor
    dir: Tensor
    tmd: Tensor
    tso: Tensor


def total_loss(terms: LossTerms, w: LossWeights) -> Tensor:
    return (w.lambda1 * T.as_tensor(terms.content) + w.lambda2 * T.as_tensor(terms.dir)
            + w.lambda3 * T.as_tensor(terms.tmd) + w.lambda4 * T.as_tensor(terms.tso))
