"""Evaluation-only measures. Nothing here builds autodiff graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import embed_image
from .model import TextEmbedding
from .tensor import ShapeError, Tensor

WINDOW = 7
DATA_RANGE = 1.0
C1 = (0.01 * DATA_RANGE) ** 2
C2 = (0.03 * DATA_RANGE) ** 2
STYLE_SCORE_NOTE = "toy-embedding score, not comparable to published CLIP scores"


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _channel_ssim(x: np.ndarray, y: np.ndarray) -> float:
    n = WINDOW * WINDOW

    def box(v):
        return sliding_window_view(v, (WINDOW, WINDOW)).sum(axis=(-2, -1)) / n

    mx, my = box(x), box(y)
    vx = box(x * x) - mx * mx
    vy = box(y * y) - my * my
    cxy = box(x * y) - mx * my
    num = (2 * mx * my + C1) * (2 * cxy + C2)
    den = (mx * mx + my * my + C1) * (vx + vy + C2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean SSIM over all valid 7x7 uniform windows, averaged across channels."""
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise ShapeError(f"ssim: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < WINDOW or x.shape[1] < WINDOW:
        raise ShapeError(f"ssim: image {x.shape[:2]} smaller than the {WINDOW}x{WINDOW} window")
    return float(np.mean([_channel_ssim(x[..., k], y[..., k]) for k in range(x.shape[2])]))


def pair_ssims(video: Sequence) -> list[float]:
    if len(video) < 2:
        raise ValueError("t_ssim needs at least two frames")
    return [ssim(video[t], video[t - 1]) for t in range(1, len(video))]


def t_ssim(video: Sequence) -> float:
    return float(np.mean(pair_ssims(video)))


def style_score(video: Sequence, e_style: TextEmbedding) -> float:
    if not video:
        raise ValueError("style_score needs at least one frame")
    target = e_style.vector.data.astype(np.float64)
    scores = []
    for frame in video:
        frame = frame if isinstance(frame, Tensor) else Tensor(frame)
        emb = embed_image(frame.detach(), e_style.dim).data.astype(np.float64)
        scores.append(float(emb @ target / (np.linalg.norm(emb) * np.linalg.norm(target))))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    t_ssim: float
    style_score: float
    model_size_bytes: int
    pair_ssim: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"t_ssim={self.t_ssim!r}",
            f"style_score={self.style_score!r}",
            f"style_score_note={STYLE_SCORE_NOTE}",
            f"model_size_bytes={self.model_size_bytes}",
        ]
        lines += [f"pair_ssim_{t}={v!r}" for t, v in enumerate(self.pair_ssim, start=1)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        pairs = sorted((int(k[len("pair_ssim_"):]), float(v)) for k, v in kv.items() if k.startswith("pair_ssim_"))
        return cls(float(kv["t_ssim"]), float(kv["style_score"]), int(kv["model_size_bytes"]),
                   [v for _, v in pairs])


def evaluate(video: Sequence, e_style: TextEmbedding, model_size: int) -> EvalReport:
    pairs = pair_ssims(video)
    return EvalReport(float(np.mean(pairs)), style_score(video, e_style), model_size, pairs)
