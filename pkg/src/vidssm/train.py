"""AdamW, the per-clip training loop, clip stylization and ablation runs."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import KINDS, VideoClip, synth_video
from .hashing import derive_seed
from .losses import (
    SOURCE_PROMPT, LossTerms, LossWeights, content_loss, dir_loss, guidance_params,
    sample_masks, tmd_loss, total_loss, tso_loss,
)
from .metrics import style_score, t_ssim
from .model import ModelParams, encode_text, init_params, stylize_frame
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    iters: int = 500
    batch_frames: int = 8
    channels: int = 16
    embed_dim: int = 64
    ssm_layers: int = 3
    kernel: int = 3
    mask_ratio: float = 0.25
    mask_patch_spatial: int = 8
    mask_patch_temporal: int = 2
    seed: int = 0
    per_frame_mode: bool = False
    detach_guidance: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.batch_frames < 1 or self.channels < 1 or self.embed_dim < 1 or self.ssm_layers < 1:
            raise ConfigError("batch_frames, channels, embed_dim and ssm_layers must be >= 1")
        if self.weights.lambda4 > 0 and self.batch_frames < 3:
            raise ConfigError(f"lambda4 > 0 needs batch_frames >= 3, got {self.batch_frames}")
        if not 0 <= self.mask_ratio <= 1:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "TrainConfig":
        lam = {k: changes.pop(k) for k in list(changes) if k.startswith("lambda")}
        cfg = dataclasses.replace(self, **changes) if changes else dataclasses.replace(self)
        if lam:
            cfg = dataclasses.replace(cfg, weights=dataclasses.replace(cfg.weights, **lam))
        return cfg

    def to_kv(self) -> dict[str, str]:
        out = {k: str(v) for k, v in dataclasses.asdict(self.weights).items()}
        for f in dataclasses.fields(self):
            if f.name != "weights":
                out[f.name] = str(getattr(self, f.name)).lower() if f.type == "bool" else str(getattr(self, f.name))
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls) if f.name != "weights"}
        types.update({k: "float" for k in ("lambda1", "lambda2", "lambda3", "lambda4")})
        changes = {}
        for key, raw in kv.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, raw, types[key])
        try:
            return base.replace(**changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _coerce(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line is not key=value: {line!r}")
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], opt: OptimizerState,
               cfg: TrainConfig, names: Sequence[str] | None = None) -> tuple[Sequence[Tensor], OptimizerState]:
    """One AdamW update with decoupled weight decay, in place on ``params``.

    A ``None`` gradient means the parameter took no part in the loss; it is
    left alone, weight decay included.
    """
    names = names or [f"param{i}" for i in range(len(params))]
    for name, g in zip(names, grads):
        if g is not None and not np.isfinite(g).all():
            raise T.NonFiniteError(f"non-finite gradient for parameter group {name}")
    opt.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1 - b1 ** opt.step
    bc2 = 1 - b2 ** opt.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        opt.m[i] = b1 * opt.m[i] + (1 - b1) * g
        opt.v[i] = b2 * opt.v[i] + (1 - b2) * g * g
        m_hat = opt.m[i] / bc1
        v_hat = opt.v[i] / bc2
        theta = p.data.astype(np.float64)
        theta = theta - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
        p.data = theta.astype(p.dtype)
    return params, opt


# ---------------------------------------------------------------------------
# training


@dataclass
class IterLog:
    iter: int
    total: float
    content: float
    dir: float
    tmd: float
    tso: float

    def line(self) -> str:
        return (f"iter={self.iter} total={self.total!r} content={self.content!r} "
                f"dir={self.dir!r} tmd={self.tmd!r} tso={self.tso!r}")


def check_clip_for_training(clip: VideoClip, cfg: TrainConfig) -> int:
    """Frames per training window. A one-frame clip trains as a single image."""
    window = min(cfg.batch_frames, len(clip))
    if cfg.weights.lambda4 > 0 and len(clip) > 1 and window < 3:
        raise ConfigError(f"lambda4 > 0 needs windows of >= 3 frames; clip has {len(clip)}")
    if clip.height % 2 or clip.width % 2:
        raise ConfigError(f"frame dims must be even, got {clip.height}x{clip.width}")
    return window


def run_frames(frames: Sequence[Tensor], e, params: ModelParams, per_frame_mode: bool) -> list[Tensor]:
    h = None
    outs = []
    for frame in frames:
        out, h_t = stylize_frame(frame, None if per_frame_mode else h, e, params)
        h = h_t
        outs.append(out)
    return outs


def train(clip: VideoClip, prompt: str, cfg: TrainConfig) -> tuple[ModelParams, list[IterLog]]:
    """Fit a fresh model to one clip and prompt; deterministic in ``cfg``."""
    if not prompt.strip():
        raise ConfigError("prompt must be non-empty")
    window = check_clip_for_training(clip, cfg)
    params = init_params(cfg.channels, cfg.embed_dim, cfg.ssm_layers, cfg.kernel,
                         seed=cfg.seed, frame_hw=(clip.height, clip.width))
    named = params.named_tensors()
    names = [n for n, _ in named]
    leaves = [t for _, t in named]
    opt = OptimizerState.zeros_like(leaves)
    e_style = encode_text(prompt, cfg.embed_dim)
    e_source = encode_text(SOURCE_PROMPT, cfg.embed_dim)
    guide = guidance_params(e_style)
    w = cfg.weights
    log: list[IterLog] = []
    for it in range(1, cfg.iters + 1):
        it_seed = derive_seed(cfg.seed, it)
        start = int(np.random.default_rng(it_seed).integers(0, len(clip) - window + 1))
        frames = clip.frames[start:start + window]
        masks = sample_masks(window, clip.height, clip.width, cfg.mask_ratio,
                             (cfg.mask_patch_spatial, cfg.mask_patch_temporal), seed=derive_seed(it_seed, 1))
        outs = run_frames(frames, e_style, params, cfg.per_frame_mode)
        terms = LossTerms(
            content=content_loss(outs, frames, params),
            dir=dir_loss(outs, frames, e_style, e_source),
            tmd=tmd_loss(outs, guide, masks, cfg.detach_guidance),
            tso=tso_loss(outs) if window >= 3 else T.zeros(()),
        )
        # zero-weight terms stay out of the graph so they contribute no gradient path
        active = LossTerms(*(t if lam > 0 else 0.0 for t, lam in
                             zip((terms.content, terms.dir, terms.tmd, terms.tso),
                                 (w.lambda1, w.lambda2, w.lambda3, w.lambda4))))
        loss = total_loss(active, w)
        log.append(IterLog(it, loss.item(), terms.content.item(), terms.dir.item(),
                           terms.tmd.item(), terms.tso.item()))
        if loss.requires_grad:
            reached = T.backward(loss)
            grads = [reached.get(p) for p in leaves]
        else:
            grads = [None] * len(leaves)
        adamw_step(leaves, grads, opt, cfg, names)
    return params, log


def stylize(clip: VideoClip, prompt: str, params: ModelParams, per_frame_mode: bool = False) -> VideoClip:
    if params.frame_hw is not None and tuple(params.frame_hw) != (clip.height, clip.width):
        raise ShapeError(f"checkpoint expects frames of {params.frame_hw[0]}x{params.frame_hw[1]}, "
                         f"clip has {clip.height}x{clip.width}")
    if clip.height % 2 or clip.width % 2:
        raise ShapeError(f"frame dims must be even, got {clip.height}x{clip.width}")
    frozen = params.detached()
    e = encode_text(prompt, params.embed_dim)
    outs = run_frames(clip.frames, e, frozen, per_frame_mode)
    return VideoClip([o.detach() for o in outs])


# ---------------------------------------------------------------------------
# ablations

ABLATIONS = ("full", "no_tso", "no_tmd", "ssm_layers_1")


@dataclass
class AblationRow:
    name: str
    t_ssim: float
    style_score: float
    final_total: float


def ablation_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    return {
        "full": base,
        "no_tso": base.replace(lambda4=0.0),
        "no_tmd": base.replace(lambda3=0.0),
        "ssm_layers_1": base.replace(ssm_layers=1),
    }


def holdout_clip(clip: VideoClip, kind: str | None, seed: int) -> VideoClip:
    """Same generator, different seed; falls back to the clip itself for non-synthetic input."""
    if kind in KINDS:
        return synth_video(kind, len(clip), clip.height, clip.width, seed + 1)
    return clip


def _run_arm(args) -> AblationRow:
    name, cfg, clip, prompt, held = args
    params, log = train(clip, prompt, cfg)
    out = stylize(held, prompt, params, cfg.per_frame_mode)
    e = encode_text(prompt, cfg.embed_dim)
    return AblationRow(name, t_ssim(out.frames), style_score(out.frames, e), log[-1].total)


def run_ablation(base_cfg: TrainConfig, clip: VideoClip, prompt: str, holdout: VideoClip | None = None,
                 workers: int = 1) -> list[AblationRow]:
    """Train the four ablation arms and score each on ``holdout``."""
    held = holdout if holdout is not None else clip
    jobs = [(name, cfg, clip, prompt, held) for name, cfg in ablation_configs(base_cfg).items()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_arm, jobs))
    return [_run_arm(j) for j in jobs]


def format_ablation(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'variant':<14}{'t_ssim':>12}{'style_score':>14}{'final_loss':>14}"]
    for r in rows:
        lines.append(f"{r.name:<14}{r.t_ssim:>12.6f}{r.style_score:>14.6f}{r.final_total:>14.6f}")
    return "\n".join(lines) + "\n"
