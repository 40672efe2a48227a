"""Finite-difference checks of every loss, the fusion operator and the full
pipeline on tiny float64 problems.

Float64 keeps central-difference roundoff far below the 1e-3 tolerance; the
code path is the same one training runs in float32.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .losses import (
    SOURCE_PROMPT, LossTerms, LossWeights, content_loss, dir_loss, guidance_params,
    sample_masks, tmd_loss, total_loss, tso_loss,
)
from .model import encode_text, from_named, init_params, stylize_frame
from .ssm import FusionParams, SsmLayerParams, fuse
from .tensor import Tensor, finite_diff_check

TOLERANCE = 1e-3
EPS = 1e-5
F64 = np.float64


def _video(rng, t=3, h=6, w=6) -> np.ndarray:
    return rng.uniform(0.1, 0.9, (t, h, w, 3))


def _frames(x: Tensor) -> list[Tensor]:
    return [x[i] for i in range(x.shape[0])]


def loss_gradchecks(seed: int = 0) -> dict[str, float]:
    """Max relative error of each loss w.r.t. the stylized frames."""
    rng = np.random.default_rng(seed)
    x = Tensor(_video(rng), dtype=F64)
    src = [Tensor(f, dtype=F64) for f in _video(rng)]
    params = init_params(channels=4, embed_dim=8, num_layers=3, seed=seed).astype(F64, requires_grad=False)
    e_style = encode_text("swirling mosaic", 8)
    e_source = encode_text(SOURCE_PROMPT, 8)
    guide = guidance_params(e_style)
    masks = sample_masks(3, 6, 6, 0.3, (2, 1), seed=seed)
    return {
        "content": finite_diff_check(lambda v: content_loss(_frames(v), src, params), x, EPS),
        "dir": finite_diff_check(lambda v: dir_loss(_frames(v), src, e_style, e_source), x, EPS),
        "tmd": finite_diff_check(lambda v: tmd_loss(_frames(v), guide, masks), x, EPS),
        "tso": finite_diff_check(lambda v: tso_loss(_frames(v)), x, EPS),
    }


def fuse_gradchecks(seed: int = 0, h: int = 3, w: int = 3, c: int = 4) -> dict[str, float]:
    """Check ``fuse`` w.r.t. each input map and each fusion parameter."""
    rng = np.random.default_rng(seed)
    maps = [Tensor(rng.normal(0, 1, (h, w, c)), dtype=F64) for _ in range(3)]
    base = FusionParams.init(c, 3, rng, requires_grad=False)
    tensors = [Tensor(t.data, dtype=F64) for t in base.tensors()]
    probe = Tensor(rng.normal(0, 1, (h, w, c)), dtype=F64)

    def build(ts):
        layers = []
        for i in range(3, len(ts), 4):
            layers.append(SsmLayerParams(*ts[i:i + 4]))
        return FusionParams(ts[0], ts[1], ts[2], layers)

    def loss_with(slot: str, idx: int):
        def f(v):
            m = list(maps)
            ts = list(tensors)
            if slot == "map":
                m[idx] = v
            else:
                ts[idx] = v
            # weighted sum so every output element matters with a distinct weight
            return T.tsum(fuse(m[0], m[1], m[2], build(ts)) * probe)
        return f

    out = {}
    for i, name in enumerate(("h_prev", "f_t", "s")):
        out[name] = finite_diff_check(loss_with("map", i), maps[i], EPS)
    names = ["alpha", "beta", "gamma"] + [f"layer{k}.{p}" for k in range(3) for p in ("a_raw", "b", "c_out", "d")]
    for i, name in enumerate(names):
        out[name] = finite_diff_check(loss_with("param", i), tensors[i], EPS)
    return out


def pipeline_gradchecks(seed: int = 0, channels: int = 4, embed_dim: int = 8, size: int = 8,
                        frames: int = 3) -> dict[str, float]:
    """Total training loss through the recurrent pipeline, per parameter group."""
    rng = np.random.default_rng(seed)
    video = [Tensor(f, dtype=F64) for f in _video(rng, frames, size, size)]
    params = init_params(channels, embed_dim, 3, seed=seed).astype(F64, requires_grad=False)
    named = params.named_tensors()
    e_style = encode_text("swirling mosaic", embed_dim)
    e_source = encode_text(SOURCE_PROMPT, embed_dim)
    guide = guidance_params(e_style)
    masks = sample_masks(frames, size, size, 0.3, (4, 1), seed=seed)
    weights = LossWeights()
    # the content term's feature encoder carries no gradient, so it stays at the base point
    frozen = params.detached()

    def objective(p):
        h = None
        outs = []
        for frame in video:
            out, h = stylize_frame(frame, h, e_style, p)
            outs.append(out)
        terms = LossTerms(content_loss(outs, video, p, frozen), dir_loss(outs, video, e_style, e_source),
                          tmd_loss(outs, guide, masks), tso_loss(outs))
        return total_loss(terms, weights)

    out = {}
    for i, (name, t) in enumerate(named):
        def f(v, i=i):
            groups = {n: (v if j == i else g) for j, (n, g) in enumerate(named)}
            return objective(from_named(groups, params.frame_hw))
        out[name] = finite_diff_check(f, t, EPS)
    return out
