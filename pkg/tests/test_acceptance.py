"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Run alone with ``pytest tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from vidssm import tensor as T
from vidssm.cli import main
from vidssm.data import frame_name, ppm_header, read_ppm, synth_video, write_ppm
from vidssm.losses import (
    SOURCE_PROMPT, GuidanceParams, MaskSet, content_loss, dir_loss, guidance_params, sample_masks,
    tmd_loss, tso_loss,
)
from vidssm.metrics import C1, EvalReport, evaluate, ssim, t_ssim
from vidssm.model import encode_text, from_bytes, init_params, model_size_bytes, to_bytes
from vidssm.ssm import FusionParams, SsmLayerParams, fuse, ssm_scan, ssm_scan_naive
from vidssm.tensor import Tensor
from vidssm.train import OptimizerState, TrainConfig, adamw_step, holdout_clip, stylize, train

from oracles import tmd_loops

F64 = np.float64


def central_vs_autodiff(f, x0, eps=1e-5):
    """Worst violation of |ad - cd| <= 1e-3 |cd| + 1e-5, as a ratio (<= 1 passes)."""
    leaf = Tensor(x0, requires_grad=True, dtype=F64)
    (ad,) = T.backward(f(leaf), [leaf])
    cd = np.zeros_like(x0)
    for i in np.ndindex(x0.shape):
        hi, lo = x0.copy(), x0.copy()
        hi[i] += eps
        lo[i] -= eps
        cd[i] = (f(Tensor(hi, dtype=F64)).item() - f(Tensor(lo, dtype=F64)).item()) / (2 * eps)
    return float(np.max(np.abs(ad - cd) / (1e-3 * np.abs(cd) + 1e-5)))


@pytest.mark.criterion(1, "gradient correctness (content, dir, tmd, tso, fuse)")
def test_criterion_1_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 0.9, (3, 6, 6, 3))
    src = [Tensor(f, dtype=F64) for f in rng.uniform(0.1, 0.9, (3, 6, 6, 3))]
    params = init_params(channels=4, embed_dim=8).astype(F64, requires_grad=False)
    e_style, e_source = encode_text("swirling mosaic", 8), encode_text(SOURCE_PROMPT, 8)
    guide = guidance_params(e_style)
    masks = sample_masks(3, 6, 6, 0.3, (2, 1), seed=0)

    def frames(v):
        return [v[i] for i in range(3)]

    worst = {
        "content": central_vs_autodiff(lambda v: content_loss(frames(v), src, params), x),
        "dir": central_vs_autodiff(lambda v: dir_loss(frames(v), src, e_style, e_source), x),
        "tmd": central_vs_autodiff(lambda v: tmd_loss(frames(v), guide, masks), x),
        "tso": central_vs_autodiff(lambda v: tso_loss(frames(v)), x),
    }
    maps = [rng.normal(size=(3, 3, 4)) for _ in range(3)]
    fp = FusionParams.init(4, 3, rng, requires_grad=False)
    scalars = [Tensor(t.data, dtype=F64) for t in (fp.alpha, fp.beta, fp.gamma)]
    layers = [SsmLayerParams(*(Tensor(t.data, dtype=F64) for t in lay.tensors())) for lay in fp.layers]
    probe = rng.normal(size=(3, 3, 4))

    def fuse_wrt(slot):
        def f(v):
            m = [Tensor(a, dtype=F64) for a in maps]
            m[slot] = v
            return T.tsum(fuse(*m, FusionParams(*scalars, layers)) * probe)
        return f

    worst["fuse"] = max(central_vs_autodiff(fuse_wrt(i), maps[i]) for i in range(3))
    first = layers[0]

    def fuse_wrt_decay(v):
        lay = SsmLayerParams(v, first.b, first.c_out, first.d)
        m = [Tensor(a, dtype=F64) for a in maps]
        return T.tsum(fuse(*m, FusionParams(*scalars, [lay] + layers[1:])) * probe)

    worst["fuse"] = max(worst["fuse"], central_vs_autodiff(fuse_wrt_decay, first.a_raw.data.astype(F64)))
    elapsed = time.perf_counter() - t0
    detail = " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f" ({elapsed:.1f}s)"
    verdict(max(worst.values()) <= 1.0 and elapsed < 60, detail)


@pytest.mark.criterion(2, "scan equals naive recurrence")
def test_criterion_2_scan_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        length, c = int(rng.integers(1, 1025)), int(rng.integers(1, 33))
        lay = SsmLayerParams(*(Tensor(rng.normal(0, s, c)) for s in (1.5, 1.0, 1.0, 1.0)))
        u = Tensor(rng.normal(size=(length, c)))
        worst = max(worst, float(np.max(np.abs(ssm_scan(u, lay).data - ssm_scan_naive(u, lay).data))))
    elapsed = time.perf_counter() - t0
    verdict(worst <= 1e-6 and elapsed < 10, f"max_abs={worst:.2e} ({elapsed:.1f}s)")


@pytest.mark.criterion(3, "loss identities")
def test_criterion_3_loss_identities(verdict):
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(6, 6, 3)), rng.normal(size=(6, 6, 3))
    affine = tso_loss([Tensor(a + t * b) for t in range(5)]).item()
    hand = tso_loss([Tensor(np.full((1, 1, 1), v)) for v in (0.0, 1.0, 4.0, 9.0)]).item()
    video = [Tensor(f) for f in rng.uniform(size=(3, 8, 8, 3))]
    guide = guidance_params(encode_text("mosaic"))
    full_mask = tmd_loss(video, guide, sample_masks(3, 8, 8, 1.0, (2, 1))).item()
    identity = tmd_loss(video, GuidanceParams.identity(), sample_masks(3, 8, 8, 0.3, (2, 1), seed=1)).item()
    brute = 0.0
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        img = r.uniform(size=(1, 4, 4, 3))
        g = GuidanceParams(r.uniform(0.5, 1.5, 3), r.uniform(-0.25, 0.25, 3))
        got = tmd_loss([Tensor(img[0])], g, MaskSet.empty(1, 4, 4)).item()
        brute = max(brute, abs(got - tmd_loops(img, g.gain, g.bias, np.zeros((1, 4, 4), bool))))
    ok = affine <= 1e-6 and abs(hand - 8) <= 1e-6 and full_mask == 0 and identity == 0 and brute <= 1e-6
    verdict(ok, f"affine={affine:.1e} hand={hand!r} full_mask={full_mask} identity={identity} brute={brute:.1e}")


@pytest.mark.criterion(4, "metric identities")
def test_criterion_4_metric_identities(verdict):
    img = np.random.default_rng(4).uniform(size=(32, 32, 3))
    self_sim = ssim(img, img)
    const = t_ssim([img] * 6)
    zo = ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3)))
    ok = abs(self_sim - 1) <= 1e-9 and abs(const - 1) <= 1e-9 and abs(zo - C1 / (1 + C1)) <= 1e-6
    verdict(ok, f"ssim(I,I)={self_sim!r} t_ssim(const)={const!r} ssim(0,1)={zo:.6e}")


@pytest.mark.criterion(5, "AdamW single step")
def test_criterion_5_adamw(verdict):
    p = Tensor([1.0])
    adamw_step([p], [np.array([1.0])], OptimizerState.zeros_like([p]), TrainConfig())
    verdict(abs(p.item() - 0.99949500) <= 1e-7, f"theta'={p.item()!r}")


@pytest.mark.slow
@pytest.mark.criterion(6, "second-order loss improves held-out temporal consistency")
def test_criterion_6_direction_of_effect(verdict):
    t0 = time.perf_counter()
    clip = synth_video("moving_square", 16, 32, 32, seed=7)
    held = holdout_clip(clip, "moving_square", 7)
    cfg = TrainConfig(iters=500, channels=16, seed=7)
    scores, drops = {}, {}
    for name, c in (("with", cfg), ("without", cfg.replace(lambda4=0.0))):
        params, log = train(clip, "mosaic style", c)
        scores[name] = t_ssim(stylize(held, "mosaic style", params).frames)
        drops[name] = 1 - log[-1].total / log[0].total
    elapsed = time.perf_counter() - t0
    ok = scores["with"] > scores["without"] and drops["with"] >= 0.2 and elapsed < 600
    verdict(ok, f"t_ssim with={scores['with']:.4f} without={scores['without']:.4f} "
                f"loss_drop={drops['with']:.1%} ({elapsed:.0f}s)")


@pytest.mark.criterion(7, "determinism and PPM round trip")
def test_criterion_7_determinism(verdict, tmp_path):
    clip = tmp_path / "clip"
    main(["synth", "--kind", "moving_square", "--frames", "16", "--size", "32x32", "--seed", "7", "--out", str(clip)])
    outputs = []
    for run in ("a", "b"):
        ck = tmp_path / f"{run}.tssm"
        code = main(["train", "--clip", str(clip), "--prompt", "mosaic style", "--iters", "10",
                     "--seed", "7", "--checkpoint", str(ck), "--log", str(tmp_path / "train.log")])
        outputs.append((code, ck.read_bytes(), (tmp_path / "train.log").read_bytes()))
    same = outputs[0] == outputs[1] and outputs[0][0] == 0
    frames = synth_video("occlusion", 4, 32, 32, seed=3).arrays()
    err = max(float(np.max(np.abs(read_ppm(write_ppm(f)).data - f))) for f in frames)
    rnd = np.random.default_rng(7).uniform(size=(16, 16, 3))
    err = max(err, float(np.max(np.abs(read_ppm(write_ppm(rnd)).data - rnd))))
    verdict(same and err <= 1 / 255, f"identical={same} ppm_max_err={err:.5f}")


@pytest.mark.criterion(8, "format conformance")
def test_criterion_8_formats(verdict, tmp_path):
    params = init_params(frame_hw=(32, 32), seed=8)
    blob = to_bytes(params)
    round_trip = to_bytes(from_bytes(blob)) == blob
    header = ppm_header(32, 16) == b"P6\n32 16\n255\n" and write_ppm(np.zeros((16, 32, 3))).startswith(b"P6\n32 16\n255\n")
    clip = synth_video("moving_square", 3, 32, 32, seed=1)
    report = evaluate(clip.frames, encode_text("mosaic"), model_size_bytes(params)).to_text()
    keys = [line.split("=", 1)[0] for line in report.splitlines()]
    mandated = {"t_ssim", "style_score", "model_size_bytes"}
    parsed = EvalReport.from_text(report)
    ok = round_trip and header and mandated <= set(keys) and parsed.model_size_bytes == len(blob)
    verdict(ok, f"checkpoint_round_trip={round_trip} ppm_header={header} report_keys={','.join(keys[:4])}")
