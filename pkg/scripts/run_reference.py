"""Reference run: train with and without the second-order loss, score on a held-out clip.

    python3 scripts/run_reference.py --iters 500 --seed 7
"""

import argparse
import time

from vidssm.data import synth_video
from vidssm.metrics import evaluate
from vidssm.model import encode_text, model_size_bytes
from vidssm.train import TrainConfig, holdout_clip, stylize, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", default="moving_square")
    ap.add_argument("--frames", type=int, default=16)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--prompt", default="mosaic style")
    args = ap.parse_args()

    clip = synth_video(args.kind, args.frames, args.size, args.size, args.seed)
    held = holdout_clip(clip, args.kind, args.seed)
    base = TrainConfig(iters=args.iters, seed=args.seed)
    e = encode_text(args.prompt, base.embed_dim)
    for name, cfg in (("lambda4=0.3", base), ("lambda4=0", base.replace(lambda4=0.0))):
        t0 = time.perf_counter()
        params, log = train(clip, args.prompt, cfg)
        rep = evaluate(stylize(held, args.prompt, params).frames, e, model_size_bytes(params))
        drop = 1 - log[-1].total / log[0].total
        print(f"{name:<12} t_ssim={rep.t_ssim:.4f} style_score={rep.style_score:.4f} "
              f"loss_drop={drop:.1%} size={rep.model_size_bytes}B time={time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
