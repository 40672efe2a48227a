"""Four-arm ablation table on a synthetic clip, scored on the next-seed holdout.

    python3 scripts/run_ablation.py --kind occlusion --iters 200 --workers 4
"""

import argparse

from vidssm.data import synth_video
from vidssm.train import TrainConfig, format_ablation, holdout_clip, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", default="moving_square")
    ap.add_argument("--frames", type=int, default=16)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--prompt", default="mosaic style")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    clip = synth_video(args.kind, args.frames, args.size, args.size, args.seed)
    rows = run_ablation(TrainConfig(iters=args.iters, seed=args.seed), clip, args.prompt,
                        holdout_clip(clip, args.kind, args.seed), workers=args.workers)
    print(format_ablation(rows), end="")


if __name__ == "__main__":
    main()
