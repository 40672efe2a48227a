"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

from .data import KINDS, MANIFEST, ClipError, read_clip, synth_video, write_clip
from .gradcheck import TOLERANCE, loss_gradchecks
from .metrics import evaluate
from .model import CheckpointError, encode_text, init_params, load_checkpoint, model_size_bytes, save_checkpoint
from .train import (
    ConfigError, TrainConfig, check_clip_for_training, format_ablation, holdout_clip,
    parse_config_text, run_ablation, stylize, train,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def parse_size(text: str) -> tuple[int, int]:
    """``WIDTHxHEIGHT`` -> (width, height)."""
    w, sep, h = text.lower().partition("x")
    try:
        if not sep:
            raise ValueError
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 32x32, got {text!r}") from None


def parse_seed(text: str) -> int:
    try:
        seed = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a decimal integer, got {text!r}") from None
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidssm", description="Text-driven video style transfer with SSM fusion.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic clip directory")
    p.add_argument("--kind", required=True, help=f"one of {', '.join(KINDS)}")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--size", type=parse_size, default=(32, 32), help="WIDTHxHEIGHT")
    p.add_argument("--seed", type=parse_seed, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit a model to one clip and prompt")
    p.add_argument("--clip", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=parse_seed)
    p.add_argument("--config", help="key=value file mirroring TrainConfig")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", help="training log path (default: <checkpoint>.log)")
    p.add_argument("--per-frame", action="store_true", default=None, help="reset the hidden state every frame")
    p.add_argument("--lambda4", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--ssm-layers", type=int)

    p = sub.add_parser("stylize", help="stylize a clip with a trained checkpoint")
    p.add_argument("--clip", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-frame", action="store_true")

    p = sub.add_parser("eval", help="write the metrics report for a clip")
    p.add_argument("--clip", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--checkpoint", help="checkpoint whose size is reported (default: default architecture)")

    p = sub.add_parser("ablate", help="train and compare the four ablation arms")
    p.add_argument("--clip", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=parse_seed)
    p.add_argument("--config")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seed", type=parse_seed, default=0)
    return parser


def _config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        cfg = TrainConfig.from_kv(parse_config_text(path.read_text()))
    overrides = {
        "iters": getattr(args, "iters", None),
        "seed": getattr(args, "seed", None),
        "per_frame_mode": getattr(args, "per_frame", None),
        "lambda4": getattr(args, "lambda4", None),
        "lambda3": getattr(args, "lambda3", None),
        "ssm_layers": getattr(args, "ssm_layers", None),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return cfg.replace(**overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_synth(args) -> int:
    width, height = args.size
    clip = synth_video(args.kind, args.frames, height, width, args.seed)
    write_clip(clip, args.out, kind=args.kind, seed=args.seed)
    print(f"wrote {len(clip)} frames to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    clip, _ = read_clip(args.clip)
    check_clip_for_training(clip, cfg)
    params, log = train(clip, args.prompt, cfg)
    save_checkpoint(params, args.checkpoint)
    log_path = Path(args.log or f"{args.checkpoint}.log")
    log_path.write_text("".join(entry.line() + "\n" for entry in log))
    print(f"checkpoint {args.checkpoint}; final total={log[-1].total:.6g}; log {log_path}")
    return EXIT_OK


def cmd_stylize(args) -> int:
    clip, manifest = read_clip(args.clip)
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    params = load_checkpoint(args.checkpoint, requires_grad=False)
    if params.frame_hw is not None and tuple(params.frame_hw) != (clip.height, clip.width):
        raise UsageError(f"checkpoint frame shape {params.frame_hw[0]}x{params.frame_hw[1]} "
                         f"does not match clip frame shape {clip.height}x{clip.width}")
    out = stylize(clip, args.prompt, params, args.per_frame)
    out_dir = write_clip(out, args.out, kind=manifest.get("kind", "unknown"),
                         seed=manifest.get("seed", 0), manifest=manifest)
    shutil.copyfile(Path(args.clip) / MANIFEST, out_dir / MANIFEST)
    print(f"wrote {len(out)} stylized frames to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    clip, _ = read_clip(args.clip)
    if args.checkpoint:
        size = model_size_bytes(load_checkpoint(args.checkpoint, requires_grad=False))
    else:
        size = model_size_bytes(init_params(frame_hw=(clip.height, clip.width)))
    e = encode_text(args.prompt)
    report = evaluate(clip.frames, e, size)
    Path(args.report).write_text(report.to_text())
    print(f"t_ssim={report.t_ssim:.6f} style_score={report.style_score:.6f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    clip, manifest = read_clip(args.clip)
    check_clip_for_training(clip, cfg)
    seed = int(manifest.get("seed", 0))
    held = holdout_clip(clip, manifest.get("kind"), seed)
    rows = run_ablation(cfg, clip, args.prompt, held, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for row in rows:
        (out / f"arm_{row.name}.txt").write_text(format_ablation([row]))
    table = format_ablation(rows)
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = loss_gradchecks(args.seed)
    ok = True
    for name, err in errors.items():
        passed = err <= TOLERANCE
        ok &= passed
        print(f"{name} max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "stylize": cmd_stylize,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, ValueError, FileNotFoundError, ClipError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
