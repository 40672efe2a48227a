"""Synthetic clips, binary PPM frames and the clip-directory layout."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

KINDS = ("moving_square", "scene_cut", "occlusion")
MANIFEST = "manifest.txt"
OCCLUSION_PERIOD = 4


class PpmError(ValueError):
    pass


class ClipError(ValueError):
    pass


@dataclass
class VideoClip:
    frames: list[Tensor]

    def __post_init__(self):
        if not self.frames:
            raise ClipError("a clip needs at least one frame")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ClipError(f"frames differ in shape: {sorted(shapes)}")
        shape = next(iter(shapes))
        if len(shape) != 3 or shape[2] != 3:
            raise ClipError(f"frames must be [H, W, 3], got {shape}")
        for f in self.frames:
            if f.data.min() < 0 or f.data.max() > 1:
                raise ClipError("pixel values must lie in [0, 1]")

    @classmethod
    def from_arrays(cls, arrays) -> "VideoClip":
        return cls([Tensor(a) for a in arrays])

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [f.data for f in self.frames]


# ---------------------------------------------------------------------------
# synthetic generators


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    img = np.empty((h, w, 3))
    img[:] = rng.uniform(0.25, 0.75, 3)
    for _ in range(4):
        fy, fx = rng.uniform(1.0, 4.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        img += wave[..., None] * rng.uniform(-0.15, 0.15, 3)
    return np.clip(img, 0.0, 1.0)


def _paint_square(img: np.ndarray, y: int, x: int, side: int, color) -> None:
    h, w, _ = img.shape
    rows = np.arange(y, y + side) % h
    cols = np.arange(x, x + side) % w
    img[np.ix_(rows, cols)] = color


@dataclass
class _Scene:
    background: np.ndarray
    color: np.ndarray
    y: int
    x: int


def _scene(rng: np.random.Generator, h: int, w: int) -> _Scene:
    return _Scene(_texture(rng, h, w), rng.uniform(0.0, 1.0, 3), int(rng.integers(0, h)), int(rng.integers(0, w)))


def synth_video(kind: str, t: int, h: int, w: int, seed: int = 0) -> VideoClip:
    """Deterministic toy clip.

    ``moving_square`` slides a square 1 px per frame over a smooth texture.
    ``scene_cut`` swaps background and object at frame ``t // 2``.
    ``occlusion`` adds a second square that covers the first on two frames
    out of every four.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown clip kind {kind!r}; expected one of {KINDS}")
    if h < 16 or w < 16 or h % 2 or w % 2:
        raise ValueError(f"frame dims must be even and >= 16, got {h}x{w}")
    if t < 1:
        raise ValueError(f"need at least one frame, got {t}")
    rng = np.random.default_rng(seed)
    side = max(4, min(h, w) // 4)
    scenes = [_scene(rng, h, w)]
    if kind == "scene_cut":
        scenes.append(_scene(rng, h, w))
    occluder = rng.uniform(0.0, 1.0, 3)
    cut = t // 2
    frames = []
    for i in range(t):
        sc = scenes[1] if kind == "scene_cut" and i >= cut else scenes[0]
        img = sc.background.copy()
        x = sc.x + i
        _paint_square(img, sc.y, x, side, sc.color)
        if kind == "occlusion" and i % OCCLUSION_PERIOD >= OCCLUSION_PERIOD // 2:
            pad = max(1, side // 4)
            _paint_square(img, sc.y - pad, x - pad, side + 2 * pad, occluder)
        frames.append(Tensor(img))
    return VideoClip(frames)


# ---------------------------------------------------------------------------
# PPM


def ppm_header(width: int, height: int) -> bytes:
    return f"P6\n{width} {height}\n255\n".encode("ascii")


def write_ppm(frame) -> bytes:
    arr = np.asarray(frame.data if isinstance(frame, Tensor) else frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PpmError(f"frame must be [H, W, 3], got {arr.shape}")
    if arr.min() < 0 or arr.max() > 1:
        raise PpmError("pixel values must lie in [0, 1]")
    payload = np.rint(arr * 255).astype(np.uint8)
    return ppm_header(arr.shape[1], arr.shape[0]) + payload.tobytes()


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_ppm(blob: bytes) -> Tensor:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(blob, pos)
        if m is None:
            raise PpmError("truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise PpmError(f"not a binary PPM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PpmError(f"non-numeric PPM header fields {fields[1:]}") from None
    if width < 1 or height < 1 or maxval != 255:
        raise PpmError(f"unsupported PPM geometry {width}x{height} maxval {maxval}")
    if pos >= len(blob) or blob[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise PpmError("missing whitespace after PPM header")
    pos += 1
    n = width * height * 3
    payload = blob[pos:pos + n]
    if len(payload) != n:
        raise PpmError(f"truncated PPM payload: {len(payload)} of {n} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Tensor(arr.astype(np.float32) / 255.0)


# ---------------------------------------------------------------------------
# clip directories


def frame_name(i: int) -> str:
    return f"frame_{i:06d}.ppm"


def write_manifest(path: Path, fields: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in fields.items()))


def read_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, sep, value = line.partition("=")
            if not sep:
                raise ClipError(f"malformed manifest line {line!r}")
            out[key.strip()] = value.strip()
    return out


def write_clip(clip: VideoClip, out_dir, kind: str = "unknown", seed: int = 0, manifest: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        (out / frame_name(i)).write_bytes(write_ppm(frame))
    fields = {"T": len(clip), "H": clip.height, "W": clip.width, "kind": kind, "seed": seed}
    if manifest:
        fields.update({k: v for k, v in manifest.items() if k not in ("T", "H", "W")})
    write_manifest(out / MANIFEST, fields)
    return out


def read_clip(clip_dir) -> tuple[VideoClip, dict[str, str]]:
    root = Path(clip_dir)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise ClipError(f"{root} has no {MANIFEST}")
    manifest = read_manifest(mpath)
    try:
        t, h, w = int(manifest["T"]), int(manifest["H"]), int(manifest["W"])
    except (KeyError, ValueError) as exc:
        raise ClipError(f"manifest lacks valid T/H/W: {exc}") from None
    frames = []
    for i in range(t):
        path = root / frame_name(i)
        if not path.is_file():
            raise ClipError(f"missing frame {path.name}")
        frame = read_ppm(path.read_bytes())
        if frame.shape != (h, w, 3):
            raise ClipError(f"{path.name} is {frame.shape}, manifest says {(h, w, 3)}")
        frames.append(frame)
    return VideoClip(frames), manifest
