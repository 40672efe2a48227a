"""Toy text encoder, frame encoder/decoder and the per-frame stylization step.

Parameter count for channels ``c``, embedding size ``d``, kernel ``k`` and
``n`` SSM layers::

    (k*k*3*c + c)        encoder conv 1
  + (k*k*c*c + c)        encoder conv 2
  + (d*c + c)            style projection
  + (k*k*c*3 + 3)        decoder conv
  + n * 4*c              SSM layers (a_raw, b, c_out, d)
  + 3                    alpha, beta, gamma

Checkpoints are little-endian binary: ``b"TSSM"``, u32 version, u32 group
count, then per group a u32 name length, the UTF-8 name, u32 rank, u32 dims
and the raw f32 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .hashing import hash_bytes, uniform_stream
from .ssm import FusionParams, SsmLayerParams, fuse, mix_output
from .tensor import ShapeError, Tensor

MAGIC = b"TSSM"
FORMAT_VERSION = 1
DEFAULT_EMBED_DIM = 64
FRAME_META = "meta.frame_hw"


class CheckpointError(Exception):
    """Malformed or unreadable checkpoint."""


@dataclass
class TextEmbedding:
    vector: Tensor

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass
class ModelParams:
    enc1_w: Tensor
    enc1_b: Tensor
    enc2_w: Tensor
    enc2_b: Tensor
    dec_w: Tensor
    dec_b: Tensor
    style_w: Tensor
    style_b: Tensor
    fusion: FusionParams
    frame_hw: tuple[int, int] | None = None

    @property
    def channels(self) -> int:
        return self.enc1_w.shape[3]

    @property
    def embed_dim(self) -> int:
        return self.style_w.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.enc1_w.shape[0]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [
            ("enc1.w", self.enc1_w), ("enc1.b", self.enc1_b),
            ("enc2.w", self.enc2_w), ("enc2.b", self.enc2_b),
            ("dec.w", self.dec_w), ("dec.b", self.dec_b),
            ("style.w", self.style_w), ("style.b", self.style_b),
            ("fusion.alpha", self.fusion.alpha),
            ("fusion.beta", self.fusion.beta),
            ("fusion.gamma", self.fusion.gamma),
        ]
        for i, layer in enumerate(self.fusion.layers):
            out += [
                (f"fusion.layer{i}.a_raw", layer.a_raw),
                (f"fusion.layer{i}.b", layer.b),
                (f"fusion.layer{i}.c_out", layer.c_out),
                (f"fusion.layer{i}.d", layer.d),
            ]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def map(self, fn) -> "ModelParams":
        """New params with ``fn`` applied to every tensor (in ``named_tensors`` order)."""
        return from_named({name: fn(t) for name, t in self.named_tensors()}, self.frame_hw)

    def detached(self) -> "ModelParams":
        return self.map(lambda t: t.detach())

    def astype(self, dtype, requires_grad=True) -> "ModelParams":
        return self.map(lambda t: Tensor(t.data, requires_grad=requires_grad, dtype=dtype))


def from_named(groups: dict[str, Tensor], frame_hw=None) -> ModelParams:
    n_layers = 0
    while f"fusion.layer{n_layers}.a_raw" in groups:
        n_layers += 1
    layers = [
        SsmLayerParams(
            groups[f"fusion.layer{i}.a_raw"], groups[f"fusion.layer{i}.b"],
            groups[f"fusion.layer{i}.c_out"], groups[f"fusion.layer{i}.d"],
        )
        for i in range(n_layers)
    ]
    fusion = FusionParams(groups["fusion.alpha"], groups["fusion.beta"], groups["fusion.gamma"], layers)
    return ModelParams(
        groups["enc1.w"], groups["enc1.b"], groups["enc2.w"], groups["enc2.b"],
        groups["dec.w"], groups["dec.b"], groups["style.w"], groups["style.b"],
        fusion, frame_hw,
    )


def init_params(channels: int = 16, embed_dim: int = DEFAULT_EMBED_DIM, num_layers: int = 3,
                kernel: int = 3, seed: int = 0, frame_hw=None) -> ModelParams:
    if kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kernel}")
    rng = np.random.default_rng(seed)
    c, d, k = channels, embed_dim, kernel

    def param(shape, std):
        return Tensor(rng.normal(0.0, std, shape), requires_grad=True)

    def zeros(n):
        return T.zeros(n, requires_grad=True)

    return ModelParams(
        enc1_w=param((k, k, 3, c), np.sqrt(2.0 / (k * k * 3))),
        enc1_b=zeros(c),
        enc2_w=param((k, k, c, c), np.sqrt(1.0 / (k * k * c))),
        enc2_b=zeros(c),
        dec_w=param((k, k, c, 3), np.sqrt(1.0 / (k * k * c))),
        dec_b=zeros(3),
        style_w=param((d, c), 1.0),
        style_b=zeros(c),
        fusion=FusionParams.init(c, num_layers, rng),
        frame_hw=frame_hw,
    )


def param_count(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors())


def param_count_formula(channels: int, embed_dim: int, kernel: int, num_layers: int) -> int:
    c, d, k = channels, embed_dim, kernel
    return ((k * k * 3 * c + c) + (k * k * c * c + c) + (d * c + c)
            + (k * k * c * 3 + 3) + num_layers * 4 * c + 3)


def model_size_bytes(params: ModelParams) -> int:
    """Checkpoint size: 4 bytes per parameter plus everything else in the file."""
    return 4 * param_count(params) + header_size(params)


def header_size(params: ModelParams) -> int:
    size = len(MAGIC) + 4 + 4
    for name, t in _groups(params):
        size += 4 + len(name.encode()) + 4 + 4 * t.ndim
        if name == FRAME_META:
            size += 4 * t.size
    return size


# ---------------------------------------------------------------------------
# text and style


def encode_text(prompt: str, dim: int = DEFAULT_EMBED_DIM) -> TextEmbedding:
    """Bag-of-tokens embedding: each lowercased token seeds a SplitMix64 stream."""
    tokens = prompt.lower().split()
    if not tokens:
        raise ValueError("prompt must contain at least one token")
    total = np.zeros(dim, dtype=np.float64)
    # sorted so the float sum does not depend on token order
    for tok in sorted(tokens):
        v = np.array(uniform_stream(hash_bytes(tok.encode("utf-8")), dim))
        total += v / np.linalg.norm(v)
    total /= np.linalg.norm(total)
    return TextEmbedding(Tensor(total))


def project_style(e: TextEmbedding, params: ModelParams, h: int, w: int) -> Tensor:
    if e.dim != params.embed_dim:
        raise ShapeError(f"embedding has dim {e.dim}, model expects {params.embed_dim}")
    vec = e.vector if e.vector.dtype == params.style_w.dtype else T.astype(e.vector, params.style_w.dtype)
    s = T.matmul(vec.reshape(1, e.dim), params.style_w).reshape(params.channels) + params.style_b
    return T.broadcast_to(s, (h, w, params.channels))


# ---------------------------------------------------------------------------
# frames


def encode_frame(img: Tensor, params: ModelParams) -> Tensor:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"frame must be [H, W, 3], got {img.shape}")
    if img.shape[0] % 2 or img.shape[1] % 2:
        raise ShapeError(f"frame dims must be even, got {img.shape[:2]}")
    x = T.relu(T.conv2d(img, params.enc1_w, params.enc1_b))
    x = T.conv2d(x, params.enc2_w, params.enc2_b)
    return x[::2, ::2]


def decode_features(f_hat: Tensor, params: ModelParams) -> Tensor:
    if f_hat.ndim != 3 or f_hat.shape[2] != params.channels:
        raise ShapeError(f"features must be [h, w, {params.channels}], got {f_hat.shape}")
    x = T.upsample_nearest(f_hat, 2)
    return T.sigmoid(T.conv2d(x, params.dec_w, params.dec_b))


def stylize_frame(img: Tensor, h_prev: Tensor | None, e: TextEmbedding,
                  params: ModelParams) -> tuple[Tensor, Tensor]:
    """One step of the recurrent pipeline; returns (stylized frame, new state)."""
    f_t = encode_frame(img, params)
    h, w, c = f_t.shape
    if h_prev is None:
        h_prev = T.zeros((h, w, c), dtype=f_t.dtype)
    s = project_style(e, params, h, w)
    h_t = fuse(h_prev, f_t, s, params.fusion)
    return decode_features(mix_output(h_t, f_t), params), h_t


# ---------------------------------------------------------------------------
# checkpoints


def _groups(params: ModelParams) -> list[tuple[str, Tensor]]:
    groups = params.named_tensors()
    if params.frame_hw is not None:
        groups.append((FRAME_META, Tensor(np.array(params.frame_hw))))
    return groups


def to_bytes(params: ModelParams) -> bytes:
    groups = _groups(params)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(groups))]
    for name, t in groups:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes, requires_grad: bool = True) -> ModelParams:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}, expected {MAGIC!r} (TSSM)")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    groups: dict[str, Tensor] = {}
    frame_hw = None
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("group name is not UTF-8") from exc
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        if name == FRAME_META:
            frame_hw = (int(data[0]), int(data[1]))
        else:
            groups[name] = Tensor(data, requires_grad=requires_grad)
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last group")
    try:
        return from_named(groups, frame_hw)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks parameter group {exc.args[0]}") from None


def save_checkpoint(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(params))


def load_checkpoint(path, requires_grad: bool = True) -> ModelParams:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), requires_grad)
