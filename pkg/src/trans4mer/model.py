"""TranS4mer encoder: patch embedding, stacked S4A blocks and the two CLS heads."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention, param
from .serialize import BadMagicError, FormatError, read_exact, read_tensor, write_tensor
from .ssm import DiagS4, GatedS4, VanillaS4
from .tensor import Tensor

VARIANTS = ("GS4", "S4", "DS4", "FullAttention")
CONFIG_KEYS = ("n_shots", "k_frames", "height", "width", "patch", "dim", "blocks",
               "heads", "state_size", "inter_variant", "s4a_layers")
CHECKPOINT_MAGIC = b"TS4M"
# frames arrive in [0, 1]; centre and scale before the patch projection
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass
class ModelConfig:
    n_shots: int = 9
    k_frames: int = 3
    height: int = 32
    width: int = 32
    patch: int = 8
    dim: int = 64
    blocks: int = 4
    heads: int = 4
    state_size: int = 32
    inter_variant: str = "GS4"
    # None means every block
    s4a_layers: tuple[int, ...] | None = None
    channels: int = 3
    repr_dim: int | None = None
    mlp_ratio: int = 4
    bidirectional: bool = True
    eq4_literal: bool = False

    def __post_init__(self):
        if self.s4a_layers is None:
            self.s4a_layers = tuple(range(self.blocks))
        self.s4a_layers = tuple(sorted(int(i) for i in self.s4a_layers))
        self.validate()

    def validate(self) -> None:
        if self.n_shots < 1 or self.n_shots % 2 == 0:
            raise ValueError(f"n_shots must be odd (2m+1), got {self.n_shots}")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError("frame height and width must be divisible by the patch size")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.inter_variant not in VARIANTS:
            raise ValueError(f"unknown inter_variant {self.inter_variant!r}; expected one of {VARIANTS}")
        bad = [i for i in self.s4a_layers if not 0 <= i < self.blocks]
        if bad:
            raise ValueError(f"s4a_layers {bad} outside 0..{self.blocks - 1}")
        if self.state_size % 2:
            raise ValueError("state_size must be even")

    @property
    def n_patches(self) -> int:
        return self.height * self.width // (self.patch * self.patch)

    @property
    def tokens_per_shot(self) -> int:
        return 1 + self.k_frames * self.n_patches

    @property
    def center(self) -> int:
        return self.n_shots // 2

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in CONFIG_KEYS}
        d["s4a_layers"] = list(self.s4a_layers)
        return d

    @classmethod
    def from_json(cls, d: dict, **extra) -> ModelConfig:
        known = {k: d[k] for k in CONFIG_KEYS if k in d}
        return cls(**known, **extra)

    def with_(self, **changes) -> ModelConfig:
        if "blocks" in changes and "s4a_layers" not in changes:
            changes["s4a_layers"] = None
        return replace(self, **changes)


def count_tokens(cfg: ModelConfig) -> tuple[int, int, int]:
    """(patches per frame, patch tokens per window, pairwise comparisons of one full attention)."""
    p = cfg.n_patches
    total = cfg.n_shots * cfg.k_frames * p
    return p, total, total * total


def extract_patches(frames: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """[..., N, K, C, H, W] -> [..., N, K*P, C*p*p], patches in row-major frame order."""
    lead = frames.shape[:-5]
    n, k, c, h, w = frames.shape[-5:]
    p = cfg.patch
    x = frames.reshape(lead + (n, k, c, h // p, p, w // p, p))
    nl = len(lead)
    axes = tuple(range(nl)) + tuple(nl + i for i in (0, 1, 3, 5, 2, 4, 6))
    x = x.transpose(axes)
    return x.reshape(lead + (n, k * (h // p) * (w // p), c * p * p))


class PatchEmbed(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.dim
        self.proj = Linear(cfg.channels * cfg.patch ** 2, d, rng)
        self.pos = param(rng.standard_normal((cfg.k_frames * cfg.n_patches, d)) * 0.02)
        self.shot_pos = param(rng.standard_normal((cfg.n_shots, d)) * 0.02)
        self.cls = param(rng.standard_normal(d) * 0.02)

    def __call__(self, frames) -> Tensor:
        cfg = self.cfg
        data = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        expect = (cfg.n_shots, cfg.k_frames, cfg.channels, cfg.height, cfg.width)
        if data.shape[-5:] != expect:
            raise ValueError(f"frames have extents {data.shape[-5:]}, config expects {expect}")
        patches = (extract_patches(data, cfg) - PIXEL_MEAN) / PIXEL_STD
        patches = Tensor(patches, dtype=self.proj.weight.dtype)
        tok = self.proj(patches) + self.pos  # [..., N, K*P, D]
        lead = tok.shape[:-2]
        cls = T.broadcast_to(self.cls, lead + (1, cfg.dim))
        tok = T.concat([cls, tok], axis=-2)
        return tok + T.reshape(self.shot_pos, (cfg.n_shots, 1, cfg.dim))


class IntraShot(Module):
    """Pre-norm attention + MLP applied to each shot's tokens independently."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.dim)
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)
        self.ln2 = LayerNorm(cfg.dim)
        self.mlp = MLP(cfg.dim, rng, cfg.mlp_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.attn(self.ln1(x)) + x
        return self.mlp(self.ln2(x)) + x


def make_mixer(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    v = cfg.inter_variant
    if v == "GS4":
        return GatedS4(cfg.dim, cfg.state_size, rng, cfg.bidirectional, cfg.eq4_literal)
    if v == "S4":
        return VanillaS4(cfg.dim, cfg.state_size, rng, cfg.bidirectional)
    if v == "DS4":
        return DiagS4(cfg.dim, cfg.state_size, rng, cfg.bidirectional)
    return MultiHeadAttention(cfg.dim, cfg.heads, rng)


class InterShot(Module):
    """Unrolls all shots into one (shot-major, CLS-first) sequence and mixes along it."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.dim)
        self.mixer = make_mixer(cfg, rng)
        self.ln2 = LayerNorm(cfg.dim)
        self.mlp = MLP(cfg.dim, rng, cfg.mlp_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.shape
        z = x.reshape(shape[:-3] + (shape[-3] * shape[-2], shape[-1]))
        z = self.mixer(self.ln1(z)) + z
        z = self.mlp(self.ln2(z)) + z
        return z.reshape(shape)


class S4ABlock(Module):
    def __init__(self, cfg: ModelConfig, idx: int, rng: np.random.Generator):
        if not 0 <= idx < cfg.blocks:
            raise ValueError(f"block index {idx} outside 0..{cfg.blocks - 1}")
        self.idx = idx
        self.intra = IntraShot(cfg, rng)
        self.inter = InterShot(cfg, rng) if idx in cfg.s4a_layers else None

    def __call__(self, x: Tensor) -> Tensor:
        x = self.intra(x)
        return self.inter(x) if self.inter is not None else x


class TranS4mer(Module):
    """Returns per-shot contrastive representations and boundary logits."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.embed = PatchEmbed(cfg, rng)
        self.blocks = [S4ABlock(cfg, i, rng) for i in range(cfg.blocks)]
        self.norm = LayerNorm(cfg.dim)
        self.contrastive_head = Linear(cfg.dim, cfg.repr_dim or cfg.dim, rng)
        self.boundary_head = Linear(cfg.dim, 1, rng)

    def encode(self, frames) -> Tensor:
        """Final per-shot CLS embeddings, ``[..., N, D]``."""
        x = self.embed(frames)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x[..., 0, :])

    def __call__(self, frames) -> tuple[Tensor, Tensor]:
        cls = self.encode(frames)
        reprs = self.contrastive_head(cls)
        logits = self.boundary_head(cls)
        return reprs, logits.reshape(logits.shape[:-1])

    forward = __call__

    def cast_(self, dtype) -> TranS4mer:
        for p in self.parameters():
            new = p.data.astype(dtype)
            T.allocator.release(p._nbytes)
            p.data = new
            p._nbytes = new.nbytes
            T.allocator.acquire(p._nbytes)
            p.zero_grad()
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise FormatError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise FormatError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr


# -- checkpoints ----------------------------------------------------------------

def checkpoint_bytes(model: TranS4mer) -> bytes:
    buf = io.BytesIO()
    cfg = json.dumps(model.cfg.to_json(), sort_keys=True).encode()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    state = model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor(buf, arr)
    return buf.getvalue()


def save_checkpoint(path, model: TranS4mer) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path, dtype=None) -> TranS4mer:
    """Rebuild a model from a checkpoint.

    Options outside the stored config keys are recovered from tensor names and
    shapes: a backward SSM kernel means bidirectional, and the contrastive head
    width gives the representation size.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path}: not a checkpoint (magic {magic!r})")
        (n,) = struct.unpack("<I", read_exact(fh, 4))
        cfg_json = json.loads(read_exact(fh, n))
        (count,) = struct.unpack("<I", read_exact(fh, 4))
        state = {}
        for _ in range(count):
            (ln,) = struct.unpack("<I", read_exact(fh, 4))
            name = read_exact(fh, ln).decode()
            state[name] = read_tensor(fh)
    has_ssm = any(".ssm." in k for k in state)
    # without any SSM the flag is moot; keep the default
    bidir = any(".ssm_bwd." in k for k in state) or not has_ssm
    repr_dim = state["contrastive_head.weight"].shape[1]
    if repr_dim == cfg_json.get("dim"):
        repr_dim = None
    cfg = ModelConfig.from_json(cfg_json, bidirectional=bidir, repr_dim=repr_dim)
    with T.default_dtype(dtype or T.get_default_dtype()):
        model = TranS4mer(cfg)
    model.load_state_dict(state)
    return model
