"""Synthetic scene-structured clips, shot windows, and the shotpack container.

A clip is a sequence of scenes; every scene has a latent look (base colour and
stripe orientation/frequency). Shots inside a scene re-render that look with a
camera offset (brightness, stripe phase, slight colour and angle drift) whose
size scales with ``intra_noise``; frames inside a shot add pixel jitter.
``scene_signal`` interpolates scene looks between a shared clip-level look (0)
and fully independent looks (1).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .serialize import BadMagicError, TruncatedError, VersionError, read_exact

SHOTPACK_MAGIC = b"SHP1"
SHOTPACK_VERSION = 1


@dataclass
class SyntheticSpec:
    n_scenes: int = 12
    shots_per_scene: tuple[int, int] = (2, 4)
    k_frames: int = 3
    height: int = 32
    width: int = 32
    scene_signal: float = 0.8
    intra_noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.shots_per_scene = tuple(int(v) for v in self.shots_per_scene)
        if self.n_scenes < 2:
            raise ValueError("n_scenes must be >= 2")
        if self.scene_signal < 0 or self.intra_noise < 0:
            raise ValueError("scene_signal and intra_noise must be >= 0")
        lo, hi = self.shots_per_scene
        if not 1 <= lo <= hi:
            raise ValueError(f"bad shots_per_scene range {self.shots_per_scene}")


@dataclass
class ShotWindow:
    frames: np.ndarray  # [N, K, 3, H, W] float32 in [0, 1]
    center_label: int
    window_id: int
    clip_id: int

    @property
    def n_shots(self) -> int:
        return self.frames.shape[0]


def _render(color, theta, freq, phase, brightness, h, w, rng, jitter):
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    proj = xx * np.cos(theta) + yy * np.sin(theta)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * proj + phase)
    img = color[:, None, None] * (0.55 + 0.45 * stripes)[None] + brightness
    img = img + jitter * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_clip(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Returns shots ``[T, K, 3, H, W]`` (float32) and boundary labels ``[T]``.

    Label 1 marks the last shot of every scene except the clip's final scene.
    """
    rng = np.random.default_rng(spec.seed)
    sig, noise = spec.scene_signal, spec.intra_noise
    base_color = rng.uniform(0.3, 0.7, 3)
    base_theta = rng.uniform(0, np.pi)
    base_freq = rng.uniform(2.0, 3.0)
    lo, hi = spec.shots_per_scene
    shots, labels = [], []
    for s in range(spec.n_scenes):
        color = base_color + sig * (rng.uniform(0.15, 0.85, 3) - base_color)
        theta = base_theta + sig * rng.uniform(-np.pi / 2, np.pi / 2)
        freq = base_freq + sig * rng.uniform(-1.0, 1.0)
        n_shots = int(rng.integers(lo, hi + 1))
        for j in range(n_shots):
            shot_color = np.clip(color + noise * 0.25 * rng.standard_normal(3), 0.0, 1.0)
            shot_theta = theta + noise * 0.5 * rng.standard_normal()
            phase = min(1.0, 5.0 * noise) * rng.uniform(0, 2 * np.pi)
            brightness = noise * rng.uniform(-0.3, 0.3)
            frames = [
                _render(shot_color, shot_theta, freq, phase + 0.1 * f * noise, brightness,
                        spec.height, spec.width, rng, jitter=0.02)
                for f in range(spec.k_frames)
            ]
            shots.append(np.stack(frames))
            labels.append(1 if j == n_shots - 1 and s < spec.n_scenes - 1 else 0)
    return np.stack(shots).astype(np.float32), np.asarray(labels, dtype=np.int64)


def sample_windows(shots: np.ndarray, labels, n_shots: int, clip_id: int = 0) -> list[ShotWindow]:
    """One window per shot, centred on it; clip edges repeat the terminal shot."""
    if n_shots % 2 == 0 or n_shots < 1:
        raise ValueError(f"window size must be odd, got {n_shots}")
    m = n_shots // 2
    total = shots.shape[0]
    out = []
    for i in range(total):
        idx = np.clip(np.arange(i - m, i + m + 1), 0, total - 1)
        out.append(ShotWindow(shots[idx], int(labels[i]), i, clip_id))
    return out


def stack_frames(windows: list[ShotWindow]) -> np.ndarray:
    return np.stack([w.frames for w in windows])


def augment_windows(frames: np.ndarray, rng: np.random.Generator, shift: float = 0.1,
                    permute: bool = False) -> np.ndarray:
    """Label-preserving augmentation of a batch ``[B, N, K, C, H, W]``.

    Each window gets optional horizontal/vertical flips, a per-channel colour
    shift and, if ``permute``, a channel permutation. All of a window's shots get
    the same transform so the relations between shots are untouched.
    """
    out = np.empty_like(frames)
    c = frames.shape[-3]
    for b in range(frames.shape[0]):
        x = frames[b][:, :, rng.permutation(c)] if permute else frames[b]
        if rng.random() < 0.5:
            x = x[..., ::-1]
        if rng.random() < 0.5:
            x = x[..., ::-1, :]
        offset = rng.uniform(-shift, shift, c).astype(frames.dtype)
        out[b] = np.clip(x + offset[:, None, None], 0.0, 1.0)
    return out


# -- shotpack ---------------------------------------------------------------------

def write_shotpack(path, windows: list[ShotWindow]) -> None:
    with open(path, "wb") as fh:
        fh.write(SHOTPACK_MAGIC)
        fh.write(struct.pack("<II", SHOTPACK_VERSION, len(windows)))
        for w in windows:
            frames = np.ascontiguousarray(w.frames, dtype="<f4")
            if frames.ndim != 5:
                raise ValueError("window frames must be [N, K, C, H, W]")
            fh.write(struct.pack("<5I", *frames.shape))
            fh.write(struct.pack("<BQQ", w.center_label, w.window_id, w.clip_id))
            fh.write(frames.tobytes())


def read_shotpack(path) -> list[ShotWindow]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SHOTPACK_MAGIC:
            if len(magic) < 4:
                raise TruncatedError(f"{path}: truncated header")
            raise BadMagicError(f"{path}: bad shotpack magic {magic!r}")
        version, count = struct.unpack("<II", read_exact(fh, 8))
        if version != SHOTPACK_VERSION:
            raise VersionError(f"{path}: unsupported shotpack version {version}")
        out = []
        for _ in range(count):
            shape = struct.unpack("<5I", read_exact(fh, 20))
            label, wid, cid = struct.unpack("<BQQ", read_exact(fh, 17))
            n = int(np.prod(shape))
            frames = np.frombuffer(read_exact(fh, 4 * n), dtype="<f4").reshape(shape)
            out.append(ShotWindow(frames.astype(np.float32), label, wid, cid))
    return out


# -- datasets on disk ------------------------------------------------------------

@dataclass
class DatasetSpec:
    """What ``gen-data`` builds: several clips, windowed, split by clip."""

    clip: SyntheticSpec
    n_clips: int = 8
    n_shots: int = 9
    splits: tuple[str, ...] = ()

    def split_names(self) -> list[str]:
        if self.splits:
            if len(self.splits) != self.n_clips:
                raise ValueError("need one split name per clip")
            return list(self.splits)
        n_test = max(1, self.n_clips // 4)
        n_val = 1 if self.n_clips - n_test > 2 else 0
        n_train = self.n_clips - n_test - n_val
        return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test

    @classmethod
    def from_json(cls, d: dict) -> DatasetSpec:
        d = dict(d)
        top = {k: d.pop(k) for k in ("n_clips", "n_shots", "splits") if k in d}
        if "splits" in top:
            top["splits"] = tuple(top["splits"])
        return cls(SyntheticSpec(**d), **top)

    def to_json(self) -> dict:
        d = asdict(self.clip)
        d["shots_per_scene"] = list(self.clip.shots_per_scene)
        d.update(n_clips=self.n_clips, n_shots=self.n_shots, splits=self.split_names())
        return d


def clip_seed(base: int, clip_id: int) -> int:
    return int(np.random.SeedSequence([base, clip_id]).generate_state(1)[0])


def build_dataset(spec: DatasetSpec) -> dict[str, list[ShotWindow]]:
    """In-memory equivalent of ``gen-data``: windows grouped by split."""
    out: dict[str, list[ShotWindow]] = {"train": [], "val": [], "test": []}
    for cid, split in enumerate(spec.split_names()):
        clip_spec = SyntheticSpec(**{**asdict(spec.clip), "seed": clip_seed(spec.clip.seed, cid)})
        shots, labels = generate_clip(clip_spec)
        out.setdefault(split, []).extend(sample_windows(shots, labels, spec.n_shots, cid))
    return out


def write_dataset(spec: DatasetSpec, out_dir) -> Path:
    """Writes one shotpack per clip plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for cid, split in enumerate(spec.split_names()):
        clip_spec = SyntheticSpec(**{**asdict(spec.clip), "seed": clip_seed(spec.clip.seed, cid)})
        shots, labels = generate_clip(clip_spec)
        name = f"clip{cid:03d}.shp"
        write_shotpack(out_dir / name, sample_windows(shots, labels, spec.n_shots, cid))
        entries.append({"path": name, "split": split, "clip_id": cid})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2))
    return manifest


def load_manifest(path, splits=None) -> list[ShotWindow]:
    """Reads every shotpack listed in a manifest (optionally only some splits)."""
    path = Path(path)
    entries = json.loads(path.read_text())
    if isinstance(splits, str):
        splits = [splits]
    windows = []
    for e in entries:
        if e.get("split") not in ("train", "val", "test"):
            raise ValueError(f"manifest entry has bad split: {e}")
        if splits is None or e["split"] in splits:
            windows.extend(read_shotpack(path.parent / e["path"]))
    return windows
