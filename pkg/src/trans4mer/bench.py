"""Forward+backward cost of the inter-shot variants as the window grows."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .model import ModelConfig, TranS4mer

BENCH_HEADER = ("n_shots", "variant", "wall_ms", "peak_bytes", "pairs")
DEFAULT_SHOTS = (9, 17, 25, 33)
VARIANT_ALIASES = {"gs4": "GS4", "attention": "FullAttention", "fullattention": "FullAttention",
                   "s4": "S4", "ds4": "DS4"}


@dataclass
class BenchPoint:
    n_shots: int
    variant: str
    wall_ms_per_window: float
    peak_alloc_bytes: int
    attention_pair_count: int

    def row(self) -> tuple:
        return (self.n_shots, self.variant, f"{self.wall_ms_per_window:.3f}",
                self.peak_alloc_bytes, self.attention_pair_count)


def resolve_variant(name: str) -> str:
    key = name.strip().lower()
    if key not in VARIANT_ALIASES:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANT_ALIASES)}")
    return VARIANT_ALIASES[key]


def _step(model: TranS4mer, frames: np.ndarray) -> None:
    reprs, logits = model(frames)
    loss = (reprs * reprs).mean() + logits.mean()
    T.backward(loss)
    model.zero_grad()


def measure(cfg: ModelConfig, repeats: int = 5, warmup: int = 2, batch: int = 1,
            seed: int = 0) -> BenchPoint:
    """Median forward+backward time per window, allocator peak, and attention pairs.

    Peak bytes cover everything the tensor engine holds during one step,
    parameters included. ``pairs`` is the number of query-key pairs scored by
    every attention call of one forward pass over one window.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    model = TranS4mer(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    shape = (batch, cfg.n_shots, cfg.k_frames, cfg.channels, cfg.height, cfg.width)
    frames = rng.random(shape).astype(T.get_default_dtype())
    for _ in range(warmup):
        _step(model, frames)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _step(model, frames)
        times.append(time.perf_counter() - t0)
    T.allocator.reset_peak()
    T.reset_counters()
    _step(model, frames)
    peak = T.allocator.peak
    pairs = T.counters["attention_pairs"] // batch
    return BenchPoint(cfg.n_shots, cfg.inter_variant, 1e3 * float(np.median(times)) / batch, int(peak), int(pairs))


def run_bench(cfg_list, n_shots_list=DEFAULT_SHOTS, repeats: int = 5, warmup: int = 2,
              seed: int = 0) -> list[BenchPoint]:
    """Every (variant config, n_shots) pair, in the given order."""
    points = []
    for base in cfg_list:
        for n in n_shots_list:
            points.append(measure(base.with_(n_shots=int(n)), repeats, warmup, seed=seed))
    return points


def scaling_exponent(points: list[BenchPoint], variant: str) -> float:
    """Least-squares slope of log(wall time) against log(n_shots)."""
    pts = sorted((p for p in points if p.variant == variant), key=lambda p: p.n_shots)
    if len(pts) < 2:
        raise ValueError(f"need at least two points for {variant}")
    x = np.log([p.n_shots for p in pts])
    y = np.log([p.wall_ms_per_window for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def to_csv(points: list[BenchPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for p in points:
        w.writerow(p.row())
    return buf.getvalue()


def to_json(points: list[BenchPoint]) -> str:
    return json.dumps([asdict(p) for p in points], indent=2)
