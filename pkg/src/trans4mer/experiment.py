"""The end-to-end learning run: synthetic data, pretrain, finetune, evaluate."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .baselines import nearest_centroid_scores, random_scores
from .data import DatasetSpec, SyntheticSpec, build_dataset
from .metrics import average_precision
from .model import ModelConfig, TranS4mer
from .train import FINETUNE_DEFAULTS, PRETRAIN_DEFAULTS, TrainConfig, evaluate, finetune, pretrain


def smoke_dataset_spec(seed: int) -> DatasetSpec:
    clip = SyntheticSpec(n_scenes=12, scene_signal=0.8, intra_noise=0.2, seed=seed)
    return DatasetSpec(clip, n_clips=8, n_shots=9)


@dataclass
class RunSummary:
    seed: int
    s4a_layers: tuple[int, ...]
    ap: float
    random_ap: float
    centroid_ap: float
    pretrain_losses: list[float]
    finetune_losses: list[float]
    seconds: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["s4a_layers"] = list(self.s4a_layers)
        return d


def learning_run(seed: int, cfg: ModelConfig | None = None, data: dict | None = None,
                 pre: TrainConfig | None = None, fine: TrainConfig | None = None) -> RunSummary:
    """Pretrain and finetune on the train clips, report test AP next to the baselines."""
    t0 = time.perf_counter()
    cfg = cfg or ModelConfig()
    data = data or build_dataset(smoke_dataset_spec(seed))
    pre = pre or TrainConfig(**{**PRETRAIN_DEFAULTS.to_json(), "seed": seed})
    fine = fine or TrainConfig(**{**FINETUNE_DEFAULTS.to_json(), "seed": seed})
    with T.default_dtype(np.dtype(pre.dtype).type):
        model = TranS4mer(cfg, seed=seed)
        p = pretrain(data["train"], model, pre)
        f = finetune(data["train"], model, fine)
        report = evaluate(model, data["test"])
    test = data["test"]
    labels = [w.center_label for w in test]
    return RunSummary(
        seed=seed,
        s4a_layers=tuple(cfg.s4a_layers),
        ap=report.ap,
        random_ap=average_precision(random_scores(len(test), seed), labels),
        centroid_ap=average_precision(nearest_centroid_scores(test), labels),
        pretrain_losses=p.epoch_losses,
        finetune_losses=f.epoch_losses,
        seconds=time.perf_counter() - t0,
    )
