"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed in the summary."""

import json
import time

import numpy as np
import pytest

from trans4mer import tensor as T
from trans4mer import verify as V
from trans4mer.bench import run_bench, scaling_exponent
from trans4mer.cli import main
from trans4mer.data import DatasetSpec, SyntheticSpec, build_dataset
from trans4mer.experiment import learning_run
from trans4mer.losses import PseudoSplit, boundary_loss, shot_scene_term
from trans4mer.metrics import auc_roc, average_precision, f1_at, f1_from_counts
from trans4mer.model import ModelConfig, TranS4mer, count_tokens
from trans4mer.tensor import Tensor
from trans4mer.train import TrainConfig, evaluate, finetune, pretrain

SHOTS = (9, 17, 25, 33)
SEEDS = (0, 1, 2)


def test_1_kernel_recurrence(acceptance):
    t0 = time.perf_counter()
    ok, detail = V.check_kernel_recurrence(n_params=100, lengths=(1, 2, 17, 64, 256))
    seconds = time.perf_counter() - t0
    passed = ok and seconds < 10
    acceptance(1, passed, f"{detail}; {seconds:.1f}s")
    assert passed


def test_2_gradient_integrity(acceptance):
    t0 = time.perf_counter()
    e2e_ok, e2e = V.check_end_to_end_gradients()
    layer_ok, layers = V.check_layer_gradients()
    loss_ok, losses = V.check_loss_gradients()
    seconds = time.perf_counter() - t0
    cfg = V.tiny_config()
    shape_ok = (cfg.n_shots, cfg.k_frames, cfg.height, cfg.patch, cfg.dim, cfg.blocks, cfg.state_size) == \
        (5, 2, 16, 8, 8, 2, 8)
    passed = e2e_ok and layer_ok and loss_ok and shape_ok and seconds < 300
    acceptance(2, passed, f"{e2e}; layers {layers}; losses {losses}; {seconds:.1f}s")
    assert passed


def test_3_attention_pair_counts(acceptance, rng):
    rows = []
    exact = True
    for n in SHOTS:
        for variant in ("GS4", "FullAttention"):
            cfg = ModelConfig(n_shots=n, inter_variant=variant, blocks=1)
            model = TranS4mer(cfg)
            T.reset_counters()
            with T.no_grad():
                model(rng.random((n, cfg.k_frames, 3, cfg.height, cfg.width)))
            L = cfg.tokens_per_shot
            intra, full = n * L * L, (n * L) ** 2
            expect = intra + (full if variant == "FullAttention" else 0)
            exact &= T.counters["attention_pairs"] == expect
            rows.append(f"{variant}@{n}={T.counters['attention_pairs']}")
    _, tokens, pairs = count_tokens(ModelConfig(n_shots=25, k_frames=3, height=224, width=224, patch=32))
    passed = exact and tokens == 3675 and pairs == 13_505_625
    acceptance(3, passed, f"tokens={tokens}, pairs={pairs}; " + ", ".join(rows))
    assert passed


@pytest.mark.slow
def test_4_efficiency_scaling(acceptance):
    with T.default_dtype(np.float32):
        pts = run_bench([ModelConfig(), ModelConfig(inter_variant="FullAttention")], SHOTS, repeats=5, warmup=2)
    gs4 = scaling_exponent(pts, "GS4")
    att = scaling_exponent(pts, "FullAttention")
    peak = {(p.variant, p.n_shots): p.peak_alloc_bytes for p in pts}
    ratio = peak[("GS4", 33)] / peak[("FullAttention", 33)]
    passed = att - gs4 >= 0.5 and ratio <= 0.6
    acceptance(4, passed, f"exponent GS4={gs4:.2f}, FullAttention={att:.2f}, gap={att - gs4:.2f}; "
                          f"peak bytes GS4/FullAttention at 33 shots={ratio:.2f}")
    assert passed


def test_5_metric_oracles(acceptance):
    ok, detail = V.check_metric_oracles(n=200)
    closed = [
        average_precision([0.9, 0.2, 0.1], [1, 0, 0]) == 1.0,
        auc_roc([0.4] * 5, [1, 0, 1, 0, 0]) == 0.5,
        f1_from_counts(1, 1, 1) == 0.5,
        f1_from_counts(1, 0, 1) == 2 / 3,
        f1_at([0.9, 0.1], [1, 0]) == 1.0,
    ]
    passed = ok and all(closed)
    acceptance(5, passed, f"{detail}; closed forms {sum(closed)}/{len(closed)}")
    assert passed


def test_6_loss_closed_forms(acceptance):
    r = Tensor(np.array([1.0, 0.0]))
    zero = shot_scene_term(r, r).item()
    anti = shot_scene_term(r, r, neg_scenes=Tensor(np.array([[-1.0, 0.0]]))).item()
    bnd = boundary_loss(Tensor(np.zeros(4)), PseudoSplit.at(1, 4), 3).item()
    passed = zero == 0.0 and abs(anti - np.log1p(np.exp(-2.0))) <= 1e-9 and abs(bnd - 2 * np.log(2)) <= 1e-12
    acceptance(6, passed, f"no negatives={zero}, antipodal={anti:.10f}, boundary={bnd:.12f}")
    assert passed


@pytest.mark.slow
def test_7_learning_smoke(acceptance):
    t0 = time.perf_counter()
    full, intra = [], []
    for seed in SEEDS:
        data = build_dataset(learning_data(seed))
        full.append(learning_run(seed, ModelConfig(), data))
        intra.append(learning_run(seed, ModelConfig(s4a_layers=()), data))
    minutes = (time.perf_counter() - t0) / 60
    ap = np.median([r.ap for r in full])
    over_random = np.median([r.ap - r.random_ap for r in full])
    over_centroid = np.median([r.ap - r.centroid_ap for r in full])
    over_intra = np.median([f.ap - i.ap for f, i in zip(full, intra)])
    passed = ap >= 0.70 and over_random >= 0.15 and over_centroid >= 0.15 and over_intra >= 0.03 and minutes < 30
    per_seed = "; ".join(f"seed {f.seed}: AP {f.ap:.3f} random {f.random_ap:.3f} centroid {f.centroid_ap:.3f} "
                         f"intra-only {i.ap:.3f}" for f, i in zip(full, intra))
    acceptance(7, passed, f"median AP={ap:.3f}, over random={over_random:.3f}, over centroid={over_centroid:.3f}, "
                          f"over intra-only={over_intra:.3f}, {minutes:.1f} min [{per_seed}]")
    assert passed


def learning_data(seed):
    from trans4mer.experiment import smoke_dataset_spec
    spec = smoke_dataset_spec(seed)
    assert (spec.n_clips, spec.clip.n_scenes, spec.clip.scene_signal, spec.clip.intra_noise, spec.n_shots) == \
        (8, 12, 0.8, 0.2, 9)
    return spec


ABLATION_MODEL = dict(n_shots=5, k_frames=1, height=16, width=16, patch=8, dim=16, blocks=4, heads=2, state_size=8)
LAYER_SETS = {"all": (0, 1, 2, 3), "every-2nd": (0, 2), "first-half": (0, 1), "second-half": (2, 3)}


def test_8_ablation_plumbing(acceptance):
    spec = DatasetSpec(SyntheticSpec(n_scenes=6, k_frames=1, height=16, width=16, seed=0), n_clips=3, n_shots=5,
                       splits=("train", "train", "test"))
    data = build_dataset(spec)
    hyper = TrainConfig(epochs=1, batch_size=8, lr=1e-3, dtype="float64")
    reports = {}
    arms = [(v, "all") for v in ("S4", "DS4", "GS4")] + [("GS4", k) for k in LAYER_SETS if k != "all"]
    for variant, layers in arms:
        model = TranS4mer(ModelConfig(**ABLATION_MODEL, inter_variant=variant, s4a_layers=LAYER_SETS[layers]))
        pretrain(data["train"], model, hyper)
        finetune(data["train"], model, hyper)
        reports[f"{variant}/{layers}"] = evaluate(model, data["test"]).to_json()
    keys = {frozenset(r) for r in reports.values()}
    finite = all(0.0 <= r[m] <= 1.0 for r in reports.values() for m in ("ap", "miou", "auc_roc", "f1"))
    same_n = len({r["n_windows"] for r in reports.values()}) == 1
    passed = len(keys) == 1 and finite and same_n
    acceptance(8, passed, ", ".join(f"{k} AP={r['ap']:.3f}" for k, r in reports.items()))
    assert passed


def _pipeline(root, spec_path, cfg_path):
    data = root / "data"
    assert main(["gen-data", "--spec", str(spec_path), "--out", str(data), "--seed", "7"]) == 0
    manifest = str(data / "manifest.json")
    assert main(["pretrain", "--config", str(cfg_path), "--data", manifest, "--out", str(root / "pre"),
                 "--seed", "7"]) == 0
    assert main(["finetune", "--config", str(cfg_path), "--data", manifest, "--init",
                 str(root / "pre" / "pretrain.ts4m"), "--out", str(root / "fine"), "--seed", "7"]) == 0
    assert main(["eval", "--ckpt", str(root / "fine" / "finetune.ts4m"), "--data", manifest,
                 "--out", str(root / "eval.json"), "--seed", "7"]) == 0
    return [root / "pre" / "pretrain.ts4m", root / "fine" / "finetune.ts4m", root / "eval.json"]


def test_9_determinism(acceptance, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(dict(n_scenes=5, k_frames=1, height=16, width=16, n_clips=4, n_shots=5)))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**ABLATION_MODEL, "blocks": 2, "epochs": 2, "batch_size": 8}))
    a = _pipeline(tmp_path / "a", spec, cfg)
    b = _pipeline(tmp_path / "b", spec, cfg)
    same = [x.read_bytes() == y.read_bytes() for x, y in zip(a, b)]
    passed = all(same)
    acceptance(9, passed, "bit-identical: " + ", ".join(f"{p.name}={s}" for p, s in zip(a, same)))
    assert passed
