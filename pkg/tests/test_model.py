import json

import numpy as np
import pytest

from trans4mer import tensor as T
from trans4mer.model import (CONFIG_KEYS, InterShot, IntraShot, ModelConfig, PatchEmbed, S4ABlock, TranS4mer,
                             checkpoint_bytes, count_tokens, extract_patches, load_checkpoint, save_checkpoint)
from trans4mer.nn import MultiHeadAttention
from trans4mer.serialize import BadMagicError, FormatError
from trans4mer.tensor import Tensor
from trans4mer.verify import check_end_to_end_gradients, gradcheck, tiny_config


def small(**kw):
    base = dict(n_shots=5, k_frames=2, height=16, width=16, patch=8, dim=8, blocks=2, heads=2, state_size=8)
    base.update(kw)
    return ModelConfig(**base)


def frames_for(cfg, rng, batch=()):
    return rng.random(batch + (cfg.n_shots, cfg.k_frames, cfg.channels, cfg.height, cfg.width))


# -- config / token arithmetic --------------------------------------------------------

def test_token_arithmetic_large_config():
    cfg = ModelConfig(n_shots=25, k_frames=3, height=224, width=224, patch=32)
    p, total, pairs = count_tokens(cfg)
    assert (p, total, pairs) == (49, 3675, 13_505_625)
    assert cfg.n_shots * cfg.tokens_per_shot == 3700


def test_token_arithmetic_desk_config():
    assert count_tokens(ModelConfig())[:2] == (16, 432)


@pytest.mark.parametrize("kw", [dict(n_shots=8), dict(patch=7), dict(dim=10, heads=4),
                                dict(inter_variant="LSTM"), dict(s4a_layers=(5,)), dict(state_size=7)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_paper_scale_config_is_valid():
    cfg = ModelConfig(blocks=12, dim=384, heads=6)
    assert cfg.s4a_layers == tuple(range(12))


def test_config_json_round_trip():
    cfg = ModelConfig(s4a_layers=(0, 2), inter_variant="S4")
    d = json.loads(json.dumps(cfg.to_json()))
    assert set(d) == set(CONFIG_KEYS)
    assert ModelConfig.from_json(d) == cfg


# -- patch embedding --------------------------------------------------------------------

def test_extract_patches_order():
    cfg = small(n_shots=1, k_frames=1, channels=1)
    img = np.arange(256, dtype=float).reshape(1, 1, 1, 16, 16)
    p = extract_patches(img, cfg)
    assert p.shape == (1, 4, 64)
    assert np.array_equal(p[0, 1], img[0, 0, 0, :8, 8:].ravel())
    assert np.array_equal(p[0, 2], img[0, 0, 0, 8:, :8].ravel())


def test_patch_embed_shape(rng):
    cfg = ModelConfig(n_shots=9, k_frames=3, height=32, width=32, patch=8, dim=32, heads=4)
    out = PatchEmbed(cfg, rng)(frames_for(cfg, rng))
    assert out.shape == (9, 49, 32)


def test_patch_embed_zero_everything_is_zero(rng):
    cfg = small()
    pe = PatchEmbed(cfg, rng)
    for p in pe.parameters():
        p.data[:] = 0.0
    assert np.all(pe(np.zeros((5, 2, 3, 16, 16))).data == 0.0)


def test_patch_embed_extent_mismatch(rng):
    with pytest.raises(ValueError):
        PatchEmbed(small(), rng)(np.zeros((5, 2, 3, 16, 8)))


def test_swapping_shots_swaps_tokens_up_to_shot_embedding(rng):
    cfg = small()
    pe = PatchEmbed(cfg, rng)
    x = frames_for(cfg, rng)
    swapped = x[[1, 0, 2, 3, 4]]
    a, b = pe(x).data, pe(swapped).data
    delta = pe.shot_pos.data[1] - pe.shot_pos.data[0]
    assert np.allclose(b[0] - a[1], -delta, atol=1e-12)
    assert np.allclose(b[1] - a[0], delta, atol=1e-12)
    assert np.allclose(a[2:], b[2:])


# -- blocks ---------------------------------------------------------------------------------

def test_intra_identity_with_zero_projections(rng):
    cfg = small()
    blk = IntraShot(cfg, rng)
    blk.attn.proj.zero_()
    blk.mlp.fc2.zero_()
    x = Tensor(rng.standard_normal((5, 9, 8)))
    assert np.max(np.abs(blk(x).data - x.data)) < 1e-12


@pytest.mark.parametrize("variant", ["GS4", "S4", "DS4", "FullAttention"])
def test_inter_identity_with_zero_projections(variant, rng):
    cfg = small(inter_variant=variant)
    blk = InterShot(cfg, rng)
    out = {"GS4": "w_y", "S4": "w_out", "DS4": "w_out", "FullAttention": "proj"}[variant]
    getattr(blk.mixer, out).zero_()
    blk.mlp.fc2.zero_()
    x = Tensor(rng.standard_normal((5, 9, 8)))
    y = blk(x)
    assert y.shape == x.shape
    assert np.max(np.abs(y.data - x.data)) < 1e-12


def test_intra_shot_isolation(rng):
    blk = IntraShot(small(), rng)
    x = rng.standard_normal((5, 9, 8))
    y = x.copy()
    y[3] += rng.standard_normal((9, 8))
    a, b = blk(Tensor(x)).data, blk(Tensor(y)).data
    assert np.array_equal(np.delete(a, 3, axis=0), np.delete(b, 3, axis=0))


def test_two_identical_tokens_attend_evenly(rng):
    mha = MultiHeadAttention(4, 1, rng)
    mha.record_weights = True
    tok = rng.standard_normal(4)
    mha(Tensor(np.stack([tok, tok])))
    assert np.allclose(mha.last_weights, 0.5)


def test_block_index_bounds(rng):
    with pytest.raises(ValueError):
        S4ABlock(small(), 2, rng)


# -- full model --------------------------------------------------------------------------

def test_output_shapes_and_determinism(rng):
    cfg = small()
    x = frames_for(cfg, rng, (3,))
    r1, l1 = TranS4mer(cfg, seed=4)(x)
    r2, l2 = TranS4mer(cfg, seed=4)(x)
    assert r1.shape == (3, 5, 8) and l1.shape == (3, 5)
    assert np.array_equal(r1.data, r2.data) and np.array_equal(l1.data, l2.data)


def test_batch_matches_single(rng):
    model = TranS4mer(small(), seed=0)
    x = frames_for(model.cfg, rng, (2,))
    both = model(x)[1].data
    assert np.allclose(both[1], model(x[1])[1].data, atol=1e-12)


def test_intra_only_model_isolates_shots(rng):
    model = TranS4mer(small(s4a_layers=()), seed=0)
    x = frames_for(model.cfg, rng)
    y = x.copy()
    y[1] = rng.random(y[1].shape)
    a, b = model(x)[1].data, model(y)[1].data
    assert a[1] != b[1]
    assert np.array_equal(np.delete(a, 1), np.delete(b, 1))


@pytest.mark.parametrize("variant", ["GS4", "S4", "DS4", "FullAttention"])
def test_full_model_mixes_all_shots(variant, rng):
    model = TranS4mer(small(inter_variant=variant), seed=0)
    x = frames_for(model.cfg, rng)
    base = model(x)[1].data
    for j in range(5):
        y = x.copy()
        y[j] = rng.random(y[j].shape)
        assert np.all(model(y)[1].data != base)


def test_attention_pair_counters(rng):
    for n in (9, 17, 25, 33):
        for variant, inter in (("GS4", 0), ("FullAttention", 1)):
            cfg = ModelConfig(n_shots=n, dim=16, heads=2, blocks=1, inter_variant=variant)
            model = TranS4mer(cfg)
            T.reset_counters()
            with T.no_grad():
                model(frames_for(cfg, rng))
            L = cfg.tokens_per_shot
            assert T.counters["attention_pairs"] == n * L * L + inter * (n * L) ** 2


def test_end_to_end_gradients():
    ok, msg = check_end_to_end_gradients()
    assert ok, msg


def test_model_parameter_gradients_tiny(rng):
    model = TranS4mer(tiny_config(), seed=1)
    x = frames_for(model.cfg, rng)
    w = Tensor(rng.standard_normal((5, 8)))
    params = [model.embed.proj.weight, model.boundary_head.weight, model.blocks[1].inter.mixer.s4.ssm.log_dt]

    def f():
        reprs, logits = model(x)
        return (reprs * w).sum() + logits.sum()
    assert gradcheck(f, params) < 1e-3


def test_float32_model(rng):
    with T.default_dtype(np.float32):
        model = TranS4mer(small(), seed=0)
        reprs, logits = model(frames_for(model.cfg, rng))
    assert reprs.data.dtype == np.float32 and logits.data.dtype == np.float32


# -- checkpoints --------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(), dict(inter_variant="FullAttention"), dict(s4a_layers=(1,)),
                                dict(bidirectional=False), dict(repr_dim=4)])
def test_checkpoint_round_trip(kw, tmp_path, rng):
    model = TranS4mer(small(**kw), seed=3)
    path = tmp_path / "m.ts4m"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    assert back.cfg == model.cfg
    assert checkpoint_bytes(back) == path.read_bytes()
    # tensors are stored as float32
    for p in model.parameters():
        p.data[...] = p.data.astype(np.float32)
    x = frames_for(model.cfg, rng)
    assert np.array_equal(back(x)[1].data, model(x)[1].data)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ts4m"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    raw = checkpoint_bytes(TranS4mer(small()))
    path = tmp_path / "cut.ts4m"
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_load_state_dict_rejects_mismatch():
    model = TranS4mer(small())
    state = model.state_dict()
    state.pop("boundary_head.bias")
    with pytest.raises(FormatError):
        model.load_state_dict(state)
