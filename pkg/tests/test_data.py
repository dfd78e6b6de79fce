import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trans4mer.baselines import nearest_centroid_scores
from trans4mer.data import (SHOTPACK_MAGIC, DatasetSpec, ShotWindow, SyntheticSpec, augment_windows,
                            build_dataset, generate_clip, load_manifest, read_shotpack, sample_windows,
                            stack_frames, write_dataset, write_shotpack)
from trans4mer.metrics import average_precision
from trans4mer.serialize import BadMagicError, TruncatedError, VersionError

SMALL = dict(k_frames=1, height=16, width=16)


def test_labels_fixed_scene_length():
    _, labels = generate_clip(SyntheticSpec(n_scenes=2, shots_per_scene=(3, 3), **SMALL))
    assert labels.tolist() == [0, 0, 1, 0, 0, 0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 10))
def test_label_count_per_clip(seed, n_scenes):
    shots, labels = generate_clip(SyntheticSpec(n_scenes=n_scenes, seed=seed, **SMALL))
    assert labels.sum() == n_scenes - 1
    assert labels[-1] == 0
    assert shots.dtype == np.float32 and shots.min() >= 0 and shots.max() <= 1


def test_generation_is_deterministic():
    a = generate_clip(SyntheticSpec(seed=3))
    b = generate_clip(SyntheticSpec(seed=3))
    assert a[0].tobytes() == b[0].tobytes() and np.array_equal(a[1], b[1])
    assert generate_clip(SyntheticSpec(seed=4))[0].tobytes() != a[0].tobytes()


def test_clean_scenes_are_separated():
    shots, labels = generate_clip(SyntheticSpec(scene_signal=1.0, intra_noise=0.0, seed=1))
    scene = np.concatenate([[0], np.cumsum(labels)[:-1]])
    flat = shots.reshape(len(shots), -1).astype(np.float64)
    within = max(np.linalg.norm(flat[i] - flat[j]) for i in range(len(flat)) for j in range(i)
                 if scene[i] == scene[j])
    across = min(np.linalg.norm(flat[i] - flat[j]) for i in range(len(flat)) for j in range(i)
                 if scene[i] != scene[j])
    assert across > within


def test_separability_dial():
    aps = []
    for sig in (0.2, 0.5, 0.9):
        spec = DatasetSpec(SyntheticSpec(scene_signal=sig, intra_noise=0.2, seed=0), n_clips=8)
        windows = [w for ws in build_dataset(spec).values() for w in ws]
        aps.append(average_precision(nearest_centroid_scores(windows), [w.center_label for w in windows]))
    assert aps[0] < aps[1] < aps[2]


@pytest.mark.parametrize("kw", [dict(n_scenes=1), dict(scene_signal=-0.1), dict(intra_noise=-1),
                                dict(shots_per_scene=(3, 2))])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SyntheticSpec(**kw)


# -- windows -------------------------------------------------------------------------

def test_sample_windows_edges():
    shots = np.arange(6, dtype=np.float32).reshape(6, 1, 1, 1, 1)
    labels = [0, 0, 1, 0, 0, 0]
    wins = sample_windows(shots, labels, 5, clip_id=7)
    assert len(wins) == 6
    assert [w.center_label for w in wins] == labels
    ids = [w.frames[:, 0, 0, 0, 0].tolist() for w in wins]
    assert ids[0] == [0, 0, 0, 1, 2]
    assert ids[1] == [0, 0, 1, 2, 3]
    assert ids[5] == [3, 4, 5, 5, 5]
    assert all(row[2] == i for i, row in enumerate(ids))
    assert {w.clip_id for w in wins} == {7}


def test_sample_windows_rejects_even():
    with pytest.raises(ValueError):
        sample_windows(np.zeros((4, 1, 1, 1, 1)), [0] * 4, 4)


def test_augmentation_preserves_window_structure(rng):
    frames = rng.random((3, 5, 2, 3, 8, 8)).astype(np.float32)
    frames[:, 1] = frames[:, 0]
    for permute in (False, True):
        out = augment_windows(frames, np.random.default_rng(0), permute=permute)
        assert out.shape == frames.shape and out.dtype == frames.dtype
        assert out.min() >= 0 and out.max() <= 1
        assert np.array_equal(out[:, 0], out[:, 1])
    same = augment_windows(frames, np.random.default_rng(0), shift=0.0)
    assert np.array_equal(np.sort(same.ravel()), np.sort(frames.ravel()))


# -- shotpack --------------------------------------------------------------------------

def _windows(rng, n=3):
    return [ShotWindow(rng.random((3, 2, 3, 4, 4)).astype(np.float32), i % 2, 10 + i, 2**40 + i)
            for i in range(n)]


def test_shotpack_round_trip(tmp_path, rng):
    wins = _windows(rng)
    path = tmp_path / "a.shp"
    write_shotpack(path, wins)
    back = read_shotpack(path)
    assert len(back) == 3
    for a, b in zip(wins, back):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert (a.center_label, a.window_id, a.clip_id) == (b.center_label, b.window_id, b.clip_id)


def test_shotpack_layout(tmp_path, rng):
    path = tmp_path / "a.shp"
    write_shotpack(path, _windows(rng, 1))
    raw = path.read_bytes()
    assert raw[:4] == SHOTPACK_MAGIC
    assert struct.unpack("<II", raw[4:12]) == (1, 1)
    assert struct.unpack("<5I", raw[12:32]) == (3, 2, 3, 4, 4)
    assert struct.unpack("<BQQ", raw[32:49]) == (0, 10, 2**40)
    assert len(raw) == 49 + 4 * 3 * 2 * 3 * 4 * 4


def test_shotpack_empty(tmp_path):
    path = tmp_path / "e.shp"
    write_shotpack(path, [])
    assert path.read_bytes() == SHOTPACK_MAGIC + struct.pack("<II", 1, 0)
    assert read_shotpack(path) == []


def test_shotpack_errors_are_distinct(tmp_path, rng):
    path = tmp_path / "a.shp"
    write_shotpack(path, _windows(rng))
    raw = path.read_bytes()
    cut = tmp_path / "cut.shp"
    cut.write_bytes(raw[:-10])
    with pytest.raises(TruncatedError):
        read_shotpack(cut)
    bad = tmp_path / "bad.shp"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_shotpack(bad)
    ver = tmp_path / "ver.shp"
    ver.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(VersionError):
        read_shotpack(ver)


# -- datasets --------------------------------------------------------------------------

def test_default_split_and_manifest(tmp_path):
    spec = DatasetSpec(SyntheticSpec(n_scenes=3, **SMALL), n_clips=8, n_shots=3)
    assert spec.split_names() == ["train"] * 5 + ["val"] + ["test"] * 2
    manifest = write_dataset(spec, tmp_path)
    entries = json.loads(manifest.read_text())
    assert [e["clip_id"] for e in entries] == list(range(8))
    mem = build_dataset(spec)
    disk = load_manifest(manifest, "test")
    assert len(disk) == len(mem["test"])
    assert np.array_equal(stack_frames(disk), stack_frames(mem["test"]))
    assert len(load_manifest(manifest)) == sum(len(v) for v in mem.values())


def test_dataset_spec_json_round_trip():
    spec = DatasetSpec(SyntheticSpec(n_scenes=4, seed=9), n_clips=4, n_shots=5)
    back = DatasetSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert back.clip == spec.clip and back.split_names() == spec.split_names()


def test_manifest_bad_split(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps([{"path": "x.shp", "split": "dev", "clip_id": 0}]))
    with pytest.raises(ValueError):
        load_manifest(path)
