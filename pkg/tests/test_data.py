import json

import numpy as np
import pytest

from relightkit import data, synth
from relightkit.data import IlluminationSetting, MultiTask, SceneIndex, SingleTask
from relightkit.errors import DataError, DimensionError


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    index = synth.generate_corpus(
        3, directions=("N", "S", "E"), temperatures=(4500, 6500), size=32, seed=1, out_dir=root
    )
    return root, index


def test_opposite_map():
    assert data.opposite("N") == "S"
    assert data.opposite("E") == "W"
    assert data.opposite("NE") == "SW"
    for d in data.DIRECTIONS:
        assert data.opposite(data.opposite(d)) == d
    with pytest.raises(DataError):
        data.opposite("Q")


def test_setting_validation():
    IlluminationSetting("NW", 2500)
    with pytest.raises(DataError):
        IlluminationSetting("Z", 2500)
    with pytest.raises(DataError):
        IlluminationSetting("N", 2000)


def test_fuse_opposite_values():
    a = np.full((4, 4, 3), 0.2)
    b = np.full((4, 4, 3), 0.6)
    assert np.allclose(data.fuse_opposite(a, b), 0.4)
    assert np.allclose(data.fuse_opposite(a, a), a)
    assert np.allclose(data.fuse_opposite(a, b, 1.0, 0.0), a)


def test_fuse_opposite_range_property():
    rng = np.random.default_rng(0)
    a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    fused = data.fuse_opposite(a, b)
    assert fused.min() >= 0 and fused.max() <= 1


def test_fuse_opposite_errors_and_warning():
    with pytest.raises(DimensionError):
        data.fuse_opposite(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))
    with pytest.warns(UserWarning):
        data.fuse_opposite(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), 0.7, 0.6)


def test_index_dataset_counts(corpus):
    root, index = corpus
    assert index.n_scenes == 3
    assert index.total_images == 3 * 3 * 2
    assert index.scene_ids() == ["scene0000", "scene0001", "scene0002"]


def test_index_dataset_empty(tmp_path):
    with pytest.raises(DataError):
        data.index_dataset(tmp_path)
    with pytest.raises(DataError):
        data.index_dataset(tmp_path / "missing")


def test_index_dataset_skips_unparseable(tmp_path, corpus):
    root, _ = corpus
    import shutil

    for f in root.glob("*.png"):
        shutil.copy(f, tmp_path / f.name)
    (tmp_path / "notes.png").write_bytes(b"not an image")
    (tmp_path / "scene9_QQ_4500.png").write_bytes(b"bad direction")
    with pytest.warns(UserWarning):
        index = data.index_dataset(tmp_path)
    reasons = dict(index.skipped)
    assert "notes.png" in reasons
    assert "scene9_QQ_4500.png" in reasons
    assert index.n_scenes == 3


def test_index_dataset_via_manifest(corpus):
    root, by_pattern = corpus
    by_manifest = data.index_dataset(root, manifest=root / "manifest.json")
    assert by_manifest.scene_ids() == by_pattern.scene_ids()
    for scene in by_pattern.scene_ids():
        assert set(by_manifest.scenes[scene]) == set(by_pattern.scenes[scene])


def test_index_dataset_bad_manifest(tmp_path):
    bad = tmp_path / "manifest.json"
    bad.write_text("{not json")
    with pytest.raises(DataError):
        data.index_dataset(tmp_path, manifest=bad)


def test_make_pairs_single(corpus):
    _, index = corpus
    task = SingleTask("N", 6500)
    target = IlluminationSetting("E", 4500)
    pairs = data.make_pairs(index, task, target)
    assert len(pairs) == 3
    for pair in pairs:
        assert pair.input_img.shape == (32, 32, 3)
        assert pair.target_setting == target
        assert pair.input_settings == (IlluminationSetting("N", 6500),)
    assert sorted(p.scene for p in pairs) == index.scene_ids()


def test_make_pairs_multi_fuses(corpus):
    root, index = corpus
    task = MultiTask("N", "S", 6500)
    pairs = data.make_pairs(index, task, IlluminationSetting("E", 4500))
    assert len(pairs) == 3
    from relightkit import imaging

    scene = pairs[0].scene
    a = imaging.load_image(index.path(scene, IlluminationSetting("N", 6500)))
    b = imaging.load_image(index.path(scene, IlluminationSetting("S", 6500)))
    assert np.allclose(pairs[0].input_img, 0.5 * a + 0.5 * b)


def test_make_pairs_skips_incomplete(corpus):
    _, index = corpus
    # drop the S capture of one scene
    crippled = {s: dict(v) for s, v in index.scenes.items()}
    del crippled["scene0001"][IlluminationSetting("S", 6500)]
    cut = SceneIndex(index.root, crippled)
    with pytest.warns(UserWarning):
        pairs = data.make_pairs(cut, MultiTask("N", "S", 6500), IlluminationSetting("E", 4500))
    assert sorted(p.scene for p in pairs) == ["scene0000", "scene0002"]


def test_make_pairs_no_complete_scene(corpus):
    _, index = corpus
    task = SingleTask("W", 6500)  # W was never rendered
    with pytest.warns(UserWarning):
        with pytest.raises(DataError):
            data.make_pairs(index, task, IlluminationSetting("E", 4500))


def test_multi_task_requires_opposite():
    with pytest.raises(DataError):
        MultiTask("N", "E", 6500)


def test_multi_task_defaults_to_opposite_and_6500k():
    task = MultiTask("N")
    assert task.direction2 == "S" and task.temperature_k == 6500


def _fake_index(n):
    return SceneIndex(None, {f"s{i:03d}": {} for i in range(n)})


def test_split_custom_shapes_and_determinism():
    index = _fake_index(300)
    train, test = data.split_custom(index, n_test=60, seed=5)
    assert train.n_scenes == 240 and test.n_scenes == 60
    assert not set(train.scene_ids()) & set(test.scene_ids())
    assert sorted(train.scene_ids() + test.scene_ids()) == index.scene_ids()
    train2, test2 = data.split_custom(index, n_test=60, seed=5)
    assert test.scene_ids() == test2.scene_ids()
    _, test_other = data.split_custom(index, n_test=60, seed=6)
    assert test.scene_ids() != test_other.scene_ids()


def test_split_file_roundtrip(tmp_path):
    index = _fake_index(12)
    train, test = data.split_custom(index, n_test=4, seed=0)
    path = tmp_path / "split.json"
    data.save_split(path, train, test)
    first = path.read_bytes()
    data.save_split(path, train, test)
    assert path.read_bytes() == first
    train2, test2 = data.load_split(path, index)
    assert train2.scene_ids() == train.scene_ids()
    assert test2.scene_ids() == test.scene_ids()


def test_split_rejects_bad_sizes():
    index = _fake_index(5)
    with pytest.raises(DataError):
        data.split_custom(index, n_test=5)
    with pytest.raises(DataError):
        data.split_custom(index, n_test=0)
