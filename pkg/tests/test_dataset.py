import numpy as np
import pytest
from scipy.spatial import cKDTree

from pocketforge.config import CorpusConfig, FamilyCount
from pocketforge.dataset import (
    FAMILY_PARAMS,
    SPLITS,
    Corpus,
    ShapeFamily,
    build_corpus,
    demo_scene,
    gen_shape,
    load_sample,
    mean_shape_baseline,
)
from pocketforge.utils import read_cloud, write_cloud


def _mean_spacing(cloud):
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return dist[:, 1].mean()


class TestShapeFamily:
    @pytest.mark.parametrize("family", sorted(FAMILY_PARAMS))
    def test_sampled_shapes_normalize(self, family, rng):
        cloud = gen_shape(ShapeFamily.sample(family, rng), 512, rng)
        assert len(cloud) == 512
        norms = np.linalg.norm(cloud.points, axis=1)
        assert abs(norms.max() - 1.0) < 1e-9
        np.testing.assert_allclose(cloud.points.mean(axis=0), 0, atol=1e-9)

    def test_seeds_differ_with_similar_spacing(self):
        shape = ShapeFamily("chair", [0.5, 0.5, 0.45, 0.45, 0.05])
        a = gen_shape(shape, 2048, np.random.default_rng(1))
        b = gen_shape(shape, 2048, np.random.default_rng(2))
        assert a != b
        ratio = _mean_spacing(a) / _mean_spacing(b)
        assert 0.8 < ratio < 1.25

    def test_invalid_params(self):
        with pytest.raises(ValueError, match="outside"):
            ShapeFamily("chair", [5.0, 0.5, 0.45, 0.45, 0.05])
        with pytest.raises(ValueError, match="takes 5"):
            ShapeFamily("table", [1.0, 0.6])
        with pytest.raises(ValueError, match="unknown"):
            ShapeFamily("sofa", [])

    def test_named_params(self):
        shape = ShapeFamily("chair", [0.5, 0.5, 0.45, 0.45, 0.05])
        assert shape.named["leg_length"] == 0.45


class TestCorpus:
    def test_manifest_layout(self, corpus):
        assert corpus.summary() == {"train": 4, "val": 2, "test": 3}
        for entry in corpus.entries("train") + corpus.entries("val"):
            assert len(entry["splits"]) == 2
            assert all(len(r["plane"]) == 4 for r in entry["splits"])
        for entry in corpus.entries("test"):
            (record,) = entry["splits"]
            assert record["axis"] == "x"

    def test_ids_are_disjoint_across_splits(self, corpus):
        ids = {s: {e["id"] for e in corpus.entries(s)} for s in SPLITS}
        assert not ids["train"] & ids["val"]
        assert not ids["train"] & ids["test"]
        assert not ids["val"] & ids["test"]

    def test_rebuild_is_byte_identical(
        self, corpus_dir, make_corpus_config, tmp_path
    ):
        build_corpus(make_corpus_config(), tmp_path, threads=1)
        original = (corpus_dir / "manifest.json").read_bytes()
        assert (tmp_path / "manifest.json").read_bytes() == original
        entry = Corpus(tmp_path).entries("val")[0]
        assert (tmp_path / entry["cloud"]).read_bytes() == (
            corpus_dir / entry["cloud"]
        ).read_bytes()

    def test_seed_changes_corpus(
        self, corpus_dir, make_corpus_config, tmp_path
    ):
        build_corpus(make_corpus_config(seed=1), tmp_path)
        assert (tmp_path / "manifest.json").read_bytes() != (
            corpus_dir / "manifest.json"
        ).read_bytes()

    def test_test_splits_are_equal_halves(self, corpus):
        for part in corpus.partitions("test"):
            assert len(part.existing) == len(part.missing) == 24

    def test_load_sample(self, corpus, corpus_dir):
        entry = corpus.entries("train")[0]
        part = load_sample(corpus_dir, entry, 1)
        assert part.source_id == entry["id"]
        np.testing.assert_array_equal(
            part.full.points, corpus.load_cloud(entry).points
        )
        assert part.existing == corpus.partitions_of(entry)[1].existing
        with pytest.raises(ValueError, match="out of range"):
            load_sample(corpus_dir, entry, 2)

    def test_missing_cloud_file(self, corpus, tmp_path):
        entry = dict(corpus.entries("train")[0], cloud="nope.xyz")
        with pytest.raises(OSError):
            load_sample(tmp_path, entry, 0)

    def test_unknown_family(self, tmp_path):
        config = CorpusConfig(
            families={"sofa": FamilyCount(train=1, val=1, test=1)},
            n_points=8,
        )
        with pytest.raises(ValueError, match="unknown"):
            build_corpus(config, tmp_path)

    def test_unknown_split(self, corpus):
        with pytest.raises(ValueError):
            corpus.entries("holdout")

    def test_unwritable_output(self, tmp_path, make_corpus_config):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            build_corpus(make_corpus_config(), blocker / "corpus")


def test_mean_shape_baseline(corpus):
    baseline = mean_shape_baseline(corpus, "val")
    assert set(baseline) == {"chair", "table", "overall"}
    assert all(v > 0 for v in baseline.values())
    fitted_on_val = mean_shape_baseline(corpus, "train", fit_split="val")
    assert set(fitted_on_val) == set(baseline)


def test_text_round_trip_precision(rng, tmp_path):
    cloud = gen_shape(ShapeFamily.sample("plane", rng), 200, rng)
    path = write_cloud(tmp_path / "c.xyz", cloud)
    again = read_cloud(path)
    np.testing.assert_allclose(again.points, cloud.points, atol=1e-8)


def test_demo_scene():
    scene = demo_scene(seed=0, n_points=256, floor_points=64)
    assert len(scene.existing) == 128
    assert len(scene.floor) == 64
    floor_y = scene.full.points[:, 1].min()
    np.testing.assert_array_equal(scene.floor.points[:, 1], floor_y)
    assert scene.existing.points[:, 1].min() > floor_y
