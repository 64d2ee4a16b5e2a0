import numpy as np
import pytest

from pocketforge import autodiff as ad
from pocketforge.cloud import sample_ball_interior
from pocketforge.dataset import demo_scene
from pocketforge.distances import chamfer, chamfer_indexed
from pocketforge.generation import (
    adapt,
    adapt_best_of,
    complete,
    corpus_views,
    export_representations,
    floor_constraint,
    same_vs_different,
    stitch,
    zero_constraint,
)


@pytest.fixture
def existing(random_parts):
    return random_parts[0].existing


class TestComplete:
    def test_prior_collapse(self, tiny_model, existing):
        clouds = complete(
            tiny_model, existing, 10, 1e-12, 64, np.random.default_rng(0)
        )
        assert len(clouds) == 10
        for other in clouds[1:]:
            assert chamfer(clouds[0], other) < 1e-6

    def test_distinct_with_fresh_noise(self, tiny_model, existing):
        a, b = complete(
            tiny_model,
            existing,
            2,
            0.05,
            64,
            np.random.default_rng(0),
            fresh_noise=True,
        )
        assert len(a) == 64
        assert a != b

    def test_rec_completions_identical(self, tiny_rec_model, existing):
        clouds = complete(
            tiny_rec_model, existing, 3, 0.5, 32, np.random.default_rng(1)
        )
        assert clouds[0] == clouds[1] == clouds[2]

    def test_threads_and_seed(self, tiny_model, existing):
        a = complete(
            tiny_model, existing, 4, 0.1, 32, np.random.default_rng(2)
        )
        b = complete(
            tiny_model,
            existing,
            4,
            0.1,
            32,
            np.random.default_rng(2),
            threads=3,
        )
        assert all(x == y for x, y in zip(a, b))

    def test_rotation_changes_encoding(self, tiny_model, existing):
        plain = complete(
            tiny_model, existing, 1, 0.1, 32, np.random.default_rng(3)
        )
        turned = complete(
            tiny_model,
            existing,
            1,
            0.1,
            32,
            np.random.default_rng(3),
            rotate=0.5,
        )
        assert plain[0] != turned[0]

    @pytest.mark.parametrize("k, sigma", [(0, 0.1), (2, 0.0), (2, -1.0)])
    def test_argument_errors(self, tiny_model, existing, k, sigma):
        with pytest.raises(ValueError):
            complete(
                tiny_model, existing, k, sigma, 8, np.random.default_rng()
            )


class TestAdapt:
    def test_trajectory(self, tiny_model, existing, rng):
        floor = rng.uniform(-1, 1, size=(20, 3))
        floor[:, 1] = -1.0
        result = adapt(
            tiny_model,
            existing,
            floor_constraint(floor),
            np.zeros(4),
            5,
            0.05,
            np.random.default_rng(0),
            n_points=32,
        )
        assert len(result.objective) == 6
        assert len(result.rows()) == 6
        assert result.rows()[0][0] == 0
        assert result.r.shape == (4,)
        assert not np.array_equal(result.r, np.zeros(4))
        assert len(result.cloud) == 32
        for obj, cons, floor_term in zip(
            result.objective, result.consistency, result.constraint
        ):
            assert obj == pytest.approx(cons + floor_term)
        assert result.constraint[-1] == pytest.approx(
            floor_constraint(floor).value(result.cloud)
        )

    def test_model_parameters_untouched(self, tiny_model, existing, rng):
        before = {k: v.copy() for k, v in tiny_model.params.items()}
        floor = np.column_stack(
            [rng.uniform(-1, 1, 20), np.full(20, -1.0), rng.uniform(-1, 1, 20)]
        )
        adapt(
            tiny_model,
            existing,
            floor_constraint(floor),
            rng.standard_normal(4),
            4,
            0.1,
            np.random.default_rng(0),
            n_points=32,
        )
        assert list(tiny_model.params) == list(before)
        for name, value in before.items():
            np.testing.assert_array_equal(tiny_model.params[name], value)

    def test_weights_and_zero_constraint(self, tiny_model, existing):
        result = adapt(
            tiny_model,
            existing,
            zero_constraint,
            np.zeros(4),
            3,
            0.05,
            np.random.default_rng(0),
            n_points=16,
            consistency_weight=2.0,
        )
        assert result.constraint == [0.0] * 4
        assert result.objective[0] == pytest.approx(
            2.0 * result.consistency[0]
        )

    def test_zero_steps(self, tiny_model, existing):
        init = np.full(4, 0.3)
        result = adapt(
            tiny_model,
            existing,
            zero_constraint,
            init,
            0,
            0.1,
            np.random.default_rng(0),
            n_points=16,
        )
        np.testing.assert_array_equal(result.r, init)
        assert len(result.objective) == 1

    def test_errors(self, tiny_model, tiny_rec_model, existing):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="full variant"):
            adapt(
                tiny_rec_model,
                existing,
                zero_constraint,
                np.zeros(4),
                1,
                0.1,
                rng,
            )
        with pytest.raises(ValueError, match="length"):
            adapt(
                tiny_model, existing, zero_constraint, np.zeros(3), 1, 0.1, rng
            )

        def not_a_var(x):
            return float(np.sum(x.value))

        def vector_valued(x):
            return ad.square(x).sum(axis=0)

        for bad in (not_a_var, vector_valued):
            with pytest.raises(ValueError, match="constraint"):
                adapt(tiny_model, existing, bad, np.zeros(4), 1, 0.1, rng)

    def test_best_of_is_deterministic(self, tiny_model, existing, rng):
        floor = floor_constraint(rng.uniform(-1, 1, size=(10, 3)))
        runs = [
            adapt_best_of(
                tiny_model,
                existing,
                floor,
                2,
                0.05,
                0.1,
                np.random.default_rng(8),
                restarts=3,
                n_points=16,
                threads=threads,
            )
            for threads in (1, 3)
        ]
        np.testing.assert_array_equal(runs[0].r, runs[1].r)
        assert runs[0].objective == runs[1].objective

    def test_best_of_picks_lowest_final(self, tiny_model, existing, rng):
        floor = floor_constraint(rng.uniform(-1, 1, size=(10, 3)))
        seed_rng = np.random.default_rng(9)
        best = adapt_best_of(
            tiny_model,
            existing,
            floor,
            1,
            0.05,
            0.1,
            seed_rng,
            restarts=4,
            n_points=16,
        )
        replay = np.random.default_rng(9)
        finals = []
        for _ in range(4):
            init = 0.1 * replay.standard_normal(4)
            child = np.random.default_rng(replay.integers(0, 2**63))
            finals.append(
                adapt(
                    tiny_model,
                    existing,
                    floor,
                    init,
                    1,
                    0.05,
                    child,
                    n_points=16,
                ).objective[-1]
            )
        assert best.objective[-1] == min(finals)


def test_stitch(tiny_model, random_parts):
    out = stitch(
        tiny_model,
        random_parts[0].existing,
        random_parts[1].missing,
        40,
        np.random.default_rng(0),
    )
    assert len(out) == 40


def test_stitch_of_one_object_is_its_reconstruction(tiny_model, random_parts):
    part = random_parts[2]
    out = stitch(
        tiny_model, part.existing, part.missing, 40, np.random.default_rng(3)
    )
    u = sample_ball_interior(40, 1.0, np.random.default_rng(3))
    expected, _, _ = tiny_model.hyper_forward(
        part.existing, part.missing, u, deterministic=True
    )
    assert out == expected


class TestRepresentations:
    def test_corpus_views(self, corpus):
        views = corpus_views(corpus, "test", views=3, seed=0)
        ids = [entry["id"] for entry in corpus.entries("test")]
        assert len(views) == 3 * len(ids)
        first = views[0]
        assert first[0] == ids[0] and first[1] == 0
        recorded = corpus.partitions_of(corpus.entries("test")[0])[0]
        assert first[2].existing == recorded.existing
        again = corpus_views(corpus, "test", views=3, seed=0)
        assert all(
            a[2].existing == b[2].existing for a, b in zip(views, again)
        )

    def test_export_shapes_and_summary(self, tiny_model, corpus):
        views = corpus_views(corpus, "test", views=2)
        reps = export_representations(tiny_model, views, threads=2)
        assert len(reps) == len(views)
        assert reps.latents.shape == (len(views), 8)
        assert reps.thetas.shape == (len(views), tiny_model.theta_size)
        summary = reps.distance_summary()
        n_objects = len(corpus.entries("test"))
        assert summary["theta_same"].size == n_objects
        assert summary["latent_different"].size == (
            n_objects * (n_objects - 1) // 2
        )
        rows = reps.histograms(bins=5)
        same_total = sum(
            r[4] for r in rows if r[0] == "theta" and r[1] == "same"
        )
        assert same_total == n_objects
        same, different = same_vs_different(reps, "latent")
        assert same >= 0 and different >= 0

    def test_export_rec_model(self, tiny_rec_model, corpus):
        views = corpus_views(corpus, "val", views=1)
        reps = export_representations(tiny_rec_model, views)
        assert reps.latents.shape[1] == 4

    def test_views_must_be_positive(self, corpus):
        with pytest.raises(ValueError):
            corpus_views(corpus, "test", views=0)


@pytest.mark.slow
class TestTrainedModel:
    def test_adaptation_pulls_chair_onto_floor(self, desk_models):
        model = desk_models["full"].model
        scene = demo_scene(seed=0, n_points=512)
        result = adapt_best_of(
            model,
            scene.existing,
            floor_constraint(scene.floor),
            200,
            0.01,
            0.05,
            np.random.default_rng(0),
            restarts=5,
            n_points=512,
            threads=4,
        )
        assert result.constraint[-1] <= 0.5 * result.constraint[0]
        assert result.consistency[-1] <= 1.2 * result.consistency[0]

    def test_views_of_one_object_share_weights(
        self, desk_corpus, desk_models
    ):
        model = desk_models["full"].model
        reps = export_representations(
            model, corpus_views(desk_corpus, "test", 2), threads=4
        )
        same, different = same_vs_different(reps)
        assert same < different

    def test_stitched_cloud_keeps_existing_part(
        self, desk_corpus, desk_models
    ):
        model = desk_models["full"].model
        parts = desk_corpus.partitions("test")
        stitched, own = [], []
        for a, b in zip(parts[::2], parts[1::2]):
            cloud = stitch(
                model, a.existing, b.missing, 512, np.random.default_rng(0)
            )
            u = sample_ball_interior(512, 1.0, np.random.default_rng(0))
            recon = model.hyper_forward(
                a.existing, a.missing, u.points, deterministic=True
            )[0]
            stitched.append(chamfer_indexed(cloud, a.existing, "mean"))
            own.append(chamfer_indexed(recon, a.existing, "mean"))
        assert np.mean(stitched) <= 2.0 * np.mean(own)
