# Copyright (C) 2024 The pocketforge authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""Shared fixtures: seeded generators, shrunken models, a tiny corpus."""
import logging

import numpy as np
import pytest

from pocketforge.cloud import PointCloud, split_random_plane
from pocketforge.config import (
    CorpusConfig,
    FamilyCount,
    ModelConfig,
    TrainConfig,
)
from pocketforge.dataset import Corpus, build_corpus
from pocketforge.model import HyperPocket
from pocketforge.training import train

TINY_POINTS = 48


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return HyperPocket(ModelConfig.tiny("full"), seed=7)


@pytest.fixture
def tiny_rec_model():
    return HyperPocket(ModelConfig.tiny("rec"), seed=7)


@pytest.fixture
def random_parts():
    """Six random-plane partitions of Gaussian blobs."""
    gen = np.random.default_rng(99)
    return [
        split_random_plane(
            PointCloud(gen.standard_normal((TINY_POINTS, 3)) * 0.4),
            gen,
            f"blob-{i}",
        )
        for i in range(6)
    ]


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(
        epochs=2,
        batch_size=2,
        points_per_cloud=32,
        val_points=32,
        noise_ramp_epochs=2,
        model=ModelConfig.tiny(),
        threads=1,
    )
    values.update(overrides)
    return TrainConfig(**values)


def tiny_corpus_config(seed: int = 0) -> CorpusConfig:
    return CorpusConfig(
        families={
            "chair": FamilyCount(train=2, val=1, test=2),
            "table": FamilyCount(train=2, val=1, test=1),
        },
        n_points=TINY_POINTS,
        planes_per_sample=2,
        seed=seed,
    )


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    build_corpus(tiny_corpus_config(), root, threads=2)
    return root


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    return Corpus(corpus_dir)


@pytest.fixture
def make_train_config():
    return tiny_train_config


@pytest.fixture
def make_corpus_config():
    return tiny_corpus_config


@pytest.fixture
def root_logger_guard():
    """Undo ``basic_config(force=True)`` so pytest keeps its handlers."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


DESK_FAMILIES = ("chair", "table", "box_lid")
DESK_POINTS = 512


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """A mid-sized corpus for the trained-model checks."""
    root = tmp_path_factory.mktemp("desk")
    config = CorpusConfig(
        families={
            name: FamilyCount(train=24, val=6, test=8)
            for name in DESK_FAMILIES
        },
        n_points=DESK_POINTS,
        planes_per_sample=2,
        seed=11,
    )
    build_corpus(config, root, threads=4)
    return Corpus(root)


@pytest.fixture(scope="session")
def desk_models(desk_corpus):
    """Full and rec training results on ``desk_corpus``, by variant."""
    train_set = desk_corpus.partitions("train")
    val_set = desk_corpus.partitions("val")
    model = ModelConfig(
        latent_size=32, encoder_widths=(64, 128), decoder_widths=(256,)
    )
    results = {}
    for variant in ("full", "rec"):
        config = TrainConfig(
            variant=variant,
            epochs=60,
            batch_size=8,
            lr=1e-3,
            noise_ramp_epochs=20,
            points_per_cloud=DESK_POINTS,
            val_points=DESK_POINTS,
            model=model,
            threads=4,
            seed=5,
        )
        results[variant] = train(config, train_set, val_set)
    return results
