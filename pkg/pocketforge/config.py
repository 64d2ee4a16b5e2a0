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
import json
import os
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

# Loads environment variables from a .env file into the environment.
load_dotenv()

# Configuration

# Worker cap used when --threads is not given on the command line.
DEFAULT_THREADS = int(os.getenv("POCKETFORGE_THREADS", "1"))

# Root log level name.
LOG_LEVEL = os.getenv("POCKETFORGE_LOG_LEVEL", "INFO")

# Path of the SQLite distance cache; unset disables caching.
CACHE_PATH = os.getenv("POCKETFORGE_CACHE")

# Target network layer sizes, input to output.
TARGET_LAYERS: Tuple[int, ...] = (3, 32, 64, 128, 64, 3)

# Length of z_e and z_m.
LATENT_SIZE = 128

# Adam defaults.
ADAM_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# StepLR defaults used by the reconstruction benchmark configuration.
STEP_LR_STEP = 41
STEP_LR_GAMMA = 0.01

# Epochs over which the target input moves from the sphere into the ball.
NOISE_RAMP_EPOCHS = 100

# Completions generated per partial shape during evaluation.
EVAL_K = 10

# Cardinality at which reconstruction CD is reported.
EVAL_POINTS = 2048

# Voxels per axis for the JSD marginal histograms.
JSD_GRID = 28

# Largest cloud the exact EMD solver accepts.
EMD_CAP = 512

# Completion prior scales per dataset family.
SIGMA_PRESETS: Dict[str, float] = {
    "missingshapenet": 0.05,
    "chair": 0.13,
    "plane": 0.1,
    "table": 0.065,
}
DEFAULT_SIGMA = SIGMA_PRESETS["missingshapenet"]

# Significant digits written to .xyz files.
TEXT_PRECISION = 9


class ModelConfig(BaseModel):
    """Architecture widths; every network shares the ReLU convention."""

    latent_size: int = Field(LATENT_SIZE, ge=1)
    encoder_widths: Tuple[int, ...] = (64, 128, 256)
    decoder_widths: Tuple[int, ...] = (512, 1024)
    target_layers: Tuple[int, ...] = TARGET_LAYERS
    variant: Literal["full", "rec"] = "full"

    @model_validator(mode="after")
    def _check_target(self) -> "ModelConfig":
        if self.target_layers[0] != 3 or self.target_layers[-1] != 3:
            raise ValueError("target network must map R^3 to R^3")
        if len(self.encoder_widths) < 1:
            raise ValueError("encoder needs at least one layer")
        return self

    @classmethod
    def tiny(cls, variant: str = "full") -> "ModelConfig":
        """Shrunken widths for gradient checks and fast tests."""
        return cls(
            latent_size=4,
            encoder_widths=(8, 8),
            decoder_widths=(8,),
            target_layers=(3, 4, 4, 3),
            variant=variant,
        )


class StepScheduler(BaseModel):
    kind: Literal["step"] = "step"
    step: int = Field(STEP_LR_STEP, ge=1)
    gamma: float = Field(STEP_LR_GAMMA, gt=0)


class TrainConfig(BaseModel):
    """
    Training hyperparameters.

    ``lambda_`` is read from the ``lambda`` key of JSON config files.
    With ``variant="rec"`` the KL weight is ignored.
    """

    lambda_: float = Field(0.001, ge=0, alias="lambda")
    epochs: int = Field(200, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(ADAM_LR, gt=0)
    scheduler: Optional[StepScheduler] = None
    noise_ramp_epochs: int = Field(NOISE_RAMP_EPOCHS, ge=0)
    points_per_cloud: int = Field(2048, ge=1)
    val_points: int = Field(EVAL_POINTS, ge=1)
    seed: int = 0
    variant: Literal["full", "rec"] = "full"
    augment_rotation: bool = False
    threads: int = Field(DEFAULT_THREADS, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)

    model_config = {"populate_by_name": True}

    @property
    def kl_weight(self) -> float:
        return 0.0 if self.variant == "rec" else self.lambda_


class FamilyCount(BaseModel):
    train: int = Field(120, ge=1)
    val: int = Field(20, ge=1)
    test: int = Field(20, ge=1)


class CorpusConfig(BaseModel):
    families: Dict[str, FamilyCount] = Field(
        default_factory=lambda: {
            name: FamilyCount()
            for name in (
                "box_lid",
                "cylinder_lamp",
                "chair",
                "table",
                "plane",
            )
        }
    )
    n_points: int = Field(2048, ge=2)
    planes_per_sample: int = Field(4, ge=1)
    test_axis: Literal["x", "y", "z"] = "x"
    seed: int = 0


class AdaptConfig(BaseModel):
    steps: int = Field(200, ge=0)
    lr: float = Field(0.01, gt=0)
    restarts: int = Field(5, ge=1)
    consistency_weight: float = Field(1.0, ge=0)
    constraint_weight: float = Field(1.0, ge=0)
    n_points: int = Field(EVAL_POINTS, ge=1)
    sigma: float = Field(DEFAULT_SIGMA, gt=0)


ConfigModel = Union[TrainConfig, CorpusConfig, AdaptConfig]


def load_config(path: Optional[Union[str, Path]], kind, **overrides):
    """
    Load a JSON config file into the pydantic model ``kind``.

    Keyword overrides that are not None replace file values. A missing
    path yields the model defaults plus overrides.

    Raises:
        ValueError: the file is not valid JSON or fails validation.
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid config {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return kind.model_validate(data)
    except ValidationError as exc:
        raise ValueError(str(exc)) from exc
