"""
Run configuration models.

Every section of a run is a pydantic model with defaults for every field;
unknown keys are rejected so a typo in a config file fails loudly instead of
being ignored.
"""
import os
import sys
import json
import hashlib
import logging
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from config import (
    BUFFER_SECONDS,
    CLIP_SECONDS,
    DEFAULT_CLIP_DIM,
    DEFAULT_HARMONIC_ORDER,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    LAG_SECONDS,
    OUT_DIR,
    PATCH_LEVEL_GAP,
    SEED_ENV_VAR,
)
from surfalign.errors import ConfigError

logger = logging.getLogger(__name__)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True, frozen=False)


class Regime(str, Enum):
    FROZEN = "frozen"
    SCRATCH = "scratch"
    FINETUNE = "finetune"


class Modalities(str, Enum):
    FV = "fV"
    FA = "fA"
    FVA = "fVA"

    @property
    def members(self) -> Tuple[str, ...]:
        return {"fV": ("f", "V"), "fA": ("f", "A"), "fVA": ("f", "V", "A")}[self.value]


class Experiment(str, Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"


class Direction(str, Enum):
    F_TO_V = "f->V"
    F_TO_A = "f->A"
    V_TO_F = "V->f"
    A_TO_F = "A->f"

    @property
    def query(self) -> str:
        return self.value.split("->")[0]

    @property
    def target(self) -> str:
        return self.value.split("->")[1]


class SamplingMode(str, Enum):
    SOFT = "soft"
    HARD = "hard"


class WorldConfig(StrictModel):
    """Synthetic movie-watching world."""

    num_subjects: int = Field(8, ge=1)
    num_movies: int = Field(4, ge=1)
    clips_per_movie: int = Field(50, ge=1)
    clip_seconds: int = Field(CLIP_SECONDS, ge=1)
    frames_per_clip_video: int = Field(16, ge=1)
    frames_per_clip_fmri: int = Field(3, ge=1)
    lag_seconds: int = Field(LAG_SECONDS, ge=0)
    # frames recorded after the last clip ends, so lag scans can look ahead
    tail_seconds: int = Field(12, ge=0)
    mesh_level: int = Field(4, ge=0, le=8)
    concept_dim: int = Field(12, ge=1)
    harmonic_order: int = Field(DEFAULT_HARMONIC_ORDER, ge=0)
    video_tokens: int = Field(8, ge=1)
    video_dim: int = Field(32, ge=1)
    audio_tokens: int = Field(10, ge=1)
    audio_dim: int = Field(24, ge=1)
    movie_concept_share: float = Field(0.3, ge=0.0, le=1.0)
    subject_gain_std: float = Field(0.1, ge=0.0)
    field_noise_std: float = Field(0.5, ge=0.0)
    white_noise_std: float = Field(0.0, ge=0.0)
    video_noise_std: float = Field(0.1, ge=0.0)
    audio_noise_std: float = Field(0.3, ge=0.0)
    seed: int = DEFAULT_SEED

    @model_validator(mode="after")
    def _check_window(self):
        if self.frames_per_clip_fmri > self.clip_seconds + self.tail_seconds + self.lag_seconds:
            raise ValueError("frames_per_clip_fmri does not fit in the recorded series")
        return self

    @property
    def series_seconds(self) -> int:
        return self.clips_per_movie * self.clip_seconds + self.lag_seconds + self.tail_seconds

    @property
    def num_triplets(self) -> int:
        return self.num_subjects * self.num_movies * self.clips_per_movie


class SitConfig(StrictModel):
    """Surface vision transformer dimensions."""

    num_layers: int = Field(4, ge=0)
    num_heads: int = Field(4, ge=1)
    hidden_dim: int = Field(64, ge=1)
    mlp_dim: int = Field(128, ge=1)
    num_patches: int = Field(80, ge=1)
    frames_per_window: int = Field(3, ge=1)
    patch_vertex_count: int = Field(45, ge=1)
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0)
    use_cls: bool = True
    decoder_layers: int = Field(2, ge=0)

    @model_validator(mode="after")
    def _check_heads(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        if self.hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even for sine-cosine positional embeddings")
        return self

    @property
    def input_dim(self) -> int:
        return self.patch_vertex_count * self.frames_per_window

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def sequence_length(self) -> int:
        return self.num_patches + (1 if self.use_cls else 0)

    @classmethod
    def full_scale(cls) -> "SitConfig":
        """DeiT-small sized encoder on I6/I3 patches with a 6-layer decoder."""
        return cls(num_layers=12, num_heads=6, hidden_dim=384, mlp_dim=768,
                   num_patches=1280, frames_per_window=3, patch_vertex_count=45,
                   decoder_layers=6)


class MapperConfig(StrictModel):
    clip_dim: int = Field(DEFAULT_CLIP_DIM, ge=1)
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0)


class PretrainSchedule(StrictModel):
    iterations: int = Field(2000, ge=1)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(3e-4, gt=0.0)
    lr_min: float = Field(1e-6, ge=0.0)
    weight_decay: float = Field(0.05, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.95)
    masking_ratio: float = Field(0.5, gt=0.0, lt=1.0)
    log_every: int = Field(50, ge=1)
    val_every: int = Field(250, ge=1)
    val_windows: int = Field(64, ge=1)


class AlignSchedule(StrictModel):
    iterations: int = Field(1500, ge=1)
    batch_size: int = Field(32, ge=2)
    lr: float = Field(3e-4, gt=0.0)
    lr_min: float = Field(1e-6, ge=0.0)
    weight_decay: float = Field(0.05, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    temperature: float = Field(DEFAULT_TEMPERATURE, gt=0.0)
    regime: Regime = Regime.FINETUNE
    modalities: Modalities = Modalities.FVA
    experiment: Experiment = Experiment.E1
    log_every: int = Field(50, ge=1)
    val_every: int = Field(250, ge=1)


class RetrievalTask(StrictModel):
    direction: Direction = Direction.F_TO_V
    M: int = Field(64, ge=2)
    mode: SamplingMode = SamplingMode.SOFT
    buffer_seconds: float = Field(BUFFER_SECONDS, ge=0.0)
    trials: int = Field(1000, ge=1)
    ks: List[int] = Field(default_factory=lambda: [1, 5, 10])

    @field_validator("ks")
    @classmethod
    def _positive_ks(cls, value):
        if not value or any(k < 1 for k in value):
            raise ValueError("ks must be a non-empty list of positive integers")
        return sorted(set(value))


def _default_tasks() -> List[RetrievalTask]:
    return [
        RetrievalTask(direction=Direction.F_TO_V, M=64, mode=SamplingMode.SOFT),
        RetrievalTask(direction=Direction.F_TO_A, M=32, mode=SamplingMode.SOFT),
        RetrievalTask(direction=Direction.F_TO_V, M=32, mode=SamplingMode.HARD),
        RetrievalTask(direction=Direction.V_TO_F, M=64, mode=SamplingMode.SOFT),
    ]


class EvalConfig(StrictModel):
    experiment: Experiment = Experiment.E1
    tasks: List[RetrievalTask] = Field(default_factory=_default_tasks)
    eval_seeds: int = Field(10, ge=1)
    ridge_lambdas: List[float] = Field(default_factory=lambda: [1e-1, 1.0, 10.0, 100.0, 1e3, 1e4])
    run_ridge: bool = True
    run_random: bool = True

    @field_validator("ridge_lambdas")
    @classmethod
    def _non_negative(cls, value):
        if not value or any(lam < 0 for lam in value):
            raise ValueError("ridge_lambdas must be non-empty and non-negative")
        return value


class LagConfig(StrictModel):
    lags: List[int] = Field(default_factory=lambda: [1, 3, 6, 10])
    ridge_lambda: float = Field(10.0, ge=0.0)
    holdout_movie: int = -1
    alpha: float = Field(0.05, gt=0.0, lt=1.0)


class RunConfig(StrictModel):
    """Fully resolved configuration of one pipeline run."""

    seed: int = DEFAULT_SEED
    output_dir: str = OUT_DIR
    threads: Optional[int] = Field(None, ge=1)
    deterministic: bool = True
    patch_level_gap: int = Field(PATCH_LEVEL_GAP, ge=1)
    world: WorldConfig = Field(default_factory=WorldConfig)
    model: SitConfig = Field(default_factory=SitConfig)
    mapper: MapperConfig = Field(default_factory=MapperConfig)
    pretrain: PretrainSchedule = Field(default_factory=PretrainSchedule)
    align: AlignSchedule = Field(default_factory=AlignSchedule)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    lag: LagConfig = Field(default_factory=LagConfig)

    @model_validator(mode="after")
    def _check_consistency(self):
        coarse = self.world.mesh_level - self.patch_level_gap
        if coarse < 0:
            raise ValueError(
                f"mesh_level {self.world.mesh_level} is too coarse for a patch level gap of {self.patch_level_gap}")
        n = 2 ** self.patch_level_gap
        if self.model.num_patches != 20 * 4 ** coarse:
            raise ValueError(f"model.num_patches must be {20 * 4 ** coarse} for coarse level {coarse}")
        if self.model.patch_vertex_count != (n + 1) * (n + 2) // 2:
            raise ValueError(f"model.patch_vertex_count must be {(n + 1) * (n + 2) // 2}")
        if self.model.frames_per_window != self.world.frames_per_clip_fmri:
            raise ValueError("model.frames_per_window must equal world.frames_per_clip_fmri")
        return self

    @property
    def coarse_level(self) -> int:
        return self.world.mesh_level - self.patch_level_gap


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve a run configuration.

    Args:
        path (str, optional): JSON config file
        overrides (dict, optional): nested overrides applied after the file

    Returns:
        RunConfig: validated configuration; ``SIM_SEED`` in the environment
        overrides the master seed
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a JSON object")
        logger.info(f"Loaded config from {path}")
    if overrides:
        data = _deep_merge(data, overrides)

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            data["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={env_seed!r} is not an integer")
        logger.info(f"Master seed overridden by {SEED_ENV_VAR}={env_seed}")

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}")


def _digest(data: Any) -> str:
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_hash(config: BaseModel) -> str:
    """
    SHA-256 of the canonical JSON dump of a config model.

    Output location and thread count do not change results, so they are left
    out of the hash of a RunConfig.
    """
    exclude = {"output_dir", "threads"} if isinstance(config, RunConfig) else None
    return _digest(config.model_dump(mode="json", exclude=exclude))


def architecture_hash(config: RunConfig) -> str:
    """Hash of the settings a checkpoint's tensors depend on."""
    return _digest({
        "model": config.model.model_dump(mode="json"),
        "mapper": config.mapper.model_dump(mode="json"),
        "patch_level_gap": config.patch_level_gap,
        "mesh_level": config.world.mesh_level,
        "video": [config.world.video_tokens, config.world.video_dim],
        "audio": [config.world.audio_tokens, config.world.audio_dim],
    })
