"""
Configuration Management

This module provides configuration management for the GOLD laboratory:
scene generation, the feature codec, disentangled slot attention, the
object-centric model, two-stage training, evaluation and logging.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .exceptions import InvalidArgumentError
from .utils import HashUtils

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_dsa", "no_glo")


@dataclass
class SceneConfig:
    """Configuration for the sprite scene generator."""

    canvas_size: int = 64
    num_prototypes: int = 10
    num_backgrounds: int = 2
    min_objects: int = 3
    max_objects: int = 6
    scale_min: float = 0.8
    scale_max: float = 1.3
    sprite_radius: float = 0.12  # fraction of the canvas at scale 1
    position_margin: float = 0.1
    allow_repeats: bool = True
    library_seed: int = 7
    dataset_seed: int = 0
    train_size: int = 500
    test_size: int = 100

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.canvas_size < 8:
            raise InvalidArgumentError("Canvas size must be at least 8 pixels")
        if self.num_prototypes < 1:
            raise InvalidArgumentError("Number of prototypes must be at least 1")
        if self.num_backgrounds < 1:
            raise InvalidArgumentError("Number of backgrounds must be at least 1")
        if not 0 <= self.min_objects <= self.max_objects:
            raise InvalidArgumentError("Object count range must satisfy 0 <= min <= max")
        if not 0 < self.scale_min <= self.scale_max:
            raise InvalidArgumentError("Scale range must satisfy 0 < scale_min <= scale_max")
        if not 0 <= self.position_margin < 0.5:
            raise InvalidArgumentError("Position margin must be in [0, 0.5)")
        if self.sprite_radius <= 0:
            raise InvalidArgumentError("Sprite radius must be positive")
        if not self.allow_repeats and self.max_objects > self.num_prototypes:
            raise InvalidArgumentError(
                "max_objects cannot exceed num_prototypes when repeats are forbidden"
            )
        if self.train_size < 0 or self.test_size < 0:
            raise InvalidArgumentError("Split sizes must be non-negative")


@dataclass
class CodecConfig:
    """Configuration for the image encoder-decoder."""

    image_size: int = 64
    image_width: Optional[int] = None  # defaults to image_size
    patch_size: int = 8
    feature_size: int = 64
    hidden_channels: int = 64
    encoder_blocks: int = 3

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.patch_size < 1:
            raise InvalidArgumentError("Patch size must be positive")
        if self.feature_size < 1 or self.hidden_channels < 1:
            raise InvalidArgumentError("Codec dimensions must be positive")
        if self.encoder_blocks < 1:
            raise InvalidArgumentError("Encoder needs at least one block")
        height, width = self.image_shape
        if height % self.patch_size or width % self.patch_size:
            raise InvalidArgumentError(
                f"Image size {height}x{width} is not divisible by patch size {self.patch_size}"
            )

    @property
    def image_shape(self) -> Tuple[int, int]:
        return self.image_size, self.image_width or self.image_size

    @property
    def grid_shape(self) -> Tuple[int, int]:
        height, width = self.image_shape
        return height // self.patch_size, width // self.patch_size

    @property
    def num_patches(self) -> int:
        rows, cols = self.grid_shape
        return rows * cols


@dataclass
class DsaConfig:
    """Configuration for disentangled slot attention."""

    num_slots: int = 7  # object slots; the background slot is extra
    num_prototypes: int = 10
    iterations: int = 3
    ext_size: int = 32
    int_size: int = 32
    glo_size: Optional[int] = None  # defaults to int_size
    key_size: Optional[int] = None  # defaults to int_size + ext_size
    epsilon: float = 1e-8
    pre_norm: bool = True

    def __post_init__(self):
        """Validate configuration after initialization."""
        for name in ("num_slots", "num_prototypes", "iterations", "ext_size", "int_size"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be at least 1")
        if self.glo_size is not None and self.glo_size < 1:
            raise InvalidArgumentError("glo_size must be at least 1")
        if self.key_size is not None and self.key_size < 1:
            raise InvalidArgumentError("key_size must be at least 1")
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be non-negative")

    @property
    def slot_size(self) -> int:
        return self.int_size + self.ext_size

    @property
    def bank_size(self) -> int:
        return self.glo_size or self.int_size

    @property
    def attention_size(self) -> int:
        return self.key_size or self.slot_size


@dataclass
class ModelConfig:
    """Configuration for the global object-centric model around the DSA."""

    bck_size: int = 4
    mlp_hidden_size: int = 128
    decoder_hidden_size: int = 128
    sigma_rec: float = 1.0 / math.sqrt(2.0)
    sigma_floor: float = 1e-4
    empty_mask_bias: float = -1e4

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.bck_size < 1:
            raise InvalidArgumentError("Background representation size must be at least 1")
        if self.mlp_hidden_size < 1 or self.decoder_hidden_size < 1:
            raise InvalidArgumentError("Hidden sizes must be positive")
        if self.sigma_rec <= 0:
            raise InvalidArgumentError("sigma_rec must be positive")
        if self.sigma_floor < 0:
            raise InvalidArgumentError("sigma_floor must be non-negative")


@dataclass
class TrainConfig:
    """Configuration for two-stage training."""

    codec_pretrain_steps: int = 1000
    stage1_steps: int = 20000
    stage2_steps: int = 5000
    batch_size: int = 8
    lr_gocl: float = 4e-4
    lr_codec: float = 3e-4
    warmup_steps: int = 1000
    decay_factor: float = 0.5
    decay_every: int = 10000
    tau_start: float = 1.0
    tau_end: float = 0.1
    lambda_feat: float = 1.0
    lambda_img: float = 1.0
    eta: float = 0.001
    seed: int = 0
    variant: str = "full"
    clip_grad: bool = True
    max_grad_norm: float = 1.0
    log_every: int = 100
    checkpoint_every: int = 0
    deterministic: bool = True
    device: str = "cpu"

    def __post_init__(self):
        """Validate configuration after initialization."""
        for name in (
            "codec_pretrain_steps", "stage1_steps", "stage2_steps",
            "warmup_steps", "checkpoint_every",
        ):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise InvalidArgumentError("Batch size must be at least 1")
        if self.decay_every < 1:
            raise InvalidArgumentError("decay_every must be at least 1")
        if self.log_every < 1:
            raise InvalidArgumentError("log_every must be at least 1")
        if self.lr_gocl < 0 or self.lr_codec < 0:
            raise InvalidArgumentError("Learning rates must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise InvalidArgumentError("decay_factor must be in (0, 1]")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise InvalidArgumentError("Gumbel temperatures must be positive")
        if self.lambda_feat < 0 or self.lambda_img < 0:
            raise InvalidArgumentError("Loss weights must be non-negative")
        if self.eta < 0:
            raise InvalidArgumentError("eta must be non-negative")
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"Unknown model variant: {self.variant}")
        if self.max_grad_norm <= 0:
            raise InvalidArgumentError("max_grad_norm must be positive")

    def loss_weights(self, stage: int) -> Tuple[float, float]:
        """
        Get the (lambda_feat, lambda_img) pair active in a training stage.

        Stage one fits features only, stage two fits images only.
        """
        if stage == 1:
            return self.lambda_feat, 0.0
        if stage == 2:
            return 0.0, self.lambda_img
        raise InvalidArgumentError(f"Unknown training stage: {stage}")


@dataclass
class EvalConfig:
    """Configuration for evaluation runs."""

    runs: int = 3
    seed: int = 0
    batch_size: int = 16
    iou_threshold: float = 0.1
    area_threshold: float = 0.01  # fraction of the image
    per_scene_matching: bool = False
    miou_include_background: bool = True
    tau: Optional[float] = None  # defaults to train.tau_end

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.runs < 1:
            raise InvalidArgumentError("At least one evaluation run is required")
        if self.batch_size < 1:
            raise InvalidArgumentError("Evaluation batch size must be at least 1")
        if not 0 <= self.iou_threshold <= 1:
            raise InvalidArgumentError("iou_threshold must be in [0, 1]")
        if not 0 <= self.area_threshold <= 1:
            raise InvalidArgumentError("area_threshold must be in [0, 1]")
        if self.tau is not None and self.tau <= 0:
            raise InvalidArgumentError("Evaluation temperature must be positive")


@dataclass
class LoggingConfig:
    """Configuration for logging settings."""

    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    date_format: str = "%Y-%m-%d %H:%M:%S"

    # File logging
    log_to_file: bool = False
    log_file: Optional[str] = None
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5

    # Console logging
    log_to_console: bool = True

    def __post_init__(self):
        """Validate configuration after initialization."""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if self.level.upper() not in valid_levels:
            raise InvalidArgumentError(f"Invalid log level: {self.level}")

        if self.log_to_file and not self.log_file:
            raise InvalidArgumentError("Log file path required when file logging is enabled")


_SECTIONS = {
    "scene": SceneConfig,
    "codec": CodecConfig,
    "dsa": DsaConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "logging": LoggingConfig,
}


@dataclass
class GoldConfig:
    """Main configuration class for the GOLD laboratory."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    dsa: DsaConfig = field(default_factory=DsaConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def __post_init__(self):
        """Validate cross-section constraints."""
        if self.codec.image_size != self.scene.canvas_size or (
            self.codec.image_width not in (None, self.scene.canvas_size)
        ):
            raise InvalidArgumentError(
                "codec.image_size must match scene.canvas_size "
                f"({self.codec.image_size} != {self.scene.canvas_size})"
            )
        if self.scene.max_objects > self.dsa.num_slots:
            logger.warning(
                "Scenes may hold %d objects but the model has only %d object slots",
                self.scene.max_objects, self.dsa.num_slots,
            )

    @classmethod
    def from_dict(cls, config_data: Dict[str, Any]) -> "GoldConfig":
        """
        Build a configuration from sectioned and/or flat key/value data.

        Args:
            config_data: Mapping of section names to field mappings, or of
                field names (mirroring the dataclass fields) to values

        Returns:
            Validated configuration instance

        Raises:
            InvalidArgumentError: If a key is unknown or ambiguous, or a value is invalid
        """
        sections: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}

        for key, value in config_data.items():
            if key in _SECTIONS and isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    _check_field(key, sub_key)
                    sections[key][sub_key] = sub_value
            else:
                section = _owning_section(key)
                sections[section][key] = value

        try:
            built = {name: _SECTIONS[name](**values) for name, values in sections.items()}
        except TypeError as e:
            raise InvalidArgumentError(f"Invalid configuration value: {e}")
        return cls(**built)

    @classmethod
    def from_env(cls) -> "GoldConfig":
        """
        Create configuration from environment variables.

        Returns:
            Configuration instance with values from environment
        """
        config = cls()

        config.logging.level = os.getenv("GOLD_LOG_LEVEL", config.logging.level).upper()
        log_file = os.getenv("GOLD_LOG_FILE")
        if log_file:
            config.logging.log_to_file = True
            config.logging.log_file = log_file
        config.train.device = os.getenv("GOLD_DEVICE", config.train.device)
        if os.getenv("GOLD_SEED") is not None:
            config.train.seed = int(os.environ["GOLD_SEED"])

        return config.validated()

    @classmethod
    def from_file(cls, config_path: Union[str, Path]) -> "GoldConfig":
        """
        Load configuration from a JSON file.

        Args:
            config_path: Path to configuration file

        Returns:
            Configuration instance

        Raises:
            FileNotFoundError: If config file doesn't exist
            InvalidArgumentError: If config file is invalid
        """
        config_path = Path(config_path)

        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"Invalid JSON in configuration file: {e}")

        if not isinstance(config_data, dict):
            raise InvalidArgumentError("Configuration file must hold a JSON object")

        return cls.from_dict(config_data)

    def apply_overrides(self, overrides: Iterable[str]) -> "GoldConfig":
        """
        Apply ``key=value`` overrides, as given on the command line.

        Keys are either flat field names or ``section.field``. Values are
        parsed as JSON when possible and kept as strings otherwise.

        Returns:
            New validated configuration instance
        """
        data = self.to_dict()
        for override in overrides:
            if "=" not in override:
                raise InvalidArgumentError(f"Override must look like key=value: {override!r}")
            key, raw_value = override.split("=", 1)
            key = key.strip()
            try:
                value = json.loads(raw_value)
            except json.JSONDecodeError:
                value = raw_value

            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise InvalidArgumentError(f"Unknown configuration section: {section}")
                _check_field(section, name)
            else:
                section, name = _owning_section(key), key
            data[section][name] = value

        return GoldConfig.from_dict(data)

    def validated(self) -> "GoldConfig":
        """Re-run every section's validation after in-place edits."""
        return GoldConfig.from_dict(self.to_dict())

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert configuration to dictionary.

        Returns:
            Configuration as dictionary
        """
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def config_hash(self) -> str:
        """Stable hash of every setting that affects data, models or results."""
        data = self.to_dict()
        data.pop("logging")
        data["eval"].pop("runs")
        data["train"].pop("device")
        return HashUtils.stable_hash(data)

    def save_to_file(self, config_path: Union[str, Path]) -> None:
        """
        Save configuration to a JSON file.

        Args:
            config_path: Path to save configuration file
        """
        config_path = Path(config_path)
        config_path.parent.mkdir(parents=True, exist_ok=True)

        with open(config_path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)

    def setup_logging(self) -> None:
        """Configure logging based on the logging configuration."""
        logger = logging.getLogger("gold_ocl")
        logger.setLevel(getattr(logging, self.logging.level.upper()))

        # Clear existing handlers
        logger.handlers.clear()

        formatter = logging.Formatter(
            self.logging.format,
            datefmt=self.logging.date_format
        )

        if self.logging.log_to_console:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(formatter)
            logger.addHandler(console_handler)

        if self.logging.log_to_file and self.logging.log_file:
            from logging.handlers import RotatingFileHandler

            log_path = Path(self.logging.log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)

            file_handler = RotatingFileHandler(
                self.logging.log_file,
                maxBytes=self.logging.max_file_size,
                backupCount=self.logging.backup_count
            )
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)


def _section_fields(section: str) -> List[str]:
    return [f.name for f in fields(_SECTIONS[section])]


def _check_field(section: str, name: str) -> None:
    if name not in _section_fields(section):
        raise InvalidArgumentError(f"Unknown configuration key: {section}.{name}")


def _owning_section(key: str) -> str:
    owners = [name for name in _SECTIONS if key in _section_fields(name)]
    if not owners:
        raise InvalidArgumentError(f"Unknown configuration key: {key}")
    if len(owners) > 1:
        raise InvalidArgumentError(
            f"Ambiguous configuration key {key!r}; use one of "
            + ", ".join(f"{owner}.{key}" for owner in owners)
        )
    return owners[0]


# Global configuration instance
_global_config: Optional[GoldConfig] = None


def get_config() -> GoldConfig:
    """
    Get the global configuration instance.

    Returns:
        Global configuration instance
    """
    global _global_config
    if _global_config is None:
        _global_config = GoldConfig.from_env()
    return _global_config


def set_config(config: GoldConfig) -> None:
    """
    Set the global configuration instance.

    Args:
        config: Configuration instance to set as global
    """
    global _global_config
    _global_config = config


def load_config_from_file(config_path: Union[str, Path]) -> GoldConfig:
    """
    Load configuration from file and set as global.

    Args:
        config_path: Path to configuration file

    Returns:
        Loaded configuration instance
    """
    config = GoldConfig.from_file(config_path)
    set_config(config)
    return config
