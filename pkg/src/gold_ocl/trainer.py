"""
Two-Stage Training

Stage one fits the object-centric model to frozen patch features; stage two
fits the image decoder to render the composed features. An optional
warm-start stage trains the codec as an autoencoder beforehand. Learning
rates follow a linear warmup with stepwise exponential decay and the
Gumbel-Softmax temperature follows a cosine annealing schedule.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import torch
from torch import nn
from torch.optim import Adam
from torch.optim.lr_scheduler import LambdaLR
from torch.utils.data import DataLoader

from .config import GoldConfig, TrainConfig
from .exceptions import InvalidArgumentError, LoadError, NonFiniteLossError
from .featurecodec import image_loss
from .model import GoldModel, build_model
from .models import CheckpointManifest
from .scenegen import SceneDataset, SceneSample
from .utils import HashUtils, LoggingUtils

logger = logging.getLogger(__name__)

TERM_NAMES = ("recon", "kl_bck", "kl_ext", "kl_id", "reg_bck", "elbo", "image", "total")
STAGE_KEYS = {0: "codec", 1: "stage1", 2: "stage2"}


def total_loss(feat_loss, img_loss, lambda_feat: float, lambda_img: float):
    """Stage-weighted sum of the feature and image losses."""
    return lambda_feat * feat_loss + lambda_img * img_loss


def lr_factor(step: int, config: TrainConfig) -> float:
    """Multiplier of the base learning rate at ``step``."""
    if step < 0:
        raise InvalidArgumentError(f"Step must be non-negative, got {step}")
    warmup = 1.0 if config.warmup_steps == 0 else min(step / config.warmup_steps, 1.0)
    return warmup * config.decay_factor ** (step // config.decay_every)


def lr_schedule(step: int, base: float, config: TrainConfig) -> float:
    """
    Learning rate with linear warmup and stepwise exponential decay.

    rate = base * min(step / warmup, 1) * decay_factor ** floor(step / decay_every)
    """
    return base * lr_factor(step, config)


def temperature_schedule(step: int, config: TrainConfig) -> float:
    """Cosine annealing from tau_start to tau_end over stage one; tau_end afterwards."""
    if config.stage1_steps == 0 or step >= config.stage1_steps:
        return config.tau_end
    progress = max(step, 0) / config.stage1_steps
    return config.tau_end + 0.5 * (config.tau_start - config.tau_end) * (1.0 + math.cos(math.pi * progress))


class WarmupExponentialScheduler(LambdaLR):
    """LambdaLR driving ``lr_schedule`` for one parameter group."""

    def __init__(self, optimizer: torch.optim.Optimizer, config: TrainConfig, last_epoch: int = -1):
        self.train_config = config
        super().__init__(optimizer=optimizer, lr_lambda=self.scale_lr, last_epoch=last_epoch)

    def scale_lr(self, step: int) -> float:
        return lr_factor(step, self.train_config)

    def state_dict(self) -> Dict[str, Any]:
        state = super().state_dict()
        state.pop("train_config", None)
        return state


@dataclass
class MetricLog:
    """Per-step loss terms, written as comma-separated rows."""

    rows: List[Dict[str, Any]] = field(default_factory=list)

    def append(self, step: int, stage: int, lr: float, tau: float, terms: Dict[str, float]) -> None:
        row = {"step": step, "stage": stage, "lr": lr, "tau": tau}
        row.update({name: terms.get(name, "") for name in TERM_NAMES})
        self.rows.append(row)

    def stage_rows(self, stage: int) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row["stage"] == stage]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=["step", "stage", "lr", "tau", *TERM_NAMES])
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buffer.getvalue()

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8")


def _batches(loader: DataLoader) -> Iterator[Dict[str, torch.Tensor]]:
    while True:
        yield from loader


class Trainer:
    """
    Runs the training stages of one model variant.

    Each stage owns its optimizer and learning-rate scheduler; only the
    parameters of the active stage receive updates.
    """

    def __init__(self, config: GoldConfig, model: Optional[GoldModel] = None, variant: Optional[str] = None):
        self.config = config
        self.train_config = config.train
        self.device = torch.device(self.train_config.device)
        self.model = (model or build_model(config, variant)).to(self.device)
        self.variant = self.model.variant

        if self.train_config.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)

        self.noise_generator = torch.Generator(device=self.device).manual_seed(self.train_config.seed)
        self.data_generator = torch.Generator().manual_seed(self.train_config.seed)

        codec = self.model.codec
        self.optimizers = {
            0: Adam(codec.parameters(), lr=self.train_config.lr_codec),
            1: Adam(self.model.gocl_parameters(), lr=self.train_config.lr_gocl),
            2: Adam(codec.decoder_parameters(), lr=self.train_config.lr_codec),
        }
        self.schedulers = {
            stage: WarmupExponentialScheduler(optimizer, self.train_config)
            for stage, optimizer in self.optimizers.items()
        }
        self.steps = {key: 0 for key in STAGE_KEYS.values()}
        self.metrics = MetricLog()

    def _loader(self, samples: Sequence[SceneSample]) -> Iterator[Dict[str, torch.Tensor]]:
        if not samples:
            raise InvalidArgumentError("Training needs a non-empty dataset")
        loader = DataLoader(
            SceneDataset(samples),
            batch_size=self.train_config.batch_size,
            shuffle=True,
            generator=self.data_generator,
            num_workers=0,
        )
        return _batches(loader)

    def _step(self, stage: int, loss: torch.Tensor, terms: Dict[str, torch.Tensor], tau: float) -> None:
        step = self.steps[STAGE_KEYS[stage]]
        values = {name: float(value.detach()) for name, value in terms.items()}
        if not math.isfinite(float(loss.detach())):
            raise NonFiniteLossError(step, stage, values)

        optimizer = self.optimizers[stage]
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.train_config.clip_grad:
            params = [p for group in optimizer.param_groups for p in group["params"]]
            nn.utils.clip_grad_norm_(params, self.train_config.max_grad_norm)
        lr = optimizer.param_groups[0]["lr"]
        optimizer.step()
        self.schedulers[stage].step()

        self.metrics.append(step, stage, lr, tau, values)
        self.steps[STAGE_KEYS[stage]] = step + 1
        if step % self.train_config.log_every == 0:
            breakdown = " ".join(f"{k}={v:.4f}" for k, v in values.items())
            logger.info(f"stage {stage} step {step} lr={lr:.3g} tau={tau:.3f} {breakdown}")

    def pretrain_codec(self, samples: Sequence[SceneSample], until: Optional[int] = None) -> None:
        """
        Warm-start the codec as an autoencoder, then freeze the encoder.

        Encoder and decoder weights both move here. Only the encoder stays frozen
        afterwards; stage two keeps training the decoder from this warm start.
        """
        target = self.train_config.codec_pretrain_steps if until is None else until
        batches = self._loader(samples)
        self.model.codec.train()
        while self.steps["codec"] < target:
            images = next(batches)["image"].to(self.device)
            reconstruction = self.model.codec.reconstruct(images)
            terms = {"image": reconstruction.loss, "total": reconstruction.loss}
            self._step(0, reconstruction.loss, terms, float("nan"))
        self.freeze_encoder()

    def freeze_encoder(self) -> None:
        for param in self.model.codec.encoder_parameters():
            param.requires_grad_(False)

    def run_stage_one(self, samples: Sequence[SceneSample], until: Optional[int] = None) -> None:
        """Fit the object-centric model to patch features."""
        target = self.train_config.stage1_steps if until is None else until
        self.freeze_encoder()
        batches = self._loader(samples)
        lambda_feat, lambda_img = self.train_config.loss_weights(1)
        self.model.gocl.train()
        while self.steps["stage1"] < target:
            tau = temperature_schedule(self.steps["stage1"], self.train_config)
            images = next(batches)["image"].to(self.device)
            features = self.model.encode(images).features
            output = self.model.gocl(features, tau, self.noise_generator)
            feat_loss, terms = self.model.gocl.loss(features, output, self.train_config.eta)
            loss = total_loss(feat_loss, 0.0, lambda_feat, lambda_img)
            terms = dict(terms, total=loss)
            self._step(1, loss, terms, tau)

    def run_stage_two(self, samples: Sequence[SceneSample], until: Optional[int] = None) -> None:
        """Fit the image decoder to render composed patch features."""
        target = self.train_config.stage2_steps if until is None else until
        self.freeze_encoder()
        batches = self._loader(samples)
        lambda_feat, lambda_img = self.train_config.loss_weights(2)
        tau = self.train_config.tau_end
        self.model.gocl.eval()
        self.model.codec.train()
        while self.steps["stage2"] < target:
            images = next(batches)["image"].to(self.device)
            with torch.no_grad():
                features = self.model.encode(images).features
                o_img = self.model.gocl(features, tau, self.noise_generator).components.o_img
            x_hat = self.model.render(o_img.detach())
            img_loss = image_loss(images, x_hat)
            loss = total_loss(0.0, img_loss, lambda_feat, lambda_img)
            self._step(2, loss, {"image": img_loss, "total": loss}, tau)

    @LoggingUtils.log_duration(logger)
    def train(self, samples: Sequence[SceneSample], checkpoint_dir: Union[str, Path, None] = None) -> MetricLog:
        """
        Run every stage in order.

        Args:
            samples: Training scenes
            checkpoint_dir: Where to write the final (and periodic) checkpoints

        Returns:
            Per-step metric log
        """
        logger.info(
            f"Training {self.variant} on {len(samples)} scenes: "
            f"{self.train_config.codec_pretrain_steps} warm-start, "
            f"{self.train_config.stage1_steps} stage-one, {self.train_config.stage2_steps} stage-two steps"
        )
        self.pretrain_codec(samples)
        self._run_with_checkpoints(self.run_stage_one, samples, "stage1", checkpoint_dir)
        self._run_with_checkpoints(self.run_stage_two, samples, "stage2", checkpoint_dir)
        if checkpoint_dir is not None:
            self.save_checkpoint(checkpoint_dir)
            self.metrics.save(Path(checkpoint_dir) / "metrics.csv")
        self.model.eval()
        return self.metrics

    def _run_with_checkpoints(self, run, samples, key: str, checkpoint_dir) -> None:
        every = self.train_config.checkpoint_every
        target = getattr(self.train_config, f"{key}_steps")
        if not every or checkpoint_dir is None:
            run(samples)
            return
        while self.steps[key] < target:
            run(samples, until=min(self.steps[key] + every, target))
            self.save_checkpoint(Path(checkpoint_dir) / f"{key}_{self.steps[key]:06d}")

    def state(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "config": json.dumps(self.config.to_dict(), sort_keys=True),
            "config_hash": self.config.config_hash(),
            "model": self.model.state_dict(),
            "optimizers": {str(k): opt.state_dict() for k, opt in self.optimizers.items()},
            "schedulers": {str(k): sched.state_dict() for k, sched in self.schedulers.items()},
            "steps": dict(self.steps),
            "rng": {
                "noise": self.noise_generator.get_state(),
                "data": self.data_generator.get_state(),
            },
        }

    def save_checkpoint(self, directory: Union[str, Path]) -> CheckpointManifest:
        """
        Write ``model.pt`` and ``manifest.json`` to a directory.

        Returns:
            The written manifest
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        buffer = io.BytesIO()
        torch.save(self.state(), buffer)
        blob = buffer.getvalue()
        (directory / "model.pt").write_bytes(blob)

        codec = self.config.codec
        manifest = CheckpointManifest(
            variant=self.variant,
            config_hash=self.config.config_hash(),
            image_shape=codec.image_shape,
            patch_size=codec.patch_size,
            num_patches=codec.num_patches,
            feature_size=codec.feature_size,
            num_slots=self.config.dsa.num_slots,
            num_prototypes=self.config.dsa.num_prototypes,
            steps=dict(self.steps),
            blob_hash=HashUtils.file_hash(directory / "model.pt"),
        )
        (directory / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Saved checkpoint to {directory}")
        return manifest

    def load_state(self, state: Dict[str, Any]) -> None:
        self.model.load_state_dict(state["model"])
        for key, optimizer in self.optimizers.items():
            optimizer.load_state_dict(state["optimizers"][str(key)])
        for key, scheduler in self.schedulers.items():
            scheduler.load_state_dict(state["schedulers"][str(key)])
        self.steps = dict(state["steps"])
        self.noise_generator.set_state(state["rng"]["noise"])
        self.data_generator.set_state(state["rng"]["data"])
        if self.steps["codec"] > 0 or self.steps["stage1"] > 0:
            self.freeze_encoder()

    def load_checkpoint(self, directory: Union[str, Path]) -> None:
        """
        Resume from a checkpoint written with the same configuration.

        Raises:
            LoadError: If the checkpoint is missing or unreadable
            InvalidArgumentError: If it was written by another configuration or variant
        """
        state = read_checkpoint(directory)
        if state["config_hash"] != self.config.config_hash() or state["variant"] != self.variant:
            raise InvalidArgumentError(
                f"Checkpoint {directory} was written by a different configuration or variant"
            )
        self.load_state(state)
        logger.info(f"Resumed from {directory} (steps {self.steps})")

    @classmethod
    def from_checkpoint(cls, directory: Union[str, Path], device: Optional[str] = None) -> "Trainer":
        """
        Restore a trainer, including optimizer and RNG state, from a checkpoint.

        Raises:
            LoadError: If the checkpoint is missing or unreadable
        """
        state = read_checkpoint(directory)
        config_data = json.loads(state["config"])
        if device is not None:
            config_data["train"]["device"] = device
        config = GoldConfig.from_dict(config_data)
        trainer = cls(config, variant=state["variant"])
        trainer.load_state(state)
        logger.info(f"Loaded checkpoint from {directory} (steps {trainer.steps})")
        return trainer


def read_checkpoint(directory: Union[str, Path]) -> Dict[str, Any]:
    """
    Read the raw state of a checkpoint directory.

    Raises:
        LoadError: If ``model.pt`` is missing or unreadable
    """
    path = Path(directory) / "model.pt"
    if not path.exists():
        raise LoadError("Checkpoint not found", path=path)
    try:
        return torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise LoadError(f"Unreadable checkpoint: {e}", path=path)


def train(
    samples: Sequence[SceneSample],
    config: GoldConfig,
    variant: Optional[str] = None,
    checkpoint_dir: Union[str, Path, None] = None,
) -> Trainer:
    """Build a model variant and run the full training schedule on ``samples``."""
    trainer = Trainer(config, variant=variant)
    trainer.train(samples, checkpoint_dir)
    return trainer
