"""
Image Encoder-Decoder

Trainable stand-ins for the frozen patch-feature extractor and the image
renderer: a convolutional patch encoder mapping images to position-aware
patch features, and an upsampling decoder mapping patch features back to
images.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import CodecConfig
from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)


def sinusoidal_position_encoding(rows: int, cols: int, dim: int) -> torch.Tensor:
    """
    Fixed 2D sinusoidal encoding of a patch grid.

    The first half of the channels encodes the row, the second half the
    column, each as interleaved sine and cosine blocks. Channels left over
    when ``dim`` is not a multiple of 4 are zero.

    Returns:
        (rows*cols, dim) tensor in row-major patch order
    """
    quarter = dim // 4
    encoding = torch.zeros(rows, cols, dim)
    if quarter == 0:
        return encoding.reshape(rows * cols, dim)

    freqs = 1.0 / (10000.0 ** (torch.arange(quarter, dtype=torch.float32) / quarter))
    row_angles = torch.arange(rows, dtype=torch.float32)[:, None] * freqs
    col_angles = torch.arange(cols, dtype=torch.float32)[:, None] * freqs
    row_enc = torch.cat([row_angles.sin(), row_angles.cos()], dim=-1)
    col_enc = torch.cat([col_angles.sin(), col_angles.cos()], dim=-1)

    encoding[:, :, : 2 * quarter] = row_enc[:, None, :]
    encoding[:, :, 2 * quarter: 4 * quarter] = col_enc[None, :, :]
    return encoding.reshape(rows * cols, dim)


@dataclass
class PatchFeatureMap:
    """Patch features of a batch of images."""

    features: torch.Tensor  # B×N×D_img
    grid_shape: Tuple[int, int]
    source_image_size: Tuple[int, int]

    @property
    def num_patches(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]


@dataclass
class ImageReconstruction:
    """Decoded images and their loss against the source, when known."""

    image: torch.Tensor  # B×3×H×W, unclamped
    loss: torch.Tensor


def image_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """
    Mean squared error between an image and its reconstruction.

    Raises:
        InvalidArgumentError: If the shapes differ
    """
    if x.shape != x_hat.shape:
        raise InvalidArgumentError(
            f"Image shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}"
        )
    return F.mse_loss(x_hat, x)


def export_image(x_hat: torch.Tensor) -> np.ndarray:
    """
    Clamp decoded images to [0, 1] and quantize them to 8 bits.

    Args:
        x_hat: 3×H×W or B×3×H×W tensor

    Returns:
        H×W×3 or B×H×W×3 uint8 array
    """
    pixels = x_hat.detach().to("cpu", torch.float64).clamp(0.0, 1.0)
    pixels = torch.round(pixels * 255.0).to(torch.uint8)
    return pixels.movedim(-3, -1).numpy()


class FeatureCodec(nn.Module):
    """Convolutional patch encoder plus upsampling patch decoder."""

    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        self.image_shape = config.image_shape
        self.grid_shape = config.grid_shape
        self.patch_size = config.patch_size
        self.feature_size = config.feature_size
        hidden = config.hidden_channels

        blocks = []
        in_channels = 3
        for _ in range(config.encoder_blocks):
            blocks += [nn.Conv2d(in_channels, hidden, 3, padding=1), nn.ReLU()]
            in_channels = hidden
        blocks.append(nn.Conv2d(hidden, config.feature_size, config.patch_size, stride=config.patch_size))
        self.encoder = nn.Sequential(*blocks)

        rows, cols = self.grid_shape
        self.register_buffer(
            "position",
            sinusoidal_position_encoding(rows, cols, config.feature_size),
            persistent=False,
        )

        self.patch_mlp = nn.Sequential(
            nn.Linear(config.feature_size, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
        )
        self.upsample = nn.Sequential(
            nn.ConvTranspose2d(hidden, hidden, config.patch_size, stride=config.patch_size),
            nn.ReLU(),
            nn.Conv2d(hidden, 3, 3, padding=1),
        )

    def encoder_parameters(self):
        return self.encoder.parameters()

    def decoder_parameters(self):
        return list(self.patch_mlp.parameters()) + list(self.upsample.parameters())

    def encode_image(self, image: torch.Tensor) -> PatchFeatureMap:
        """
        Encode images into position-aware patch features.

        Args:
            image: B×3×H×W tensor with values in [0, 1]

        Returns:
            Patch features of shape B×N×D_img

        Raises:
            InvalidArgumentError: If the image size is not the configured one
                or is not divisible by the patch size
        """
        if image.dim() != 4 or image.shape[1] != 3:
            raise InvalidArgumentError(f"Expected a B×3×H×W image batch, got {tuple(image.shape)}")
        height, width = image.shape[-2:]
        if height % self.patch_size or width % self.patch_size:
            raise InvalidArgumentError(
                f"Image size {height}x{width} is not divisible by patch size {self.patch_size}"
            )
        if (height, width) != tuple(self.image_shape):
            raise InvalidArgumentError(
                f"Image size {height}x{width} does not match the configured {self.image_shape}"
            )

        grid = self.encoder(image)
        features = grid.flatten(2).transpose(1, 2) + self.position.to(grid.dtype)
        return PatchFeatureMap(features, self.grid_shape, (height, width))

    def decode_patches(self, o_img: torch.Tensor) -> torch.Tensor:
        """
        Render patch features back to images.

        Args:
            o_img: B×N×D_img patch features

        Returns:
            B×3×H×W images, not clamped

        Raises:
            InvalidArgumentError: If N or D_img do not match the configuration
        """
        rows, cols = self.grid_shape
        if o_img.dim() != 3 or o_img.shape[1] != rows * cols or o_img.shape[2] != self.feature_size:
            raise InvalidArgumentError(
                f"Expected B×{rows * cols}×{self.feature_size} patch features, "
                f"got {tuple(o_img.shape)}"
            )
        hidden = self.patch_mlp(o_img)
        grid = hidden.transpose(1, 2).reshape(o_img.shape[0], -1, rows, cols)
        return self.upsample(grid)

    def reconstruct(self, image: torch.Tensor) -> ImageReconstruction:
        """Autoencode images, as in the codec warm-start."""
        x_hat = self.decode_patches(self.encode_image(image).features)
        return ImageReconstruction(x_hat, image_loss(image, x_hat))

    def forward(self, image: torch.Tensor) -> ImageReconstruction:
        return self.reconstruct(image)

