"""
GOLD model assembly.

Couples the image encoder-decoder with the object-centric model and builds
the three variants compared in ablations.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import nn

from .config import GoldConfig, VARIANTS
from .dsa import GlobalBank
from .exceptions import InvalidArgumentError
from .featurecodec import FeatureCodec, PatchFeatureMap
from .gocl import GlobalObjectCentric, GoclNoise, GoclOutput

logger = logging.getLogger(__name__)


@dataclass
class GoldOutput:
    """Patch features, the object-centric decomposition and the rendered image."""

    features: PatchFeatureMap
    gocl: GoclOutput
    image: Optional[torch.Tensor] = None


class GoldModel(nn.Module):
    """Feature codec plus global object-centric model."""

    def __init__(self, config: GoldConfig, variant: str = "full"):
        super().__init__()
        if variant not in VARIANTS:
            raise InvalidArgumentError(f"Unknown model variant: {variant}")
        self.variant = variant
        self.codec = FeatureCodec(config.codec)
        self.gocl = GlobalObjectCentric(
            config.dsa,
            config.model,
            config.codec.feature_size,
            config.codec.grid_shape,
            variant=variant,
        )

    @property
    def bank(self) -> Optional[GlobalBank]:
        return self.gocl.bank

    @property
    def num_slots(self) -> int:
        return self.gocl.num_slots

    def gocl_parameters(self):
        return self.gocl.parameters()

    def encode(self, images: torch.Tensor) -> PatchFeatureMap:
        """Patch features of a B×3×H×W batch; the encoder never receives gradients here."""
        with torch.no_grad():
            return self.codec.encode_image(images)

    def render(self, o_img: torch.Tensor) -> torch.Tensor:
        return self.codec.decode_patches(o_img)

    def forward(
        self,
        images: torch.Tensor,
        tau: float,
        noise: Union[torch.Generator, GoclNoise, None] = None,
        render: bool = False,
    ) -> GoldOutput:
        features = self.encode(images)
        output = self.gocl(features.features, tau, noise)
        image = self.render(output.components.o_img) if render else None
        return GoldOutput(features=features, gocl=output, image=image)


def build_model(config: GoldConfig, variant: Optional[str] = None, seed: Optional[int] = None) -> GoldModel:
    """
    Build a model variant with seeded parameter initialization.

    Args:
        config: Full configuration
        variant: One of ``full``, ``no_dsa``, ``no_glo`` (defaults to ``config.train.variant``)
        seed: Initialization seed (defaults to ``config.train.seed``)

    Returns:
        Freshly initialized model

    Raises:
        InvalidArgumentError: If the variant is unknown
    """
    variant = variant or config.train.variant
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"Unknown model variant: {variant}")
    seed = config.train.seed if seed is None else seed

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = GoldModel(config, variant)

    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"Built {variant} model with {n_params} parameters")
    return model
