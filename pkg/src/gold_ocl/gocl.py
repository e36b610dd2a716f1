"""
Global Object-Centric Learning

Background encoding and decoding, extrinsic and identity latent inference,
bank-based intrinsic construction, mixture composition of patch features,
and the feature-reconstruction loss of stage one.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from .config import DsaConfig, ModelConfig
from .dsa import (
    DsaNoise,
    DsaOutput,
    GlobalBank,
    build_slot_attention,
    gumbel_softmax_sample,
    sample_gumbel,
)
from .exceptions import InvalidArgumentError
from .featurecodec import sinusoidal_position_encoding

logger = logging.getLogger(__name__)

__all__ = [
    "GaussianLatent", "IdentityLatent", "DecodedComponents", "LatentSet", "GoclNoise", "GoclOutput",
    "LatentHead", "BackgroundEncoder", "BroadcastDecoder", "GlobalObjectCentric",
    "reparameterize", "gaussian_kl", "categorical_kl", "gumbel_softmax_sample",
    "intrinsic_combination", "compose_scene", "feature_loss",
]


@dataclass
class GaussianLatent:
    """Diagonal Gaussian posterior with an optional reparameterized sample."""

    mu: torch.Tensor
    sigma: torch.Tensor
    sample: Optional[torch.Tensor] = None
    eps: Optional[torch.Tensor] = None


@dataclass
class IdentityLatent:
    gamma: torch.Tensor
    tau: float
    y: torch.Tensor
    hard: bool = False


@dataclass
class DecodedComponents:
    """Per-slot appearances and masks with their composition; slot 0 is the background."""

    appearances: torch.Tensor  # B×(K+1)×N×D_img
    mask_logits: torch.Tensor  # B×(K+1)×N
    masks_hat: torch.Tensor  # B×(K+1)×N, softmax over slots
    o_img: torch.Tensor  # B×N×D_img


@dataclass
class LatentSet:
    bck: GaussianLatent
    ext: GaussianLatent
    identity: IdentityLatent


@dataclass
class GoclNoise:
    """Injected noise for a reproducible forward pass."""

    dsa: DsaNoise
    bck: torch.Tensor  # B×D_bck
    ext: torch.Tensor  # B×K×D_ext
    gumbel: torch.Tensor  # B×K×C


@dataclass
class GoclOutput:
    components: DecodedComponents
    latents: LatentSet
    dsa: DsaOutput
    s_bck: torch.Tensor
    s_int_dec: torch.Tensor


def reparameterize(
    mu: torch.Tensor,
    sigma: torch.Tensor,
    eps: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None,
) -> GaussianLatent:
    """Sample mu + sigma * eps, drawing eps when not given."""
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return GaussianLatent(mu=mu, sigma=sigma, sample=mu + sigma * eps, eps=eps)


def gaussian_kl(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last dimension."""
    return 0.5 * (mu.square() + sigma.square() - 1.0 - 2.0 * sigma.log()).sum(dim=-1)


def categorical_kl(gamma: torch.Tensor) -> torch.Tensor:
    """KL(softmax(gamma) || Uniform(C)) over the last dimension."""
    log_p = F.log_softmax(gamma, dim=-1)
    return (log_p.exp() * (log_p + math.log(gamma.shape[-1]))).sum(dim=-1)


def intrinsic_combination(y: torch.Tensor, bank: GlobalBank) -> torch.Tensor:
    """Convex combination of raw bank rows with weights y, ...×D_glo."""
    return torch.matmul(y, bank.e_glo)


def compose_scene(appearances: torch.Tensor, mask_logits: torch.Tensor) -> DecodedComponents:
    """
    Mix per-slot appearances with masks normalized over the slots.

    Args:
        appearances: B×(K+1)×N×D_img
        mask_logits: B×(K+1)×N

    Returns:
        Decoded components with o_img = sum_k a_k * softmax_k(m)
    """
    if appearances.shape[:3] != mask_logits.shape:
        raise InvalidArgumentError(
            f"Appearances {tuple(appearances.shape)} and masks {tuple(mask_logits.shape)} disagree"
        )
    masks_hat = F.softmax(mask_logits, dim=1)
    o_img = (appearances * masks_hat[..., None]).sum(dim=1)
    return DecodedComponents(appearances, mask_logits, masks_hat, o_img)


def feature_loss(
    s_img: torch.Tensor,
    components: DecodedComponents,
    latents: LatentSet,
    eta: float,
    sigma_rec: float = 1.0 / math.sqrt(2.0),
    include_identity: bool = True,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """
    Stage-one loss: negative ELBO plus the background regularizer.

    Every term is summed over patches, slots and dimensions and averaged over
    the batch. The Gaussian reconstruction constant is dropped.

    Args:
        s_img: B×N×D_img target patch features
        components: Decoded mixture
        latents: Variational parameters of every latent
        eta: Weight of the background regularizer
        sigma_rec: Scale of the Gaussian reconstruction likelihood
        include_identity: Whether the categorical KL applies

    Returns:
        Tuple of (total loss, named terms)

    Raises:
        InvalidArgumentError: If eta is negative
    """
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")

    recon = ((s_img - components.o_img).square().sum(dim=(1, 2)) / (2.0 * sigma_rec ** 2)).mean()
    kl_bck = gaussian_kl(latents.bck.mu, latents.bck.sigma).mean()
    kl_ext = gaussian_kl(latents.ext.mu, latents.ext.sigma).sum(dim=1).mean()
    if include_identity:
        kl_id = categorical_kl(latents.identity.gamma).sum(dim=1).mean()
    else:
        kl_id = torch.zeros((), dtype=s_img.dtype, device=s_img.device)

    background = components.appearances[:, 0] * components.masks_hat[:, 0, :, None]
    reg_bck = eta * (s_img - background).square().sum(dim=-1).mean(dim=-1).mean()

    elbo = recon + kl_bck + kl_ext + kl_id
    total = elbo + reg_bck
    terms = {
        "recon": recon,
        "kl_bck": kl_bck,
        "kl_ext": kl_ext,
        "kl_id": kl_id,
        "reg_bck": reg_bck,
        "elbo": elbo,
        "total": total,
    }
    return total, terms


class LatentHead(nn.Module):
    """Two-layer map to the mean and positive scale of a Gaussian latent."""

    def __init__(self, in_size: int, out_size: int, hidden_size: int, sigma_floor: float = 1e-4):
        super().__init__()
        self.sigma_floor = sigma_floor
        self.net = nn.Sequential(
            nn.Linear(in_size, hidden_size),
            nn.ReLU(),
            nn.Linear(hidden_size, 2 * out_size),
        )

    def forward(self, x: torch.Tensor) -> GaussianLatent:
        if not torch.isfinite(x).all():
            raise InvalidArgumentError("Latent inputs must be finite")
        mu, raw = self.net(x).chunk(2, dim=-1)
        return GaussianLatent(mu=mu, sigma=F.softplus(raw) + self.sigma_floor)


class BackgroundEncoder(nn.Module):
    """Mean-pooled patch features through a two-layer map."""

    def __init__(self, feature_size: int, hidden_size: int, bck_size: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(feature_size, hidden_size),
            nn.ReLU(),
            nn.Linear(hidden_size, bck_size),
        )

    def forward(self, s_img: torch.Tensor) -> torch.Tensor:
        return self.net(s_img.mean(dim=1))


class BroadcastDecoder(nn.Module):
    """
    Spatial-broadcast decoder over the patch grid.

    A latent vector is copied to every patch, offset by a projected
    sinusoidal position code, and mapped to an appearance vector plus a
    mask logit per patch.
    """

    def __init__(self, latent_size: int, feature_size: int, hidden_size: int, grid_shape: Tuple[int, int]):
        super().__init__()
        rows, cols = grid_shape
        self.feature_size = feature_size
        self.latent_proj = nn.Linear(latent_size, hidden_size)
        self.register_buffer(
            "position", sinusoidal_position_encoding(rows, cols, hidden_size), persistent=False
        )
        self.position_proj = nn.Linear(hidden_size, hidden_size)
        self.net = nn.Sequential(
            nn.ReLU(),
            nn.Linear(hidden_size, hidden_size),
            nn.ReLU(),
            nn.Linear(hidden_size, feature_size + 1),
        )

    def forward(self, latent: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            latent: ...×latent_size

        Returns:
            Tuple of (...×N×D_img appearances, ...×N mask logits)
        """
        position = self.position_proj(self.position.to(latent.dtype))
        hidden = self.latent_proj(latent)[..., None, :] + position
        output = self.net(hidden)
        appearance, mask_logit = output.split([self.feature_size, 1], dim=-1)
        return appearance, mask_logit.squeeze(-1)


class GlobalObjectCentric(nn.Module):
    """
    Object-centric model over patch features.

    The ``variant`` selects the attention mechanism: ``full`` uses
    disentangled slot attention with a global bank, ``no_dsa`` plain slot
    attention with post hoc bank identities, ``no_glo`` identity vectors
    without a bank.
    """

    def __init__(
        self,
        dsa_config: DsaConfig,
        model_config: ModelConfig,
        feature_size: int,
        grid_shape: Tuple[int, int],
        variant: str = "full",
    ):
        super().__init__()
        self.variant = variant
        self.num_slots = dsa_config.num_slots
        self.num_prototypes = dsa_config.num_prototypes
        self.int_size = dsa_config.int_size
        self.ext_size = dsa_config.ext_size
        self.bck_size = model_config.bck_size
        self.sigma_rec = model_config.sigma_rec
        self.empty_mask_bias = model_config.empty_mask_bias
        hidden = model_config.mlp_hidden_size

        self.attention = build_slot_attention(variant, dsa_config, feature_size, model_config.bck_size)
        if variant == "no_glo":
            self.bank = None
            intrinsic_size = dsa_config.int_size
        else:
            self.bank = GlobalBank(dsa_config.num_prototypes, dsa_config.bank_size, dsa_config.int_size)
            intrinsic_size = dsa_config.bank_size

        self.background_encoder = BackgroundEncoder(feature_size, hidden, model_config.bck_size)
        self.background_head = LatentHead(
            model_config.bck_size, model_config.bck_size, hidden, model_config.sigma_floor
        )
        self.extrinsic_head = LatentHead(
            dsa_config.ext_size, dsa_config.ext_size, hidden, model_config.sigma_floor
        )
        self.background_decoder = BroadcastDecoder(
            model_config.bck_size, feature_size, model_config.decoder_hidden_size, grid_shape
        )
        self.object_decoder = BroadcastDecoder(
            intrinsic_size + dsa_config.ext_size, feature_size, model_config.decoder_hidden_size, grid_shape
        )

    @property
    def has_bank(self) -> bool:
        return self.bank is not None

    def encode_background(self, s_img: torch.Tensor) -> torch.Tensor:
        return self.background_encoder(s_img)

    def background_latent(self, s_bck: torch.Tensor) -> GaussianLatent:
        return self.background_head(s_bck)

    def extrinsic_latent(self, s_ext: torch.Tensor) -> GaussianLatent:
        return self.extrinsic_head(s_ext)

    def decode_background(self, z_bck: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Background appearance B×N×D_img and mask logits B×N."""
        return self.background_decoder(z_bck)

    def decode_object(self, s_int_dec: torch.Tensor, z_ext: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Object appearances ...×N×D_img and mask logits ...×N from [s_int_dec, z_ext]."""
        return self.object_decoder(torch.cat([s_int_dec, z_ext], dim=-1))

    def decode_latents(
        self,
        s_int_dec: torch.Tensor,
        z_ext: torch.Tensor,
        z_bck: torch.Tensor,
        slot_bias: Optional[torch.Tensor] = None,
    ) -> DecodedComponents:
        """
        Decode arbitrary latents into a composed scene.

        Args:
            s_int_dec: B×K×D_glo intrinsic vectors
            z_ext: B×K×D_ext extrinsic latents
            z_bck: B×D_bck background latents
            slot_bias: Optional B×K additive mask-logit bias per object slot

        Returns:
            Decoded components
        """
        a_bck, m_bck = self.decode_background(z_bck)
        a_obj, m_obj = self.decode_object(s_int_dec, z_ext)
        if slot_bias is not None:
            m_obj = m_obj + slot_bias[..., None]
        appearances = torch.cat([a_bck[:, None], a_obj], dim=1)
        mask_logits = torch.cat([m_bck[:, None], m_obj], dim=1)
        return compose_scene(appearances, mask_logits)

    def intrinsic_vectors(self, y: torch.Tensor, dsa_output: DsaOutput) -> torch.Tensor:
        if self.bank is None:
            return dsa_output.s_int
        return intrinsic_combination(y, self.bank)

    def canonical_extrinsic(self) -> torch.Tensor:
        """Mean extrinsic latent of the slot initializer, D_ext."""
        if hasattr(self.attention, "ext_mu"):
            mu = self.attention.ext_mu
        else:
            mu = self.attention.slot_mu[:, self.int_size:]
        return self.extrinsic_latent(mu).mu[0]

    def forward(
        self,
        s_img: torch.Tensor,
        tau: float,
        noise: Union[torch.Generator, GoclNoise, None] = None,
    ) -> GoclOutput:
        """
        Infer latents for patch features and decode them.

        In training mode latents are sampled; in evaluation mode Gaussian
        latents take their means and identities are one-hot at argmax gamma.

        Args:
            s_img: B×N×D_img patch features
            tau: Gumbel-Softmax temperature
            noise: Seeded generator or injected noise

        Returns:
            Decoded components, latents and the attention trace
        """
        injected = noise if isinstance(noise, GoclNoise) else None
        generator = noise if isinstance(noise, torch.Generator) else None

        s_bck = self.encode_background(s_img)
        dsa_output = self.attention(
            s_img, s_bck, self.bank, tau, injected.dsa if injected else generator
        )
        bck = self.background_latent(s_bck)
        ext = self.extrinsic_latent(dsa_output.s_ext)
        gamma = dsa_output.gamma

        if self.training:
            bck = reparameterize(bck.mu, bck.sigma, injected.bck if injected else None, generator)
            ext = reparameterize(ext.mu, ext.sigma, injected.ext if injected else None, generator)
            if injected is None:
                gumbel = sample_gumbel(gamma.shape, generator, gamma.dtype, gamma.device)
            else:
                gumbel = injected.gumbel
            y = gumbel_softmax_sample(gamma, tau, gumbel=gumbel)
            identity = IdentityLatent(gamma=gamma, tau=tau, y=y, hard=False)
        else:
            bck.sample = bck.mu
            ext.sample = ext.mu
            y = F.one_hot(gamma.argmax(dim=-1), gamma.shape[-1]).to(gamma.dtype)
            identity = IdentityLatent(gamma=gamma, tau=tau, y=y, hard=True)

        s_int_dec = self.intrinsic_vectors(identity.y, dsa_output)
        components = self.decode_latents(s_int_dec, ext.sample, bck.sample)
        return GoclOutput(
            components=components,
            latents=LatentSet(bck=bck, ext=ext, identity=identity),
            dsa=dsa_output,
            s_bck=s_bck,
            s_int_dec=s_int_dec,
        )

    def loss(self, s_img: torch.Tensor, output: GoclOutput, eta: float):
        """Stage-one loss of a forward pass."""
        return feature_loss(
            s_img,
            output.components,
            output.latents,
            eta,
            sigma_rec=self.sigma_rec,
            include_identity=self.has_bank,
        )
