"""
Qualitative generation from trained models.

Prototype images, scenes composed from chosen prototypes, extrinsic
attribute swaps between two objects of a scene, and per-slot scene
decompositions. Every function decodes in evaluation mode, so repeated
calls with the same inputs give identical images.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .config import GoldConfig
from .exceptions import InvalidArgumentError
from .gocl import DecodedComponents, GoclOutput, compose_scene, intrinsic_combination
from .metrics import masks_from_labels, match_slots_to_objects, segmentation_from_masks, SlotPairing
from .model import GoldModel
from .models import ObjectSpec
from .scenegen import SceneSample
from .utils import ImageUtils

logger = logging.getLogger(__name__)


@dataclass
class SceneInference:
    """Deterministic decomposition of a single scene."""

    output: GoclOutput
    reconstruction: np.ndarray  # H×W×3 float32 in [0, 1]
    labels: np.ndarray  # H×W predicted segmentation


def _as_image(x_hat: torch.Tensor) -> np.ndarray:
    return x_hat.detach().clamp(0.0, 1.0).movedim(-3, -1).to("cpu", torch.float32).numpy()


def _device_of(model: GoldModel) -> torch.device:
    return next(model.parameters()).device


def _require_bank(model: GoldModel, what: str) -> None:
    if not model.gocl.has_bank:
        raise InvalidArgumentError(f"The {model.variant} variant has no global bank; {what} needs one")


def render_components(model: GoldModel, components: DecodedComponents) -> List[np.ndarray]:
    """Render composed patch features of every batch item to images."""
    with torch.no_grad():
        return list(_as_image(model.render(components.o_img)))


def infer_scene(
    model: GoldModel,
    image: Union[np.ndarray, torch.Tensor],
    tau: float,
    generator: Optional[torch.Generator] = None,
) -> SceneInference:
    """
    Decompose one H×W×3 image with the model in evaluation mode.

    Args:
        model: Trained model
        image: H×W×3 float image in [0, 1]
        tau: Gumbel-Softmax temperature
        generator: Source of slot initialization noise

    Returns:
        Latents, reconstruction and segmentation of the scene
    """
    device = _device_of(model)
    pixels = torch.as_tensor(np.asarray(image, dtype=np.float32)).permute(2, 0, 1)[None].to(device)
    model.eval()
    with torch.no_grad():
        result = model(pixels, tau, generator, render=True)
    codec = model.codec.config
    labels = segmentation_from_masks(
        result.gocl.components.masks_hat, codec.grid_shape, codec.image_shape
    )[0]
    return SceneInference(output=result.gocl, reconstruction=_as_image(result.image)[0], labels=labels)


def _empty_background(model: GoldModel) -> torch.Tensor:
    """Prior mean of the background latent, 1×D_bck."""
    return torch.zeros(1, model.gocl.bck_size, device=_device_of(model))


def prototypes(model: GoldModel, background: Optional[torch.Tensor] = None) -> List[np.ndarray]:
    """
    One image per bank entry.

    Each image decodes a single object slot whose identity is one-hot at the
    prototype, placed with the canonical extrinsic latent over an empty
    background.

    Args:
        model: Trained model with a global bank
        background: Optional 1×D_bck background latent

    Returns:
        C images, H×W×3 float32

    Raises:
        InvalidArgumentError: If the model has no global bank
    """
    _require_bank(model, "prototype generation")
    model.eval()
    gocl = model.gocl
    num_prototypes = gocl.num_prototypes
    with torch.no_grad():
        y = torch.eye(num_prototypes, device=_device_of(model))[:, None]
        s_int_dec = intrinsic_combination(y, gocl.bank)
        z_ext = gocl.canonical_extrinsic().expand(num_prototypes, 1, -1)
        z_bck = (background if background is not None else _empty_background(model)).expand(num_prototypes, -1)
        components = gocl.decode_latents(s_int_dec, z_ext, z_bck)
    logger.info(f"Generated {num_prototypes} prototype images")
    return render_components(model, components)


def compose(
    model: GoldModel,
    specs: Sequence[ObjectSpec],
    reference: Optional[GoclOutput] = None,
) -> np.ndarray:
    """
    Generate a scene holding chosen prototypes.

    Each spec fills one object slot. Its extrinsic latent is given
    explicitly, copied from an object slot of ``reference``, or left at the
    canonical extrinsic. Unused slots keep the canonical extrinsic and have
    their mask logits suppressed. The background comes from ``reference``
    when given and is empty otherwise.

    Args:
        model: Trained model with a global bank
        specs: At most K object specifications
        reference: Decomposition of a reference scene

    Returns:
        H×W×3 float32 image

    Raises:
        InvalidArgumentError: On too many objects, out-of-range prototypes or
            slots, badly sized extrinsic latents, or a model without bank
    """
    _require_bank(model, "scene composition")
    gocl = model.gocl
    num_slots, num_prototypes = gocl.num_slots, gocl.num_prototypes
    if len(specs) > num_slots:
        raise InvalidArgumentError(f"{len(specs)} objects requested but the model has {num_slots} slots")

    device = _device_of(model)
    model.eval()
    with torch.no_grad():
        canonical = gocl.canonical_extrinsic()
        y = torch.zeros(1, num_slots, num_prototypes, device=device)
        z_ext = canonical.expand(1, num_slots, -1).clone()
        slot_bias = torch.full((1, num_slots), gocl.empty_mask_bias, device=device)

        for slot, spec in enumerate(specs):
            if spec.prototype > num_prototypes:
                raise InvalidArgumentError(
                    f"Prototype {spec.prototype} out of range 1..{num_prototypes}"
                )
            y[0, slot, spec.prototype - 1] = 1.0
            slot_bias[0, slot] = 0.0
            if spec.z_ext is not None:
                if len(spec.z_ext) != gocl.ext_size:
                    raise InvalidArgumentError(
                        f"z_ext has {len(spec.z_ext)} values, expected {gocl.ext_size}"
                    )
                z_ext[0, slot] = torch.tensor(spec.z_ext, dtype=z_ext.dtype, device=device)
            elif spec.reference_slot is not None:
                if reference is None:
                    raise InvalidArgumentError("reference_slot given without a reference scene")
                if spec.reference_slot > num_slots:
                    raise InvalidArgumentError(
                        f"Reference slot {spec.reference_slot} out of range 1..{num_slots}"
                    )
                z_ext[0, slot] = reference.latents.ext.mu[0, spec.reference_slot - 1]

        z_bck = reference.latents.bck.mu[:1] if reference is not None else _empty_background(model)
        components = gocl.decode_latents(intrinsic_combination(y, gocl.bank), z_ext, z_bck, slot_bias)
    return render_components(model, components)[0]


def swap_extrinsics(z_ext: torch.Tensor, slot_i: int, slot_j: int) -> torch.Tensor:
    """Copy of B×K×D_ext extrinsic latents with object slots i and j (1-based) exchanged."""
    num_slots = z_ext.shape[1]
    for slot in (slot_i, slot_j):
        if not 1 <= slot <= num_slots:
            raise InvalidArgumentError(f"Slot {slot} out of range 1..{num_slots}")
    order = list(range(num_slots))
    order[slot_i - 1], order[slot_j - 1] = order[slot_j - 1], order[slot_i - 1]
    return z_ext[:, order]


def decode_with_extrinsics(model: GoldModel, output: GoclOutput, z_ext: torch.Tensor) -> np.ndarray:
    """Re-render a decomposition with replaced extrinsic latents."""
    with torch.no_grad():
        components = model.gocl.decode_latents(output.s_int_dec, z_ext, output.latents.bck.sample)
    return render_components(model, components)[0]


def swap(
    model: GoldModel,
    scene: SceneInference,
    slot_i: int,
    slot_j: int,
    pairing: Optional[SlotPairing] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exchange the extrinsic latents of two object slots.

    Args:
        model: Trained model
        scene: Decomposition of the scene
        slot_i: First object slot, 1-based
        slot_j: Second object slot, 1-based
        pairing: Slot-to-object pairing; both slots must be paired when given

    Returns:
        Images before and after the exchange

    Raises:
        InvalidArgumentError: If a slot is out of range or unpaired
    """
    if pairing is not None:
        for slot in (slot_i, slot_j):
            if slot not in pairing.pairs:
                raise InvalidArgumentError(f"Slot {slot} is not paired with any object")
    z_ext = scene.output.latents.ext.sample
    swapped = swap_extrinsics(z_ext, slot_i, slot_j)
    before = decode_with_extrinsics(model, scene.output, z_ext)
    after = decode_with_extrinsics(model, scene.output, swapped)
    return before, after


def pair_scene_slots(model: GoldModel, scene: SceneInference, sample: SceneSample, config: GoldConfig) -> SlotPairing:
    """Pair the object slots of a decomposition with the ground-truth objects of its scene."""
    return match_slots_to_objects(
        masks_from_labels(scene.labels, model.num_slots),
        sample.masks,
        config.eval.iou_threshold,
        config.eval.area_threshold,
    )


def decompose(model: GoldModel, scene: SceneInference) -> List[np.ndarray]:
    """
    Per-slot panels of a decomposition.

    Returns K+2 images: the background alone, each object slot composed
    with the background, and the colorized segmentation.
    """
    output = scene.output
    components = output.components
    num_slots = components.appearances.shape[1] - 1
    with torch.no_grad():
        background = compose_scene(components.appearances[:, :1], components.mask_logits[:, :1])
        panels = render_components(model, background)
        for slot in range(1, num_slots + 1):
            keep = [0, slot]
            single = compose_scene(components.appearances[:, keep], components.mask_logits[:, keep])
            panels.extend(render_components(model, single))
    panels.append(ImageUtils.colorize(scene.labels))
    return panels

