"""
Pydantic data models for GOLD records.

This module defines the plain-text records written beside datasets,
checkpoints and command outputs: scene metadata, manifests, provenance,
compose requests and metric rows.
"""

import math
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

SHAPES = (
    "square", "circle", "triangle", "diamond", "hexagon",
    "star", "cross", "ellipse", "pentagon", "trapezoid",
)


class ExtrinsicParams(BaseModel):
    """Scene-dependent placement of one sprite."""

    model_config = ConfigDict(extra='ignore')

    position: Tuple[float, float] = Field(..., description="Center (x, y) in normalized canvas coordinates")
    scale: float = Field(..., gt=0, description="Size relative to the canonical sprite")
    rotation: float = Field(..., description="Rotation in radians, [0, 2*pi)")
    depth_rank: int = Field(..., ge=1, description="Occlusion order; higher ranks are drawn in front")

    @field_validator('position')
    @classmethod
    def validate_position(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        """Validate that the sprite center lies on the canvas."""
        if not all(0.0 <= c <= 1.0 for c in v):
            raise ValueError(f"Position must lie in [0, 1]^2: {v}")
        return v

    @field_validator('rotation')
    @classmethod
    def validate_rotation(cls, v: float) -> float:
        """Validate the rotation range."""
        if not 0.0 <= v < 2.0 * math.pi:
            raise ValueError(f"Rotation must lie in [0, 2*pi): {v}")
        return v


class SpriteSpec(BaseModel):
    """One prototype of the sprite library."""

    model_config = ConfigDict(extra='ignore')

    index: int = Field(..., ge=1, description="Prototype index, 1-based")
    shape: str = Field(..., description="Shape name")
    color: Tuple[int, int, int] = Field(..., description="8-bit RGB color")

    @field_validator('shape')
    @classmethod
    def validate_shape(cls, v: str) -> str:
        """Validate that the shape is known to the rasterizer."""
        if v not in SHAPES:
            raise ValueError(f"Unknown shape: {v}")
        return v

    @field_validator('color')
    @classmethod
    def validate_color(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        """Validate 8-bit color channels."""
        if not all(0 <= c <= 255 for c in v):
            raise ValueError(f"Color channels must lie in [0, 255]: {v}")
        return v


class SceneRecord(BaseModel):
    """Per-sample metadata stored next to the image and mask files."""

    model_config = ConfigDict(extra='ignore')

    index: int = Field(..., ge=0, description="Sample index within its split")
    seed: int = Field(..., ge=0, description="Seed the sample was generated from")
    background: int = Field(..., ge=0, description="Background index")
    identities: List[int] = Field(default_factory=list, description="Prototype index per object")
    extrinsics: List[ExtrinsicParams] = Field(default_factory=list, description="Placement per object")


class DatasetManifest(BaseModel):
    """Top-level description of one dataset split."""

    model_config = ConfigDict(extra='ignore')

    split: str = Field(..., description="Split name")
    count: int = Field(..., ge=0, description="Number of samples")
    canvas_size: int = Field(..., ge=1, description="Image side length in pixels")
    sprite_radius: float = Field(..., gt=0, description="Sprite radius at scale 1, as a canvas fraction")
    library_seed: int = Field(..., description="Seed of the prototype library")
    dataset_seed: int = Field(..., description="Seed the per-sample seeds derive from")
    count_range: Tuple[int, int] = Field(..., description="Object count range (min, max)")
    config_hash: str = Field(..., description="Hash of the generating configuration")
    sprites: List[SpriteSpec] = Field(..., description="Prototype library")
    backgrounds: List[Tuple[int, int, int]] = Field(..., description="Background colors")
    version: str = Field(..., description="Package version that wrote the split")


class CheckpointManifest(BaseModel):
    """Plain-text summary written beside a model checkpoint."""

    model_config = ConfigDict(extra='ignore')

    variant: str = Field(..., description="Model variant")
    config_hash: str = Field(..., description="Hash of the training configuration")
    image_shape: Tuple[int, int] = Field(..., description="Image height and width")
    patch_size: int = Field(..., description="Patch side length in pixels")
    num_patches: int = Field(..., description="Patches per image")
    feature_size: int = Field(..., description="Patch feature dimension")
    num_slots: int = Field(..., description="Object slots")
    num_prototypes: int = Field(..., description="Global bank size")
    steps: Dict[str, int] = Field(default_factory=dict, description="Completed steps per stage")
    blob_hash: str = Field(..., description="Hash of the parameter blob")


class ProvenanceRecord(BaseModel):
    """Record written beside the outputs of every command."""

    model_config = ConfigDict(extra='ignore')

    command: str = Field(..., description="Command name")
    config_hash: str = Field(..., description="Hash of the effective configuration")
    seed: int = Field(..., description="Training or generation seed")
    version: str = Field(..., description="Package version")
    arguments: Dict[str, Any] = Field(default_factory=dict, description="Command arguments")


class ObjectSpec(BaseModel):
    """One object requested for a composed scene."""

    model_config = ConfigDict(extra='forbid')

    prototype: int = Field(..., ge=1, description="Prototype index, 1-based")
    z_ext: Optional[List[float]] = Field(None, description="Explicit extrinsic latent")
    reference_slot: Optional[int] = Field(
        None, ge=1, description="Object slot of the reference scene to copy z_ext from"
    )

    @field_validator('reference_slot')
    @classmethod
    def validate_exclusive(cls, v: Optional[int], info) -> Optional[int]:
        """Validate that at most one extrinsic source is given."""
        if v is not None and info.data.get('z_ext') is not None:
            raise ValueError("Give either z_ext or reference_slot, not both")
        return v


class MetricRecord(BaseModel):
    """One aggregated metric row."""

    model_config = ConfigDict(extra='ignore')

    variant: str = Field(..., description="Model variant")
    dataset: str = Field(..., description="Dataset name")
    metric: str = Field(..., description="Metric name")
    mean: float = Field(..., description="Mean over evaluation runs")
    std: float = Field(..., ge=0, description="Population standard deviation over runs")
