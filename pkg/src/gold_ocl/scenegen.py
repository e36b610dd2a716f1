"""
Sprite Scene Generator

Seeded generator of multi-object sprite scenes with full ground truth:
per-object visible masks, prototype identities and extrinsic placement.
Splits are written to disk as lossless PNG images, palette-PNG label maps
and JSON records, described by a top-level manifest.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError
from torch.utils.data import Dataset

from .config import SceneConfig
from .exceptions import InvalidArgumentError, LoadError
from .models import SHAPES, DatasetManifest, ExtrinsicParams, SceneRecord, SpriteSpec
from .utils import ImageUtils, LoggingUtils, SeedUtils, package_version

logger = logging.getLogger(__name__)

Color = Tuple[int, int, int]

SPRITE_COLORS: Tuple[Color, ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
)

BACKGROUND_COLORS: Tuple[Color, ...] = (
    (40, 40, 40),
    (200, 200, 200),
    (95, 70, 50),
    (30, 50, 95),
)


def _regular_polygon(sides: int, phase: float = -math.pi / 2) -> np.ndarray:
    angles = phase + 2.0 * math.pi * np.arange(sides) / sides
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _star(points: int = 5, inner: float = 0.45) -> np.ndarray:
    angles = -math.pi / 2 + math.pi * np.arange(2 * points) / points
    radii = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


# Unit-radius outlines in sprite-local coordinates
_POLYGONS: Dict[str, np.ndarray] = {
    "square": np.array([[-0.8, -0.8], [0.8, -0.8], [0.8, 0.8], [-0.8, 0.8]]),
    "triangle": _regular_polygon(3),
    "diamond": np.array([[1.0, 0.0], [0.0, 0.7], [-1.0, 0.0], [0.0, -0.7]]),
    "hexagon": _regular_polygon(6, phase=0.0),
    "star": _star(),
    "pentagon": _regular_polygon(5),
    "trapezoid": np.array([[-1.0, 0.6], [1.0, 0.6], [0.5, -0.6], [-0.5, -0.6]]),
}


def _inside_polygon(u: np.ndarray, v: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test over arrays of points."""
    inside = np.zeros(u.shape, dtype=bool)
    count = len(vertices)
    for i in range(count):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % count]
        crosses = (y1 > v) != (y2 > v)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (x2 - x1) * (v - y1) / (y2 - y1) + x1
        inside ^= crosses & (u < x_at)
    return inside


def shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    Rasterize a unit-radius shape.

    Args:
        shape: Shape name from the vocabulary
        u, v: Sprite-local coordinates of every pixel center

    Returns:
        Boolean coverage array shaped like ``u``
    """
    if shape == "circle":
        return u * u + v * v <= 1.0
    if shape == "ellipse":
        return u * u + (v / 0.55) ** 2 <= 1.0
    if shape == "cross":
        return ((np.abs(u) <= 1.0) & (np.abs(v) <= 0.35)) | ((np.abs(u) <= 0.35) & (np.abs(v) <= 1.0))
    if shape in _POLYGONS:
        return _inside_polygon(u, v, _POLYGONS[shape])
    raise InvalidArgumentError(f"Unknown shape: {shape}")


@dataclass(frozen=True)
class PrototypeLibrary:
    """Sprite vocabulary and background colors shared by every scene of a dataset."""

    sprites: Tuple[SpriteSpec, ...]
    backgrounds: Tuple[Color, ...]
    canvas_size: int
    sprite_radius: float
    seed: int

    def __len__(self) -> int:
        return len(self.sprites)

    def sprite(self, index: int) -> SpriteSpec:
        """Look up a prototype by its 1-based index."""
        if not 1 <= index <= len(self.sprites):
            raise InvalidArgumentError(
                f"Prototype index {index} outside 1..{len(self.sprites)}"
            )
        return self.sprites[index - 1]


@dataclass
class SceneSample:
    """One rendered scene with its ground truth."""

    image: np.ndarray  # H×W×3 float32 in [0, 1]
    masks: np.ndarray  # (K_gt+1)×H×W bool, channel 0 = background
    identities: List[int]
    extrinsics: List[ExtrinsicParams]
    seed: int
    background: int = 0
    index: int = 0

    @property
    def num_objects(self) -> int:
        return len(self.identities)

    @property
    def labels(self) -> np.ndarray:
        """H×W label map; 0 is background, k is the k-th object."""
        return np.argmax(self.masks, axis=0).astype(np.int64)

    def to_record(self) -> SceneRecord:
        return SceneRecord(
            index=self.index,
            seed=self.seed,
            background=self.background,
            identities=list(self.identities),
            extrinsics=list(self.extrinsics),
        )


def make_prototype_library(
    num_prototypes: int,
    seed: int,
    canvas_size: int = 64,
    num_backgrounds: int = 2,
    sprite_radius: float = 0.12,
) -> PrototypeLibrary:
    """
    Build a library of pairwise distinct sprites.

    Shapes and colors are dealt from seeded permutations so that the first
    prototypes differ in both shape and color. Every accepted sprite renders
    differently from all earlier ones at the canonical pose.

    Args:
        num_prototypes: Number of prototypes C
        seed: Library seed
        canvas_size: Canvas side length in pixels
        num_backgrounds: Number of background colors
        sprite_radius: Sprite radius at scale 1, as a fraction of the canvas

    Returns:
        Prototype library with indices 1..C

    Raises:
        InvalidArgumentError: If the vocabulary cannot supply C distinct sprites
    """
    if num_prototypes < 1:
        raise InvalidArgumentError("A prototype library needs at least one prototype")
    if not 1 <= num_backgrounds <= len(BACKGROUND_COLORS):
        raise InvalidArgumentError(
            f"Number of backgrounds must lie in 1..{len(BACKGROUND_COLORS)}"
        )
    capacity = len(SHAPES) * len(SPRITE_COLORS)
    if num_prototypes > capacity:
        raise InvalidArgumentError(f"At most {capacity} distinct prototypes are available")

    rng = np.random.default_rng(seed)
    shapes = [SHAPES[i] for i in rng.permutation(len(SHAPES))]
    colors = [SPRITE_COLORS[i] for i in rng.permutation(len(SPRITE_COLORS))]
    background_order = rng.permutation(len(BACKGROUND_COLORS))[:num_backgrounds]
    backgrounds = tuple(BACKGROUND_COLORS[i] for i in sorted(background_order))

    n_shapes, n_colors = len(shapes), len(colors)
    sprites: List[SpriteSpec] = []
    renders: List[np.ndarray] = []
    for i in range(capacity):
        if len(sprites) == num_prototypes:
            break
        candidate = SpriteSpec(
            index=len(sprites) + 1,
            shape=shapes[i % n_shapes],
            color=colors[(i + i // n_shapes) % n_colors],
        )
        render = _canonical_render(candidate, canvas_size, sprite_radius)
        if any(np.array_equal(render, other) for other in renders):
            logger.debug(f"Skipping {candidate.shape}/{candidate.color}: duplicate render")
            continue
        sprites.append(candidate)
        renders.append(render)

    if len(sprites) < num_prototypes:
        raise InvalidArgumentError(
            f"Only {len(sprites)} distinct sprites fit a {canvas_size}px canvas"
        )

    logger.debug(f"Built prototype library of {num_prototypes} sprites (seed {seed})")
    return PrototypeLibrary(
        sprites=tuple(sprites),
        backgrounds=backgrounds,
        canvas_size=canvas_size,
        sprite_radius=sprite_radius,
        seed=seed,
    )


def library_from_config(config: SceneConfig) -> PrototypeLibrary:
    return make_prototype_library(
        config.num_prototypes,
        config.library_seed,
        canvas_size=config.canvas_size,
        num_backgrounds=config.num_backgrounds,
        sprite_radius=config.sprite_radius,
    )


def canonical_extrinsics() -> ExtrinsicParams:
    return ExtrinsicParams(position=(0.5, 0.5), scale=1.0, rotation=0.0, depth_rank=1)


def _canonical_render(sprite: SpriteSpec, canvas_size: int, sprite_radius: float) -> np.ndarray:
    coverage = _sprite_coverage(sprite.shape, canonical_extrinsics(), canvas_size, sprite_radius)
    canvas = np.zeros((canvas_size, canvas_size, 3), dtype=np.uint8)
    canvas[coverage] = sprite.color
    return canvas


def _sprite_coverage(
    shape: str, extrinsics: ExtrinsicParams, canvas_size: int, sprite_radius: float
) -> np.ndarray:
    centers = (np.arange(canvas_size, dtype=np.float64) + 0.5) / canvas_size
    py, px = np.meshgrid(centers, centers, indexing="ij")
    cx, cy = extrinsics.position
    dx, dy = px - cx, py - cy
    cos_t, sin_t = math.cos(extrinsics.rotation), math.sin(extrinsics.rotation)
    radius = extrinsics.scale * sprite_radius
    u = (cos_t * dx + sin_t * dy) / radius
    v = (-sin_t * dx + cos_t * dy) / radius
    return shape_mask(shape, u, v)


def render_scene(
    lib: PrototypeLibrary,
    identities: Sequence[int],
    extrinsics: Sequence[ExtrinsicParams],
    background: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rasterize sprites back to front in ascending depth-rank order.

    Args:
        lib: Prototype library
        identities: Prototype index per object (1-based)
        extrinsics: Placement per object
        background: Background index

    Returns:
        Tuple of (H×W×3 float32 image, (K+1)×H×W bool visible masks)
    """
    if len(identities) != len(extrinsics):
        raise InvalidArgumentError("Every object needs exactly one extrinsic record")
    if not 0 <= background < len(lib.backgrounds):
        raise InvalidArgumentError(f"Background index {background} out of range")

    size = lib.canvas_size
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:] = lib.backgrounds[background]
    labels = np.zeros((size, size), dtype=np.int64)

    order = sorted(range(len(identities)), key=lambda k: extrinsics[k].depth_rank)
    for k in order:
        sprite = lib.sprite(identities[k])
        coverage = _sprite_coverage(sprite.shape, extrinsics[k], size, lib.sprite_radius)
        canvas[coverage] = sprite.color
        labels[coverage] = k + 1

    masks = labels[None, :, :] == np.arange(len(identities) + 1)[:, None, None]
    return canvas.astype(np.float32) / np.float32(255.0), masks


def sample_scene(
    lib: PrototypeLibrary,
    count_range: Tuple[int, int],
    seed: int,
    scale_range: Tuple[float, float] = (0.8, 1.3),
    position_margin: float = 0.1,
    allow_repeats: bool = True,
    index: int = 0,
) -> SceneSample:
    """
    Draw one scene with independent extrinsics per object.

    Args:
        lib: Prototype library
        count_range: Inclusive (min, max) object count
        seed: Sample seed; the same seed reproduces the sample bit-exactly
        scale_range: Inclusive scale range
        position_margin: Distance kept between sprite centers and the canvas border
        allow_repeats: Whether a prototype may appear more than once
        index: Index recorded on the sample

    Returns:
        Rendered scene with ground truth
    """
    if len(lib) == 0:
        raise InvalidArgumentError("Cannot sample scenes from an empty library")
    low, high = count_range
    if not 0 <= low <= high:
        raise InvalidArgumentError(f"Invalid object count range: {count_range}")

    rng = np.random.default_rng(seed)
    count = int(rng.integers(low, high + 1))
    if allow_repeats:
        identities = [int(c) for c in rng.integers(1, len(lib) + 1, size=count)]
    else:
        if count > len(lib):
            raise InvalidArgumentError(
                f"Cannot place {count} distinct prototypes from a library of {len(lib)}"
            )
        identities = [int(c) + 1 for c in rng.choice(len(lib), size=count, replace=False)]

    positions = rng.uniform(position_margin, 1.0 - position_margin, size=(count, 2))
    scales = rng.uniform(scale_range[0], scale_range[1], size=count)
    rotations = rng.uniform(0.0, 2.0 * math.pi, size=count)
    ranks = rng.permutation(count) + 1
    background = int(rng.integers(len(lib.backgrounds)))

    extrinsics = [
        ExtrinsicParams(
            position=(float(positions[k, 0]), float(positions[k, 1])),
            scale=float(scales[k]),
            rotation=float(rotations[k]) % (2.0 * math.pi),
            depth_rank=int(ranks[k]),
        )
        for k in range(count)
    ]
    image, masks = render_scene(lib, identities, extrinsics, background)
    return SceneSample(
        image=image,
        masks=masks,
        identities=identities,
        extrinsics=extrinsics,
        seed=seed,
        background=background,
        index=index,
    )


@LoggingUtils.log_duration(logger)
def generate_dataset(
    lib: PrototypeLibrary, config: SceneConfig, size: int, dataset_seed: int
) -> List[SceneSample]:
    """
    Generate a split whose sample seeds derive from (dataset_seed, index).

    Args:
        lib: Prototype library
        config: Scene configuration (count range, scales, margins, repeats)
        size: Number of samples
        dataset_seed: Seed of the split

    Returns:
        Samples in index order
    """
    samples = [
        sample_scene(
            lib,
            (config.min_objects, config.max_objects),
            SeedUtils.derive_seed(dataset_seed, i),
            scale_range=(config.scale_min, config.scale_max),
            position_margin=config.position_margin,
            allow_repeats=config.allow_repeats,
            index=i,
        )
        for i in range(size)
    ]
    logger.info(f"Generated {size} scenes (dataset seed {dataset_seed})")
    return samples


def _sample_paths(directory: Path, index: int) -> Tuple[Path, Path, Path]:
    stem = directory / "samples" / f"{index:06d}"
    return (
        stem.with_name(stem.name + "_image.png"),
        stem.with_name(stem.name + "_mask.png"),
        stem.with_name(stem.name + "_meta.json"),
    )


def write_dataset(
    samples: Sequence[SceneSample],
    directory: Union[str, Path],
    lib: PrototypeLibrary,
    config_hash: str,
    split: str = "train",
    count_range: Tuple[int, int] = (0, 0),
    dataset_seed: int = 0,
) -> DatasetManifest:
    """
    Write a split as lossless files plus a manifest.

    Args:
        samples: Samples to write; files are numbered by position, records keep each index
        directory: Split directory (created if needed)
        lib: Library the samples were drawn from
        config_hash: Hash of the generating configuration
        split: Split name
        count_range: Object count range used for generation
        dataset_seed: Seed of the split

    Returns:
        The manifest written to ``manifest.json``
    """
    directory = Path(directory)
    (directory / "samples").mkdir(parents=True, exist_ok=True)

    for position, sample in enumerate(samples):
        image_path, mask_path, meta_path = _sample_paths(directory, position)
        ImageUtils.save_image(sample.image, image_path)
        ImageUtils.save_label_map(sample.labels, mask_path)
        record = sample.to_record()
        meta_path.write_text(record.model_dump_json(indent=2), encoding="utf-8")

    manifest = DatasetManifest(
        split=split,
        count=len(samples),
        canvas_size=lib.canvas_size,
        sprite_radius=lib.sprite_radius,
        library_seed=lib.seed,
        dataset_seed=dataset_seed,
        count_range=count_range,
        config_hash=config_hash,
        sprites=list(lib.sprites),
        backgrounds=list(lib.backgrounds),
        version=package_version(),
    )
    (directory / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {len(samples)} scenes to {directory}")
    return manifest


def read_manifest(directory: Union[str, Path]) -> DatasetManifest:
    """
    Read and validate a split manifest.

    Raises:
        LoadError: If the manifest is missing or corrupt
    """
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise LoadError("Dataset manifest not found", path=path)
    try:
        return DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except (ValidationError, ValueError) as e:
        raise LoadError(f"Corrupt dataset manifest: {e}", path=path)


def library_from_manifest(manifest: DatasetManifest) -> PrototypeLibrary:
    return PrototypeLibrary(
        sprites=tuple(manifest.sprites),
        backgrounds=tuple(tuple(c) for c in manifest.backgrounds),
        canvas_size=manifest.canvas_size,
        sprite_radius=manifest.sprite_radius,
        seed=manifest.library_seed,
    )


def read_dataset(directory: Union[str, Path]) -> List[SceneSample]:
    """
    Read a split written by ``write_dataset``.

    Returns:
        Samples identical to the written ones

    Raises:
        LoadError: If the manifest or any sample file is missing or corrupt
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    samples = [_read_sample(directory, i, manifest.canvas_size) for i in range(manifest.count)]
    logger.debug(f"Read {len(samples)} scenes from {directory}")
    return samples


def _read_sample(directory: Path, index: int, canvas_size: int) -> SceneSample:
    image_path, mask_path, meta_path = _sample_paths(directory, index)

    try:
        record = SceneRecord.model_validate_json(meta_path.read_text(encoding="utf-8"))
    except (OSError, ValidationError, ValueError) as e:
        raise LoadError(f"Unreadable scene record: {e}", path=meta_path, sample_index=index)

    try:
        image = ImageUtils.load_image(image_path)
    except (OSError, SyntaxError, ValueError) as e:
        raise LoadError(f"Unreadable scene image: {e}", path=image_path, sample_index=index)

    try:
        labels = ImageUtils.load_label_map(mask_path)
    except (OSError, SyntaxError, ValueError) as e:
        raise LoadError(f"Unreadable scene mask: {e}", path=mask_path, sample_index=index)

    expected = (canvas_size, canvas_size)
    if image.shape[:2] != expected or labels.shape != expected:
        raise LoadError("Scene files do not match the canvas size", path=mask_path, sample_index=index)
    count = len(record.identities)
    if labels.max(initial=0) > count:
        raise LoadError("Mask holds labels beyond the recorded objects", path=mask_path, sample_index=index)

    masks = labels[None, :, :] == np.arange(count + 1)[:, None, None]
    return SceneSample(
        image=image,
        masks=masks,
        identities=list(record.identities),
        extrinsics=list(record.extrinsics),
        seed=record.seed,
        background=record.background,
        index=record.index,
    )


class SceneDataset(Dataset):
    """Exposes a list of scenes to ``torch.utils.data.DataLoader``."""

    def __init__(self, samples: Sequence[SceneSample]):
        self.samples = list(samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> Dict[str, torch.Tensor]:
        sample = self.samples[idx]
        return {
            "image": torch.from_numpy(np.ascontiguousarray(sample.image.transpose(2, 0, 1))),
            "labels": torch.from_numpy(sample.labels),
            "index": torch.tensor(idx),
        }
