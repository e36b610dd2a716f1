"""
Utility Functions and Helpers

This module provides helpers shared by the data, model and command layers:
stable hashing for provenance, per-index seed derivation, lossless image and
palette-mask files, and call timing for the log.
"""

import functools
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np
from PIL import Image

# Configure module logger
logger = logging.getLogger(__name__)


class HashUtils:
    """Utilities for stable content hashes."""

    @staticmethod
    def stable_hash(data: Any) -> str:
        """
        Hash JSON-serializable data independently of key order.

        Args:
            data: JSON-serializable value

        Returns:
            Hex digest of the sorted JSON encoding
        """
        encoded = json.dumps(data, sort_keys=True, default=str)
        return hashlib.md5(encoded.encode()).hexdigest()

    @staticmethod
    def file_hash(path: Union[str, Path]) -> str:
        """Hex digest of a file's bytes."""
        return hashlib.md5(Path(path).read_bytes()).hexdigest()


class SeedUtils:
    """Utilities for deriving independent seeds."""

    @staticmethod
    def derive_seed(base_seed: int, index: int) -> int:
        """
        Derive an order-independent seed for item ``index`` of a seeded collection.

        Args:
            base_seed: Seed of the whole collection
            index: Position of the item

        Returns:
            32-bit seed that depends only on (base_seed, index)
        """
        if base_seed < 0 or index < 0:
            raise ValueError("Seeds and indices must be non-negative")
        sequence = np.random.SeedSequence([base_seed, index])
        return int(sequence.generate_state(1, dtype=np.uint32)[0])


class ImageUtils:
    """Utilities for lossless image and mask files."""

    @staticmethod
    def to_uint8(image: np.ndarray) -> np.ndarray:
        """Clamp a float H×W×3 image to [0, 1] and quantize it to 8 bits."""
        clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
        return np.rint(clipped * 255.0).astype(np.uint8)

    @staticmethod
    def save_image(image: np.ndarray, path: Union[str, Path]) -> None:
        """
        Save a float H×W×3 image in [0, 1] as PNG.

        Args:
            image: Image array
            path: Destination file
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(ImageUtils.to_uint8(image)).save(path, format="PNG")

    @staticmethod
    def load_image(path: Union[str, Path]) -> np.ndarray:
        """Load a PNG written by ``save_image`` back to float32 values in [0, 1]."""
        with Image.open(path) as img:
            img.load()
            data = np.asarray(img.convert("RGB"), dtype=np.uint8)
        return data.astype(np.float32) / np.float32(255.0)

    @staticmethod
    def save_label_map(labels: np.ndarray, path: Union[str, Path]) -> None:
        """
        Save an integer label map as an indexed-palette PNG.

        Args:
            labels: H×W integers in [0, 255]
            path: Destination file
        """
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise ValueError("Label values must fit in a 256-entry palette")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        height, width = labels.shape
        img = Image.frombytes("P", (width, height), np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
        img.putpalette(ImageUtils.palette())
        img.save(path, format="PNG")

    @staticmethod
    def load_label_map(path: Union[str, Path]) -> np.ndarray:
        """Load a palette PNG back to its H×W label indices."""
        with Image.open(path) as img:
            img.load()
            if img.mode != "P":
                raise ValueError(f"Expected a palette image, got mode {img.mode}")
            return np.asarray(img, dtype=np.uint8).astype(np.int64)

    @staticmethod
    def palette() -> list:
        """Fixed 256-color palette; index 0 is black."""
        rng = np.random.default_rng(0)
        colors = rng.integers(64, 256, size=(256, 3), dtype=np.int64)
        colors[0] = 0
        return colors.reshape(-1).tolist()

    @staticmethod
    def colorize(labels: np.ndarray) -> np.ndarray:
        """Render a label map with the fixed palette as a float RGB image."""
        table = np.asarray(ImageUtils.palette(), dtype=np.float32).reshape(256, 3) / 255.0
        return table[np.asarray(labels, dtype=np.int64) % 256]

    @staticmethod
    def tile(images: Sequence[np.ndarray], gap: int = 2) -> np.ndarray:
        """Place equally sized H×W×3 images side by side on a white strip."""
        if not images:
            raise ValueError("Nothing to tile")
        height, width, _ = images[0].shape
        strip = np.ones((height, len(images) * (width + gap) - gap, 3), dtype=np.float32)
        for i, image in enumerate(images):
            start = i * (width + gap)
            strip[:, start:start + width] = image
        return strip


class LoggingUtils:
    """Utilities for logging."""

    @staticmethod
    def log_duration(logger_instance: Optional[logging.Logger] = None) -> Callable:
        """
        Decorator that logs how long a call took at DEBUG level.

        Args:
            logger_instance: Logger to use (defaults to this module's logger)
        """
        def decorator(func: Callable) -> Callable:
            @functools.wraps(func)
            def wrapper(*args, **kwargs):
                started = time.perf_counter()
                result = func(*args, **kwargs)
                (logger_instance or logger).debug(
                    f"{func.__qualname__} took {time.perf_counter() - started:.3f}s"
                )
                return result
            return wrapper
        return decorator


def package_version() -> str:
    """Version string of the installed package."""
    from . import __version__
    return __version__
