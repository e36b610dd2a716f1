"""
Unit tests for utility functions and exceptions.

Tests hashing, seed derivation, image and label-map files, logging helpers
and the exception hierarchy.
"""

import logging

import numpy as np
import pytest
from PIL import Image

from gold_ocl.exceptions import (
    GoldError,
    InvalidArgumentError,
    LoadError,
    NonFiniteLossError,
    UndefinedMetricError,
    UsageError,
)
from gold_ocl.utils import HashUtils, ImageUtils, LoggingUtils, SeedUtils, package_version


@pytest.mark.unit
class TestHashUtils:
    """Test stable hashing."""

    def test_key_order_does_not_matter(self):
        """Test that dictionaries hash independently of insertion order."""
        assert HashUtils.stable_hash({"a": 1, "b": [1, 2]}) == HashUtils.stable_hash({"b": [1, 2], "a": 1})

    def test_values_matter(self):
        """Test that different values give different hashes."""
        assert HashUtils.stable_hash({"a": 1}) != HashUtils.stable_hash({"a": 2})

    def test_file_hash(self, tmp_path):
        """Test hashing of file contents."""
        first, second = tmp_path / "a.bin", tmp_path / "b.bin"
        first.write_bytes(b"slots")
        second.write_bytes(b"slots")
        assert HashUtils.file_hash(first) == HashUtils.file_hash(second)


@pytest.mark.unit
class TestSeedUtils:
    """Test per-index seed derivation."""

    def test_deterministic(self):
        """Test that the same inputs give the same seed."""
        assert SeedUtils.derive_seed(3, 10) == SeedUtils.derive_seed(3, 10)

    def test_distinct_indices(self):
        """Test that seeds of a collection are pairwise distinct."""
        seeds = {SeedUtils.derive_seed(0, i) for i in range(200)}
        assert len(seeds) == 200

    def test_base_seed_matters(self):
        assert SeedUtils.derive_seed(0, 5) != SeedUtils.derive_seed(1, 5)

    def test_negative_rejected(self):
        """Test that negative seeds and indices are rejected."""
        with pytest.raises(ValueError):
            SeedUtils.derive_seed(-1, 0)
        with pytest.raises(ValueError):
            SeedUtils.derive_seed(0, -1)


@pytest.mark.unit
class TestImageUtils:
    """Test image and label-map files."""

    def test_image_file_is_lossless_for_8_bit_values(self, tmp_path):
        """Test that quantized images read back exactly."""
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, size=(8, 6, 3)).astype(np.float32) / 255.0
        ImageUtils.save_image(image, tmp_path / "nested" / "image.png")
        assert np.array_equal(ImageUtils.load_image(tmp_path / "nested" / "image.png"), image)

    def test_to_uint8_clamps(self):
        """Test clamping of out-of-range values."""
        pixels = ImageUtils.to_uint8(np.array([[[-1.0, 0.5, 2.0]]]))
        assert pixels.tolist() == [[[0, 128, 255]]]

    def test_label_map_round_trip(self, tmp_path):
        """Test that label maps keep their indices."""
        labels = np.array([[0, 1, 2], [7, 0, 255]])
        ImageUtils.save_label_map(labels, tmp_path / "mask.png")
        assert np.array_equal(ImageUtils.load_label_map(tmp_path / "mask.png"), labels)
        with Image.open(tmp_path / "mask.png") as img:
            assert img.mode == "P"

    def test_label_map_range(self, tmp_path):
        """Test that labels beyond the palette are rejected."""
        with pytest.raises(ValueError):
            ImageUtils.save_label_map(np.array([[256]]), tmp_path / "mask.png")

    def test_load_label_map_needs_palette(self, tmp_path):
        """Test that RGB files are not mistaken for label maps."""
        ImageUtils.save_image(np.zeros((2, 2, 3)), tmp_path / "rgb.png")
        with pytest.raises(ValueError):
            ImageUtils.load_label_map(tmp_path / "rgb.png")

    def test_colorize(self):
        """Test palette rendering of label maps."""
        colors = ImageUtils.colorize(np.array([[0, 1], [1, 0]]))
        assert colors.shape == (2, 2, 3)
        assert np.array_equal(colors[0, 0], np.zeros(3))
        assert np.array_equal(colors[0, 1], colors[1, 0])
        assert colors[0, 1].max() > 0

    def test_tile(self):
        """Test side-by-side placement with gaps."""
        strip = ImageUtils.tile([np.zeros((4, 3, 3)), np.zeros((4, 3, 3))], gap=1)
        assert strip.shape == (4, 7, 3)
        assert np.all(strip[:, 3] == 1.0)
        with pytest.raises(ValueError):
            ImageUtils.tile([])


@pytest.mark.unit
class TestLoggingUtils:
    """Test logging helpers."""

    def test_log_duration(self, caplog):
        """Test that decorated calls report their duration."""
        logger = logging.getLogger("gold_ocl.tests")

        @LoggingUtils.log_duration(logger)
        def work(x):
            return x * 2

        with caplog.at_level(logging.DEBUG, logger="gold_ocl.tests"):
            assert work(4) == 8
        assert "took" in caplog.text

    def test_package_version(self):
        assert package_version() == "0.1.0"


@pytest.mark.unit
class TestExceptions:
    """Test the exception hierarchy."""

    def test_hierarchy(self):
        """Test that every error derives from the package base class."""
        for cls in (InvalidArgumentError, LoadError, UndefinedMetricError, UsageError):
            assert issubclass(cls, GoldError)
        assert issubclass(InvalidArgumentError, ValueError)

    def test_load_error_message(self):
        """Test that load errors name the file and sample."""
        error = LoadError("Unreadable scene image", path="/data/x.png", sample_index=3)
        assert "(sample 3)" in str(error)
        assert "/data/x.png" in str(error)

    def test_non_finite_loss_breakdown(self):
        """Test that non-finite loss errors carry the loss terms."""
        error = NonFiniteLossError(5, 1, {"recon": float("nan"), "kl_id": 0.25})
        assert error.details["step"] == 5
        assert "recon=nan" in str(error)
        assert "kl_id=0.25" in str(error)
