"""
Unit tests for Pydantic data models.

Tests the records written beside datasets, checkpoints and command outputs
for proper validation and serialization.
"""

import math

import pytest
from pydantic import ValidationError

from gold_ocl.models import (
    CheckpointManifest,
    ExtrinsicParams,
    MetricRecord,
    ObjectSpec,
    ProvenanceRecord,
    SceneRecord,
    SpriteSpec,
)


@pytest.mark.unit
class TestExtrinsicParams:
    """Test sprite placement validation."""

    def test_valid(self):
        """Test that in-range placements are accepted."""
        params = ExtrinsicParams(position=(0.2, 0.9), scale=1.1, rotation=3.0, depth_rank=2)
        assert params.position == (0.2, 0.9)

    def test_invalid_values(self):
        """Test that off-canvas, non-positive and out-of-range values are rejected."""
        base = dict(position=(0.5, 0.5), scale=1.0, rotation=0.0, depth_rank=1)
        for change in (
            {"position": (1.2, 0.5)},
            {"scale": 0.0},
            {"rotation": 2 * math.pi},
            {"rotation": -0.1},
            {"depth_rank": 0},
        ):
            with pytest.raises(ValidationError):
                ExtrinsicParams(**{**base, **change})


@pytest.mark.unit
class TestSpriteSpec:
    """Test prototype records."""

    def test_valid(self):
        sprite = SpriteSpec(index=1, shape="star", color=(255, 0, 10))
        assert sprite.shape == "star"

    def test_unknown_shape(self):
        """Test that shapes outside the vocabulary are rejected."""
        with pytest.raises(ValidationError):
            SpriteSpec(index=1, shape="blob", color=(0, 0, 0))

    def test_color_range(self):
        with pytest.raises(ValidationError):
            SpriteSpec(index=1, shape="circle", color=(0, 300, 0))

    def test_one_based(self):
        with pytest.raises(ValidationError):
            SpriteSpec(index=0, shape="circle", color=(0, 0, 0))


@pytest.mark.unit
class TestRecords:
    """Test JSON records."""

    def test_scene_record_json(self):
        """Test that scene records survive a JSON round trip."""
        record = SceneRecord(
            index=0,
            seed=12,
            background=1,
            identities=[3],
            extrinsics=[ExtrinsicParams(position=(0.5, 0.5), scale=1.0, rotation=0.0, depth_rank=1)],
        )
        assert SceneRecord.model_validate_json(record.model_dump_json()) == record

    def test_extra_fields_ignored(self):
        """Test that unknown fields in stored records are ignored."""
        record = SceneRecord.model_validate({"index": 0, "seed": 0, "background": 0, "note": "x"})
        assert not hasattr(record, "note")

    def test_checkpoint_manifest(self):
        manifest = CheckpointManifest(
            variant="full", config_hash="h", image_shape=(64, 64), patch_size=8, num_patches=64,
            feature_size=64, num_slots=7, num_prototypes=10, blob_hash="b",
        )
        assert manifest.steps == {}

    def test_provenance_is_reproducible(self):
        """Test that equal inputs serialize to identical provenance records."""
        first = ProvenanceRecord(command="train", config_hash="h", seed=0, version="0.1.0")
        second = ProvenanceRecord(command="train", config_hash="h", seed=0, version="0.1.0")
        assert first.model_dump_json() == second.model_dump_json()
        assert "created_at" not in first.model_dump()

    def test_metric_record_std(self):
        with pytest.raises(ValidationError):
            MetricRecord(variant="full", dataset="d", metric="ACC", mean=0.5, std=-0.1)


@pytest.mark.unit
class TestObjectSpec:
    """Test compose requests."""

    def test_defaults(self):
        spec = ObjectSpec(prototype=2)
        assert spec.z_ext is None and spec.reference_slot is None

    def test_exclusive_sources(self):
        """Test that explicit and copied extrinsics cannot be combined."""
        with pytest.raises(ValidationError):
            ObjectSpec(prototype=1, z_ext=[0.0, 1.0], reference_slot=2)

    def test_unknown_fields_rejected(self):
        """Test that misspelled request fields are reported."""
        with pytest.raises(ValidationError):
            ObjectSpec(prototype=1, slot=2)

    def test_one_based_prototype(self):
        with pytest.raises(ValidationError):
            ObjectSpec(prototype=0)


@pytest.mark.unit
class TestPackageExports:
    """Test the package-level public API."""

    def test_every_export_resolves(self):
        import gold_ocl

        for name in gold_ocl.__all__:
            assert getattr(gold_ocl, name) is not None
        assert callable(gold_ocl.Trainer)
        assert callable(gold_ocl.main)
