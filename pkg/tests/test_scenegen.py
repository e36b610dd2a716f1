"""
Unit tests for the sprite scene generator.
"""

import json

import numpy as np
import pytest

from gold_ocl.config import SceneConfig
from gold_ocl.exceptions import InvalidArgumentError, LoadError
from gold_ocl.models import ExtrinsicParams
from gold_ocl.scenegen import (
    SceneDataset,
    canonical_extrinsics,
    generate_dataset,
    make_prototype_library,
    read_dataset,
    read_manifest,
    render_scene,
    sample_scene,
    shape_mask,
    write_dataset,
)


@pytest.mark.unit
class TestPrototypeLibrary:
    """Test cases for prototype libraries."""

    def test_indices_are_one_based(self):
        lib = make_prototype_library(5, seed=3, canvas_size=32)
        assert [s.index for s in lib.sprites] == [1, 2, 3, 4, 5]
        assert lib.sprite(1) is lib.sprites[0]

    def test_prototypes_render_distinctly(self):
        lib = make_prototype_library(10, seed=7, canvas_size=32)
        renders = [
            render_scene(lib, [c], [canonical_extrinsics()])[0] for c in range(1, 11)
        ]
        for i in range(10):
            for j in range(i + 1, 10):
                assert not np.array_equal(renders[i], renders[j])

    def test_same_seed_same_library(self):
        assert make_prototype_library(6, seed=1) == make_prototype_library(6, seed=1)

    def test_out_of_range_lookup(self):
        lib = make_prototype_library(3, seed=0, canvas_size=16)
        with pytest.raises(InvalidArgumentError):
            lib.sprite(0)
        with pytest.raises(InvalidArgumentError):
            lib.sprite(4)

    def test_invalid_sizes(self):
        with pytest.raises(InvalidArgumentError):
            make_prototype_library(0, seed=0)
        with pytest.raises(InvalidArgumentError):
            make_prototype_library(1000, seed=0)
        with pytest.raises(InvalidArgumentError):
            make_prototype_library(3, seed=0, num_backgrounds=0)


@pytest.mark.unit
class TestRendering:
    """Test cases for scene rasterization."""

    def test_unknown_shape(self):
        with pytest.raises(InvalidArgumentError):
            shape_mask("blob", np.zeros(1), np.zeros(1))

    def test_empty_scene_is_background(self):
        lib = make_prototype_library(3, seed=0, canvas_size=16)
        image, masks = render_scene(lib, [], [], background=0)
        assert masks.shape == (1, 16, 16)
        assert masks[0].all()
        expected = np.asarray(lib.backgrounds[0], dtype=np.float32) / 255.0
        np.testing.assert_allclose(image, np.broadcast_to(expected, image.shape), atol=1e-7)

    def test_masks_partition_the_canvas(self):
        lib = make_prototype_library(4, seed=2, canvas_size=32)
        sample = sample_scene(lib, (3, 3), seed=11)
        assert sample.masks.shape == (4, 32, 32)
        assert (sample.masks.sum(axis=0) == 1).all()

    def test_front_object_occludes(self):
        lib = make_prototype_library(3, seed=0, canvas_size=32)
        center = dict(position=(0.5, 0.5), scale=1.0, rotation=0.0)
        back = ExtrinsicParams(depth_rank=1, **center)
        front = ExtrinsicParams(depth_rank=2, **center)
        image, masks = render_scene(lib, [1, 2], [front, back])
        assert masks[1, 16, 16]
        assert not masks[2, 16, 16]
        expected = np.asarray(lib.sprite(1).color, dtype=np.float32) / 255.0
        np.testing.assert_allclose(image[16, 16], expected, atol=1e-7)

    def test_mismatched_extrinsics(self):
        lib = make_prototype_library(3, seed=0, canvas_size=16)
        with pytest.raises(InvalidArgumentError):
            render_scene(lib, [1, 2], [canonical_extrinsics()])

    def test_bad_background(self):
        lib = make_prototype_library(3, seed=0, canvas_size=16, num_backgrounds=1)
        with pytest.raises(InvalidArgumentError):
            render_scene(lib, [], [], background=1)


@pytest.mark.unit
class TestSampling:
    """Test cases for seeded scene sampling."""

    def test_same_seed_is_bit_exact(self):
        lib = make_prototype_library(4, seed=0, canvas_size=32)
        a = sample_scene(lib, (1, 4), seed=42)
        b = sample_scene(lib, (1, 4), seed=42)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.masks, b.masks)
        assert a.identities == b.identities
        assert a.extrinsics == b.extrinsics

    def test_count_within_range(self):
        lib = make_prototype_library(4, seed=0, canvas_size=16)
        for seed in range(20):
            assert 2 <= sample_scene(lib, (2, 3), seed=seed).num_objects <= 3

    def test_zero_objects(self):
        lib = make_prototype_library(3, seed=0, canvas_size=16)
        sample = sample_scene(lib, (0, 0), seed=5)
        assert sample.num_objects == 0
        assert (sample.labels == 0).all()

    def test_no_repeats(self):
        lib = make_prototype_library(4, seed=0, canvas_size=16)
        for seed in range(10):
            identities = sample_scene(lib, (4, 4), seed=seed, allow_repeats=False).identities
            assert sorted(identities) == [1, 2, 3, 4]

    def test_no_repeats_needs_enough_prototypes(self):
        lib = make_prototype_library(2, seed=0, canvas_size=16)
        with pytest.raises(InvalidArgumentError):
            sample_scene(lib, (3, 3), seed=0, allow_repeats=False)

    def test_extrinsics_respect_ranges(self):
        lib = make_prototype_library(3, seed=0, canvas_size=32)
        sample = sample_scene(lib, (5, 5), seed=9, scale_range=(0.9, 1.1), position_margin=0.2)
        assert sorted(e.depth_rank for e in sample.extrinsics) == [1, 2, 3, 4, 5]
        for e in sample.extrinsics:
            assert 0.9 <= e.scale <= 1.1
            assert all(0.2 <= c <= 0.8 for c in e.position)

    def test_dataset_is_order_independent(self, tiny_library, tiny_config):
        full = generate_dataset(tiny_library, tiny_config.scene, 5, dataset_seed=3)
        prefix = generate_dataset(tiny_library, tiny_config.scene, 2, dataset_seed=3)
        for a, b in zip(full, prefix):
            assert np.array_equal(a.image, b.image)
        assert [s.index for s in full] == [0, 1, 2, 3, 4]

    def test_dataset_seeds_differ_between_splits(self, tiny_library, tiny_config):
        train = generate_dataset(tiny_library, tiny_config.scene, 3, dataset_seed=0)
        test = generate_dataset(tiny_library, tiny_config.scene, 3, dataset_seed=1)
        assert [s.seed for s in train] != [s.seed for s in test]


@pytest.mark.unit
class TestDatasetFiles:
    """Test cases for writing and reading splits."""

    def test_written_split_reads_back_identically(self, tmp_path, tiny_library, tiny_samples):
        manifest = write_dataset(
            tiny_samples, tmp_path, tiny_library, "abc", split="train",
            count_range=(1, 2), dataset_seed=0,
        )
        assert manifest.count == len(tiny_samples)
        restored = read_dataset(tmp_path)
        assert len(restored) == len(tiny_samples)
        for original, loaded in zip(tiny_samples, restored):
            assert np.array_equal(original.image, loaded.image)
            assert np.array_equal(original.masks, loaded.masks)
            assert original.identities == loaded.identities
            assert original.extrinsics == loaded.extrinsics
            assert original.seed == loaded.seed
            assert original.background == loaded.background
            assert original.index == loaded.index

    def test_subset_keeps_sample_indices(self, tmp_path, tiny_library, tiny_samples):
        subset = list(tiny_samples[2:4])
        write_dataset(subset, tmp_path, tiny_library, "abc")
        restored = read_dataset(tmp_path)
        assert [s.index for s in restored] == [2, 3]
        assert [s.seed for s in restored] == [s.seed for s in subset]
        assert (tmp_path / "samples" / "000000_meta.json").exists()

    def test_manifest_contents(self, tmp_path, tiny_library, tiny_samples):
        write_dataset(tiny_samples, tmp_path, tiny_library, "abc", count_range=(1, 2))
        manifest = read_manifest(tmp_path)
        assert manifest.config_hash == "abc"
        assert manifest.canvas_size == 16
        assert len(manifest.sprites) == len(tiny_library)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(LoadError):
            read_dataset(tmp_path)

    def test_corrupt_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(LoadError):
            read_manifest(tmp_path)

    def test_missing_sample_names_index(self, tmp_path, tiny_library, tiny_samples):
        write_dataset(tiny_samples, tmp_path, tiny_library, "abc")
        (tmp_path / "samples" / "000001_image.png").unlink()
        with pytest.raises(LoadError) as exc_info:
            read_dataset(tmp_path)
        assert exc_info.value.sample_index == 1

    def test_mask_beyond_record(self, tmp_path, tiny_library, tiny_samples):
        write_dataset(tiny_samples, tmp_path, tiny_library, "abc")
        meta = tmp_path / "samples" / "000000_meta.json"
        record = json.loads(meta.read_text(encoding="utf-8"))
        if not record["identities"]:
            pytest.skip("first tiny scene holds no objects")
        record["identities"] = []
        record["extrinsics"] = []
        meta.write_text(json.dumps(record), encoding="utf-8")
        with pytest.raises(LoadError):
            read_dataset(tmp_path)


@pytest.mark.unit
class TestSceneDataset:
    """Test cases for the torch dataset wrapper."""

    def test_item_layout(self, tiny_samples):
        dataset = SceneDataset(tiny_samples)
        item = dataset[0]
        assert len(dataset) == len(tiny_samples)
        assert tuple(item["image"].shape) == (3, 16, 16)
        assert tuple(item["labels"].shape) == (16, 16)
        assert int(item["index"]) == 0

    def test_scene_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            SceneConfig(min_objects=4, max_objects=2)
        with pytest.raises(InvalidArgumentError):
            SceneConfig(num_prototypes=2, max_objects=3, allow_repeats=False)
