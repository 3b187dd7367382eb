"""Manifest loading, splitting, channel stacking, augmentation, loaders."""

import json

import numpy as np
import pytest
import torch

from nn_scenes import build_manifest
from nnsep.chipio import read_raster


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    """Ten 64-pixel scenes; enough for split/loader tests."""
    return build_manifest(tmp_path_factory.mktemp("tiny-scenes"), 10, seed=42, size=64)
from nnsep.data import (
    DIST_NORM,
    ChipDataset,
    load_manifest,
    make_loaders,
    split_records,
    stack_channels,
)


class TestManifest:
    def test_load_resolves_paths(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        assert len(records) == 10
        first = records[0]
        for path in (
            first.mask,
            first.skeleton,
            first.distance,
            first.label,
            first.skeleton_label,
        ):
            assert path.startswith("/")
            read_raster(path)  # must exist and parse

    def test_missing_channels_rejected(self, tmp_path):
        path = build_manifest(tmp_path, 3, seed=0, size=32)
        doc = json.loads(open(path).read())
        for scene in doc["scenes"]:
            del scene["input_c2"]
        with open(path, "w") as f:
            json.dump(doc, f)
        with pytest.raises(ValueError, match="nn_channels"):
            load_manifest(path)

    def test_empty_manifest_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"scenes": []}))
        with pytest.raises(ValueError, match="no scenes"):
            load_manifest(path)


class TestSplit:
    def test_eighty_twenty(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        train, val = split_records(records, 0.2)
        assert len(train) == 8 and len(val) == 2
        assert train + val == records  # order preserved, fractions sum to 1

    def test_small_counts_keep_both_sides_nonempty(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        train, val = split_records(records[:2], 0.2)
        assert len(train) == 1 and len(val) == 1

    def test_validation(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        with pytest.raises(ValueError, match="val_fraction"):
            split_records(records, 0.0)
        with pytest.raises(ValueError, match="val_fraction"):
            split_records(records, 1.0)
        with pytest.raises(ValueError, match="at least 2"):
            split_records(records[:1], 0.2)


class TestStacking:
    def test_channels_and_scaling(self, tiny_manifest):
        rec = load_manifest(tiny_manifest)[0]
        mask = read_raster(rec.mask)
        skel = read_raster(rec.skeleton)
        dist = read_raster(rec.distance)
        x = stack_channels(mask, skel, dist)
        assert x.shape == (3, 64, 64) and x.dtype == np.float32
        np.testing.assert_array_equal(x[0], mask.data)
        np.testing.assert_array_equal(x[1], skel.data)
        np.testing.assert_allclose(x[2], dist.data / DIST_NORM)


class TestDataset:
    def test_item_shapes_and_dtypes(self, tiny_manifest):
        ds = ChipDataset(load_manifest(tiny_manifest))
        x, y, s = ds[0]
        assert x.shape == (3, 64, 64) and x.dtype == torch.float32
        assert y.shape == (64, 64) and y.dtype == torch.int64
        assert s.shape == (1, 64, 64) and s.dtype == torch.float32
        assert set(np.unique(y.numpy())) <= {0, 1, 2}

    def test_unaugmented_matches_files(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        ds = ChipDataset(records)
        x, y, s = ds[2]
        rec = records[2]
        np.testing.assert_array_equal(x[0].numpy(), read_raster(rec.mask).data)
        np.testing.assert_array_equal(y.numpy(), read_raster(rec.label).data)
        np.testing.assert_array_equal(
            s[0].numpy(), read_raster(rec.skeleton_label).data
        )

    def test_augmentation_deterministic_per_key(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        a = ChipDataset(records, augment=True, seed=5)
        b = ChipDataset(records, augment=True, seed=5)
        xa, ya, sa = a[1]
        xb, yb, sb = b[1]
        assert torch.equal(xa, xb) and torch.equal(ya, yb) and torch.equal(sa, sb)

    def test_augmentation_varies_with_epoch_and_seed(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        ds = ChipDataset(records, augment=True, seed=5)
        base = ds[1][0]
        changed = False
        for epoch in (1, 2, 3):
            ds.set_epoch(epoch)
            if not torch.equal(ds[1][0], base):
                changed = True
                break
        assert changed
        other_seed = ChipDataset(records, augment=True, seed=6)
        assert not torch.equal(other_seed[1][0], base)

    def test_augmented_values_stay_valid(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        ds = ChipDataset(records, augment=True, seed=9)
        for epoch in range(3):
            ds.set_epoch(epoch)
            x, y, s = ds[0]
            assert set(np.unique(x[0].numpy())) <= {0.0, 1.0}
            assert set(np.unique(y.numpy())) <= {0, 1, 2}
            assert set(np.unique(s.numpy())) <= {0.0, 1.0}
            # class labels only where the mask has foreground
            assert torch.all((y > 0) == (x[0] > 0))


class TestLoaders:
    def test_train_loader_batching_and_drop_last(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        train, val = split_records(records, 0.2)
        train_loader, val_loader, _ = make_loaders(train, val, batch_size=3, seed=0)
        # 8 train scenes at batch 3 -> two full batches, remainder dropped
        batches = [b[0].shape[0] for b in train_loader]
        assert batches == [3, 3]
        val_counts = sum(b[0].shape[0] for b in val_loader)
        assert val_counts == len(val)

    def test_small_dataset_keeps_its_single_batch(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        train, val = split_records(records, 0.2)
        train_loader, _, _ = make_loaders(train[:4], val, batch_size=8, seed=0)
        batches = [b[0].shape[0] for b in train_loader]
        assert batches == [4]

    def test_shuffle_deterministic_given_seed(self, tiny_manifest):
        records = load_manifest(tiny_manifest)
        train, val = split_records(records, 0.2)

        def first_batch_labels(seed):
            loader, _, _ = make_loaders(
                train, val, batch_size=4, seed=seed, augment=False
            )
            x, y, _ = next(iter(loader))
            return y.clone()

        assert torch.equal(first_batch_labels(7), first_batch_labels(7))
        assert not torch.equal(first_batch_labels(7), first_batch_labels(8))
