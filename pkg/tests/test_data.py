import numpy as np
import pytest

from fedbalance.data import (
    DatasetFormatError,
    Image,
    LabeledDataset,
    LabeledExample,
    class_template,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_train_test,
)
from fedbalance.rng import RngStream


class TestImage:
    def test_validates_range(self):
        with pytest.raises(ValueError, match="outside"):
            Image(np.array([[0.0, 1.5]]))
        with pytest.raises(ValueError, match="outside"):
            Image(np.array([[-0.1, 0.5]]))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            Image(np.zeros(4))
        with pytest.raises(ValueError):
            Image(np.zeros((0, 4)))

    def test_pixels_are_read_only(self):
        img = Image(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 1.0

    def test_equality_is_bitwise(self):
        a = Image(np.full((2, 2), 0.25))
        b = Image(np.full((2, 2), 0.25))
        c = Image(np.full((2, 2), 0.25 + 1e-16))
        assert a == b
        assert not (a == c) or np.array_equal(b.pixels, c.pixels)


class TestGenerateSynthetic:
    def test_construction_counts(self):
        ds = generate_synthetic(4, 100, (16, 16), 0.1, RngStream(7, "data"))
        assert len(ds) == 400
        assert ds.label_histogram().tolist() == [100, 100, 100, 100]
        assert ds.image_shape == (16, 16)

    def test_zero_noise_yields_templates(self):
        ds = generate_synthetic(2, 1, (8, 8), 0.0, RngStream(3, "data"))
        for c in range(2):
            expected = np.clip(class_template(c, (8, 8)), 0.0, 1.0)
            assert np.array_equal(ds.examples[c].image.pixels, expected)
            assert ds.examples[c].label == c

    def test_deterministic(self):
        a = generate_synthetic(3, 10, (8, 8), 0.2, RngStream(11, "data"))
        b = generate_synthetic(3, 10, (8, 8), 0.2, RngStream(11, "data"))
        assert a == b

    def test_rejects_bad_arguments(self):
        rng = RngStream(0, "data")
        with pytest.raises(ValueError):
            generate_synthetic(1, 5, (8, 8), 0.1, rng)
        with pytest.raises(ValueError):
            generate_synthetic(2, 0, (8, 8), 0.1, rng)
        with pytest.raises(ValueError):
            generate_synthetic(2, 5, (0, 8), 0.1, rng)
        with pytest.raises(ValueError):
            generate_synthetic(2, 5, (8, 8), -0.1, rng)

    def test_pixels_in_range(self):
        ds = generate_synthetic(3, 5, (8, 8), 0.6, RngStream(2, "data"))
        for ex in ds.examples:
            assert ex.image.pixels.min() >= 0.0
            assert ex.image.pixels.max() <= 1.0


class TestSplit:
    def test_stratified_arithmetic(self):
        ds = generate_synthetic(4, 100, (8, 8), 0.1, RngStream(5, "data"))
        train, test = split_train_test(ds, 0.1, RngStream(5, "split"))
        assert len(test) == 40
        assert len(train) == 360
        assert test.label_histogram().tolist() == [10, 10, 10, 10]

    def test_floor_rounding_per_label(self):
        ds = generate_synthetic(2, 7, (4, 4), 0.0, RngStream(1, "data"))
        train, test = split_train_test(ds, 0.25, RngStream(1, "split"))
        # floor(0.25 * 7) = 1 per label; remainder stays in train
        assert test.label_histogram().tolist() == [1, 1]
        assert train.label_histogram().tolist() == [6, 6]

    def test_disjoint_union(self):
        ds = generate_synthetic(3, 20, (6, 6), 0.3, RngStream(9, "data"))
        train, test = split_train_test(ds, 0.2, RngStream(9, "split"))
        combined = sorted(
            [ex.image.pixels.tobytes() for ex in train.examples]
            + [ex.image.pixels.tobytes() for ex in test.examples]
        )
        original = sorted(ex.image.pixels.tobytes() for ex in ds.examples)
        assert combined == original
        assert len(train) + len(test) == len(ds)

    def test_deterministic(self):
        ds = generate_synthetic(3, 20, (6, 6), 0.3, RngStream(9, "data"))
        a = split_train_test(ds, 0.2, RngStream(4, "split"))
        b = split_train_test(ds, 0.2, RngStream(4, "split"))
        assert a[0] == b[0] and a[1] == b[1]

    def test_rejects_bad_fraction_and_empty_class(self):
        ds = generate_synthetic(2, 5, (4, 4), 0.0, RngStream(1, "data"))
        with pytest.raises(ValueError):
            split_train_test(ds, 0.0, RngStream(1, "split"))
        with pytest.raises(ValueError):
            split_train_test(ds, 1.0, RngStream(1, "split"))
        hollow = LabeledDataset(3, ds.examples, ds.image_shape)  # class 2 empty
        with pytest.raises(ValueError, match="class 2"):
            split_train_test(hollow, 0.2, RngStream(1, "split"))


class TestDatasetFile:
    def _quantized(self, ds):
        examples = tuple(
            LabeledExample(Image(np.rint(ex.image.pixels * 255.0) / 255.0), ex.label)
            for ex in ds.examples
        )
        return LabeledDataset(ds.num_classes, examples, ds.image_shape)

    def test_round_trip_bit_exact_on_grid(self, tmp_path):
        ds = self._quantized(generate_synthetic(3, 8, (8, 8), 0.2, RngStream(2, "data")))
        path = tmp_path / "ds.fbds"
        save_dataset(ds, path)
        assert load_dataset(path) == ds

    def test_save_load_save_is_stable(self, tmp_path):
        ds = generate_synthetic(3, 8, (8, 8), 0.2, RngStream(2, "data"))
        p1, p2 = tmp_path / "a.fbds", tmp_path / "b.fbds"
        save_dataset(ds, p1)
        once = load_dataset(p1)
        save_dataset(once, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert load_dataset(p2) == once

    def test_quantization_error_bounded(self, tmp_path):
        ds = generate_synthetic(2, 4, (8, 8), 0.2, RngStream(3, "data"))
        path = tmp_path / "ds.fbds"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        for a, b in zip(ds.examples, loaded.examples):
            assert np.abs(a.image.pixels - b.image.pixels).max() <= 0.5 / 255.0 + 1e-12

    def test_empty_dataset_round_trips(self, tmp_path):
        ds = LabeledDataset(3, (), (4, 4))
        path = tmp_path / "empty.fbds"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert len(loaded) == 0
        assert loaded.num_classes == 3
        assert loaded.image_shape == (4, 4)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fbds"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(DatasetFormatError, match="magic"):
            load_dataset(path)

    def test_truncated_payload(self, tmp_path):
        ds = generate_synthetic(2, 2, (4, 4), 0.0, RngStream(1, "data"))
        path = tmp_path / "trunc.fbds"
        save_dataset(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(DatasetFormatError, match="truncated"):
            load_dataset(path)

    def test_label_out_of_range(self, tmp_path):
        ds = generate_synthetic(2, 1, (2, 2), 0.0, RngStream(1, "data"))
        path = tmp_path / "label.fbds"
        save_dataset(ds, path)
        blob = bytearray(path.read_bytes())
        blob[16] = 2  # first example's label u16 -> num_classes
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetFormatError, match="label out of range"):
            load_dataset(path)
