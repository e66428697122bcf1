import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epanet.data import (
    letterbox,
    load_yolo_dataset,
    materialize_dataset,
    synth_dataset,
)
from epanet.errors import ConfigurationError


def write_sample_dataset(root, split="train"):
    images = root / "images" / split
    labels = root / "labels" / split
    images.mkdir(parents=True)
    labels.mkdir(parents=True)
    from PIL import Image

    Image.new("RGB", (100, 100), (10, 20, 30)).save(images / "a.png")
    Image.new("RGB", (100, 100), (10, 20, 30)).save(images / "b.png")
    Image.new("RGB", (100, 100), (10, 20, 30)).save(images / "c.png")
    labels.joinpath("a.txt").write_text("0 0.5 0.5 0.5 0.5\n")
    labels.joinpath("b.txt").write_text("")  # empty label file
    # c.png has no label file at all: background image
    return root


class TestYoloLoader:
    def test_label_line_to_pixel_corners(self, tmp_path):
        ds = load_yolo_dataset(write_sample_dataset(tmp_path), "train")
        sample = ds[0]
        assert sample.image_id == "a"
        assert len(sample.boxes) == 1
        assert sample.boxes[0].class_id == 0
        assert sample.boxes[0].box == (25.0, 25.0, 75.0, 75.0)

    def test_empty_label_file_gives_zero_boxes(self, tmp_path):
        ds = load_yolo_dataset(write_sample_dataset(tmp_path), "train")
        assert ds[1].boxes == []

    def test_missing_label_file_is_background(self, tmp_path):
        ds = load_yolo_dataset(write_sample_dataset(tmp_path), "train")
        assert ds[2].boxes == []

    def test_zero_size_box_skipped_and_counted(self, tmp_path):
        root = write_sample_dataset(tmp_path)
        (root / "labels" / "train" / "a.txt").write_text(
            "0 0.5 0.5 0 0\n0 0.25 0.25 0.2 0.2\nnot a line\n"
        )
        ds = load_yolo_dataset(root, "train")
        sample = ds[0]
        assert len(sample.boxes) == 1
        assert ds.warning_counts["a.txt"] == 2

    def test_class_id_filter(self, tmp_path):
        root = write_sample_dataset(tmp_path)
        (root / "labels" / "train" / "a.txt").write_text("5 0.5 0.5 0.5 0.5\n")
        ds = load_yolo_dataset(root, "train", num_classes=3)
        assert ds[0].boxes == []

    def test_missing_split_raises(self, tmp_path):
        write_sample_dataset(tmp_path)
        with pytest.raises(ConfigurationError):
            load_yolo_dataset(tmp_path, "val")

    def test_loader_never_yields_invalid_boxes(self, tmp_path):
        root = write_sample_dataset(tmp_path)
        (root / "labels" / "train" / "a.txt").write_text(
            "0 0.05 0.5 0.2 0.4\n0 0.99 0.99 0.3 0.3\n1 1.5 0.5 0.2 0.2\n"
        )
        for sample in load_yolo_dataset(root, "train"):
            for b in sample.boxes:
                x1, y1, x2, y2 = b.box
                assert 0 <= x1 < x2 <= 100 and 0 <= y1 < y2 <= 100
                assert b.area() > 0


class TestSynth:
    def test_deterministic_bitwise(self):
        a = synth_dataset(seed=7, n=16, size=64)
        b = synth_dataset(seed=7, n=16, size=64)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert sa.boxes == sb.boxes
            assert sa.image_id == sb.image_id

    def test_different_seed_differs(self):
        a = synth_dataset(seed=7, n=2, size=64)
        b = synth_dataset(seed=8, n=2, size=64)
        assert not np.array_equal(a[0].image, b[0].image)

    def test_boxes_valid_and_inside(self):
        for s in synth_dataset(seed=5, n=32, size=64):
            h, w = s.image.shape[:2]
            assert 1 <= len(s.boxes) <= 4
            for b in s.boxes:
                x1, y1, x2, y2 = b.box
                assert 0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h
                assert b.area() >= 1.0

    def test_class_histogram_near_uniform(self):
        classes = 3
        counts = [0] * classes
        for s in synth_dataset(seed=42, n=1000, size=32 * 2, classes=classes):
            for b in s.boxes:
                counts[b.class_id] += 1
        total = sum(counts)
        for c in counts:
            assert abs(c / total - 1 / classes) < 0.10 / classes * 3  # +-10% of uniform

    def test_invalid_args(self):
        with pytest.raises(ConfigurationError):
            synth_dataset(seed=0, n=0)
        with pytest.raises(ConfigurationError):
            synth_dataset(seed=0, n=1, size=60)

    def test_materialize_round_trip(self, tmp_path):
        samples = synth_dataset(seed=9, n=4, size=64)
        materialize_dataset(samples, tmp_path, "train")
        loaded = load_yolo_dataset(tmp_path, "train")
        assert len(loaded) == 4
        by_id = {s.image_id: s for s in samples}
        for got in loaded:
            src = by_id[got.image_id]
            assert np.array_equal(got.image, src.image)
            assert len(got.boxes) == len(src.boxes)
            for gb, sb in zip(
                sorted(got.boxes, key=lambda b: b.box),
                sorted(src.boxes, key=lambda b: b.box),
            ):
                assert gb.class_id == sb.class_id
                for a, b in zip(gb.box, sb.box):
                    assert abs(a - b) <= 0.5  # normalized text round trip


class TestLetterbox:
    def test_identity_for_square_target_size(self):
        image = np.random.default_rng(0).integers(0, 255, (640, 640, 3), dtype=np.uint8)
        out, tf = letterbox(image, 640)
        assert np.array_equal(out, image)
        assert tf.scale == 1.0 and tf.pad_x == 0 and tf.pad_y == 0

    def test_wide_image_scale_and_pad(self):
        image = np.zeros((640, 1280, 3), dtype=np.uint8)
        out, tf = letterbox(image, 640)
        assert out.shape == (640, 640, 3)
        assert tf.scale == 0.5
        assert tf.pad_y == 160 and tf.pad_x == 0
        # padding occupies the top and bottom 160 rows
        assert (out[:160] == 114).all() and (out[-160:] == 114).all()

    def test_indivisible_target_rejected(self):
        with pytest.raises(ConfigurationError):
            letterbox(np.zeros((64, 64, 3), dtype=np.uint8), 100)

    @settings(max_examples=50, deadline=None)
    @given(
        w=st.integers(40, 900),
        h=st.integers(40, 900),
        x1=st.floats(0, 0.45),
        y1=st.floats(0, 0.45),
        x2=st.floats(0.55, 1.0),
        y2=st.floats(0.55, 1.0),
    )
    def test_box_round_trip_within_one_pixel(self, w, h, x1, y1, x2, y2):
        image = np.zeros((h, w, 3), dtype=np.uint8)
        _, tf = letterbox(image, 320)
        box = (x1 * w, y1 * h, x2 * w, y2 * h)
        back = tf.box_to_original(tf.box_to_network(box))
        for a, b in zip(back, box):
            assert abs(a - b) <= 1.0
