import numpy as np
import pytest

from invi.roi import (
    BoxTrack,
    Rect,
    box_to_crop_mask,
    composite_back,
    crop_and_encode,
    downsample_mask,
    expand_boxes,
    load_box_track,
)
from invi.vae import BlockCodec

from conftest import make_block_frame, write_box_file


class TestExpandBoxes:
    def test_centered_box_gives_centered_crop(self):
        track = BoxTrack([Rect(100, 100, 40, 40)])  # center (120, 120)
        roi = expand_boxes(track, 64, 64, frame_w=400, frame_h=400).crops[0]
        assert (roi.x, roi.y) == (120 - 32, 120 - 32)
        assert roi.contains(track.boxes[0])

    def test_corner_box_shifts_inward_and_still_contains(self):
        track = BoxTrack([Rect(0, 0, 20, 20)])
        roi = expand_boxes(track, 64, 64, frame_w=200, frame_h=200).crops[0]
        assert (roi.x, roi.y) == (0, 0)
        assert roi.contains(track.boxes[0])

    def test_far_corner_box(self):
        track = BoxTrack([Rect(180, 185, 20, 15)])
        roi = expand_boxes(track, 64, 64, frame_w=200, frame_h=200).crops[0]
        assert (roi.x2, roi.y2) == (200, 200)
        assert roi.contains(track.boxes[0])

    def test_random_boxes_satisfy_all_invariants(self):
        rng = np.random.default_rng(0)
        checker_frames = 10
        boxes = []
        for _ in range(checker_frames):
            w, h = int(rng.integers(1, 30)), int(rng.integers(1, 30))
            x = int(rng.integers(0, 300 - w))
            y = int(rng.integers(0, 240 - h))
            boxes.append(Rect(x, y, w, h))
        rois = expand_boxes(BoxTrack(boxes), 96, 80, frame_w=300, frame_h=240)
        for box, roi in zip(boxes, rois.crops):
            assert (roi.w, roi.h) == (96, 80)
            assert roi.x >= 0 and roi.y >= 0
            assert roi.x2 <= 300 and roi.y2 <= 240
            assert roi.contains(box)

    def test_determinism(self):
        track = BoxTrack([Rect(10, 20, 30, 40), Rect(50, 60, 7, 9)])
        a = expand_boxes(track, 64, 64, 200, 200)
        b = expand_boxes(track, 64, 64, 200, 200)
        assert a.crops == b.crops

    def test_oversized_box_warns_and_clamps(self, caplog):
        track = BoxTrack([Rect(0, 0, 90, 90)])
        with caplog.at_level("WARNING"):
            rois = expand_boxes(track, 64, 64, frame_w=200, frame_h=200)
        assert "clamping" in caplog.text
        assert (rois.crops[0].w, rois.crops[0].h) == (64, 64)

    def test_crop_larger_than_frame_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            expand_boxes(BoxTrack([Rect(0, 0, 4, 4)]), 64, 64, 32, 32)


class TestMasks:
    def test_downsample_is_area_average(self):
        mask = np.zeros((16, 16))
        mask[:8, :8] = 1.0
        small = downsample_mask(mask, 8)
        np.testing.assert_array_equal(small, [[1.0, 0.0], [0.0, 0.0]])

    def test_downsample_fractional_edges(self):
        mask = np.zeros((8, 8))
        mask[:4, :] = 1.0
        assert downsample_mask(mask, 8)[0, 0] == 0.5

    def test_monotone_under_box_growth(self):
        roi = Rect(0, 0, 64, 64)
        small = downsample_mask(box_to_crop_mask(Rect(8, 8, 16, 16), roi))
        large = downsample_mask(box_to_crop_mask(Rect(8, 8, 24, 24), roi))
        assert np.all(large >= small)


class TestCropAndEncode:
    def setup_method(self):
        self.codec = BlockCodec()
        self.rng = np.random.default_rng(1)
        self.frame = make_block_frame(128, 128, self.rng)

    def test_full_box_masks_everything(self):
        roi = Rect(8, 8, 64, 64)
        bg, masked, mask = crop_and_encode(self.frame, roi, Rect(8, 8, 64, 64),
                                           self.codec)
        np.testing.assert_array_equal(mask.data, np.ones((8, 8)))
        # Masked crop is all-zero input, so its latent is the zero latent.
        np.testing.assert_array_equal(masked.data, np.zeros((8, 8, 4)))

    def test_empty_box_gives_zero_mask_and_identical_latents(self):
        roi = Rect(8, 8, 64, 64)
        bg, masked, mask = crop_and_encode(self.frame, roi, Rect(20, 20, 0, 0),
                                           self.codec)
        np.testing.assert_array_equal(mask.data, np.zeros((8, 8)))
        np.testing.assert_array_equal(masked.data, bg.data)

    def test_quadrant_box_downsampled_block(self):
        roi = Rect(0, 0, 64, 64)
        box = Rect(0, 0, 32, 32)  # exactly the top-left quadrant
        _, _, mask = crop_and_encode(self.frame, roi, box, self.codec)
        # Oracle: direct 8x reduction of the quadrant indicator.
        indicator = np.zeros((64, 64))
        indicator[:32, :32] = 1.0
        expected = indicator.reshape(8, 8, 8, 8).mean(axis=(1, 3))
        np.testing.assert_array_equal(mask.data, expected)
        np.testing.assert_array_equal(mask.data[:4, :4], np.ones((4, 4)))

    def test_roi_outside_frame_rejected(self):
        with pytest.raises(ValueError, match="inside"):
            crop_and_encode(self.frame, Rect(100, 100, 64, 64), Rect(0, 0, 1, 1),
                            self.codec)


class TestCompositeBack:
    def test_identity_composite(self):
        rng = np.random.default_rng(2)
        frame = make_block_frame(96, 96, rng)
        roi = Rect(16, 8, 64, 64)
        crop = frame[roi.y:roi.y2, roi.x:roi.x2]
        np.testing.assert_array_equal(composite_back(frame, roi, crop), frame)

    def test_black_crop_changes_only_roi(self):
        rng = np.random.default_rng(3)
        frame = make_block_frame(96, 96, rng) + 0.1
        roi = Rect(16, 8, 64, 64)
        out = composite_back(frame, roi, np.zeros((64, 64, 3)))
        changed = np.any(out != frame, axis=2)
        assert changed[roi.y:roi.y2, roi.x:roi.x2].all()
        outside = np.ones((96, 96), dtype=bool)
        outside[roi.y:roi.y2, roi.x:roi.x2] = False
        assert not changed[outside].any()

    def test_random_crop_conserves_every_outside_pixel(self):
        rng = np.random.default_rng(4)
        frame = rng.uniform(0, 1, (80, 100, 3))
        roi = Rect(24, 16, 48, 40)
        out = composite_back(frame, roi, rng.uniform(0, 1, (40, 48, 3)))
        mask = np.zeros((80, 100), dtype=bool)
        mask[roi.y:roi.y2, roi.x:roi.x2] = True
        np.testing.assert_array_equal(out[~mask], frame[~mask])

    def test_size_mismatch_rejected(self):
        frame = np.zeros((64, 64, 3))
        with pytest.raises(ValueError, match="match"):
            composite_back(frame, Rect(0, 0, 32, 32), np.zeros((16, 16, 3)))


class TestBoxTrackFile:
    def test_round_trip(self, tmp_path):
        boxes = [Rect(1, 2, 3, 4), Rect(5, 6, 7, 8)]
        path = tmp_path / "boxes.txt"
        write_box_file(path, boxes)
        track = load_box_track(path, 2)
        assert track.boxes == boxes

    def test_missing_frame_is_error(self, tmp_path):
        path = tmp_path / "boxes.txt"
        path.write_text("1 0 0 4 4\n3 0 0 4 4\n")
        with pytest.raises(ValueError, match=r"missing boxes for frames \[2\]"):
            load_box_track(path, 3)

    def test_malformed_line_is_error(self, tmp_path):
        path = tmp_path / "boxes.txt"
        path.write_text("1 0 0 4\n")
        with pytest.raises(ValueError, match="expected"):
            load_box_track(path, 1)

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "boxes.txt"
        path.write_text("# header\n\n1 0 0 4 4  # trailing\n")
        assert load_box_track(path, 1).boxes == [Rect(0, 0, 4, 4)]
