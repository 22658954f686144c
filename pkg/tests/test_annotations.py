"""Annotation pipelines, COCO validation, PNM codecs, synthetic data."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aligndet.annotations import (CocoDataset, CocoValidationError,
                                  annotate_keypoints, annotate_masks,
                                  generate_synthetic, keypoint_to_bbox,
                                  mask_to_bboxes, read_coco, read_pgm,
                                  read_ppm, read_pts, write_coco, write_pgm,
                                  write_ppm)


class TestKeypointToBbox:
    def test_interior_keypoint(self):
        # center (110, 83) with a 20x14 box: corner at (100, 76)
        bbox = keypoint_to_bbox((110.0, 83.0), 20, 14, 384, 286)
        assert bbox == [100.0, 76.0, 20.0, 14.0]

    def test_corner_keypoint_clipped(self):
        bbox = keypoint_to_bbox((0.0, 0.0), 10, 10, 100, 100)
        assert bbox == [0.0, 0.0, 5.0, 5.0]

    def test_edge_keypoint_clipped_one_side(self):
        bbox = keypoint_to_bbox((98.0, 50.0), 10, 10, 100, 100)
        assert bbox == [93.0, 45.0, 7.0, 10.0]

    def test_outside_keypoint_returns_none(self):
        assert keypoint_to_bbox((-1.0, 50.0), 10, 10, 100, 100) is None
        assert keypoint_to_bbox((50.0, 101.0), 10, 10, 100, 100) is None

    def test_non_positive_extent_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            keypoint_to_bbox((50.0, 50.0), 0, 10, 100, 100)

    @given(st.floats(5, 95), st.floats(5, 95))
    @settings(max_examples=50, deadline=None)
    def test_unclipped_box_recenters_on_keypoint(self, x, y):
        bbox = keypoint_to_bbox((x, y), 10, 10, 100, 100)
        assert bbox[2] == pytest.approx(10.0)
        assert bbox[3] == pytest.approx(10.0)
        assert bbox[0] + bbox[2] / 2 == pytest.approx(x)
        assert bbox[1] + bbox[3] / 2 == pytest.approx(y)


class TestMaskToBboxes:
    def test_single_rectangle(self):
        mask = np.zeros((20, 20), dtype=np.uint8)
        mask[3:11, 5:9] = 255
        # inclusive pixel spans: x 5..8 -> w 4, y 3..10 -> h 8
        assert mask_to_bboxes(mask) == [[5.0, 3.0, 4.0, 8.0]]

    def test_empty_mask(self):
        assert mask_to_bboxes(np.zeros((10, 10))) == []

    def test_single_pixel(self):
        mask = np.zeros((5, 5))
        mask[2, 3] = 1
        assert mask_to_bboxes(mask) == [[3.0, 2.0, 1.0, 1.0]]

    def test_global_mode_merges_components(self):
        mask = np.zeros((10, 10))
        mask[1, 1] = mask[8, 8] = 1
        assert mask_to_bboxes(mask, "global") == [[1.0, 1.0, 8.0, 8.0]]

    def test_component_mode_separates(self):
        mask = np.zeros((10, 10))
        mask[1:3, 1:3] = 1
        mask[7:9, 6:9] = 1
        boxes = mask_to_bboxes(mask, "component")
        assert sorted(boxes) == [[1.0, 1.0, 2.0, 2.0], [6.0, 7.0, 3.0, 2.0]]

    def test_diagonal_pixels_are_one_component(self):
        # 8-connectivity joins diagonal neighbors
        mask = np.zeros((5, 5))
        mask[1, 1] = mask[2, 2] = 1
        assert len(mask_to_bboxes(mask, "component")) == 1

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            mask_to_bboxes(np.ones((2, 2)), "diagonal")

    def test_matches_min_max_oracle_on_50_random_masks(self, rng):
        for _ in range(50):
            mask = rng.random((rng.integers(5, 30), rng.integers(5, 30))) < 0.2
            got = mask_to_bboxes(mask, "global")
            if not mask.any():
                assert got == []
                continue
            ys, xs = np.nonzero(mask)
            want = [[float(xs.min()), float(ys.min()),
                     float(xs.max() - xs.min() + 1),
                     float(ys.max() - ys.min() + 1)]]
            assert got == want

    def test_component_boxes_cover_and_are_tight(self, rng):
        for _ in range(20):
            mask = rng.random((20, 20)) < 0.1
            covered = np.zeros_like(mask)
            for x, y, w, h in mask_to_bboxes(mask, "component"):
                sub = mask[int(y):int(y + h), int(x):int(x + w)]
                # foreground touches all four edges of a tight box
                assert sub[0, :].any() and sub[-1, :].any()
                assert sub[:, 0].any() and sub[:, -1].any()
                covered[int(y):int(y + h), int(x):int(x + w)] = True
            assert np.all(covered[mask])


class TestCocoValidation:
    def make_valid(self):
        return CocoDataset(
            images=[{"id": 1, "file_name": "a.ppm", "width": 64, "height": 64}],
            annotations=[{"id": 1, "image_id": 1, "category_id": 1,
                          "bbox": [5, 5, 10, 10], "area": 100, "iscrowd": 0}],
            categories=[{"id": 1, "name": "thing"}],
        )

    def test_valid_passes(self):
        self.make_valid().validate()

    def test_duplicate_image_id(self):
        ds = self.make_valid()
        ds.images.append(dict(ds.images[0]))
        with pytest.raises(CocoValidationError, match="duplicate image id 1"):
            ds.validate()

    def test_dangling_image_reference_names_id(self):
        ds = self.make_valid()
        ds.annotations[0]["image_id"] = 99
        with pytest.raises(CocoValidationError, match="image_id 99"):
            ds.validate()

    def test_dangling_category_reference(self):
        ds = self.make_valid()
        ds.annotations[0]["category_id"] = 7
        with pytest.raises(CocoValidationError, match="category_id 7"):
            ds.validate()

    def test_bbox_exceeding_image(self):
        ds = self.make_valid()
        ds.annotations[0]["bbox"] = [60, 5, 10, 10]
        with pytest.raises(CocoValidationError, match="exceeds image"):
            ds.validate()

    def test_non_positive_extent(self):
        ds = self.make_valid()
        ds.annotations[0]["bbox"] = [5, 5, 0, 10]
        with pytest.raises(CocoValidationError, match="non-positive"):
            ds.validate()

    def test_round_trip(self, tmp_path):
        ds = self.make_valid()
        path = tmp_path / "coco.json"
        write_coco(ds, path)
        back = read_coco(path)
        assert back.images == ds.images
        assert back.annotations == ds.annotations
        assert back.categories == ds.categories
        # a second write of the re-read dataset is byte-identical
        write_coco(back, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(CocoValidationError, match="malformed"):
            read_coco(path)

    def test_missing_top_level_key(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text('{"images": [], "annotations": []}')
        with pytest.raises(CocoValidationError, match="categories"):
            read_coco(path)


class TestPnmCodecs:
    def test_pgm_round_trip(self, rng, tmp_path):
        image = rng.integers(0, 256, size=(13, 17), dtype=np.uint8)
        write_pgm(tmp_path / "x.pgm", image)
        np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), image)

    def test_ppm_round_trip(self, rng, tmp_path):
        image = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
        write_ppm(tmp_path / "x.ppm", image)
        np.testing.assert_array_equal(read_ppm(tmp_path / "x.ppm"), image)

    def test_pgm_header_with_comment(self, tmp_path):
        payload = b"P5\n# a comment line\n3 2\n255\n" + bytes(range(6))
        (tmp_path / "c.pgm").write_bytes(payload)
        image = read_pgm(tmp_path / "c.pgm")
        assert image.shape == (2, 3)
        assert image[1, 2] == 5

    def test_wrong_magic_rejected(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError, match="P5"):
            read_pgm(tmp_path / "x.pgm")

    def test_sixteen_bit_rejected(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError, match="16-bit"):
            read_pgm(tmp_path / "x.pgm")


class TestPts:
    def test_basic_file(self, tmp_path):
        (tmp_path / "a.pts").write_text(
            "version: 1\nn_points: 2\n{\n110.5 83.25\n12 34\n}\n")
        assert read_pts(tmp_path / "a.pts") == [(110.5, 83.25), (12.0, 34.0)]

    def test_header_numbers_not_parsed_as_points(self, tmp_path):
        (tmp_path / "a.pts").write_text("n_points: 2\n{\n1 2\n}\n")
        assert read_pts(tmp_path / "a.pts") == [(1.0, 2.0)]

    def test_bad_body_line(self, tmp_path):
        (tmp_path / "a.pts").write_text("{\nonlyone\n}\n")
        with pytest.raises(ValueError, match="a.pts:2"):
            read_pts(tmp_path / "a.pts")


class TestAnnotatePipelines:
    def write_keypoint_fixture(self, tmp_path):
        pts_dir = tmp_path / "pts"
        img_dir = tmp_path / "img"
        pts_dir.mkdir()
        img_dir.mkdir()
        (pts_dir / "face1.pts").write_text("{\n30 20\n50 40\n}\n")
        (pts_dir / "face2.pts").write_text("{\n10 10\n}\n")
        write_pgm(img_dir / "face1.pgm", np.zeros((60, 80), dtype=np.uint8))
        write_pgm(img_dir / "face2.pgm", np.zeros((60, 80), dtype=np.uint8))
        return pts_dir, img_dir

    def test_keypoint_pipeline(self, tmp_path):
        pts_dir, img_dir = self.write_keypoint_fixture(tmp_path)
        ds = annotate_keypoints(pts_dir, img_dir, box_w=8, box_h=6)
        assert len(ds.images) == 2
        assert len(ds.annotations) == 3
        assert ds.annotations[0]["bbox"] == [26.0, 17.0, 8.0, 6.0]
        assert ds.categories == [{"id": 1, "name": "nostril"}]
        ds.validate()

    def test_keypoint_subset_selection(self, tmp_path):
        pts_dir, img_dir = self.write_keypoint_fixture(tmp_path)
        ds = annotate_keypoints(pts_dir, img_dir, box_w=8, box_h=6,
                                point_indices=[1])
        # face1 keeps its second point; face2 has only one point
        assert len(ds.annotations) == 1
        assert ds.annotations[0]["bbox"] == [46.0, 37.0, 8.0, 6.0]

    def test_missing_image_skipped(self, tmp_path):
        pts_dir, img_dir = self.write_keypoint_fixture(tmp_path)
        (pts_dir / "orphan.pts").write_text("{\n5 5\n}\n")
        ds = annotate_keypoints(pts_dir, img_dir, box_w=8, box_h=6)
        assert len(ds.images) == 2

    def test_mask_pipeline(self, tmp_path):
        mask = np.zeros((30, 40), dtype=np.uint8)
        mask[5:15, 10:20] = 255
        write_pgm(tmp_path / "m1.pgm", mask)
        (tmp_path / "notes.txt").write_text("ignored")
        ds = annotate_masks(tmp_path, mode="global")
        assert len(ds.images) == 1
        assert ds.annotations[0]["bbox"] == [10.0, 5.0, 10.0, 10.0]
        assert ds.categories == [{"id": 1, "name": "glottis"}]

    def test_mask_pipeline_component_mode(self, tmp_path):
        mask = np.zeros((30, 40), dtype=np.uint8)
        mask[2:5, 2:5] = 255
        mask[20:25, 30:35] = 255
        write_pgm(tmp_path / "m1.pgm", mask)
        ds = annotate_masks(tmp_path, mode="component")
        assert len(ds.annotations) == 2


class TestSyntheticData:
    def test_deterministic_bytes(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        a_dir.mkdir()
        b_dir.mkdir()
        _, ds_a = generate_synthetic(7, 4, (64, 64), out_dir=a_dir)
        _, ds_b = generate_synthetic(7, 4, (64, 64), out_dir=b_dir)
        assert ds_a.annotations == ds_b.annotations
        for name in sorted(p.name for p in a_dir.iterdir()):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_different_seeds_differ(self):
        a, _ = generate_synthetic(1, 2, (64, 64))
        b, _ = generate_synthetic(2, 2, (64, 64))
        assert any(not np.array_equal(x, y) for x, y in zip(a, b))

    def test_boxes_tightly_bound_bright_pixels(self):
        images, ds = generate_synthetic(11, 6, (64, 64))
        # brightness threshold between background (<= 0.35) and shapes (>= 0.7)
        for img_rec in ds.images:
            image = images[img_rec["id"] - 1]
            bright = (image.astype(np.float64) / 255.0).max(axis=2) > 0.5
            anns = ds.annotations_for(img_rec["id"])
            recovered = sorted(mask_to_bboxes(bright, "component"))
            assert recovered == sorted(a["bbox"] for a in anns)

    def test_cardinality_one_to_three(self):
        _, ds = generate_synthetic(3, 10, (64, 64))
        for img in ds.images:
            assert 1 <= len(ds.annotations_for(img["id"])) <= 3

    def test_category_ids_match_shape_classes(self):
        _, ds = generate_synthetic(5, 10, (64, 64))
        assert [c["name"] for c in ds.categories] == ["rectangle", "ellipse"]
        used = {a["category_id"] for a in ds.annotations}
        assert used <= {1, 2}

    def test_validates_and_writes_ppm(self, tmp_path):
        images, ds = generate_synthetic(9, 3, (32, 32), out_dir=tmp_path)
        ds.validate()
        for img in ds.images:
            pixels = read_ppm(tmp_path / img["file_name"])
            np.testing.assert_array_equal(pixels, images[img["id"] - 1])

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError, match="count"):
            generate_synthetic(0, 0, (32, 32))
