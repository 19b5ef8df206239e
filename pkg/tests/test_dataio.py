import json

import numpy as np
import pytest

from lesiondet import (
    BBox,
    DomainError,
    GroundTruth,
    SchemaError,
    area_ratio,
    compute_stats,
    load_coco,
    load_detections,
    patient_split,
    save_coco,
    synth_scenario,
)
from lesiondet.dataio import DEFAULT_AR_BINS, _regress_toward


def write_coco(path, images, annotations, categories=None):
    payload = {"images": images, "annotations": annotations}
    if categories is not None:
        payload["categories"] = categories
    path.write_text(json.dumps(payload))
    return path


def simple_dataset(tmp_path, n_images=4, patient=None):
    images = [
        {"id": i, "width": 100.0, "height": 80.0, **({"patient_id": patient(i)} if patient else {})}
        for i in range(1, n_images + 1)
    ]
    annotations = [
        {"id": i, "image_id": i, "category_id": 1, "bbox": [5.0, 5.0, 10.0, 8.0]}
        for i in range(1, n_images + 1)
    ]
    return write_coco(tmp_path / "gt.json", images, annotations, [{"id": 1, "name": "lesion"}])


class TestLoadCoco:
    def test_minimal_file(self, tmp_path):
        path = write_coco(tmp_path / "a.json", [{"id": 1, "width": 10, "height": 10}], [])
        index = load_coco(path)
        assert index.n_images == 1 and index.n_instances == 0

    def test_unknown_fields_ignored(self, tmp_path):
        path = write_coco(
            tmp_path / "a.json",
            [{"id": 1, "width": 10, "height": 10, "license": 3, "flavor": "x"}],
            [{"image_id": 1, "category_id": 1, "bbox": [1, 1, 2, 2], "iscrowd": 0}],
        )
        index = load_coco(path)
        assert index.annotations[0].box == BBox(1, 1, 2, 2)

    def test_dangling_image_reference_names_id(self, tmp_path):
        path = write_coco(
            tmp_path / "a.json",
            [{"id": 1, "width": 10, "height": 10}],
            [{"image_id": 99, "category_id": 1, "bbox": [0, 0, 1, 1]}],
        )
        with pytest.raises(SchemaError, match="99"):
            load_coco(path)

    def test_invalid_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(SchemaError):
            load_coco(bad)

    def test_missing_required_field(self, tmp_path):
        path = tmp_path / "a.json"
        path.write_text(json.dumps({"images": [{"id": 1, "width": 10}]}))
        with pytest.raises(SchemaError, match="height"):
            load_coco(path)

    def test_out_of_bounds_box_warns(self, tmp_path):
        path = write_coco(
            tmp_path / "a.json",
            [{"id": 1, "width": 10, "height": 10}],
            [{"image_id": 1, "category_id": 1, "bbox": [8, 8, 5, 5]}],
        )
        with pytest.warns(UserWarning):
            index = load_coco(path)
        assert index.n_instances == 1

    def test_patient_field_configurable(self, tmp_path):
        path = write_coco(
            tmp_path / "a.json", [{"id": 1, "width": 10, "height": 10, "subject": "p7"}], []
        )
        assert load_coco(path, patient_field="subject").images[0].patient_id == "p7"

    def test_round_trip(self, tmp_path):
        src = write_coco(
            tmp_path / "a.json",
            [
                {"id": 1, "width": 100, "height": 50, "patient_id": "p1"},
                {"id": 2, "width": 100, "height": 50},
            ],
            [
                {"image_id": 1, "category_id": 1, "bbox": [1.5, 2.25, 10.0, 4.0]},
                {"image_id": 2, "category_id": 1, "bbox": [0.0, 0.0, 3.0, 3.0]},
            ],
            [{"id": 1, "name": "lesion"}],
        )
        first = load_coco(src)
        save_coco(first, tmp_path / "b.json")
        second = load_coco(tmp_path / "b.json")
        assert first == second


class TestLoadDetections:
    def test_round_trip_fields(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(
            json.dumps([{"image_id": 1, "category_id": 1, "bbox": [1, 2, 3, 4], "score": 0.75}])
        )
        dets = load_detections(path)
        assert dets[0].score == 0.75 and dets[0].box == BBox(1, 2, 3, 4)

    def test_rejects_non_array(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text("{}")
        with pytest.raises(SchemaError):
            load_detections(path)

    def test_rejects_bad_score(self, tmp_path):
        path = tmp_path / "d.json"
        path.write_text(
            json.dumps([{"image_id": 1, "category_id": 1, "bbox": [1, 2, 3, 4], "score": 2.0}])
        )
        with pytest.raises(SchemaError):
            load_detections(path)


class TestAreaRatio:
    def test_full_image(self):
        ann = GroundTruth(1, BBox(0, 0, 100, 80))
        assert area_ratio(ann, 100, 80) == 1.0

    def test_zero_area_box(self):
        assert area_ratio(GroundTruth(1, BBox(5, 5, 0, 3)), 100, 80) == 0.0

    def test_reference_lesion(self):
        # 80x60 box in a 1333x800 image: just inside the small-object cutoff
        ratio = area_ratio(GroundTruth(1, BBox(0, 0, 80, 60)), 1333, 800)
        assert abs(ratio - 4800.0 / 1066400.0) < 1e-12
        assert ratio <= 0.005

    def test_zero_image_rejected(self):
        with pytest.raises(DomainError):
            area_ratio(GroundTruth(1, BBox(0, 0, 1, 1)), 0, 10)

    def test_overflow_clamped(self):
        assert area_ratio(GroundTruth(1, BBox(0, 0, 200, 200)), 100, 100) == 1.0


class TestComputeStats:
    def test_empty_dataset(self, tmp_path):
        index = load_coco(write_coco(tmp_path / "a.json", [{"id": 1, "width": 9, "height": 9}], []))
        stats = compute_stats(index)
        assert stats.small_fraction is None
        assert stats.ar_histogram.sum() == 0
        assert stats.instances_per_image == {0: 1}

    def test_single_small_annotation(self, tmp_path):
        path = write_coco(
            tmp_path / "a.json",
            [{"id": 1, "width": 1333, "height": 800}],
            [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 80, 60]}],
        )
        stats = compute_stats(load_coco(path))
        assert stats.small_fraction == 1.0
        assert stats.n_instances == 1

    def test_planted_histogram(self, tmp_path):
        # one annotation per bin, placed at each bin's midpoint area ratio
        edges = DEFAULT_AR_BINS
        side = 1000.0
        images, annotations = [], []
        planted = []
        for i in range(len(edges) - 1):
            mid = (edges[i] + edges[i + 1]) / 2.0
            count = i + 1
            planted.append(count)
            for k in range(count):
                img_id = len(images) + 1
                images.append({"id": img_id, "width": side, "height": side})
                w = (mid * side * side) ** 0.5
                annotations.append(
                    {"image_id": img_id, "category_id": 1, "bbox": [0.0, 0.0, w, w]}
                )
        stats = compute_stats(load_coco(write_coco(tmp_path / "a.json", images, annotations)))
        assert stats.ar_histogram.tolist() == planted

    def test_bins_must_increase(self, tmp_path):
        index = load_coco(write_coco(tmp_path / "a.json", [{"id": 1, "width": 9, "height": 9}], []))
        with pytest.raises(DomainError):
            compute_stats(index, ar_bins=[0.0, 0.5, 0.5, 1.0])


class TestPatientSplit:
    def test_singleton_patients_even_split(self, tmp_path):
        index = load_coco(simple_dataset(tmp_path, n_images=10))
        train, test = patient_split(index, 0.5, seed=3)
        assert train.n_images == 5 and test.n_images == 5

    def test_single_patient_goes_to_train(self, tmp_path):
        index = load_coco(simple_dataset(tmp_path, n_images=6, patient=lambda i: "p0"))
        train, test = patient_split(index, 0.5, seed=1)
        assert train.n_images == 6 and test.n_images == 0

    def test_no_patient_overlap(self, tmp_path):
        index = load_coco(simple_dataset(tmp_path, n_images=40, patient=lambda i: f"p{i % 7}"))
        for seed in range(10):
            train, test = patient_split(index, 0.6, seed=seed)
            train_patients = {im.patient_id for im in train.images}
            test_patients = {im.patient_id for im in test.images}
            assert not (train_patients & test_patients)
            assert train.n_images + test.n_images == 40

    def test_annotations_follow_images(self, tmp_path):
        index = load_coco(simple_dataset(tmp_path, n_images=8, patient=lambda i: f"p{i % 3}"))
        train, test = patient_split(index, 0.5, seed=0)
        train_ids = {im.id for im in train.images}
        assert all(a.image_id in train_ids for a in train.annotations)
        assert train.n_instances + test.n_instances == index.n_instances

    def test_deterministic_per_seed(self, tmp_path):
        index = load_coco(simple_dataset(tmp_path, n_images=30, patient=lambda i: f"p{i % 11}"))
        a1, b1 = patient_split(index, 0.7, seed=5)
        a2, b2 = patient_split(index, 0.7, seed=5)
        assert a1 == a2 and b1 == b2

    def test_fraction_domain(self, tmp_path):
        index = load_coco(simple_dataset(tmp_path))
        with pytest.raises(DomainError):
            patient_split(index, 0.0, seed=0)
        with pytest.raises(DomainError):
            patient_split(index, 1.0, seed=0)


class TestSynthScenario:
    def test_empty_ground_truth(self):
        scenario = synth_scenario(10, 0, 200, 100, (8, 16), 0.0, seed=0)
        assert scenario.gts.shape == (0, 4)
        assert scenario.anchors.shape == (10, 4)

    def test_gts_inside_image(self):
        scenario = synth_scenario(0, 50, 300, 200, (10, 40), 0.0, seed=1)
        g = scenario.gts
        assert np.all(g[:, 0] >= 0) and np.all(g[:, 1] >= 0)
        assert np.all(g[:, 0] + g[:, 2] <= 300) and np.all(g[:, 1] + g[:, 3] <= 200)
        assert np.all((g[:, 2] >= 10) & (g[:, 2] <= 40))

    def test_anchors_on_gts_with_zero_noise_regress_to_gts(self):
        rng = np.random.default_rng(0)
        gts = np.array([[10.0, 10.0, 20.0, 20.0], [50.0, 40.0, 8.0, 12.0]])
        regressed = _regress_toward(gts.copy(), gts, noise=0.0, rng=rng)
        np.testing.assert_array_equal(regressed, gts)

    def test_deterministic_per_seed(self):
        a = synth_scenario(25, 5, 400, 300, (8, 32), 2.0, seed=7)
        b = synth_scenario(25, 5, 400, 300, (8, 32), 2.0, seed=7)
        assert json.dumps(a.to_json_dict()) == json.dumps(b.to_json_dict())
        c = synth_scenario(25, 5, 400, 300, (8, 32), 2.0, seed=8)
        assert json.dumps(a.to_json_dict()) != json.dumps(c.to_json_dict())

    def test_infeasible_size_range(self):
        with pytest.raises(DomainError):
            synth_scenario(5, 5, 100, 50, (10, 60), 0.0, seed=0)

    def test_negative_counts(self):
        with pytest.raises(DomainError):
            synth_scenario(-1, 0, 100, 100, (5, 10), 0.0, seed=0)

    def test_regressed_sides_non_negative(self):
        scenario = synth_scenario(100, 3, 200, 200, (2, 4), 10.0, seed=3)
        assert np.all(scenario.regressed[:, 2:] >= 0)
