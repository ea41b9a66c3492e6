"""Golden-request suite over all seven endpoints plus CLI contract tests."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from fastapi.testclient import TestClient

from pavekit.annotations import parse_dataset
from pavekit.model import NetConfig, PciNet
from pavekit.pci import label_dataset, pci_for_image
from pavekit.resources import d6433_curves, default_thresholds
from pavekit.server import ServiceState, create_app, mask_to_rle, rle_to_mask
from pavekit.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def dataset_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    generate(SynthConfig(n_images=5, seed=91), root)
    return root


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, dataset_root):
    path = tmp_path_factory.mktemp("ck") / "net.bin"
    PciNet.build(NetConfig(base_width=4), seed=1).save(path)
    return path


@pytest.fixture(scope="module")
def client(dataset_root, checkpoint):
    state = ServiceState(dataset_root, net=PciNet.load(checkpoint))
    return TestClient(create_app(state))


@pytest.fixture(scope="module")
def bare_client(dataset_root):
    return TestClient(create_app(ServiceState(dataset_root)))


class TestRle:
    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        mask = (rng.uniform(size=(17, 23)) < 0.3).astype(np.uint8)
        rle = mask_to_rle(mask)
        assert np.array_equal(rle_to_mask(rle, 17, 23), mask)

    def test_empty_and_full(self):
        assert mask_to_rle(np.zeros((4, 4))) == []
        assert mask_to_rle(np.ones((2, 3))) == [0, 6]

    def test_known_pattern(self):
        mask = np.array([[0, 1, 1, 0], [1, 1, 0, 0]])
        assert mask_to_rle(mask) == [1, 2, 4, 2]


class TestImagesEndpoints:
    def test_list_images_schema(self, client, dataset_root):
        r = client.get("/api/images")
        assert r.status_code == 200
        body = r.json()
        assert len(body) == 5
        assert set(body[0]) == {"image_id", "width_px", "height_px", "pci_label"}
        ids = [e["image_id"] for e in body]
        assert ids == sorted(ids)

    def test_image_file_png(self, client):
        r = client.get("/api/images/img_00000/file")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_annotations_schema_roundtrip(self, client, dataset_root):
        r = client.get("/api/images/img_00001/annotations")
        assert r.status_code == 200
        body = r.json()
        disk = json.loads((dataset_root / "annotations" / "img_00001.json").read_text())
        assert body == disk

    def test_unknown_id_404(self, client):
        for url in (
            "/api/images/nope/file",
            "/api/images/nope/annotations",
        ):
            assert client.get(url).status_code == 404


class TestMeasureEndpoint:
    def test_three_four_five(self, client):
        r = client.post(
            "/api/measure",
            json={"image_id": "img_00000", "p1": [10, 10], "p2": [13, 14]},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["px_width"] == 5.0
        # scale: 96 px over 960 mm -> 0.1 px/mm; dominant axis y
        assert body["mm_width"] == pytest.approx(50.0)

    def test_coincident_points_400(self, client):
        r = client.post(
            "/api/measure", json={"image_id": "img_00000", "p1": [5, 5], "p2": [5, 5]}
        )
        assert r.status_code == 400

    def test_malformed_body_400(self, client):
        r = client.post("/api/measure", json={"image_id": "img_00000"})
        assert r.status_code == 400

    def test_unknown_image_404(self, client):
        r = client.post(
            "/api/measure", json={"image_id": "zzz", "p1": [0, 0], "p2": [1, 1]}
        )
        assert r.status_code == 404


class TestSeverityEndpoint:
    def test_banding_matches_configured_thresholds(self, client):
        # 96 px / 960 mm -> 0.1 px/mm; 5 px samples -> 50 mm -> medium
        r = client.post(
            "/api/severity",
            json={"image_id": "img_00000", "samples_px": [4, 5, 6], "distress_type": "longitudinal"},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["mean_mm"] == pytest.approx(50.0)
        assert body["severity"] == "medium"

    def test_pattern_type_rejected(self, client):
        r = client.post(
            "/api/severity",
            json={"image_id": "img_00000", "samples_px": [1, 2, 3], "distress_type": "alligator"},
        )
        assert r.status_code == 400

    def test_wrong_sample_count_400(self, client):
        r = client.post(
            "/api/severity",
            json={"image_id": "img_00000", "samples_px": [1, 2], "distress_type": "transverse"},
        )
        assert r.status_code == 400


class TestPciEndpoint:
    def test_image_pci_equals_label_engine_exactly(self, client, dataset_root):
        dataset = parse_dataset(dataset_root)
        curves, thresholds = d6433_curves(), default_thresholds()
        for image in dataset:
            r = client.post("/api/pci", json={"image_id": image.image_id})
            assert r.status_code == 200
            expected = pci_for_image(image, curves, thresholds)
            assert r.json()["pci"] == expected.pci
            assert r.json()["max_cdv"] == expected.max_cdv

    def test_record_mode(self, client):
        r = client.post(
            "/api/pci",
            json={
                "records": [{"type": "patch", "severity": "high", "extent": 2.5}],
                "sample_area_m2": 25.0,
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert set(body) >= {"densities", "deducts", "iterations", "max_cdv", "pci", "rating"}
        assert body["densities"] == [10.0]

    def test_needs_one_mode(self, client):
        assert client.post("/api/pci", json={}).status_code == 400

    def test_bad_record_400(self, client):
        r = client.post(
            "/api/pci",
            json={"records": [{"type": "pothole", "severity": "low", "extent": 1}], "sample_area_m2": 10},
        )
        assert r.status_code == 400


class TestInferEndpoint:
    def test_no_model_409(self, bare_client):
        r = bare_client.post("/api/infer", json={"image_id": "img_00000"})
        assert r.status_code == 409

    def test_infer_schema(self, client):
        r = client.post("/api/infer", json={"image_id": "img_00000"})
        assert r.status_code == 200
        body = r.json()
        assert set(body) == {"boxes_linear", "boxes_pattern", "mask_rle", "pci"}
        assert 0.0 <= body["pci"] <= 100.0
        mask = rle_to_mask(body["mask_rle"], 96, 96)
        assert mask.shape == (96, 96)
        for box in body["boxes_linear"] + body["boxes_pattern"]:
            assert set(box) == {"box", "class_idx", "score", "label"}

    def test_repeated_requests_identical(self, client):
        a = client.post("/api/infer", json={"image_id": "img_00002"}).json()
        b = client.post("/api/infer", json={"image_id": "img_00002"}).json()
        assert a == b

    def test_unknown_image_404(self, client):
        assert client.post("/api/infer", json={"image_id": "zzz"}).status_code == 404

    def test_bad_threshold_400(self, client):
        r = client.post(
            "/api/infer", json={"image_id": "img_00000", "conf_threshold": 1.5}
        )
        assert r.status_code == 400


def run_cli(*argv):
    return subprocess.run(
        [sys.executable, "-m", "pavekit.cli", *argv],
        capture_output=True,
        text=True,
    )


class TestCli:
    def test_synth_deterministic_trees(self, tmp_path):
        for sub in ("a", "b"):
            r = run_cli("synth", "--out", str(tmp_path / sub), "--count", "4", "--seed", "7")
            assert r.returncode == 0, r.stderr
        files_a = sorted((tmp_path / "a").rglob("*"))
        for fa in files_a:
            if fa.is_file():
                fb = tmp_path / "b" / fa.relative_to(tmp_path / "a")
                assert fa.read_bytes() == fb.read_bytes()

    def test_label_zero_annotation_data(self, tmp_path):
        r = run_cli(
            "synth", "--out", str(tmp_path), "--count", "3", "--seed", "1",
            "--crack-range", "0", "0", "--blob-range", "0", "0",
        )
        assert r.returncode == 0, r.stderr
        r = run_cli("label", "--data", str(tmp_path))
        assert r.returncode == 0, r.stderr
        dataset = parse_dataset(tmp_path)
        assert all(im.pci_label == 100.0 or im.annotations for im in dataset)
        assert all(
            im.pci_label == 100.0 for im in dataset if not im.annotations
        )

    def test_stats_json_parses(self, tmp_path):
        run_cli("synth", "--out", str(tmp_path), "--count", "2", "--seed", "3")
        r = run_cli("stats", "--data", str(tmp_path))
        assert r.returncode == 0
        doc = json.loads(r.stdout)
        assert "counts_by_type" in doc and "pci_histogram" in doc

    def test_usage_error_exit_1(self):
        assert run_cli("bogus").returncode == 1
        assert run_cli("synth", "--count", "1").returncode == 1  # missing --out

    def test_data_error_exit_2(self):
        r = run_cli("stats", "--data", "/nonexistent/path")
        assert r.returncode == 2
        assert "stats" in r.stderr

    def test_eval_report_schema(self, tmp_path):
        run_cli("synth", "--out", str(tmp_path / "d"), "--count", "6", "--seed", "5",
                "--split", "0.5", "0.25", "0.25")
        r = run_cli(
            "train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "run"),
            "--epochs", "1", "--batch-size", "3", "--base-width", "2", "--seed", "1",
            "--optimizer", "adam",
        )
        assert r.returncode == 0, r.stderr
        report = tmp_path / "r.json"
        r = run_cli(
            "eval", "--data", str(tmp_path / "d"), "--ckpt", str(tmp_path / "run" / "best.bin"),
            "--report", str(report), "--manifest", "manifest_test.txt",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads(report.read_text())
        assert "r2" in doc and "mape_pct" in doc and "scatter" in doc and "histogram" in doc
