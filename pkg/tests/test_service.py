import numpy as np
import pytest
from fastapi.testclient import TestClient

from ttaconf.io import write_tensor
from ttaconf.service import create_app
from ttaconf.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def tensor_path(tmp_path_factory):
    tensor = generate(
        SynthConfig(
            n_examples=600, n_classes=8, n_augs=2,
            signal_strength=(1.0, 1.0), noise_scale=(2.0, 2.0), seed=3,
        )
    )
    path = tmp_path_factory.mktemp("svc") / "svc.ttac"
    write_tensor(tensor, path)
    return str(path)


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


def test_inspect(client, tensor_path):
    response = client.post("/inspect", json={"path": tensor_path})
    assert response.status_code == 200
    body = response.json()
    assert body["n_examples"] == 600
    assert body["n_augs"] == 2
    assert body["aug_names"][0] == "identity"


def test_inspect_missing_file_404(client):
    response = client.post("/inspect", json={"path": "/nonexistent/file.ttac"})
    assert response.status_code == 404
    assert response.json()["error"] == "file-not-found"


def test_inspect_garbage_file_400(client, tmp_path):
    bad = tmp_path / "bad.ttac"
    bad.write_bytes(b"not a tensor at all")
    response = client.post("/inspect", json={"path": str(bad)})
    assert response.status_code == 400
    assert response.json()["error"] == "BadMagicError"


def test_run_report_and_determinism(client, tensor_path):
    payload = {
        "tensor_path": tensor_path,
        "alphas": [0.1],
        "score": "aps",
        "methods": ["baseline", "tta_learned"],
        "n_splits": 3,
        "seed": 5,
    }
    r1 = client.post("/run", json=payload)
    assert r1.status_code == 200
    body = r1.json()
    assert {c["method"] for c in body["report"]["cells"]} == {"baseline", "tta_learned"}
    r2 = client.post("/run", json=payload)
    assert r2.json()["report_json"] == body["report_json"]
    assert "| alpha | method |" in body["report_markdown"]


def test_run_invalid_alpha_400(client, tensor_path):
    response = client.post(
        "/run", json={"tensor_path": tensor_path, "alphas": [1.5], "n_splits": 1}
    )
    assert response.status_code == 400


def test_simulate_endpoint(client):
    payload = {
        "n_examples": 300,
        "noise_scale": 3.0,
        "alpha": 0.1,
        "score": "aps",
        "use_tta": "none",
        "n_trials": 5,
        "seed": 1,
    }
    body = client.post("/simulate", json=payload).json()
    assert body["n_trials"] == 5
    assert 0 <= body["mean_coverage"] <= 1
    assert body["histogram_csv"].startswith("bin_lo,bin_hi,count")


def test_analyze_endpoint(client, tensor_path):
    payload = {
        "tensor_path": tensor_path,
        "alpha": 0.1,
        "score": "aps",
        "methods": ["baseline", "tta_learned"],
        "n_splits": 2,
        "seed": 0,
    }
    body = client.post("/analyze", json=payload).json()
    assert body["optimal_top_k"]
    assert body["csv"]["rank_shift"]


def test_calibrate_then_predict_round_trip(client, tensor_path):
    cal = client.post(
        "/calibrate",
        json={
            "tensor_path": tensor_path,
            "alpha": 0.1,
            "score": "aps",
            "method": "tta_learned",
            "seed": 2,
        },
    )
    assert cal.status_code == 200
    doc = cal.json()["predictor_document"]
    assert "ttaconf-predictor-v1" in doc
    assert len(cal.json()["weights"]) == 2

    pred = client.post(
        "/predict", json={"predictor_document": doc, "tensor_path": tensor_path}
    )
    assert pred.status_code == 200
    body = pred.json()
    assert len(body["sets"]) == 600
    assert body["coverage"] >= 0.85
    assert all(size >= 1 for size in body["sizes"])


def test_predict_with_inline_probs(client, tensor_path):
    cal = client.post(
        "/calibrate",
        json={"tensor_path": tensor_path, "alpha": 0.2, "score": "aps", "method": "baseline"},
    )
    doc = cal.json()["predictor_document"]
    probs = [[0.7, 0.1, 0.05, 0.05, 0.04, 0.03, 0.02, 0.01]]
    body = client.post(
        "/predict", json={"predictor_document": doc, "probs": probs}
    ).json()
    assert body["coverage"] is None
    assert body["sets"][0][0] == 0  # argmax class always present


def test_predict_rejects_aug_count_mismatch(client, tensor_path, tmp_path):
    cal = client.post(
        "/calibrate",
        json={"tensor_path": tensor_path, "alpha": 0.1, "score": "aps", "method": "tta_avg"},
    )
    doc = cal.json()["predictor_document"]
    other = generate(SynthConfig(n_examples=20, n_classes=8, n_augs=3, seed=1))
    other_path = tmp_path / "other.ttac"
    write_tensor(other, other_path)
    response = client.post(
        "/predict", json={"predictor_document": doc, "tensor_path": str(other_path)}
    )
    assert response.status_code == 400


def test_predict_requires_some_input(client, tensor_path):
    cal = client.post(
        "/calibrate",
        json={"tensor_path": tensor_path, "alpha": 0.1, "score": "aps", "method": "baseline"},
    )
    response = client.post(
        "/predict", json={"predictor_document": cal.json()["predictor_document"]}
    )
    assert response.status_code == 400


def test_analyze_empty_methods_is_usage_error(client, tensor_path):
    response = client.post(
        "/analyze",
        json={"tensor_path": tensor_path, "alpha": 0.1, "methods": [], "n_splits": 1},
    )
    assert response.status_code == 400


def test_predict_rejects_invalid_probability_vectors(client, tensor_path):
    cal = client.post(
        "/calibrate",
        json={"tensor_path": tensor_path, "alpha": 0.1, "score": "aps", "method": "baseline"},
    )
    doc = cal.json()["predictor_document"]
    bad = [[0.9, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]  # sums to 1.8
    response = client.post("/predict", json={"predictor_document": doc, "probs": bad})
    assert response.status_code == 400
    assert response.json()["error"] == "invalid-input"
