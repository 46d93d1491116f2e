"""HTTP contract: health, predict, error shapes, concurrency, determinism."""

import io
import json
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import requests
from PIL import Image

from malarianet import checkpoint as C
from malarianet import server as S
from malarianet.exceptions import DecodeError, ModelUnavailableError, PayloadTooLargeError

from toy import TinyModel


def tiny_factory(seed=0, dtype="f32"):
    return TinyModel(seed=seed, dtype=dtype)


def png_bytes(seed=0, size=48):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.mckp"
    model = TinyModel(seed=1)
    C.save(model, path)
    return S.InferenceService.from_checkpoint(path, model_factory=tiny_factory)


@pytest.fixture(scope="module")
def base_url(service):
    server = S.make_server(service, host="127.0.0.1", port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    yield f"http://{host}:{port}"
    server.shutdown()
    thread.join(timeout=5)
    server.server_close()


class TestServiceInProcess:
    def test_prediction_contract(self, service):
        pred = service.predict(png_bytes(0))
        assert pred.label in ("parasitized", "uninfected")
        assert abs(sum(pred.probabilities.values()) - 1.0) < 1e-6
        assert pred.label == max(pred.probabilities, key=pred.probabilities.get)
        assert pred.model_version == service.model_version

    def test_deterministic(self, service):
        raw = png_bytes(1)
        a = service.predict(raw)
        b = service.predict(raw)
        assert a == b

    def test_errors(self, service):
        with pytest.raises(DecodeError):
            service.predict(b"not an image at all")
        with pytest.raises(PayloadTooLargeError):
            service.predict(b"\x00" * (S.MAX_UPLOAD_BYTES + 1))
        empty = S.InferenceService(model=None)
        with pytest.raises(ModelUnavailableError):
            empty.predict(png_bytes(0))

    def test_model_never_mutated_over_many_requests(self, service):
        probe = png_bytes(7)
        before = service.predict(probe)
        for i in range(1000):
            service.predict(probe)
        after = service.predict(probe)
        assert before == after


class TestMultipartParser:
    def test_requests_encoded_body(self):
        from urllib3.filepost import encode_multipart_formdata

        body, ctype = encode_multipart_formdata(
            {"image": ("cell.png", b"PNGDATA\x00\x01", "image/png"), "note": "hi"}
        )
        fields = S.parse_multipart(ctype, body)
        assert fields["image"] == b"PNGDATA\x00\x01"
        assert fields["note"] == b"hi"

    def test_rejects_non_multipart(self):
        with pytest.raises(DecodeError):
            S.parse_multipart("application/json", b"{}")

    def test_missing_boundary(self):
        with pytest.raises(DecodeError):
            S.parse_multipart("multipart/form-data", b"")


class TestHttpEndpoints:
    def test_health(self, base_url, service):
        r = requests.get(f"{base_url}/api/v1/health", timeout=5)
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "model_version": service.model_version}

    def test_predict_ok_and_deterministic(self, base_url):
        raw = png_bytes(2)
        r1 = requests.post(
            f"{base_url}/api/v1/predict", files={"image": ("a.png", raw, "image/png")},
            timeout=10,
        )
        r2 = requests.post(
            f"{base_url}/api/v1/predict", files={"image": ("a.png", raw, "image/png")},
            timeout=10,
        )
        assert r1.status_code == 200
        assert r1.content == r2.content
        body = r1.json()
        assert set(body) == {"label", "probabilities", "model_version"}
        assert set(body["probabilities"]) == {"parasitized", "uninfected"}
        assert abs(sum(body["probabilities"].values()) - 1.0) < 1e-6

    def test_transport_equivalence(self, base_url, service):
        raw = png_bytes(3)
        http = requests.post(
            f"{base_url}/api/v1/predict", files={"image": ("a.png", raw, "image/png")},
            timeout=10,
        ).json()
        local = service.predict(raw).to_dict()
        assert http == local

    def test_decode_error_shape(self, base_url):
        r = requests.post(
            f"{base_url}/api/v1/predict",
            files={"image": ("a.txt", b"just some text", "text/plain")},
            timeout=10,
        )
        assert r.status_code == 400
        body = r.json()
        assert body["error"] == "decode_error"
        assert "message" in body

    def test_too_large_shape(self, base_url):
        blob = b"\x00" * (S.MAX_UPLOAD_BYTES + 1024)
        r = requests.post(
            f"{base_url}/api/v1/predict",
            files={"image": ("big.png", blob, "image/png")},
            timeout=30,
        )
        assert r.status_code == 413
        assert r.json()["error"] == "too_large"

    def test_model_unavailable_shape(self):
        server = S.make_server(S.InferenceService(model=None), port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            r = requests.post(
                f"http://{host}:{port}/api/v1/predict",
                files={"image": ("a.png", png_bytes(0), "image/png")},
                timeout=10,
            )
            assert r.status_code == 503
            assert r.json()["error"] == "model_unavailable"
        finally:
            server.shutdown()
            thread.join(timeout=5)
            server.server_close()

    def test_unknown_route_carries_error_json(self, base_url):
        r = requests.get(f"{base_url}/api/v1/nope", timeout=5)
        assert r.status_code == 404
        assert set(r.json()) == {"error", "message"}

    def test_missing_field(self, base_url):
        r = requests.post(
            f"{base_url}/api/v1/predict",
            files={"picture": ("a.png", png_bytes(0), "image/png")},
            timeout=10,
        )
        assert r.status_code == 400
        assert r.json()["error"] == "bad_request"

    def test_unsupported_method_carries_error_json(self, base_url):
        r = requests.put(f"{base_url}/api/v1/predict", data=b"x", timeout=5)
        assert r.status_code >= 400
        body = r.json()
        assert set(body) == {"error", "message"}

    def test_cors_headers(self, base_url):
        r = requests.get(f"{base_url}/api/v1/health", timeout=5)
        assert r.headers["Access-Control-Allow-Origin"] == "*"
        r = requests.options(f"{base_url}/api/v1/predict", timeout=5)
        assert r.status_code == 204
        assert "POST" in r.headers["Access-Control-Allow-Methods"]

    def test_sixteen_concurrent_identical(self, base_url):
        raw = png_bytes(5)

        def hit(_):
            return requests.post(
                f"{base_url}/api/v1/predict",
                files={"image": ("a.png", raw, "image/png")},
                timeout=30,
            ).content

        with ThreadPoolExecutor(max_workers=16) as pool:
            bodies = list(pool.map(hit, range(16)))
        assert len(set(bodies)) == 1
        json.loads(bodies[0])  # valid JSON
