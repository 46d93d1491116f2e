"""HTTP inference service: upload a cell image, get the classification.

Endpoints:

- ``GET  /api/v1/health``  -> 200 {"status": "ok", "model_version": ...}
- ``POST /api/v1/predict`` (multipart/form-data, field "image")
  -> 200 {"label", "probabilities": {...}, "model_version"}
  -> 400 decode_error | 413 too_large | 503 model_unavailable

Every non-200 response body is JSON {"error": code, "message": text}.
Handlers run concurrently (thread per request) over one read-only model;
reloading the model means restarting the service.
"""

from __future__ import annotations

import json
import logging
import re
import signal
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .checkpoint import checkpoint_version, load
from .data import preprocess_image
from .exceptions import (
    DecodeError,
    ModelUnavailableError,
    PayloadTooLargeError,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

MAX_UPLOAD_BYTES = 5 * 1024 * 1024  # generous for single-cell PNG crops


@dataclass
class Prediction:
    label: str
    probabilities: dict[str, float]
    model_version: str

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "probabilities": self.probabilities,
            "model_version": self.model_version,
        }


class InferenceService:
    """Preprocess -> forward(infer) -> Prediction, independent of transport."""

    def __init__(self, model=None, model_version: str = "unavailable"):
        self.model = model
        self.model_version = model_version

    @classmethod
    def from_checkpoint(cls, path, model_factory=None) -> "InferenceService":
        kwargs = {} if model_factory is None else {"model_factory": model_factory}
        model = load(path, **kwargs)
        return cls(model=model, model_version=checkpoint_version(path))

    def predict(self, image_bytes: bytes) -> Prediction:
        if len(image_bytes) > MAX_UPLOAD_BYTES:
            raise PayloadTooLargeError(
                f"image is {len(image_bytes)} bytes; limit is {MAX_UPLOAD_BYTES}"
            )
        if self.model is None:
            raise ModelUnavailableError("no model checkpoint is loaded")
        img = preprocess_image(image_bytes)
        batch = Tensor(img.data[None, ...])
        probs = self.model.forward(batch, mode="infer").data[0]
        idx = int(np.argmax(probs))  # argmax; ties resolve to the lower index
        names = self.model.class_names
        return Prediction(
            label=names[idx],
            probabilities={name: float(p) for name, p in zip(names, probs)},
            model_version=self.model_version,
        )


# ---------------------------------------------------------------------------
# multipart/form-data
# ---------------------------------------------------------------------------

_BOUNDARY_RE = re.compile(r'boundary="?([^";,]+)"?')
_NAME_RE = re.compile(r'name="([^"]*)"')


def parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    """Fields of a multipart/form-data body, keyed by form name."""
    if not content_type or "multipart/form-data" not in content_type:
        raise DecodeError(f"expected multipart/form-data, got {content_type!r}")
    m = _BOUNDARY_RE.search(content_type)
    if not m:
        raise DecodeError("multipart content-type without a boundary")
    delim = b"--" + m.group(1).encode("ascii")
    fields: dict[str, bytes] = {}
    chunks = body.split(delim)
    # chunks[0] is the preamble; the final chunk is the "--\r\n" epilogue
    for chunk in chunks[1:]:
        if chunk.startswith(b"--"):
            break
        chunk = chunk.lstrip(b"\r\n")
        head, sep, content = chunk.partition(b"\r\n\r\n")
        if not sep:
            continue
        if content.endswith(b"\r\n"):
            content = content[:-2]
        disposition = ""
        for line in head.split(b"\r\n"):
            if line.lower().startswith(b"content-disposition:"):
                disposition = line.decode("utf-8", errors="replace")
        name = _NAME_RE.search(disposition)
        if name:
            fields[name.group(1)] = content
    return fields


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: InferenceService = None  # set by make_server
    cors_origin: str = "*"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def send_error(self, code, message=None, explain=None):
        # stdlib fallback paths (unsupported verbs, malformed requests) must
        # honor the JSON error contract too
        self._send_error_json(code, "http_error", message or explain or f"HTTP {code}")
        self.close_connection = True

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", self.cors_origin)
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, code: str, message: str) -> None:
        self._send_json(status, {"error": code, "message": message})

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", self.cors_origin)
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        if self.path == "/api/v1/health":
            self._send_json(
                200, {"status": "ok", "model_version": self.service.model_version}
            )
        else:
            self._send_error_json(404, "not_found", f"no route for {self.path}")

    def do_POST(self):
        if self.path != "/api/v1/predict":
            self._send_error_json(404, "not_found", f"no route for {self.path}")
            return
        length = self.headers.get("Content-Length")
        if length is None:
            self.close_connection = True
            self._send_error_json(411, "length_required", "Content-Length is required")
            return
        length = int(length)
        if length > MAX_UPLOAD_BYTES + 4096:  # allow multipart framing overhead
            self.close_connection = True  # body stays unread; keep-alive would desync
            self._send_error_json(
                413, "too_large", f"request body exceeds {MAX_UPLOAD_BYTES} bytes"
            )
            return
        body = self.rfile.read(length)
        try:
            fields = parse_multipart(self.headers.get("Content-Type", ""), body)
        except DecodeError as exc:
            self._send_error_json(400, "bad_request", str(exc))
            return
        if "image" not in fields:
            self._send_error_json(400, "bad_request", 'missing form field "image"')
            return
        try:
            prediction = self.service.predict(fields["image"])
        except DecodeError as exc:
            self._send_error_json(400, "decode_error", str(exc))
        except PayloadTooLargeError as exc:
            self._send_error_json(413, "too_large", str(exc))
        except ModelUnavailableError as exc:
            self._send_error_json(503, "model_unavailable", str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("prediction failed")
            self._send_error_json(500, "internal_error", str(exc))
        else:
            self._send_json(200, prediction.to_dict())


def make_server(
    service: InferenceService, host: str = "127.0.0.1", port: int = 0,
    cors_origin: str = "*",
) -> ThreadingHTTPServer:
    """Bound, ready-to-run server; caller drives serve_forever/shutdown."""
    handler = type(
        "BoundHandler", (_Handler,), {"service": service, "cors_origin": cors_origin}
    )
    return ThreadingHTTPServer((host, port), handler)


def serve(
    checkpoint_path, bind_addr: str = "127.0.0.1:8000", cors_origin: str = "*"
) -> None:
    """Load the checkpoint and serve until SIGTERM/SIGINT (graceful)."""
    service = InferenceService.from_checkpoint(checkpoint_path)
    host, _, port = bind_addr.partition(":")
    server = make_server(service, host or "127.0.0.1", int(port or 8000), cors_origin)

    def _shutdown(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    log.info("serving on %s (model %s)", bind_addr, service.model_version)
    try:
        server.serve_forever()
    finally:
        server.server_close()
