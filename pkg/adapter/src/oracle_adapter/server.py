"""HTTP service exposing a model backend behind the oracle wire protocol.

Endpoints (JSON bodies, UTF-8):
    POST /infer  {"image_png_b64": str, "prompt": str} -> 200 {"text": str}
    POST /embed  {"text": str}                         -> 200 {"vector": [..], "dim": int}
    GET  /health                                       -> 200 {"name": str, "version": str}

Malformed input returns 400 {"error": str}; bodies over the configured size
return 413 after the request is drained. Requests are stateless and handled
on a thread per connection, so any number may be in flight concurrently.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import dataclasses
import json
import sys
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import backends
from .backends import BackendError, build_backend, embed_text

VERSION = "0.1.0"
DEFAULT_MAX_REQUEST_BYTES = 4 * 1024 * 1024

_CONFIG_KEYS = {"port", "backend", "backend_params", "embedder", "max_request_bytes"}
_EMBEDDER_KEYS = {"dimension", "seed"}


@dataclass(frozen=True)
class AdapterConfig:
    port: int = 0  # 0 picks a free port
    backend: str = "scripted:patch-sensitive"
    backend_params: dict = field(default_factory=dict)
    embedder_dimension: int = backends.BOW_DIMENSION
    embedder_seed: int = backends.BOW_SEED
    max_request_bytes: int = DEFAULT_MAX_REQUEST_BYTES


def config_from_dict(doc: dict) -> AdapterConfig:
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise BackendError(f"unknown config keys: {sorted(unknown)}")
    emb = doc.get("embedder", {})
    unknown = set(emb) - _EMBEDDER_KEYS
    if unknown:
        raise BackendError(f"unknown embedder keys: {sorted(unknown)}")
    return AdapterConfig(
        port=int(doc.get("port", 0)),
        backend=doc.get("backend", "scripted:patch-sensitive"),
        backend_params=dict(doc.get("backend_params", {})),
        embedder_dimension=int(emb.get("dimension", backends.BOW_DIMENSION)),
        embedder_seed=int(emb.get("seed", backends.BOW_SEED)),
        max_request_bytes=int(doc.get("max_request_bytes", DEFAULT_MAX_REQUEST_BYTES)),
    )


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    config: AdapterConfig
    backend = None

    def log_message(self, *args):
        pass

    def _send(self, code: int, doc: dict) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _drain(self, length: int) -> None:
        while length > 0:
            chunk = self.rfile.read(min(length, 1 << 20))
            if not chunk:
                break
            length -= len(chunk)

    def do_GET(self):
        if self.path == "/health":
            self._send(200, {"name": self.backend.name, "version": VERSION})
        else:
            self._send(404, {"error": f"no such endpoint {self.path!r}"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        if length > self.config.max_request_bytes:
            self._drain(length)
            self._send(413, {"error": f"request exceeds {self.config.max_request_bytes} bytes"})
            return
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw.decode("utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            self._send(400, {"error": f"malformed JSON body: {exc}"})
            return
        try:
            if self.path == "/infer":
                self._infer(doc)
            elif self.path == "/embed":
                self._embed(doc)
            else:
                self._send(404, {"error": f"no such endpoint {self.path!r}"})
        except BackendError as exc:
            self._send(400, {"error": str(exc)})

    def _infer(self, doc: dict) -> None:
        b64 = doc.get("image_png_b64")
        prompt = doc.get("prompt")
        if not isinstance(b64, str) or not isinstance(prompt, str):
            raise BackendError("request needs string fields image_png_b64 and prompt")
        try:
            image = base64.b64decode(b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise BackendError(f"image_png_b64 is not valid base64: {exc}") from exc
        self._send(200, {"text": self.backend.infer(image, prompt)})

    def _embed(self, doc: dict) -> None:
        text = doc.get("text")
        if not isinstance(text, str) or not text:
            raise BackendError("request needs a non-empty string field text")
        vec = embed_text(text, self.config.embedder_dimension, self.config.embedder_seed)
        self._send(200, {"vector": vec.tolist(), "dim": int(vec.shape[0])})


class AdapterServer:
    """A running service; use as a context manager or call shutdown()."""

    def __init__(self, config: AdapterConfig):
        handler = type(
            "BoundHandler",
            (_Handler,),
            {"config": config, "backend": build_backend(config.backend, config.backend_params)},
        )
        self._http = ThreadingHTTPServer(("127.0.0.1", config.port), handler)
        self._thread = threading.Thread(target=self._http.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._http.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "AdapterServer":
        if not self._thread.is_alive():
            self._thread.start()
        return self

    def shutdown(self) -> None:
        self._http.shutdown()
        self._http.server_close()

    def __enter__(self) -> "AdapterServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(config: AdapterConfig) -> AdapterServer:
    """Start the service on config.port (0 = ephemeral) and return it."""
    return AdapterServer(config).start()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="oracle-adapter", description=__doc__)
    parser.add_argument("--config", help="adapter config JSON file")
    parser.add_argument("--port", type=int, help="listen port (overrides config)")
    args = parser.parse_args(argv)

    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    config = config_from_dict(doc)
    if args.port is not None:
        config = dataclasses.replace(config, port=args.port)

    server = serve(config)
    print(f"oracle-adapter serving {config.backend} on {server.url}", flush=True)
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
