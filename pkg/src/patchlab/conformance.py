"""Wire-protocol conformance suite for oracle services.

The golden pairs in ``data/conformance.json`` pin the observable behavior of
a conforming service: exact /infer texts for reference frames, exact /embed
vectors, /health shape, and the error envelope for malformed input. Any
implementation that passes — in whatever language — is interchangeable with
the in-process scripted fixtures, which is what makes networked campaign
runs reproduce in-process results.

Pairs are generated from the reference fixtures by
``scripts/gen_conformance.py`` and checked against them in the test suite,
so the file cannot drift from the code.
"""

from __future__ import annotations

import base64
import json
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources

from .errors import ProtocolError

DATA_PACKAGE = "patchlab.data"
DATA_NAME = "conformance.json"


def load_golden_pairs() -> dict:
    with resources.files(DATA_PACKAGE).joinpath(DATA_NAME).open("r", encoding="utf-8") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class ConformanceResult:
    name: str
    ok: bool
    detail: str = ""


def _post(url: str, payload: bytes, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(
        url, data=payload, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def _check_error_body(body: bytes) -> str:
    try:
        doc = json.loads(body.decode("utf-8"))
    except ValueError:
        return "error body is not JSON"
    if not isinstance(doc, dict) or not isinstance(doc.get("error"), str):
        return f'error body missing string "error" field: {doc!r}'
    return ""


def run_conformance(base_url: str, data: dict | None = None, timeout: float = 10.0) -> list[ConformanceResult]:
    """Exercise every golden pair against a running service."""
    data = data if data is not None else load_golden_pairs()
    base = base_url.rstrip("/")
    results: list[ConformanceResult] = []

    def record(name: str, ok: bool, detail: str = ""):
        results.append(ConformanceResult(name, ok, detail))

    # /health shape
    try:
        with urllib.request.urlopen(base + "/health", timeout=timeout) as resp:
            doc = json.loads(resp.read().decode("utf-8"))
        ok = isinstance(doc.get("name"), str) and isinstance(doc.get("version"), str)
        record("health-shape", ok, "" if ok else f"bad body {doc!r}")
    except Exception as exc:
        record("health-shape", False, str(exc))

    for pair in data["infer"]:
        status, body = _post(
            base + "/infer",
            json.dumps({"image_png_b64": pair["image_png_b64"], "prompt": pair["prompt"]}).encode(),
            timeout,
        )
        try:
            text = json.loads(body.decode("utf-8")).get("text")
        except ValueError:
            text = None
        ok = status == 200 and text == pair["text"]
        record(
            f"infer-{pair['name']}",
            ok,
            "" if ok else f"status {status}, text {text!r} != {pair['text']!r}",
        )

    for pair in data["embed"]:
        status, body = _post(base + "/embed", json.dumps({"text": pair["text"]}).encode(), timeout)
        try:
            doc = json.loads(body.decode("utf-8"))
        except ValueError:
            doc = {}
        got = doc.get("vector")
        ok = (
            status == 200
            and doc.get("dim") == data["embedder"]["dimension"]
            and got == pair["vector"]
        )
        record(f"embed-{pair['name']}", ok, "" if ok else f"status {status}")

    # determinism: same text twice -> identical vectors
    probe = data["embed"][0]["text"]
    _, b1 = _post(base + "/embed", json.dumps({"text": probe}).encode(), timeout)
    _, b2 = _post(base + "/embed", json.dumps({"text": probe}).encode(), timeout)
    record("embed-deterministic", b1 == b2, "" if b1 == b2 else "vectors differ across calls")

    # error envelope
    error_cases = [
        ("error-bad-b64", "/infer", {"image_png_b64": "!!!not-base64!!!", "prompt": "p"}, 400),
        ("error-not-png", "/infer",
         {"image_png_b64": base64.b64encode(b"plainly not an image").decode(), "prompt": "p"}, 400),
        ("error-missing-field", "/infer", {"prompt": "p"}, 400),
        ("error-empty-text", "/embed", {"text": ""}, 400),
    ]
    for name, path, doc, want_status in error_cases:
        status, body = _post(base + path, json.dumps(doc).encode(), timeout)
        detail = _check_error_body(body)
        ok = status == want_status and not detail
        record(name, ok, detail or ("" if ok else f"status {status} != {want_status}"))

    status, body = _post(base + "/infer", b"{not json", timeout)
    detail = _check_error_body(body)
    record("error-bad-json", status == 400 and not detail, detail or f"status {status}")

    max_bytes = data["limits"]["max_request_bytes"]
    padding = base64.b64encode(b"\0" * (max_bytes + 1024)).decode()
    status, _ = _post(base + "/infer", json.dumps({"image_png_b64": padding, "prompt": "p"}).encode(), timeout)
    record("error-oversized", status == 413, "" if status == 413 else f"status {status} != 413")

    return results


def assert_conformance(base_url: str, timeout: float = 10.0) -> None:
    """Raise with a readable summary when any golden pair fails."""
    results = run_conformance(base_url, timeout=timeout)
    failures = [r for r in results if not r.ok]
    if failures:
        lines = "\n".join(f"  {r.name}: {r.detail}" for r in failures)
        raise ProtocolError(f"service failed {len(failures)} conformance pairs:\n{lines}")
