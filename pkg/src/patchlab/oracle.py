"""Black-box model access: queries, text embeddings, semantic loss, and
normalization of free-form driving advice to action labels.

Oracles are opaque: an image and a prompt go in, text comes out. Scripted
in-process oracles (see ``scripted``) and HTTP endpoints share one client
surface, and every query lands in an append-only ledger so tests can audit
query budgets exactly.
"""

from __future__ import annotations

import enum
import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from . import scripted
from .errors import (
    DegenerateEmbeddingError,
    InvalidInputError,
    ProtocolError,
    TransportError,
)
from .imaging import Frame, frame_to_png

DEFAULT_PROMPT = "What should the driver do?"
UNKNOWN_THRESHOLD = 0.2
HTTP_RETRIES = 2  # retries after the first attempt


class ActionLabel(str, enum.Enum):
    ACCELERATE = "accelerate"
    MAINTAIN_SPEED = "maintain_speed"
    BRAKE = "brake"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    UNKNOWN = "unknown"


CANONICAL_ACTION_PHRASES = {
    ActionLabel.ACCELERATE: "accelerate",
    ActionLabel.MAINTAIN_SPEED: "maintain speed",
    ActionLabel.BRAKE: "brake",
    ActionLabel.TURN_LEFT: "turn left",
    ActionLabel.TURN_RIGHT: "turn right",
}


@dataclass(frozen=True)
class OracleRef:
    """Handle to one black-box model.

    endpoint is either an http(s) base URL or "scripted:<name>"; params
    configure scripted fixtures only.
    """

    id: str
    endpoint: str
    prompt: str = DEFAULT_PROMPT
    timeout: float = 10.0
    max_in_flight: int = 1
    params: tuple = ()

    def __post_init__(self):
        if self.timeout <= 0:
            raise InvalidInputError(f"timeout must be > 0, got {self.timeout}")
        if self.max_in_flight < 1:
            raise InvalidInputError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))

    @property
    def is_scripted(self) -> bool:
        return self.endpoint.startswith("scripted:")

    @property
    def scripted_name(self) -> str:
        return self.endpoint.split(":", 1)[1]

    def params_dict(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class OracleResponse:
    text: str
    latency: float = 0.0
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not self.text:
            raise ProtocolError("oracle returned empty text")


@dataclass(frozen=True)
class EmbeddingRef:
    """Handle to a text embedder: http(s) URL or "scripted:bow"."""

    endpoint: str = "scripted:bow"
    dimension: int = scripted.BOW_DIMENSION
    seed: int = scripted.BOW_SEED

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidInputError(f"dimension must be >= 1, got {self.dimension}")


class QueryLedger:
    """Append-only, thread-safe record of every oracle query."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list[dict] = []

    def record(self, oracle_id: str, n_bytes: int, latency: float) -> None:
        with self._lock:
            self._entries.append(
                {"oracle_id": oracle_id, "bytes": int(n_bytes), "latency": float(latency)}
            )

    def count(self, oracle_id: str | None = None) -> int:
        with self._lock:
            if oracle_id is None:
                return len(self._entries)
            return sum(1 for e in self._entries if e["oracle_id"] == oracle_id)

    def entries(self) -> list[dict]:
        with self._lock:
            return [dict(e) for e in self._entries]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries():
                fh.write(json.dumps(e, sort_keys=True) + "\n")


def _http_post_json(url: str, body: dict, timeout: float) -> dict:
    """One JSON round trip with the protocol's retry policy.

    Timeouts, refused connections, and 5xx replies are retried twice and
    then raised as TransportError; malformed bodies and 4xx replies raise
    ProtocolError immediately.
    """
    payload = json.dumps(body).encode("utf-8")
    last: Exception | None = None
    for _ in range(1 + HTTP_RETRIES):
        req = urllib.request.Request(
            url, data=payload, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            if 400 <= exc.code < 500:
                detail = exc.read().decode("utf-8", "replace")
                raise ProtocolError(f"{url} -> {exc.code}: {detail}") from exc
            last = exc  # 5xx: retry
            continue
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            last = exc
            continue
        try:
            return json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"{url} returned non-JSON body") from exc
    raise TransportError(f"{url} unreachable after {1 + HTTP_RETRIES} attempts: {last}")


def _http_get_json(url: str, timeout: float) -> dict:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
        raise TransportError(f"{url} unreachable: {exc}") from exc
    except ValueError as exc:
        raise ProtocolError(f"{url} returned non-JSON body") from exc


class OracleClient:
    """Shareable query handle for one oracle; all queries hit the ledger."""

    def __init__(self, ref: OracleRef, ledger: QueryLedger | None = None):
        self.ref = ref
        self.ledger = ledger if ledger is not None else QueryLedger()
        self._gate = threading.BoundedSemaphore(ref.max_in_flight)
        self._backend = (
            scripted.build_scripted_oracle(ref.scripted_name, ref.params_dict())
            if ref.is_scripted
            else None
        )

    def query(self, frame: Frame) -> OracleResponse:
        png = frame_to_png(frame)
        start = time.perf_counter()
        with self._gate:
            if self._backend is not None:
                text = self._backend.infer(png, self.ref.prompt)
            else:
                import base64

                body = {
                    "image_png_b64": base64.b64encode(png).decode("ascii"),
                    "prompt": self.ref.prompt,
                }
                reply = _http_post_json(self.ref.endpoint.rstrip("/") + "/infer", body, self.ref.timeout)
                if not isinstance(reply, dict) or not isinstance(reply.get("text"), str):
                    raise ProtocolError(f"/infer reply missing text field: {reply!r}")
                text = reply["text"]
        latency = time.perf_counter() - start
        self.ledger.record(self.ref.id, len(png), latency)
        return OracleResponse(text=text, latency=latency)

    def health(self) -> dict:
        if self._backend is not None:
            return {"name": self._backend.name, "version": "scripted"}
        reply = _http_get_json(self.ref.endpoint.rstrip("/") + "/health", self.ref.timeout)
        if not isinstance(reply, dict) or "name" not in reply or "version" not in reply:
            raise ProtocolError(f"/health reply malformed: {reply!r}")
        return reply


def query_oracle(oracle: OracleRef, frame: Frame, ledger: QueryLedger | None = None) -> OracleResponse:
    return OracleClient(oracle, ledger).query(frame)


class EmbeddingClient:
    """Embedder handle; pure text->vector, so results are memoized."""

    def __init__(self, ref: EmbeddingRef):
        self.ref = ref
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise InvalidInputError("cannot embed empty text")
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        if self.ref.endpoint == "scripted:bow":
            vec = scripted.bow_embed(text, self.ref.dimension, self.ref.seed)
        elif self.ref.endpoint.startswith("scripted:"):
            raise InvalidInputError(f"unknown scripted embedder {self.ref.endpoint!r}")
        else:
            reply = _http_post_json(
                self.ref.endpoint.rstrip("/") + "/embed", {"text": text}, timeout=10.0
            )
            if not isinstance(reply, dict) or "vector" not in reply:
                raise ProtocolError(f"/embed reply missing vector: {reply!r}")
            vec = np.asarray(reply["vector"], dtype=np.float64)
            if vec.shape != (self.ref.dimension,):
                raise ProtocolError(
                    f"/embed returned dimension {vec.shape}, declared {self.ref.dimension}"
                )
        if vec.shape != (self.ref.dimension,):
            raise ProtocolError(f"embedder returned shape {vec.shape}")
        if not np.any(vec):
            raise DegenerateEmbeddingError(f"zero-norm embedding for {text!r}")
        vec.flags.writeable = False
        with self._lock:
            self._cache[text] = vec
        return vec


def embed_text(e: EmbeddingRef, text: str) -> np.ndarray:
    return EmbeddingClient(e).embed(text)


def semantic_loss(generated: np.ndarray, target: np.ndarray) -> float:
    """1 - cosine similarity, in [0, 2]. Scale-invariant and symmetric."""
    g = np.asarray(generated, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if g.shape != t.shape:
        raise InvalidInputError(f"embedding dimensions differ: {g.shape} vs {t.shape}")
    ng = float(np.linalg.norm(g))
    nt = float(np.linalg.norm(t))
    if ng == 0.0 or nt == 0.0:
        raise DegenerateEmbeddingError("semantic loss undefined for zero-norm embeddings")
    return 1.0 - float(np.dot(g, t)) / (ng * nt)


def normalize_action(
    response: OracleResponse, e: EmbeddingRef, client: EmbeddingClient | None = None
) -> ActionLabel:
    """Map free-form model text to the nearest canonical action.

    The response and each canonical phrase are embedded; the argmax-cosine
    label wins unless the best cosine falls below the unknown threshold.
    Invariant under positive rescaling of all embeddings.
    """
    client = client if client is not None else EmbeddingClient(e)
    text_vec = client.embed(response.text)
    best_label = ActionLabel.UNKNOWN
    best_cos = -np.inf
    for label, phrase in CANONICAL_ACTION_PHRASES.items():
        cos = 1.0 - semantic_loss(text_vec, client.embed(phrase))
        if cos > best_cos:
            best_cos = cos
            best_label = label
    if best_cos < UNKNOWN_THRESHOLD:
        return ActionLabel.UNKNOWN
    return best_label
