"""Micro-batching HTTP inference service.

Requests land in one bounded FIFO queue. A single drain thread wakes when
the queue reaches `max_batch` or when `poll_interval` elapses with work
pending, takes up to `max_batch` requests, runs one batched forward pass,
and resolves each caller's future with its own top-k. Because the model's
features are invariant to batch padding, batched responses match
single-request inference.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import uuid
from collections import deque
from concurrent.futures import Future, TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import configfile
from .catalog import Product
from .validation import check_product_fields

logger = logging.getLogger(__name__)

ENV_PREFIX = "PRODCAT_"
_ENV_KEYS = {
    "poll_interval": "PRODCAT_POLL_INTERVAL",
    "max_batch": "PRODCAT_MAX_BATCH",
    "queue_capacity": "PRODCAT_QUEUE_CAPACITY",
    "bind": "PRODCAT_BIND",
}


@dataclass
class BatcherConfig:
    """Queueing and serving knobs; defaults follow the deployed setup."""

    poll_interval: float = 0.3
    max_batch: int = 1024
    k: int = 3
    request_timeout: float = 10.0
    queue_capacity: int | None = None
    bind: str = "127.0.0.1:8080"

    def __post_init__(self):
        if self.poll_interval <= 0:
            raise ValueError(f"poll_interval must be > 0, got {self.poll_interval}")
        if self.max_batch < 1 or self.k < 1:
            raise ValueError("max_batch and k must be >= 1")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be > 0")

    @property
    def capacity(self) -> int:
        return self.queue_capacity if self.queue_capacity is not None else 8 * self.max_batch

    @classmethod
    def from_sources(
        cls, path: str | Path | None = None, env: Mapping[str, str] | None = None
    ) -> "BatcherConfig":
        """Build from an optional flat key/value file, then apply environment
        overrides (PRODCAT_POLL_INTERVAL, PRODCAT_MAX_BATCH,
        PRODCAT_QUEUE_CAPACITY, PRODCAT_BIND)."""
        env = os.environ if env is None else env
        values: dict[str, str] = {}
        if path is not None:
            values.update(configfile.read_kv(path))
        for key, env_key in _ENV_KEYS.items():
            if env_key in env:
                values[key] = env[env_key]
        kwargs: dict[str, object] = {}
        if "poll_interval" in values:
            kwargs["poll_interval"] = float(values["poll_interval"])
        if "max_batch" in values:
            kwargs["max_batch"] = int(values["max_batch"])
        if "k" in values:
            kwargs["k"] = int(values["k"])
        if "request_timeout" in values:
            kwargs["request_timeout"] = float(values["request_timeout"])
        if "queue_capacity" in values:
            kwargs["queue_capacity"] = int(values["queue_capacity"])
        if "bind" in values:
            kwargs["bind"] = values["bind"]
        return cls(**kwargs)


class RequestValidationError(ValueError):
    """The request document is malformed; `fields` names the offenders."""

    def __init__(self, fields: Sequence[str]):
        super().__init__(f"invalid fields: {', '.join(fields)}")
        self.fields = list(fields)


class QueueFullError(RuntimeError):
    def __init__(self, retry_after: float):
        super().__init__("request queue is full")
        self.retry_after = retry_after


class DuplicateRequestError(ValueError):
    def __init__(self, request_id: str):
        super().__init__(f"request_id {request_id!r} is already in flight")
        self.request_id = request_id


class BatchInferenceError(RuntimeError):
    def __init__(self, batch_id: str):
        super().__init__(f"inference failed for batch {batch_id}")
        self.batch_id = batch_id


@dataclass
class PendingRequest:
    request_id: str
    product: Product
    k: int
    arrival: float
    future: Future


class MicroBatcher:
    """Bounded FIFO of pending requests drained by one inference thread."""

    def __init__(
        self,
        infer_fn: Callable[[Sequence[Product], int], list[list[tuple[str, float]]]],
        config: BatcherConfig,
    ):
        self._infer_fn = infer_fn
        self.config = config
        self._cond = threading.Condition()
        self._queue: deque[PendingRequest] = deque()
        self._inflight_ids: set[str] = set()
        self._running = False
        self._thread: threading.Thread | None = None
        self._requests_total = 0
        self._responses_total = 0
        self._batches_total = 0
        self._batch_size_max = 0
        self._inflight_batch = 0

    def start(self) -> None:
        with self._cond:
            if self._running:
                return
            self._running = True
        self._thread = threading.Thread(target=self._drain_loop, name="prodcat-batcher", daemon=True)
        self._thread.start()

    def stop(self, timeout: float = 5.0) -> None:
        with self._cond:
            self._running = False
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=timeout)
            self._thread = None

    def submit(self, request_id: str, product: Product, k: int | None = None) -> Future:
        """Append a request in arrival order; the future resolves when its
        batch completes. Raises QueueFullError at capacity and
        DuplicateRequestError if the id is already in flight."""
        future: Future = Future()
        with self._cond:
            if not self._running:
                raise RuntimeError("batcher is not running")
            if len(self._queue) >= self.config.capacity:
                raise QueueFullError(retry_after=self.config.poll_interval)
            if request_id in self._inflight_ids:
                raise DuplicateRequestError(request_id)
            self._inflight_ids.add(request_id)
            self._queue.append(
                PendingRequest(
                    request_id=request_id,
                    product=product,
                    k=self.config.k if k is None else k,
                    arrival=time.monotonic(),
                    future=future,
                )
            )
            self._requests_total += 1
            self._cond.notify_all()
        return future

    def _take_batch(self) -> list[PendingRequest]:
        with self._cond:
            while not self._queue and self._running:
                self._cond.wait()
            if not self._queue:
                return []
            deadline = time.monotonic() + self.config.poll_interval
            while len(self._queue) < self.config.max_batch and self._running:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._cond.wait(remaining)
            batch = [
                self._queue.popleft()
                for _ in range(min(len(self._queue), self.config.max_batch))
            ]
            self._inflight_batch = len(batch)
            return batch

    def _drain_loop(self) -> None:
        while True:
            batch = self._take_batch()
            if not batch:
                return
            try:
                k_max = max(req.k for req in batch)
                rankings = self._infer_fn([req.product for req in batch], k_max)
                for req, ranked in zip(batch, rankings):
                    req.future.set_result(ranked[: req.k])
            except Exception:
                batch_id = uuid.uuid4().hex[:12]
                logger.exception("inference failed for batch %s", batch_id)
                for req in batch:
                    req.future.set_exception(BatchInferenceError(batch_id))
            with self._cond:
                self._batches_total += 1
                self._batch_size_max = max(self._batch_size_max, len(batch))
                self._responses_total += len(batch)
                self._inflight_batch = 0
                for req in batch:
                    self._inflight_ids.discard(req.request_id)

    def stats(self) -> dict:
        with self._cond:
            return {
                "queue_depth": len(self._queue),
                "inflight_batch_size": self._inflight_batch,
                "requests_total": self._requests_total,
                "responses_total": self._responses_total,
                "batches_total": self._batches_total,
                "batch_size_max": self._batch_size_max,
            }


def parse_predict_request(doc: object, num_classes: int, default_k: int) -> tuple[str, Product, int]:
    """Validate a predict request document; returns (request_id, product, k)."""
    if not isinstance(doc, dict):
        raise RequestValidationError(["body"])
    fields = check_product_fields(
        doc.get("request_id"), doc.get("unstructured", {}), doc.get("structured", [])
    )
    if "id" in fields:
        fields[fields.index("id")] = "request_id"
    k = doc.get("k", default_k)
    if not isinstance(k, int) or isinstance(k, bool) or not 1 <= k <= num_classes:
        fields.append("k")
    if fields:
        raise RequestValidationError(fields)
    product = Product(
        id=doc["request_id"],
        unstructured=dict(doc.get("unstructured", {})),
        structured=[(n, v) for n, v in doc.get("structured", [])],
    )
    return doc["request_id"], product, k


def model_fingerprint(model) -> str:
    """Stable digest over a fitted model's weights."""
    digest = hashlib.sha256()
    params = getattr(model, "params_", None)
    if params is not None:
        for name in sorted(params):
            digest.update(name.encode("utf-8"))
            digest.update(params[name].data.tobytes())
    else:
        for node in sorted(getattr(model, "node_models_", {})):
            node_model = model.node_models_[node]
            digest.update(node.encode("utf-8"))
            if node_model.coef is not None:
                digest.update(node_model.coef.tobytes())
                digest.update(node_model.intercept.tobytes())
    return digest.hexdigest()


class PredictionService:
    """Glue between HTTP handlers, the batcher, and a frozen classifier."""

    def __init__(self, model, config: BatcherConfig | None = None):
        self.model = model
        self.config = config or BatcherConfig()
        self.num_classes = len(model.classes_)
        self.batcher = MicroBatcher(self._infer, self.config)
        self.model_hash = model_fingerprint(model)
        self.config_hash = hashlib.sha256(
            json.dumps(
                {
                    "poll_interval": self.config.poll_interval,
                    "max_batch": self.config.max_batch,
                    "k": self.config.k,
                    "queue_capacity": self.config.capacity,
                },
                sort_keys=True,
            ).encode("utf-8")
        ).hexdigest()
        self.started_at = time.time()

    def _infer(self, products: Sequence[Product], k: int) -> list[list[tuple[str, float]]]:
        return self.model.predict_topk(list(products), k=k)

    def start(self) -> None:
        self.batcher.start()

    def stop(self) -> None:
        self.batcher.stop()

    def handle_predict(self, body: bytes) -> tuple[int, dict]:
        try:
            doc = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return 400, {"error": "validation", "fields": ["body"]}
        try:
            request_id, product, k = parse_predict_request(doc, self.num_classes, self.config.k)
        except RequestValidationError as exc:
            return 400, {"error": "validation", "fields": exc.fields}
        try:
            future = self.batcher.submit(request_id, product, k)
        except QueueFullError as exc:
            return 429, {"error": "overload", "retry_after": exc.retry_after}
        except DuplicateRequestError as exc:
            return 400, {"error": "validation", "fields": ["request_id"], "detail": str(exc)}
        try:
            ranked = future.result(timeout=self.config.request_timeout)
        except FutureTimeoutError:
            return 500, {"error": "timeout", "request_id": request_id}
        except BatchInferenceError as exc:
            return 500, {"error": "internal", "batch_id": exc.batch_id}
        return 200, {
            "request_id": request_id,
            "predictions": [
                {"label": label, "probability": probability} for label, probability in ranked
            ],
        }

    def handle_health(self) -> tuple[int, dict]:
        doc = self.batcher.stats()
        doc.update(
            {
                "status": "ok",
                "model_hash": self.model_hash,
                "config_hash": self.config_hash,
                "poll_interval": self.config.poll_interval,
                "max_batch": self.config.max_batch,
                "uptime_seconds": time.time() - self.started_at,
            }
        )
        return 200, doc


class _Handler(BaseHTTPRequestHandler):
    service: PredictionService  # set on the subclass by make_server

    def _respond(self, status: int, doc: dict, headers: Mapping[str, str] | None = None) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        for key, value in (headers or {}).items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(payload)

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path != "/v1/predict":
            self._respond(404, {"error": "not_found"})
            return
        length = int(self.headers.get("Content-Length", 0))
        status, doc = self.service.handle_predict(self.rfile.read(length))
        headers = {"Retry-After": str(doc["retry_after"])} if status == 429 else None
        self._respond(status, doc, headers)

    def do_GET(self) -> None:  # noqa: N802
        if self.path != "/v1/health":
            self._respond(404, {"error": "not_found"})
            return
        status, doc = self.service.handle_health()
        self._respond(status, doc)

    def log_message(self, format: str, *args) -> None:
        logger.debug("http: " + format, *args)


def make_server(service: PredictionService, bind: str | None = None) -> ThreadingHTTPServer:
    """Bind a threading HTTP server to `host:port` (port 0 picks a free one).

    The caller owns the lifecycle: start the service, then serve_forever or
    handle_request; shut down the server before stopping the service.
    """
    host, _, port_text = (bind or service.config.bind).rpartition(":")
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host or "127.0.0.1", int(port_text)), handler)
