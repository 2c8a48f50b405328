import json
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest
from helpers import tiny_products, untrained_classifier

from prodcat.catalog import Product

from prodcat.serving import (
    BatcherConfig,
    DuplicateRequestError,
    MicroBatcher,
    PredictionService,
    QueueFullError,
    RequestValidationError,
    make_server,
    parse_predict_request,
)


def fake_infer(batch_log):
    """Inference stand-in that records batch sizes and ranks by product id."""

    def infer(products, k):
        batch_log.append(len(products))
        return [[(p.id, 1.0)] * k for p in products]

    return infer


def fast_config(**overrides):
    kwargs = dict(poll_interval=0.05, max_batch=8, k=1, request_timeout=5.0)
    kwargs.update(overrides)
    return BatcherConfig(**kwargs)


class TestBatcherConfig:
    def test_deployment_defaults_accepted(self):
        config = BatcherConfig()
        assert config.poll_interval == pytest.approx(0.3)
        assert config.max_batch == 1024
        assert config.k == 3
        assert config.capacity == 8 * 1024

    def test_validation(self):
        with pytest.raises(ValueError):
            BatcherConfig(poll_interval=0.0)
        with pytest.raises(ValueError):
            BatcherConfig(max_batch=0)

    def test_file_and_env_overrides(self, tmp_path):
        path = tmp_path / "serve.txt"
        path.write_text("poll_interval = 0.7\nmax_batch = 16\nbind = 0.0.0.0:9999\n")
        config = BatcherConfig.from_sources(path, env={})
        assert config.poll_interval == pytest.approx(0.7)
        assert config.max_batch == 16
        env = {"PRODCAT_POLL_INTERVAL": "0.2", "PRODCAT_QUEUE_CAPACITY": "5"}
        config = BatcherConfig.from_sources(path, env=env)
        assert config.poll_interval == pytest.approx(0.2)  # env beats file
        assert config.max_batch == 16  # file survives where env is silent
        assert config.capacity == 5


class TestParseRequest:
    def test_valid(self):
        doc = {
            "request_id": "r1",
            "k": 2,
            "unstructured": {"product_name": "soft shirt"},
            "structured": [["color", "white"]],
        }
        request_id, product, k = parse_predict_request(doc, num_classes=3, default_k=3)
        assert request_id == "r1" and k == 2
        assert product.structured == [("color", "white")]

    def test_defaults_k(self):
        _, _, k = parse_predict_request(
            {"request_id": "r", "unstructured": {}, "structured": []}, 5, default_k=3
        )
        assert k == 3

    def test_bad_structured_named(self):
        doc = {"request_id": "r", "unstructured": {}, "structured": [["lonely"]]}
        with pytest.raises(RequestValidationError) as err:
            parse_predict_request(doc, 3, 3)
        assert "structured" in err.value.fields

    def test_missing_request_id_named(self):
        with pytest.raises(RequestValidationError) as err:
            parse_predict_request({"unstructured": {}, "structured": []}, 3, 3)
        assert "request_id" in err.value.fields

    def test_k_out_of_range_named(self):
        doc = {"request_id": "r", "k": 9, "unstructured": {}, "structured": []}
        with pytest.raises(RequestValidationError) as err:
            parse_predict_request(doc, num_classes=3, default_k=3)
        assert err.value.fields == ["k"]


class TestMicroBatcher:
    def test_single_request_resolves_with_batch_of_one(self):
        sizes = []
        batcher = MicroBatcher(fake_infer(sizes), fast_config())
        batcher.start()
        try:
            product = tiny_products(n=1)[0][0]
            result = batcher.submit("r1", product).result(timeout=2)
            assert result == [("p0", 1.0)]
            assert sizes == [1]
        finally:
            batcher.stop()

    def test_sequential_requests_always_batch_of_one(self):
        sizes = []
        batcher = MicroBatcher(fake_infer(sizes), fast_config())
        batcher.start()
        try:
            X, _ = tiny_products(n=5)
            for i, product in enumerate(X):
                batcher.submit(f"r{i}", product).result(timeout=2)
            assert sizes == [1, 1, 1, 1, 1]
        finally:
            batcher.stop()

    def test_spec_batch_arithmetic_1024_1024_452(self):
        sizes = []
        done = []

        def infer(products, k):
            sizes.append(len(products))
            done.extend(p.id for p in products)
            return [[(p.id, 1.0)] for p in products]

        config = BatcherConfig(poll_interval=0.2, max_batch=1024, k=1, queue_capacity=4000)
        batcher = MicroBatcher(infer, config)
        batcher.start()
        try:
            futures = [
                batcher.submit(f"r{i}", Product(id=f"r{i}")) for i in range(2500)
            ]
            for f in futures:
                f.result(timeout=10)
            assert sizes == [1024, 1024, 452]
            assert done == [f"r{i}" for i in range(2500)]  # FIFO order preserved
        finally:
            batcher.stop()

    def test_concurrent_load_produces_multi_request_batches(self):
        sizes = []

        def slow_infer(products, k):
            time.sleep(0.05)
            sizes.append(len(products))
            return [[(p.id, 1.0)] for p in products]

        batcher = MicroBatcher(slow_infer, fast_config(max_batch=64))
        batcher.start()
        try:
            product = tiny_products(n=1)[0][0]
            with ThreadPoolExecutor(max_workers=30) as pool:
                futures = list(
                    pool.map(lambda i: batcher.submit(f"r{i}", product).result(timeout=5), range(60))
                )
            assert len(futures) == 60
            assert max(sizes) > 1
        finally:
            batcher.stop()

    def test_duplicate_inflight_id_rejected(self):
        gate = threading.Event()

        def gated_infer(products, k):
            gate.wait(timeout=5)
            return [[(p.id, 1.0)] for p in products]

        batcher = MicroBatcher(gated_infer, fast_config(poll_interval=2.0, max_batch=4))
        batcher.start()
        try:
            product = tiny_products(n=1)[0][0]
            future = batcher.submit("same", product)
            with pytest.raises(DuplicateRequestError):
                batcher.submit("same", product)
            gate.set()
            future.result(timeout=5)
        finally:
            gate.set()
            batcher.stop()

    def test_queue_full_rejection_carries_retry_hint(self):
        gate = threading.Event()

        def gated_infer(products, k):
            gate.wait(timeout=5)
            return [[(p.id, 1.0)] for p in products]

        config = fast_config(poll_interval=1.0, max_batch=2, queue_capacity=3)
        batcher = MicroBatcher(gated_infer, config)
        batcher.start()
        try:
            product = tiny_products(n=1)[0][0]
            futures = [batcher.submit(f"r{i}", product) for i in range(3)]
            time.sleep(0.05)  # allow the drain thread to take a batch
            extra = [batcher.submit(f"x{i}", product) for i in range(2)]
            with pytest.raises(QueueFullError) as err:
                for i in range(5):
                    batcher.submit(f"y{i}", product)
            assert err.value.retry_after == pytest.approx(1.0)
            gate.set()
            for f in futures + extra:
                f.result(timeout=5)
        finally:
            gate.set()
            batcher.stop()

    def test_inference_failure_answers_whole_batch_and_loop_continues(self):
        calls = []

        def flaky(products, k):
            calls.append(len(products))
            if len(calls) == 1:
                raise RuntimeError("boom")
            return [[(p.id, 1.0)] for p in products]

        batcher = MicroBatcher(flaky, fast_config())
        batcher.start()
        try:
            failing = batcher.submit("r1", Product(id="r1"))
            with pytest.raises(Exception) as err:
                failing.result(timeout=2)
            assert "batch" in str(err.value)
            ok = batcher.submit("r2", Product(id="r2")).result(timeout=2)
            assert ok == [("r2", 1.0)]
        finally:
            batcher.stop()

    def test_stats_counters(self):
        sizes = []
        batcher = MicroBatcher(fake_infer(sizes), fast_config())
        batcher.start()
        try:
            fresh = batcher.stats()
            assert fresh["requests_total"] == 0
            assert fresh["batches_total"] == 0
            product = tiny_products(n=1)[0][0]
            for i in range(4):
                batcher.submit(f"r{i}", product).result(timeout=2)
            stats = batcher.stats()
            assert stats["requests_total"] == 4
            assert stats["responses_total"] == 4
            assert stats["batches_total"] == len(sizes)
            assert stats["batch_size_max"] == max(sizes)
            assert stats["queue_depth"] == 0
        finally:
            batcher.stop()


@pytest.fixture(scope="module")
def live_service():
    X, y = tiny_products(n=12)
    model = untrained_classifier(X, set(y))
    service = PredictionService(model, fast_config(k=2, max_batch=16))
    server = make_server(service, bind="127.0.0.1:0")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    service.start()
    thread.start()
    host, port = server.server_address[:2]
    yield service, f"http://{host}:{port}", X
    server.shutdown()
    server.server_close()
    service.stop()


def post_json(base, path, doc):
    req = urllib.request.Request(
        base + path,
        data=json.dumps(doc).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


class TestHttpService:
    def test_predict_matches_offline_inference(self, live_service):
        service, base, X = live_service
        product = X[0]
        status, doc = post_json(
            base,
            "/v1/predict",
            {
                "request_id": "req-0",
                "k": 2,
                "unstructured": dict(product.unstructured),
                "structured": [list(p) for p in product.structured],
            },
        )
        assert status == 200
        assert doc["request_id"] == "req-0"
        offline = service.model.predict_topk([product], k=2)[0]
        assert [p["label"] for p in doc["predictions"]] == [label for label, _ in offline]
        for got, (_, expected) in zip(doc["predictions"], offline):
            assert got["probability"] == pytest.approx(expected, abs=1e-5)

    def test_k_one_returns_single_entry(self, live_service):
        _, base, X = live_service
        status, doc = post_json(
            base,
            "/v1/predict",
            {"request_id": "req-k1", "k": 1, "unstructured": {}, "structured": []},
        )
        assert status == 200
        assert len(doc["predictions"]) == 1

    def test_invalid_structured_field_named(self, live_service):
        _, base, _ = live_service
        status, doc = post_json(
            base,
            "/v1/predict",
            {"request_id": "bad", "unstructured": {}, "structured": [["name-only"]]},
        )
        assert status == 400
        assert doc["error"] == "validation"
        assert "structured" in doc["fields"]

    def test_unparseable_body(self, live_service):
        _, base, _ = live_service
        req = urllib.request.Request(
            base + "/v1/predict", data=b"{oops", method="POST"
        )
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req, timeout=10)
        assert err.value.code == 400

    def test_unknown_path_404(self, live_service):
        _, base, _ = live_service
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(base + "/v1/nope", timeout=10)
        assert err.value.code == 404

    def test_health_counts_requests(self, live_service):
        _, base, _ = live_service
        with urllib.request.urlopen(base + "/v1/health", timeout=10) as resp:
            before = json.loads(resp.read())
        assert before["status"] == "ok"
        assert "model_hash" in before and "config_hash" in before
        n = 3
        for i in range(n):
            status, _ = post_json(
                base,
                "/v1/predict",
                {"request_id": f"health-{i}", "unstructured": {}, "structured": []},
            )
            assert status == 200
        with urllib.request.urlopen(base + "/v1/health", timeout=10) as resp:
            after = json.loads(resp.read())
        assert after["requests_total"] == before["requests_total"] + n
        assert after["batches_total"] >= before["batches_total"] + 1
