"""Command-line entry point.

Subcommands: gen-synthetic, build-dicts, train, evaluate, compare, predict,
serve. Every stochastic operation takes --seed; running the same command
twice with the same seed produces identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import configfile
from .catalog import Taxonomy, examples_to_xy, ingest, parse_record, split, stratify
from .hierarchy import HierarchicalClassifier
from .models import STRUCTURED_KEY, MultiCnnClassifier
from .serving import BatcherConfig, PredictionService, make_server
from .synthetic import (
    SyntheticSpec,
    confusable_corpus,
    generate_corpus,
    separator_collision_corpus,
)
from .text import build_attribute_dictionary, build_dictionary
from .training import evaluate, f1_lift_report, MetricsReport

logger = logging.getLogger(__name__)


def _parse_channels(text: str) -> tuple[tuple[str, int, int], ...]:
    channels = []
    for part in text.split(","):
        attr, max_len, dict_size = part.strip().split(":")
        channels.append((attr, int(max_len), int(dict_size)))
    return tuple(channels)


def estimator_from_config(cfg: dict[str, str], seed: int):
    """Build an unfitted estimator from a flat key/value config."""
    model_type = cfg.get("model_type", "multicnn")
    if model_type == "hierarchical":
        return HierarchicalClassifier(
            hash_dim=int(cfg.get("hash_dim", 2**18)),
            l2=float(cfg.get("l2", 1e-4)),
            max_iter=int(cfg.get("max_iter", 200)),
            beam=int(cfg.get("beam", 10)),
            seed=seed,
        )
    if model_type != "multicnn":
        raise ValueError(f"unknown model_type {model_type!r}")
    kwargs = {"seed": seed}
    if "channels" in cfg:
        kwargs["channels"] = _parse_channels(cfg["channels"])
    for key, parse in (
        ("structured_mode", str),
        ("widths", configfile.parse_int_tuple),
        ("filters_per_width", int),
        ("embed_dim", int),
        ("fc_sizes", configfile.parse_int_tuple),
        ("structured_max_len", int),
        ("structured_dict_size", int),
        ("structured_separator", configfile.parse_bool),
        ("base_lr", float),
        ("min_lr", float),
        ("momentum", float),
        ("batch_size", int),
        ("epochs", int),
    ):
        if key in cfg:
            kwargs[key] = parse(cfg[key])
    return MultiCnnClassifier(**kwargs)


def load_model(directory: str | Path):
    """Load either model family by sniffing the manifest."""
    manifest = configfile.read_kv(Path(directory) / "manifest.txt")
    model_type = manifest.get("model_type")
    if model_type == "multicnn":
        return MultiCnnClassifier.load(directory)
    if model_type == "hierarchical":
        return HierarchicalClassifier.load(directory)
    raise ValueError(f"{directory}: unknown model_type {model_type!r}")


def _cmd_gen_synthetic(args) -> int:
    if args.mode == "standard":
        corpus = generate_corpus(
            SyntheticSpec(
                classes=args.classes,
                per_class=args.per_class,
                title_overlap=args.title_overlap,
                attr_signal=args.attr_signal,
                seed=args.seed,
            )
        )
    elif args.mode == "confusable":
        corpus = confusable_corpus(per_class=args.per_class, seed=args.seed)
    else:
        corpus = separator_collision_corpus(per_class=args.per_class, seed=args.seed)
    corpus.write(args.out)
    print(
        f"wrote {len(corpus.examples)} examples over {len(corpus.taxonomy.leaves)} classes to {args.out}"
    )
    return 0


def _cmd_build_dicts(args) -> int:
    cfg = configfile.read_kv(args.config)
    taxonomy = Taxonomy.load(args.taxonomy)
    examples = ingest(args.data, taxonomy)
    products = [ex.product for ex in examples]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for attr, max_len, dict_size in _parse_channels(cfg["channels"]):
        dictionary = build_dictionary((p.text(attr) for p in products), dict_size)
        dictionary.save(outdir / f"{attr}.dict")
        print(f"{attr}: {len(dictionary)} tokens")
    if cfg.get("structured_mode", "conv") != "none":
        dictionary = build_attribute_dictionary(
            products, int(cfg.get("structured_dict_size", 100_000))
        )
        dictionary.save(outdir / f"{STRUCTURED_KEY}.dict")
        print(f"{STRUCTURED_KEY}: {len(dictionary)} tokens")
    return 0


def _write_eval(path: Path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)


def _cmd_train(args) -> int:
    cfg = configfile.read_kv(args.config)
    taxonomy = Taxonomy.load(args.taxonomy)
    examples = ingest(args.data, taxonomy)
    dataset = split(examples, seed=args.seed)
    floor = int(cfg.get("stratify_floor", 200))
    train_examples = stratify(dataset.train, floor=floor)
    X_train, y_train = examples_to_xy(train_examples)
    X_val, y_val = examples_to_xy(dataset.validation)
    X_test, y_test = examples_to_xy(dataset.test)
    logger.info(
        "train/val/test sizes after stratification: %d/%d/%d",
        len(X_train), len(X_val), len(X_test),
    )

    model = estimator_from_config(cfg, seed=args.seed)
    if isinstance(model, HierarchicalClassifier):
        model.taxonomy = taxonomy
        model.fit(X_train, y_train)
    else:
        model.fit(X_train, y_train, eval_set=(X_val, y_val))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    model.save(outdir)
    configfile.write_kv(outdir / "config.txt", {**cfg, "seed": args.seed})
    history = getattr(model, "history_", [])
    with open(outdir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record.to_dict()) + "\n")
    if history:
        final = history[-1].val_loss
        if final and final == final:  # skip when validation loss is NaN
            logger.info(
                "first-epoch val loss is %.3fx the final val loss",
                history[0].val_loss / final,
            )
    report = evaluate(model, X_test, y_test)
    _write_eval(outdir / "eval.json", report)
    for k, acc in sorted(report.topk_accuracy.items()):
        print(f"test top-{k} accuracy: {acc:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    model = load_model(args.model)
    taxonomy = Taxonomy.load(args.taxonomy)
    examples = ingest(args.data, taxonomy)
    X, y = examples_to_xy(examples)
    ks = tuple(range(1, args.k + 1))
    report = evaluate(model, X, y, ks=ks)
    if args.out:
        _write_eval(Path(args.out), report)
    for k, acc in sorted(report.topk_accuracy.items()):
        print(f"top-{k} accuracy: {acc:.4f}")
    return 0


def _cmd_compare(args) -> int:
    def read_report(path: str) -> MetricsReport:
        target = Path(path)
        if target.is_dir():
            target = target / "eval.json"
        with open(target, "r", encoding="utf-8") as fh:
            return MetricsReport.from_dict(json.load(fh))

    rows = f1_lift_report(read_report(args.a), read_report(args.b), min_support=args.min_support)
    for label, delta in rows:
        print(f"{label}\t{delta:+.4f}")
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    with open(args.data, "r", encoding="utf-8") as fh:
        products = []
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            record.setdefault("label", model.classes_[0])  # label unused for prediction
            products.append(parse_record(record).product)
    for product, ranked in zip(products, model.predict_topk(products, k=args.k)):
        print(
            json.dumps(
                {
                    "id": product.id,
                    "predictions": [
                        {"label": label, "probability": probability}
                        for label, probability in ranked
                    ],
                }
            )
        )
    return 0


def _cmd_serve(args) -> int:
    model = load_model(args.model)
    config = BatcherConfig.from_sources(args.config)
    overrides = {}
    if args.poll_interval is not None:
        overrides["poll_interval"] = args.poll_interval
    if args.max_batch is not None:
        overrides["max_batch"] = args.max_batch
    if args.bind is not None:
        overrides["bind"] = args.bind
    if args.k is not None:
        overrides["k"] = args.k
    if overrides:
        config = BatcherConfig(
            poll_interval=overrides.get("poll_interval", config.poll_interval),
            max_batch=overrides.get("max_batch", config.max_batch),
            k=overrides.get("k", config.k),
            request_timeout=config.request_timeout,
            queue_capacity=config.queue_capacity,
            bind=overrides.get("bind", config.bind),
        )
    service = PredictionService(model, config)
    server = make_server(service)
    service.start()
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} (poll_interval={config.poll_interval}s, max_batch={config.max_batch})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
        service.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prodcat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=50)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--title-overlap", type=float, default=0.0)
    p.add_argument("--attr-signal", choices=["strong", "none"], default="strong")
    p.add_argument("--mode", choices=["standard", "confusable", "separator"], default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("build-dicts", help="build dictionary files from a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_dicts)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="rank per-class f1 lift between two evaluations")
    p.add_argument("--a", required=True, help="baseline eval.json or run directory")
    p.add_argument("--b", required=True, help="candidate eval.json or run directory")
    p.add_argument("--min-support", type=int, default=100)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("predict", help="rank labels for unlabeled products")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("serve", help="run the micro-batching HTTP service")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--bind", default=None)
    p.add_argument("--poll-interval", type=float, default=None)
    p.add_argument("--max-batch", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
