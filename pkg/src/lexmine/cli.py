"""Command-line surface: reproducible, seeded runs with on-disk artifacts.

Every command reads a flat key=value config file (``#`` starts a comment),
accepts ``--set key=value`` overrides, rejects unknown keys, and writes a
manifest recording the resolved config hash, seed, and package version next to
its artifacts. Relative input-data paths resolve against $LEXMINE_DATA_DIR
when it is set. Exit codes: 0 success, 2 config violation, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    DataFormatError,
    SynthSpec,
    TokenizerConfig,
    load_passages,
    load_qrels,
    load_queries,
    save_passages,
    save_qrels,
    save_queries,
    synth_benchmark,
)
from .dense import (
    build_dense_index,
    corpus_token_rows,
    init_optimizer,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .evaluation import format_lang_table, load_run, mrr_at_k, recall_at_k
from .mining import (
    MiningConfig,
    assemble_mined_sample,
    load_samples,
    mine_pairs,
    save_samples,
)
from .pipeline import (
    PipelineConfig,
    PipelineData,
    PipelineError,
    assemble_warmup_samples,
    run_pipeline,
    warmup,
)
from .querygen import (
    GeneratedPair,
    assemble_generated_sample,
    filter_generated,
    generate_query,
    load_generator,
    mark_accepted,
    save_generator,
)
from .sparse import BM25Params, build_index, search_sparse
from .dense import search_dense

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def data_path(p: str | Path) -> Path:
    """Resolve a data file path, honoring $LEXMINE_DATA_DIR for relative paths."""
    p = Path(p)
    base = os.environ.get("LEXMINE_DATA_DIR")
    if base and not p.is_absolute() and not p.exists():
        return Path(base) / p
    return p


def parse_kv_config(path: str | Path) -> dict[str, str]:
    """Flat key=value file; blank lines and '#' comments ignored."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if key in mapping:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}", key=key)
            mapping[key] = value
    return mapping


def apply_overrides(mapping: dict[str, str], sets: list[str]) -> dict[str, str]:
    out = dict(mapping)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}", key=key)


_PIPELINE_KEYS: dict[str, type] = {
    "iterations": int,
    "minibatches_per_iter": int,
    "batch_size": int,
    "warmup_epochs": int,
    "mining_s": int,
    "mining_l": int,
    "n_random_negatives": int,
    "max_hard_negatives": int,
    "n_generate": int,
    "skip_generation_first_iter": bool,
    "use_generation": bool,
    "embedding_dim": int,
    "shared_encoder": bool,
    "warmup_lr": float,
    "train_lr": float,
    "eval_k": int,
    "workers": int,
    "mining_mode": str,
    "negative_mode": str,
    "plateau_eps": float,
    "bm25_k1": float,
    "bm25_b": float,
    "lowercase": bool,
    "cjk_char_split": bool,
    "min_token_len": int,
}

_DATA_KEYS = (
    "passages",
    "train_queries",
    "train_qrels",
    "unlabeled_queries",
    "eval_queries",
    "eval_qrels",
    "source_lang",
)


def pipeline_config_from_mapping(mapping: dict[str, str], seed: int) -> PipelineConfig:
    kwargs: dict = {}
    mining: dict = {}
    bm25: dict = {}
    tok: dict = {}
    for key, raw in mapping.items():
        if key in _DATA_KEYS:
            continue
        if key not in _PIPELINE_KEYS:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        typ = _PIPELINE_KEYS[key]
        try:
            value = _parse_bool(raw, key) if typ is bool else typ(raw)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {exc}", key=key) from exc
        if key == "mining_s":
            mining["S"] = value
        elif key == "mining_l":
            mining["L"] = value
        elif key in ("n_random_negatives", "max_hard_negatives"):
            mining[key] = value
        elif key in ("bm25_k1", "bm25_b"):
            bm25[key.removeprefix("bm25_")] = value
        elif key in ("lowercase", "cjk_char_split", "min_token_len"):
            tok[key] = value
        else:
            kwargs[key] = value
    try:
        return PipelineConfig(
            mining=MiningConfig(**mining),
            bm25=BM25Params(**bm25),
            tokenizer=TokenizerConfig(**tok),
            seed=seed,
            **kwargs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _mapping_hash(mapping: dict) -> str:
    return hashlib.sha256(json.dumps(mapping, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(path: Path, command: str, config: dict, seed: int | None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _mapping_hash(config),
        "seed": seed,
        "version": __version__,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _guard_overwrite(marker: Path, overwrite: bool, what: str) -> None:
    if marker.exists() and not overwrite:
        raise ConfigError(f"{what} already exists at {marker}; pass --overwrite to replace it")


def _load_config(args: argparse.Namespace) -> dict[str, str]:
    mapping = parse_kv_config(args.config) if args.config else {}
    return apply_overrides(mapping, args.set or [])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_synth(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    try:
        spec = SynthSpec.from_mapping(mapping)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    _guard_overwrite(out / "manifest.json", args.overwrite, "synth output")
    bench = synth_benchmark(spec, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_passages(bench.corpus, out / "passages.jsonl")
    save_queries(bench.queries, out / "queries.jsonl")
    save_qrels(bench.judgments, out / "qrels.tsv")
    save_queries(bench.unlabeled, out / "unlabeled.jsonl")
    with open(out / "topics.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "source_lang": bench.source_lang,
                "target_langs": list(bench.target_langs),
                "passage_topics": {pid: list(t) for pid, t in bench.passage_topics.items()},
                "query_topics": {qid: list(t) for qid, t in bench.query_topics.items()},
                "topic_terms": {
                    f"{lang}:{t}": list(terms) for (lang, t), terms in bench.topic_terms.items()
                },
            },
            fh,
            ensure_ascii=False,
        )
    _write_manifest(out / "manifest.json", "synth", mapping, args.seed)
    print(
        f"wrote {len(bench.corpus)} passages, {len(bench.queries)} judged queries, "
        f"{len(bench.judgments)} judgments, {len(bench.unlabeled)} unlabeled queries to {out}"
    )
    return EXIT_OK


def _tokenizer_from(mapping: dict[str, str]) -> TokenizerConfig:
    kwargs = {}
    for key in ("lowercase", "cjk_char_split", "min_token_len"):
        if key in mapping:
            kwargs[key] = (
                _parse_bool(mapping[key], key) if key != "min_token_len" else int(mapping[key])
            )
    return TokenizerConfig(**kwargs)


def _bm25_from(mapping: dict[str, str]) -> BM25Params:
    kwargs = {}
    if "bm25_k1" in mapping:
        kwargs["k1"] = float(mapping["bm25_k1"])
    if "bm25_b" in mapping:
        kwargs["b"] = float(mapping["bm25_b"])
    return BM25Params(**kwargs)


def _cmd_index(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    allowed = {"bm25_k1", "bm25_b", "lowercase", "cjk_char_split", "min_token_len"}
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}", key=key)
    corpus = load_passages(data_path(args.passages))
    index = build_index(corpus, _tokenizer_from(mapping), _bm25_from(mapping))
    from .sparse import save_index

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    _write_manifest(Path(str(out) + ".manifest.json"), "index", mapping, None)
    print(f"indexed {index.N} passages, {len(index.postings)} terms -> {out}")
    return EXIT_OK


def _cmd_warmup(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    cfg = pipeline_config_from_mapping(mapping, seed=args.seed)
    corpus = load_passages(data_path(args.passages))
    queries = load_queries(data_path(args.queries))
    qrels = load_qrels(data_path(args.qrels))
    out = Path(args.out)
    _guard_overwrite(out / "manifest.json", args.overwrite, "warmup output")
    sparse_index = build_index(corpus, cfg.tokenizer, cfg.bm25)
    labeled = assemble_warmup_samples(queries, qrels, sparse_index, cfg)
    if not labeled:
        raise DataFormatError("no labeled queries with relevant judgments", args.qrels)
    params, generator = warmup(labeled, corpus, cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", params)
    save_generator(generator, out / "generator.json")
    _write_manifest(out / "manifest.json", "warmup", cfg.canonical_dict(), args.seed)
    print(f"warmed up on {len(labeled)} labeled samples -> {out}")
    return EXIT_OK


def _cmd_mine(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    cfg = pipeline_config_from_mapping(mapping, seed=args.seed)
    if args.workers:
        cfg.workers = args.workers
    corpus = load_passages(data_path(args.passages))
    queries = load_queries(data_path(args.queries))
    params, _ = load_checkpoint(data_path(args.checkpoint))
    sparse_index = build_index(corpus, cfg.tokenizer, cfg.bm25)
    dense_index = build_dense_index(params, corpus, cfg.tokenizer)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    _guard_overwrite(out, args.overwrite, "mined dataset")
    samples = []
    queries_with = 0
    for q in queries:
        sparse_topL = search_sparse(sparse_index, q, cfg.mining.L)
        dense_topL = search_dense(dense_index, params, q, cfg.mining.L, tok=cfg.tokenizer)
        sets = mine_pairs(sparse_topL, dense_topL, cfg.mining)
        queries_with += bool(sets.positives)
        samples.extend(assemble_mined_sample(q, sets, corpus, rng, cfg.mining))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_samples(samples, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"), "mine", cfg.canonical_dict(), args.seed
    )
    print(f"mined {len(samples)} samples from {len(queries)} queries ({queries_with} with positives)")
    return EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    cfg = pipeline_config_from_mapping(mapping, seed=args.seed)
    corpus = load_passages(data_path(args.passages))
    params, _ = load_checkpoint(data_path(args.checkpoint))
    generator = load_generator(data_path(args.generator))
    sparse_index = build_index(corpus, cfg.tokenizer, cfg.bm25)
    dense_index = build_dense_index(params, corpus, cfg.tokenizer)
    rng_select = np.random.default_rng([args.seed, 0])
    rng_sample = np.random.default_rng([args.seed, 1])
    out = Path(args.out)
    _guard_overwrite(out, args.overwrite, "generated dataset")
    accepted_samples = []
    rejected = []
    n_candidates = 0
    for lang in sorted({p.lang for p in corpus}):
        lang_passages = corpus.by_lang(lang)
        n = min(cfg.n_generate, len(lang_passages))
        picked = rng_select.choice(len(lang_passages), size=n, replace=False)
        for idx in picked:
            passage = lang_passages[int(idx)]
            try:
                query = generate_query(
                    generator, passage, rng_sample, cfg.tokenizer, query_id=f"gen-{passage.id}"
                )
            except ValueError:
                continue
            n_candidates += 1
            pair = GeneratedPair(query=query, passage_id=passage.id)
            if filter_generated(pair, sparse_index, dense_index, params, cfg.tokenizer):
                accepted_samples.append(
                    assemble_generated_sample(
                        mark_accepted(pair),
                        sparse_index,
                        dense_index,
                        params,
                        corpus,
                        rng_sample,
                        cfg.mining,
                        cfg.tokenizer,
                    )
                )
            else:
                rejected.append({"query_id": query.id, "query_text": query.text, "passage_id": passage.id, "reason": "top1-mismatch"})
    out.parent.mkdir(parents=True, exist_ok=True)
    save_samples(accepted_samples, out)
    if args.rejected:
        with open(args.rejected, "w", encoding="utf-8") as fh:
            for rec in rejected:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    _write_manifest(Path(str(out) + ".manifest.json"), "generate", cfg.canonical_dict(), args.seed)
    print(
        f"generated {n_candidates} candidates, accepted {len(accepted_samples)}, "
        f"rejected {len(rejected)}"
    )
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    cfg = pipeline_config_from_mapping(mapping, seed=args.seed)
    corpus = load_passages(data_path(args.passages))
    params, opt = load_checkpoint(data_path(args.checkpoint))
    if opt is None:
        opt = init_optimizer(params, lr=cfg.train_lr)
    else:
        opt.lr = cfg.train_lr
    dataset = []
    for path in args.samples:
        dataset.extend(load_samples(data_path(path), corpus=corpus))
    if not dataset:
        raise DataFormatError("no training samples", args.samples[0])
    out = Path(args.out)
    _guard_overwrite(out / "manifest.json", args.overwrite, "train output")
    rng = np.random.default_rng(args.seed)
    rows_cache = corpus_token_rows(params, corpus, cfg.tokenizer)
    losses = []
    order = rng.permutation(len(dataset))
    pos = 0
    for _ in range(cfg.minibatches_per_iter):
        if pos >= len(order):
            order = rng.permutation(len(dataset))
            pos = 0
        batch = [dataset[i] for i in order[pos : pos + cfg.batch_size]]
        pos += cfg.batch_size
        _, _, loss = train_step(params, opt, batch, corpus, cfg.tokenizer, rows_cache=rows_cache)
        losses.append(loss)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", params, opt)
    _write_manifest(out / "manifest.json", "train", cfg.canonical_dict(), args.seed)
    print(
        f"trained {len(losses)} minibatches on {len(dataset)} samples; "
        f"mean loss {float(np.mean(losses)):.4f} -> {out}"
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    run = load_run(data_path(args.run))
    qrels = load_qrels(data_path(args.qrels))
    query_langs = None
    if args.queries:
        query_langs = {q.id: q.lang for q in load_queries(data_path(args.queries))}
    mrr = mrr_at_k(run, qrels, args.k, query_langs=query_langs)
    rec = recall_at_k(run, qrels, args.k, query_langs=query_langs)
    report = {
        f"mrr@{args.k}": mrr.mean,
        f"recall@{args.k}": rec.mean,
        "per_lang": {
            lang: {f"mrr@{args.k}": mrr.per_lang[lang], f"recall@{args.k}": rec.per_lang.get(lang, 0.0)}
            for lang in mrr.per_lang
        },
        "n_queries": len(mrr.per_query),
        "unjudged_in_run": mrr.unjudged_in_run,
        "no_relevant": mrr.no_relevant,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    if query_langs:
        print(format_lang_table({"mrr": mrr, "recall": rec}))
    return EXIT_OK


def _cmd_pipeline(args: argparse.Namespace) -> int:
    mapping = _load_config(args)
    cfg = pipeline_config_from_mapping(mapping, seed=args.seed)
    if args.workers:
        cfg.workers = args.workers
    missing = [k for k in ("passages", "train_queries", "train_qrels", "unlabeled_queries") if k not in mapping]
    if missing:
        raise ConfigError(f"pipeline config missing data keys: {', '.join(missing)}", key=missing[0])
    data = PipelineData(
        corpus=load_passages(data_path(mapping["passages"])),
        train_queries=load_queries(data_path(mapping["train_queries"])),
        train_qrels=load_qrels(data_path(mapping["train_qrels"])),
        unlabeled=load_queries(data_path(mapping["unlabeled_queries"])),
        eval_queries=load_queries(data_path(mapping["eval_queries"])) if "eval_queries" in mapping else None,
        eval_qrels=load_qrels(data_path(mapping["eval_qrels"])) if "eval_qrels" in mapping else None,
        source_lang=mapping.get("source_lang"),
    )
    out = Path(args.out)
    if not args.resume:
        _guard_overwrite(out / "manifest.json", args.overwrite, "pipeline output")
    reports = run_pipeline(cfg, data, workdir=out, resume=args.resume)
    for rep in reports:
        key = f"mrr@{cfg.eval_k}"
        overall = rep.metrics.get("overall", {}).get(key)
        shown = f"{overall:.4f}" if overall is not None else "n/a"
        print(f"iteration {rep.iteration}: mined={rep.mined_samples} generated={rep.generated_accepted} {key}={shown}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    if seed_required:
        p.add_argument("--seed", type=int, required=True, help="rng seed (mandatory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexmine",
        description="Self-supervised dense-retrieval training via sparse/dense mining",
    )
    parser.add_argument("--version", action="version", version=f"lexmine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multilingual benchmark")
    _add_common(p, seed_required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("index", help="build and save the BM25 inverted index")
    _add_common(p, seed_required=False)
    p.add_argument("--passages", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("warmup", help="train retriever+generator on labeled data")
    _add_common(p, seed_required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_warmup)

    p = sub.add_parser("mine", help="mine training samples from unlabeled queries")
    _add_common(p, seed_required=True)
    p.add_argument("--workers", type=int, help="bound internal parallel fan-out")
    p.add_argument("--passages", required=True)
    p.add_argument("--queries", required=True, help="unlabeled queries JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("generate", help="generate, filter, and assemble queries")
    _add_common(p, seed_required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejected", help="optional JSONL log of rejected pairs")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="fine-tune a checkpoint on sample files")
    _add_common(p, seed_required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--samples", required=True, nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a TREC run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--queries", help="queries JSONL for per-language breakdown")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="full warm-up + iterative training run")
    _add_common(p, seed_required=True)
    p.add_argument("--workers", type=int, help="bound internal parallel fan-out")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
