"""Training orchestrator: warm up on labeled source data, then iterate.

Each iteration mines training pairs for every unlabeled target-language query
from sparse/dense agreement, optionally retrains the query generator on pairs
mined with S=1 and adds filtered generated samples, fine-tunes the dense
retriever on the union, and rebuilds the dense index. The sparse retriever is
never retrained. Everything is a pure function of (config, data, seed).
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    Corpus,
    JudgmentSet,
    Query,
    QuerySet,
    SynthBenchmark,
    TokenizerConfig,
    tokenize,
)
from .dense import (
    DenseIndex,
    EncoderParams,
    OptimizerState,
    TrainingSample,
    build_dense_index,
    corpus_token_rows,
    init_optimizer,
    init_params,
    load_checkpoint,
    save_checkpoint,
    search_dense,
    train_step,
    vocab_from_corpus,
)
from .evaluation import RunFile, mrr_at_k, recall_at_k, save_run
from .mining import (
    MinedSets,
    MiningConfig,
    assemble_mined_sample,
    hybrid_fuse,
    mine_pairs,
    sample_random_negatives,
    save_samples,
)
from .querygen import (
    GeneratedPair,
    GeneratorModel,
    assemble_generated_sample,
    filter_generated,
    generate_query,
    load_generator,
    mark_accepted,
    save_generator,
    train_generator,
)
from .sparse import BM25Params, InvertedIndex, build_index, search_sparse

__all__ = [
    "PipelineConfig",
    "PipelineData",
    "PipelineError",
    "PipelineState",
    "IterationReport",
    "warmup",
    "assemble_warmup_samples",
    "run_iteration",
    "run_pipeline",
    "pipeline_data_from_benchmark",
]

# rng stream tags so every stage draws from its own seeded stream
_INIT, _WARMUP_DATA, _WARMUP_SHUFFLE, _MINE, _GEN_SELECT, _GEN_SAMPLE, _TRAIN_SHUFFLE = range(7)

MINING_MODES = ("sparse_dense", "double_dense", "fuse_sum", "fuse_product")
NEGATIVE_MODES = ("mined", "none", "sparse_top")


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    iterations: int = 3
    minibatches_per_iter: int = 500
    batch_size: int = 128
    warmup_epochs: int = 3
    mining: MiningConfig = field(default_factory=MiningConfig)
    gen_mining_S: int = 1
    n_generate: int = 5000
    skip_generation_first_iter: bool = True
    use_generation: bool = True
    embedding_dim: int = 64
    shared_encoder: bool = True
    warmup_lr: float = 1e-2
    train_lr: float = 1e-2
    eval_k: int = 10
    seed: int = 0
    workers: int = 1
    mining_mode: str = "sparse_dense"
    negative_mode: str = "mined"
    plateau_eps: float | None = None
    bm25: BM25Params = field(default_factory=BM25Params)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.gen_mining_S != 1:
            raise ValueError("gen_mining_S is fixed at 1")
        if self.minibatches_per_iter < 1 or self.batch_size < 1:
            raise ValueError("minibatches_per_iter and batch_size must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.n_generate < 0:
            raise ValueError("n_generate must be >= 0")
        if self.mining_mode not in MINING_MODES:
            raise ValueError(f"mining_mode must be one of {MINING_MODES}")
        if self.negative_mode not in NEGATIVE_MODES:
            raise ValueError(f"negative_mode must be one of {NEGATIVE_MODES}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def canonical_dict(self) -> dict:
        d = asdict(self)
        d["mining"] = asdict(self.mining)
        d["bm25"] = asdict(self.bm25)
        d["tokenizer"] = asdict(self.tokenizer)
        return d

    def config_hash(self) -> str:
        # workers only bounds fan-out and never changes results, so it does not
        # participate in the hash that gates resumption
        payload = self.canonical_dict()
        payload.pop("workers")
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class PipelineData:
    """Input bundle: corpus, labeled source queries, unlabeled target queries,
    and optional held-out judged queries for per-iteration evaluation."""

    corpus: Corpus
    train_queries: QuerySet
    train_qrels: JudgmentSet
    unlabeled: QuerySet
    eval_queries: QuerySet | None = None
    eval_qrels: JudgmentSet | None = None
    source_lang: str | None = None


def pipeline_data_from_benchmark(bench: SynthBenchmark) -> PipelineData:
    """Source-language judged queries train; target-language judged queries are
    held out for evaluation; unlabeled target queries feed the mining loop."""
    train = QuerySet(q for q in bench.queries if q.lang == bench.source_lang)
    unlabeled = QuerySet(q for q in bench.unlabeled if q.lang != bench.source_lang)
    return PipelineData(
        corpus=bench.corpus,
        train_queries=train,
        train_qrels=bench.judgments,
        unlabeled=unlabeled,
        eval_queries=bench.queries,
        eval_qrels=bench.judgments,
        source_lang=bench.source_lang,
    )


@dataclass
class IterationReport:
    iteration: int
    mined_samples: int = 0
    mined_queries_with_positives: int = 0
    generator_training_pairs: int = 0
    generated_candidates: int = 0
    generated_accepted: int = 0
    generated_rejected: int = 0
    dataset_size: int = 0
    mean_loss: float = 0.0
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    wall_clock_sec: float = 0.0

    def __post_init__(self) -> None:
        counts = (
            self.mined_samples,
            self.mined_queries_with_positives,
            self.generator_training_pairs,
            self.generated_candidates,
            self.generated_accepted,
            self.generated_rejected,
            self.dataset_size,
        )
        if any(c < 0 for c in counts):
            raise ValueError("report counts must be >= 0")
        for lang, vals in self.metrics.items():
            for name, v in vals.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"metric {name} for {lang} out of [0, 1]: {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IterationReport":
        return cls(**d)


@dataclass
class PipelineState:
    params: EncoderParams
    generator: GeneratorModel
    sparse_index: InvertedIndex
    dense_index: DenseIndex
    rows_cache: dict[str, np.ndarray]
    iteration: int = 0
    aux_params: EncoderParams | None = None
    aux_index: DenseIndex | None = None


# ---------------------------------------------------------------------------
# warm-up
# ---------------------------------------------------------------------------


def assemble_warmup_samples(
    queries: QuerySet,
    qrels: JudgmentSet,
    sparse_index: InvertedIndex,
    cfg: PipelineConfig,
) -> list[TrainingSample]:
    """DPR-style labeled samples: the best sparse-ranked relevant passage is the
    positive, top sparse-ranked non-relevant passages are hard negatives."""
    samples = []
    depth = cfg.mining.L + cfg.mining.max_hard_negatives
    for q in queries:
        relevant = qrels.relevant(q.id)
        if not relevant:
            continue
        ranked = search_sparse(sparse_index, q, depth)
        positive = next((pid for pid, _ in ranked if pid in relevant), min(relevant))
        hard = tuple(
            pid for pid, _ in ranked if pid not in relevant
        )[: cfg.mining.max_hard_negatives]
        samples.append(
            TrainingSample(query=q, positive=positive, hard_negatives=hard, source="labeled")
        )
    return samples


def _train_epochs(
    params: EncoderParams,
    opt: OptimizerState,
    samples: list[TrainingSample],
    corpus: Corpus,
    cfg: PipelineConfig,
    epochs: int,
    rng: np.random.Generator,
    rows_cache: dict[str, np.ndarray],
) -> float:
    last_loss = 0.0
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            _, _, last_loss = train_step(
                params, opt, batch, corpus, cfg.tokenizer, rows_cache=rows_cache
            )
    return last_loss


def warmup(
    source_labeled: list[TrainingSample],
    corpus: Corpus,
    cfg: PipelineConfig,
    vocab_tokens: list[str] | None = None,
    seed_offset: int = 0,
) -> tuple[EncoderParams, GeneratorModel]:
    """Train the retriever and the generator on labeled source-language data.

    Samples missing random negatives get them drawn here; in-batch negatives
    come from the other samples of each minibatch. The generator is trained on
    (positive passage -> query) pairs even when warmup_epochs is 0.
    """
    if not source_labeled:
        raise ValueError("labeled warm-up data must be non-empty")
    if vocab_tokens is None:
        vocab_tokens = sorted(
            set(vocab_from_corpus(corpus, cfg.tokenizer)).union(
                t for s in source_labeled for t in tokenize(s.query.text, cfg.tokenizer)
            )
        )
    params = init_params(
        vocab_tokens,
        dim=cfg.embedding_dim,
        seed=[cfg.seed, _INIT, seed_offset],
        shared=cfg.shared_encoder,
    )
    rng_negs = np.random.default_rng([cfg.seed, _WARMUP_DATA, seed_offset])
    filled = []
    for s in source_labeled:
        if s.random_negatives or cfg.mining.n_random_negatives == 0:
            filled.append(s)
        else:
            randoms = sample_random_negatives(
                corpus, {s.positive, *s.hard_negatives}, cfg.mining.n_random_negatives, rng_negs
            )
            filled.append(
                TrainingSample(
                    query=s.query,
                    positive=s.positive,
                    hard_negatives=s.hard_negatives,
                    random_negatives=randoms,
                    source=s.source,
                )
            )

    rows_cache = corpus_token_rows(params, corpus, cfg.tokenizer)
    opt = init_optimizer(params, lr=cfg.warmup_lr)
    rng_shuffle = np.random.default_rng([cfg.seed, _WARMUP_SHUFFLE, seed_offset])
    _train_epochs(params, opt, filled, corpus, cfg, cfg.warmup_epochs, rng_shuffle, rows_cache)

    generator = train_generator(
        GeneratorModel(),
        [(s.query, corpus[s.positive]) for s in source_labeled],
        cfg.tokenizer,
    )
    return params, generator


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def dense_run(
    state: PipelineState, queries: QuerySet, k: int, workers: int = 1
) -> RunFile:
    """Dense retrieval run over a query set (order-deterministic)."""
    qlist = list(queries)

    def one(q: Query):
        return search_dense(state.dense_index, state.params, q, k, tok=state.sparse_index.tokenizer)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, qlist))
    else:
        results = [one(q) for q in qlist]
    return {q.id: r for q, r in zip(qlist, results)}


def _evaluate(
    state: PipelineState, data: PipelineData, cfg: PipelineConfig
) -> tuple[RunFile, dict[str, dict[str, float]]]:
    if data.eval_queries is None or data.eval_qrels is None:
        return {}, {}
    run = dense_run(state, data.eval_queries, cfg.eval_k, cfg.workers)
    langs = {q.id: q.lang for q in data.eval_queries}
    mrr = mrr_at_k(run, data.eval_qrels, cfg.eval_k, query_langs=langs)
    rec = recall_at_k(run, data.eval_qrels, cfg.eval_k, query_langs=langs)
    metrics: dict[str, dict[str, float]] = {
        "overall": {f"mrr@{cfg.eval_k}": mrr.mean, f"recall@{cfg.eval_k}": rec.mean}
    }
    for lang in mrr.per_lang:
        metrics[lang] = {
            f"mrr@{cfg.eval_k}": mrr.per_lang[lang],
            f"recall@{cfg.eval_k}": rec.per_lang.get(lang, 0.0),
        }
    return run, metrics


# ---------------------------------------------------------------------------
# one iteration
# ---------------------------------------------------------------------------


def _rankings_for(
    state: PipelineState, q: Query, cfg: PipelineConfig
) -> tuple[list, list]:
    """The two rankings Algorithm-style mining compares for one query."""
    dense_topL = search_dense(
        state.dense_index, state.params, q, cfg.mining.L, tok=cfg.tokenizer
    )
    if cfg.mining_mode == "double_dense":
        assert state.aux_index is not None and state.aux_params is not None
        other = search_dense(
            state.aux_index, state.aux_params, q, cfg.mining.L, tok=cfg.tokenizer
        )
    else:
        other = search_sparse(state.sparse_index, q, cfg.mining.L)
    return other, dense_topL


def run_iteration(
    state: PipelineState,
    unlabeled_by_lang: dict[str, list[Query]],
    corpus: Corpus,
    cfg: PipelineConfig,
    data: PipelineData | None = None,
) -> tuple[PipelineState, IterationReport, dict]:
    """Mine, optionally generate, fine-tune, refresh the index, and report.

    Returns the new state, the iteration report, and the artifacts produced
    (mined/generated samples and the evaluation run) for persistence.
    """
    t0 = time.perf_counter()
    iteration = state.iteration + 1
    if state.dense_index.params_version != state.params.version:
        raise PipelineError("dense index is stale at iteration entry; refresh it first")

    rng_mine = np.random.default_rng([cfg.seed, _MINE, iteration])
    s1_cfg = MiningConfig(
        S=cfg.gen_mining_S,
        L=cfg.mining.L,
        n_random_negatives=cfg.mining.n_random_negatives,
        max_hard_negatives=cfg.mining.max_hard_negatives,
    )

    def mined_sets_for(list_a, list_b) -> tuple[MinedSets, MinedSets]:
        """Agreement mining, or prefix-split of the fused ranking in fuse modes."""
        if cfg.mining_mode in ("fuse_sum", "fuse_product"):
            fused = hybrid_fuse(list_a, list_b, cfg.mining_mode.removeprefix("fuse_"), cfg.mining.L)
            ids = [pid for pid, _ in fused]

            def split(s: int) -> MinedSets:
                return MinedSets(
                    positives=frozenset(ids[:s]),
                    negatives=frozenset(ids[s:]),
                    positive_order=tuple(ids[:s]),
                    negative_order=tuple(ids[s:]),
                )

            return split(cfg.mining.S), split(1)
        return mine_pairs(list_a, list_b, cfg.mining), mine_pairs(list_a, list_b, s1_cfg)

    mined: list[TrainingSample] = []
    gen_pairs: list[tuple[Query, object]] = []
    queries_with_positives = 0
    langs = sorted(unlabeled_by_lang)

    def rank_one(q: Query):
        return _rankings_for(state, q, cfg)

    for lang in langs:
        qs = unlabeled_by_lang[lang]
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                rankings = list(pool.map(rank_one, qs))
        else:
            rankings = [rank_one(q) for q in qs]
        for q, (list_a, list_b) in zip(qs, rankings):
            sets, s1 = mined_sets_for(list_a, list_b)
            if sets.positives:
                queries_with_positives += 1
            if cfg.negative_mode == "mined":
                mined.extend(assemble_mined_sample(q, sets, corpus, rng_mine, cfg.mining))
            elif cfg.negative_mode == "none":
                mined.extend(
                    TrainingSample(query=q, positive=pid, source="mined")
                    for pid in sets.positive_order
                )
            else:  # sparse_top
                sparse_ranked = search_sparse(
                    state.sparse_index, q, cfg.mining.max_hard_negatives + cfg.mining.S
                )
                hard = tuple(
                    pid for pid, _ in sparse_ranked if pid not in sets.positives
                )[: cfg.mining.max_hard_negatives]
                mined.extend(
                    TrainingSample(query=q, positive=pid, hard_negatives=hard, source="mined")
                    for pid in sets.positive_order
                )
            gen_pairs.extend((q, corpus[pid]) for pid in s1.positive_order)

    if not mined:
        n_q = sum(len(v) for v in unlabeled_by_lang.values())
        raise PipelineError(
            f"iteration {iteration} mined zero samples from {n_q} unlabeled queries "
            f"(S={cfg.mining.S}, L={cfg.mining.L}); the agreement thresholds are too "
            "strict for the current retrievers"
        )

    generated: list[TrainingSample] = []
    candidates = accepted = rejected = 0
    do_generate = (
        cfg.use_generation
        and cfg.n_generate > 0
        and not (iteration == 1 and cfg.skip_generation_first_iter)
    )
    if do_generate:
        if gen_pairs:
            train_generator(state.generator, gen_pairs, cfg.tokenizer)
        rng_select = np.random.default_rng([cfg.seed, _GEN_SELECT, iteration])
        rng_sample = np.random.default_rng([cfg.seed, _GEN_SAMPLE, iteration])
        for lang in langs:
            lang_passages = corpus.by_lang(lang)
            if not lang_passages:
                continue
            n = min(cfg.n_generate, len(lang_passages))
            picked = rng_select.choice(len(lang_passages), size=n, replace=False)
            for idx in picked:
                passage = lang_passages[int(idx)]
                try:
                    query = generate_query(
                        state.generator,
                        passage,
                        rng_sample,
                        cfg.tokenizer,
                        query_id=f"gen{iteration}-{passage.id}",
                    )
                except ValueError:
                    continue
                candidates += 1
                pair = GeneratedPair(query=query, passage_id=passage.id)
                if filter_generated(
                    pair, state.sparse_index, state.dense_index, state.params, cfg.tokenizer
                ):
                    accepted += 1
                    generated.append(
                        assemble_generated_sample(
                            mark_accepted(pair),
                            state.sparse_index,
                            state.dense_index,
                            state.params,
                            corpus,
                            rng_sample,
                            cfg.mining,
                            cfg.tokenizer,
                        )
                    )
                else:
                    rejected += 1

    dataset = mined + generated
    rng_train = np.random.default_rng([cfg.seed, _TRAIN_SHUFFLE, iteration])
    opt = init_optimizer(state.params, lr=cfg.train_lr)
    losses = []
    order = rng_train.permutation(len(dataset))
    pos = 0
    for _ in range(cfg.minibatches_per_iter):
        if pos >= len(order):
            order = rng_train.permutation(len(dataset))
            pos = 0
        batch = [dataset[i] for i in order[pos : pos + cfg.batch_size]]
        pos += cfg.batch_size
        _, _, loss = train_step(
            state.params, opt, batch, corpus, cfg.tokenizer, rows_cache=state.rows_cache
        )
        losses.append(loss)

    state.dense_index = build_dense_index(
        state.params, corpus, cfg.tokenizer, rows_cache=state.rows_cache
    )
    state.iteration = iteration

    run: RunFile = {}
    metrics: dict[str, dict[str, float]] = {}
    if data is not None:
        run, metrics = _evaluate(state, data, cfg)

    report = IterationReport(
        iteration=iteration,
        mined_samples=len(mined),
        mined_queries_with_positives=queries_with_positives,
        generator_training_pairs=len(gen_pairs),
        generated_candidates=candidates,
        generated_accepted=accepted,
        generated_rejected=rejected,
        dataset_size=len(dataset),
        mean_loss=float(np.mean(losses)),
        metrics=metrics,
        wall_clock_sec=time.perf_counter() - t0,
    )
    artifacts = {"mined": mined, "generated": generated, "run": run}
    return state, report, artifacts


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


def _write_iteration_artifacts(
    outdir: Path, state: PipelineState, report: IterationReport, artifacts: dict
) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    save_samples(artifacts["mined"], outdir / "mined.jsonl")
    save_samples(artifacts["generated"], outdir / "generated.jsonl")
    save_checkpoint(outdir / "checkpoint.npz", state.params)
    save_generator(state.generator, outdir / "generator.json")
    if artifacts["run"]:
        save_run(artifacts["run"], outdir / "run.trec")
    with open(outdir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def _unlabeled_by_lang(data: PipelineData) -> dict[str, list[Query]]:
    by_lang: dict[str, list[Query]] = {}
    for q in data.unlabeled:
        by_lang.setdefault(q.lang, []).append(q)
    return by_lang


def run_pipeline(
    cfg: PipelineConfig,
    data: PipelineData,
    workdir: str | Path | None = None,
    resume: bool = False,
) -> list[IterationReport]:
    """Warm up, then run cfg.iterations mine/generate/train/refresh iterations.

    The report list starts with the post-warm-up zero-shot evaluation (as
    iteration 0) followed by one report per iteration. With a workdir, every
    iteration persists mined.jsonl, generated.jsonl, checkpoint.npz,
    generator.json, report.json and run.trec under iter_N/, plus a manifest
    binding the config hash and seed; ``resume=True`` continues from the last
    completed iteration and fails on a config-hash mismatch.
    """
    out = Path(workdir) if workdir is not None else None
    manifest = {
        "config": cfg.canonical_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
    }
    start_iter = 0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        manifest_path = out / "manifest.json"
        if resume and manifest_path.exists():
            with open(manifest_path, encoding="utf-8") as fh:
                existing = json.load(fh)
            if existing.get("config_hash") != manifest["config_hash"]:
                raise PipelineError(
                    "resume config hash mismatch: "
                    f"{existing.get('config_hash')} != {manifest['config_hash']}"
                )
            while (out / f"iter_{start_iter + 1}" / "report.json").exists():
                start_iter += 1
        else:
            with open(manifest_path, "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2)

    sparse_index = build_index(data.corpus, cfg.tokenizer, cfg.bm25)
    vocab = sorted(
        set(vocab_from_corpus(data.corpus, cfg.tokenizer)).union(
            *(
                {t for q in qs for t in tokenize(q.text, cfg.tokenizer)}
                for qs in (data.train_queries, data.unlabeled, data.eval_queries or QuerySet([]))
            )
        )
    )
    labeled = assemble_warmup_samples(data.train_queries, data.train_qrels, sparse_index, cfg)
    if not labeled:
        raise PipelineError("no labeled source queries with relevant judgments")

    reports: list[IterationReport] = []
    aux_params = aux_index = None
    warm_report = None

    if out is not None and resume and start_iter > 0:
        params, _ = load_checkpoint(out / f"iter_{start_iter}" / "checkpoint.npz")
        generator = load_generator(out / f"iter_{start_iter}" / "generator.json")
        if cfg.mining_mode == "double_dense":
            aux_params, _ = load_checkpoint(out / "warmup" / "aux_checkpoint.npz")
        with open(out / "warmup" / "report.json", encoding="utf-8") as fh:
            reports.append(IterationReport.from_dict(json.load(fh)))
        for i in range(1, start_iter + 1):
            with open(out / f"iter_{i}" / "report.json", encoding="utf-8") as fh:
                reports.append(IterationReport.from_dict(json.load(fh)))
    else:
        t0 = time.perf_counter()
        params, generator = warmup(labeled, data.corpus, cfg, vocab_tokens=vocab)
        if cfg.mining_mode == "double_dense":
            # the mining partner: a second retriever warm-started on the other
            # half of the labeled data with a different seed, then frozen
            aux_params, _ = warmup(
                labeled[1::2] or labeled, data.corpus, cfg, vocab_tokens=vocab, seed_offset=1
            )
        warm_report = IterationReport(iteration=0, wall_clock_sec=time.perf_counter() - t0)

    rows_cache = corpus_token_rows(params, data.corpus, cfg.tokenizer)
    if aux_params is not None:
        aux_index = build_dense_index(aux_params, data.corpus, cfg.tokenizer)
    state = PipelineState(
        params=params,
        generator=generator,
        sparse_index=sparse_index,
        dense_index=build_dense_index(params, data.corpus, cfg.tokenizer, rows_cache=rows_cache),
        rows_cache=rows_cache,
        iteration=start_iter,
        aux_params=aux_params,
        aux_index=aux_index,
    )

    if warm_report is not None:
        _, warm_report.metrics = _evaluate(state, data, cfg)
        reports.append(warm_report)
        if out is not None:
            wdir = out / "warmup"
            wdir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(wdir / "checkpoint.npz", params)
            save_generator(generator, wdir / "generator.json")
            if aux_params is not None:
                save_checkpoint(wdir / "aux_checkpoint.npz", aux_params)
            with open(wdir / "report.json", "w", encoding="utf-8") as fh:
                json.dump(warm_report.to_dict(), fh, indent=2)

    unlabeled_by_lang = _unlabeled_by_lang(data)
    key = f"mrr@{cfg.eval_k}"
    for _ in range(start_iter, cfg.iterations):
        state, report, artifacts = run_iteration(state, unlabeled_by_lang, data.corpus, cfg, data)
        reports.append(report)
        if out is not None:
            _write_iteration_artifacts(out / f"iter_{state.iteration}", state, report, artifacts)
        if cfg.plateau_eps is not None and len(reports) >= 2:
            prev = reports[-2].metrics.get("overall", {}).get(key)
            curr = report.metrics.get("overall", {}).get(key)
            if prev is not None and curr is not None and curr - prev < cfg.plateau_eps:
                break
    return reports
