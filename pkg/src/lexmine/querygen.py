"""Query generation for unlabeled passages, with a dual-retriever filter.

The built-in generator is a per-language term-salience sampler trained on
(query, positive passage) pairs: a token's salience estimates how likely a
passage token is to also occur in a query about that passage. Generated
queries sample passage tokens proportionally to salience. A generated pair is
accepted only when both the sparse and the dense retriever return the source
passage as their top-1 result for the generated query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Passage, Query, TokenizerConfig, DEFAULT_TOKENIZER, tokenize
from .dense import DenseIndex, EncoderParams, TrainingSample, search_dense
from .mining import MiningConfig, sample_random_negatives
from .sparse import InvertedIndex, search_sparse

__all__ = [
    "GeneratorModel",
    "GeneratedPair",
    "train_generator",
    "generate_query",
    "filter_generated",
    "assemble_generated_sample",
    "save_generator",
    "load_generator",
]

# Smoothing: salience = (1 + F*r) / (2 + F) with r = P(token in query | token in
# passage) estimated per training call. The fixed pseudo-count keeps the value
# invariant under duplicating the training pairs; tokens never seen in any
# passage fall back to the prior r = 1/2, i.e. salience 0.5.
SALIENCE_PSEUDO_COUNT = 8.0
UNSEEN_SALIENCE = 0.5


@dataclass
class GeneratorModel:
    term_salience: dict[tuple[str, str], float] = field(default_factory=dict)
    query_len_dist: dict[int, float] = field(default_factory=dict)
    version: int = 0

    def salience(self, lang: str, token: str) -> float:
        return self.term_salience.get((lang, token), UNSEEN_SALIENCE)


@dataclass(frozen=True)
class GeneratedPair:
    query: Query
    passage_id: str
    accepted: bool = False


def train_generator(
    model: GeneratorModel,
    pairs: Sequence[tuple[Query, Passage]],
    tok: TokenizerConfig = DEFAULT_TOKENIZER,
) -> GeneratorModel:
    """Fit per-language term salience and the query-length distribution.

    Languages present in ``pairs`` get their salience tables recomputed from
    scratch; other languages keep their existing entries. Returns the mutated
    model with its version incremented.
    """
    if not pairs:
        raise ValueError("training pairs must be non-empty")
    in_passage: dict[tuple[str, str], int] = {}
    in_both: dict[tuple[str, str], int] = {}
    lengths: dict[int, int] = {}
    langs = set()
    for query, passage in pairs:
        langs.add(passage.lang)
        q_list = tokenize(query.text, tok)
        q_tokens = set(q_list)
        if q_list:
            lengths[len(q_list)] = lengths.get(len(q_list), 0) + 1
        for t in set(tokenize(passage.text, tok)):
            key = (passage.lang, t)
            in_passage[key] = in_passage.get(key, 0) + 1
            if t in q_tokens:
                in_both[key] = in_both.get(key, 0) + 1
    if not lengths:
        raise ValueError("no training query produced any tokens")

    model.term_salience = {
        key: sal for key, sal in model.term_salience.items() if key[0] not in langs
    }
    f = SALIENCE_PSEUDO_COUNT
    for key, n in in_passage.items():
        r = in_both.get(key, 0) / n
        model.term_salience[key] = (1.0 + f * r) / (2.0 + f)
    total = sum(lengths.values())
    model.query_len_dist = {n: c / total for n, c in sorted(lengths.items())}
    model.version += 1
    return model


def generate_query(
    model: GeneratorModel,
    passage: Passage,
    rng: np.random.Generator,
    tok: TokenizerConfig = DEFAULT_TOKENIZER,
    query_id: str | None = None,
) -> Query:
    """Sample a query from the passage's tokens, weighted by salience.

    The length is drawn from the trained length distribution, then that many
    distinct passage tokens are drawn without replacement with probability
    proportional to salience. The query inherits the passage's language.
    """
    if model.version < 1:
        raise ValueError("generator must be trained before generating")
    candidates = list(dict.fromkeys(tokenize(passage.text, tok)))
    if not candidates:
        raise ValueError(f"passage {passage.id!r} has no tokens to sample from")
    lens = list(model.query_len_dist.keys())
    probs = np.array([model.query_len_dist[n] for n in lens])
    length = int(rng.choice(lens, p=probs / probs.sum()))
    length = min(length, len(candidates))

    weights = np.array([model.salience(passage.lang, t) for t in candidates], dtype=float)
    picked: list[str] = []
    remaining = list(range(len(candidates)))
    for _ in range(length):
        w = weights[remaining]
        if w.sum() <= 0:
            w = np.ones(len(remaining))
        choice = int(rng.choice(len(remaining), p=w / w.sum()))
        picked.append(candidates[remaining[choice]])
        remaining.pop(choice)
    return Query(
        id=query_id if query_id is not None else f"gen-{passage.id}",
        text=" ".join(picked),
        lang=passage.lang,
    )


def filter_generated(
    pair: GeneratedPair,
    sparse_index: InvertedIndex,
    dense_index: DenseIndex,
    params: EncoderParams,
    tok: TokenizerConfig = DEFAULT_TOKENIZER,
) -> bool:
    """Accept the pair iff both retrievers return its passage as top-1."""
    top_sparse = search_sparse(sparse_index, pair.query, 1)
    if not top_sparse or top_sparse[0][0] != pair.passage_id:
        return False
    top_dense = search_dense(dense_index, params, pair.query, 1, tok=tok)
    return bool(top_dense) and top_dense[0][0] == pair.passage_id


def assemble_generated_sample(
    pair: GeneratedPair,
    sparse_index: InvertedIndex,
    dense_index: DenseIndex,
    params: EncoderParams,
    corpus: Corpus,
    rng: np.random.Generator,
    cfg: MiningConfig,
    tok: TokenizerConfig = DEFAULT_TOKENIZER,
) -> TrainingSample:
    """Build a training sample for an accepted generated pair.

    Hard negatives are the retrievers' top passages excluding the positive,
    dense results first then sparse, deduplicated and capped; random negatives
    are drawn as in mining. In-batch negatives are applied at training time.
    """
    if not pair.accepted:
        raise ValueError("only accepted pairs can be assembled into samples")
    k = cfg.max_hard_negatives + 1
    dense_top = search_dense(dense_index, params, pair.query, k, tok=tok)
    sparse_top = search_sparse(sparse_index, pair.query, k)
    hard: list[str] = []
    for pid, _ in list(dense_top) + list(sparse_top):
        if pid != pair.passage_id and pid not in hard:
            hard.append(pid)
            if len(hard) >= cfg.max_hard_negatives:
                break
    exclude = {pair.passage_id, *hard}
    randoms = sample_random_negatives(corpus, exclude, cfg.n_random_negatives, rng)
    return TrainingSample(
        query=pair.query,
        positive=pair.passage_id,
        hard_negatives=tuple(hard),
        random_negatives=randoms,
        source="generated",
    )


def mark_accepted(pair: GeneratedPair) -> GeneratedPair:
    return replace(pair, accepted=True)


def save_generator(model: GeneratorModel, path: str | Path) -> None:
    payload = {
        "format": 1,
        "version": model.version,
        "query_len_dist": {str(k): v for k, v in model.query_len_dist.items()},
        "term_salience": [
            {"lang": lang, "token": token, "weight": w}
            for (lang, token), w in sorted(model.term_salience.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_generator(path: str | Path) -> GeneratorModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != 1:
        raise ValueError(f"unsupported generator format {payload.get('format')!r}")
    return GeneratorModel(
        term_salience={
            (e["lang"], e["token"]): float(e["weight"]) for e in payload["term_salience"]
        },
        query_len_dist={int(k): float(v) for k, v in payload["query_len_dist"].items()},
        version=int(payload["version"]),
    )
