"""Corpus, query and judgment containers, tokenization, and a synthetic benchmark generator."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "DataFormatError",
    "Passage",
    "Query",
    "Judgment",
    "TokenizerConfig",
    "tokenize",
    "Corpus",
    "QuerySet",
    "JudgmentSet",
    "load_corpus",
    "load_passages",
    "load_queries",
    "load_qrels",
    "save_passages",
    "save_queries",
    "save_qrels",
    "SynthSpec",
    "SynthBenchmark",
    "synth_benchmark",
]


class DataFormatError(ValueError):
    """Malformed or inconsistent input data; carries file path and line number."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.message = message
        self.path = str(path) if path is not None else None
        self.line = line
        prefix = ""
        if self.path is not None:
            prefix = self.path if line is None else f"{self.path}:{line}"
            prefix += ": "
        super().__init__(prefix + message)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    lang: str = "en"

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    lang: str = "en"

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("query id must be non-empty")


@dataclass(frozen=True)
class Judgment:
    query_id: str
    passage_id: str
    grade: int

    def __post_init__(self) -> None:
        if self.grade < 0:
            raise ValueError(f"grade must be >= 0, got {self.grade}")


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    cjk_char_split: bool = True
    min_token_len: int = 1

    def __post_init__(self) -> None:
        if self.min_token_len < 1:
            raise ValueError("min_token_len must be >= 1")


DEFAULT_TOKENIZER = TokenizerConfig()

# Scripts without word boundaries, split per codepoint when cjk_char_split is on.
_CHAR_SPLIT_RANGES = (
    (0x0E00, 0x0E7F),  # Thai
    (0x1100, 0x11FF),  # Hangul jamo
    (0x3040, 0x309F),  # Hiragana
    (0x30A0, 0x30FF),  # Katakana
    (0x31F0, 0x31FF),  # Katakana phonetic extensions
    (0x3400, 0x4DBF),  # CJK extension A
    (0x4E00, 0x9FFF),  # CJK unified ideographs
    (0xAC00, 0xD7A3),  # Hangul syllables
    (0xF900, 0xFAFF),  # CJK compatibility ideographs
)


def _is_char_split(cp: int) -> bool:
    for lo, hi in _CHAR_SPLIT_RANGES:
        if lo <= cp <= hi:
            return True
    return False


def tokenize(text: str, cfg: TokenizerConfig = DEFAULT_TOKENIZER) -> list[str]:
    """Deterministic Unicode tokenization shared by the sparse and dense retrievers.

    Runs of letters/digits form tokens; when ``cfg.cjk_char_split`` each CJK/Thai/
    Hangul codepoint becomes its own token. Lowercasing and a minimum token length
    are applied per config.
    """
    if cfg.lowercase:
        text = text.lower()
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text:
        if cfg.cjk_char_split and _is_char_split(ord(ch)):
            if buf:
                tokens.append("".join(buf))
                buf.clear()
            tokens.append(ch)
        elif unicodedata.category(ch)[0] in ("L", "N"):
            buf.append(ch)
        else:
            if buf:
                tokens.append("".join(buf))
                buf.clear()
    if buf:
        tokens.append("".join(buf))
    if cfg.min_token_len > 1:
        tokens = [t for t in tokens if len(t) >= cfg.min_token_len]
    return tokens


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


class Corpus:
    """Ordered, id-indexed collection of passages."""

    def __init__(self, passages: Iterable[Passage]):
        self._by_id: dict[str, Passage] = {}
        for p in passages:
            if p.id in self._by_id:
                raise DataFormatError(f"duplicate passage id {p.id!r}")
            self._by_id[p.id] = p

    @property
    def ids(self) -> list[str]:
        return list(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._by_id.values())

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def __getitem__(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self._by_id == other._by_id

    def langs(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self:
            seen.setdefault(p.lang, None)
        return list(seen)

    def by_lang(self, lang: str) -> list[Passage]:
        return [p for p in self if p.lang == lang]


class QuerySet:
    """Ordered, id-indexed collection of queries."""

    def __init__(self, queries: Iterable[Query]):
        self._by_id: dict[str, Query] = {}
        for q in queries:
            if q.id in self._by_id:
                raise DataFormatError(f"duplicate query id {q.id!r}")
            self._by_id[q.id] = q

    @property
    def ids(self) -> list[str]:
        return list(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Query]:
        return iter(self._by_id.values())

    def __contains__(self, query_id: str) -> bool:
        return query_id in self._by_id

    def __getitem__(self, query_id: str) -> Query:
        return self._by_id[query_id]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuerySet):
            return NotImplemented
        return self._by_id == other._by_id

    def langs(self) -> list[str]:
        seen: dict[str, None] = {}
        for q in self:
            seen.setdefault(q.lang, None)
        return list(seen)

    def by_lang(self, lang: str) -> list[Query]:
        return [q for q in self if q.lang == lang]


class JudgmentSet:
    """Relevance judgments indexed by query id."""

    def __init__(self, judgments: Iterable[Judgment]):
        self._all: list[Judgment] = []
        self.by_query: dict[str, dict[str, int]] = {}
        for j in judgments:
            grades = self.by_query.setdefault(j.query_id, {})
            if j.passage_id in grades:
                raise DataFormatError(
                    f"duplicate judgment for query {j.query_id!r} passage {j.passage_id!r}"
                )
            grades[j.passage_id] = j.grade
            self._all.append(j)

    def __len__(self) -> int:
        return len(self._all)

    def __iter__(self) -> Iterator[Judgment]:
        return iter(self._all)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JudgmentSet):
            return NotImplemented
        return self._all == other._all

    def relevant(self, query_id: str) -> set[str]:
        """Passage ids judged relevant (grade > 0) for the query."""
        return {pid for pid, g in self.by_query.get(query_id, {}).items() if g > 0}

    def validate(self, corpus: Corpus | None = None, queries: QuerySet | None = None) -> None:
        """Check that all referenced ids resolve against the given collections."""
        for j in self._all:
            if queries is not None and j.query_id not in queries:
                raise DataFormatError(f"judgment references unknown query {j.query_id!r}")
            if corpus is not None and j.passage_id not in corpus:
                raise DataFormatError(f"judgment references unknown passage {j.passage_id!r}")


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------


def _load_jsonl_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            if not isinstance(obj, dict):
                raise DataFormatError("expected a JSON object", path, lineno)
            yield lineno, obj


def _require_str(obj: dict, key: str, path: str | Path, lineno: int) -> str:
    if key not in obj:
        raise DataFormatError(f"missing field {key!r}", path, lineno)
    val = obj[key]
    if not isinstance(val, str):
        raise DataFormatError(f"field {key!r} must be a string", path, lineno)
    return val


def load_passages(path: str | Path) -> Corpus:
    passages = []
    for lineno, obj in _load_jsonl_records(path):
        try:
            passages.append(
                Passage(
                    id=_require_str(obj, "id", path, lineno),
                    text=_require_str(obj, "text", path, lineno),
                    lang=str(obj.get("lang", "en")),
                )
            )
        except ValueError as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(str(exc), path, lineno) from exc
    try:
        return Corpus(passages)
    except DataFormatError as exc:
        raise DataFormatError(exc.message, path) from exc


def load_queries(path: str | Path) -> QuerySet:
    queries = []
    for lineno, obj in _load_jsonl_records(path):
        try:
            queries.append(
                Query(
                    id=_require_str(obj, "id", path, lineno),
                    text=_require_str(obj, "text", path, lineno),
                    lang=str(obj.get("lang", "en")),
                )
            )
        except ValueError as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(str(exc), path, lineno) from exc
    try:
        return QuerySet(queries)
    except DataFormatError as exc:
        raise DataFormatError(exc.message, path) from exc


def load_qrels(path: str | Path) -> JudgmentSet:
    """Parse TREC-style qrels lines: ``query_id 0 passage_id grade``."""
    judgments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataFormatError(
                    f"expected 4 whitespace-separated fields, got {len(parts)}", path, lineno
                )
            qid, _, pid, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError as exc:
                raise DataFormatError(f"grade must be an integer, got {grade_s!r}", path, lineno) from exc
            try:
                judgments.append(Judgment(query_id=qid, passage_id=pid, grade=grade))
            except ValueError as exc:
                raise DataFormatError(str(exc), path, lineno) from exc
    try:
        return JudgmentSet(judgments)
    except DataFormatError as exc:
        raise DataFormatError(exc.message, path) from exc


def load_corpus(path: str | Path, kind: str) -> Corpus | QuerySet | JudgmentSet:
    """Load a data file of the given kind ("passages", "queries", or "qrels")."""
    if kind == "passages":
        return load_passages(path)
    if kind == "queries":
        return load_queries(path)
    if kind == "qrels":
        return load_qrels(path)
    raise ValueError(f"unknown kind {kind!r}; expected passages|queries|qrels")


def save_passages(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus:
            fh.write(json.dumps({"id": p.id, "text": p.text, "lang": p.lang}, ensure_ascii=False))
            fh.write("\n")


def save_queries(queries: QuerySet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps({"id": q.id, "text": q.text, "lang": q.lang}, ensure_ascii=False))
            fh.write("\n")


def save_qrels(judgments: JudgmentSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for j in judgments:
            fh.write(f"{j.query_id}\t0\t{j.passage_id}\t{j.grade}\n")


# ---------------------------------------------------------------------------
# Synthetic cross-lingual benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Shape of the generated benchmark.

    The first language is the labeled source; the rest are targets whose judged
    queries are meant for evaluation only. Per-language vocabularies are disjoint
    by construction, emulating distributional shift between languages.
    """

    languages: tuple[str, ...] = ("src", "tgta", "tgtb")
    topics_per_lang: int = 40
    passages_per_topic: int = 5
    vocab_size: int = 400
    query_len: int = 3
    labeled_frac: float = 0.5
    queries_per_lang: int = 200
    passage_len: int = 50
    terms_per_topic: int = 6
    core_terms_per_topic: int = 2
    topic_token_frac: float = 0.7
    query_topic_frac: float = 0.8

    def __post_init__(self) -> None:
        if len(self.languages) < 1:
            raise ValueError("at least one language required")
        if len(set(self.languages)) != len(self.languages):
            raise ValueError("duplicate language tags")
        for lang in self.languages:
            if not lang.isalnum() or not lang.islower():
                raise ValueError(f"language tag must be lowercase alphanumeric: {lang!r}")
        if self.topics_per_lang < 1:
            raise ValueError("topics_per_lang must be >= 1")
        if self.passages_per_topic < 2:
            raise ValueError("passages_per_topic must be >= 2")
        if not 1 <= self.core_terms_per_topic <= self.terms_per_topic:
            raise ValueError("core_terms_per_topic must be in [1, terms_per_topic]")
        n_topic_terms = self.topics_per_lang * self.terms_per_topic
        if self.vocab_size <= n_topic_terms:
            raise ValueError(
                f"vocab_size ({self.vocab_size}) must exceed total topic terms ({n_topic_terms})"
            )
        if self.query_len < 1:
            raise ValueError("query_len must be >= 1")
        if not 0.0 <= self.labeled_frac <= 1.0:
            raise ValueError("labeled_frac must be in [0, 1]")
        if self.queries_per_lang < 1:
            raise ValueError("queries_per_lang must be >= 1")
        if self.passage_len < self.core_terms_per_topic + 1:
            raise ValueError("passage_len too small for core terms")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "SynthSpec":
        """Build a spec from flat key=value strings (e.g. a parsed config file)."""
        kwargs: dict = {}
        converters = {
            "languages": lambda v: tuple(s.strip() for s in v.split(",") if s.strip()),
            "topics_per_lang": int,
            "passages_per_topic": int,
            "vocab_size": int,
            "query_len": int,
            "labeled_frac": float,
            "queries_per_lang": int,
            "passage_len": int,
            "terms_per_topic": int,
            "core_terms_per_topic": int,
            "topic_token_frac": float,
            "query_topic_frac": float,
        }
        for key, raw in mapping.items():
            if key not in converters:
                raise ValueError(f"unknown synth spec key {key!r}")
            kwargs[key] = converters[key](raw)
        return cls(**kwargs)


@dataclass
class SynthBenchmark:
    """Generated benchmark plus the ground truth used by tests and diagnostics."""

    corpus: Corpus
    queries: QuerySet
    judgments: JudgmentSet
    unlabeled: QuerySet
    passage_topics: dict[str, tuple[str, int]]
    query_topics: dict[str, tuple[str, int]]
    topic_terms: dict[tuple[str, int], tuple[str, ...]]
    source_lang: str
    target_langs: tuple[str, ...]


def _lang_vocab(lang: str, size: int) -> list[str]:
    return [f"{lang}{i:04d}" for i in range(size)]


def synth_benchmark(spec: SynthSpec, seed: int) -> SynthBenchmark:
    """Generate a deterministic topic-structured multilingual benchmark.

    Every passage belongs to one (language, topic); topic terms are dedicated to
    that topic, the rest of each passage is language-wide background vocabulary.
    Each query targets one topic: its first token is always one of the topic's
    core terms (present in every passage of the topic), so judged-relevant
    passages always share a term with the query. Judged queries of the source
    language are training data; judged queries of target languages are held-out
    evaluation sets; unlabeled queries (all languages) carry no judgments.
    """
    vocabs = {lang: _lang_vocab(lang, spec.vocab_size) for lang in spec.languages}
    seen: set[str] = set()
    for lang, vocab in vocabs.items():
        overlap = seen.intersection(vocab)
        if overlap:
            raise ValueError(f"language vocabularies overlap: {sorted(overlap)[:3]}")
        seen.update(vocab)

    rng = np.random.default_rng(seed)
    passages: list[Passage] = []
    queries: list[Query] = []
    judgments: list[Judgment] = []
    unlabeled: list[Query] = []
    passage_topics: dict[str, tuple[str, int]] = {}
    query_topics: dict[str, tuple[str, int]] = {}
    topic_terms: dict[tuple[str, int], tuple[str, ...]] = {}

    for lang in spec.languages:
        vocab = vocabs[lang]
        n_topic_terms = spec.topics_per_lang * spec.terms_per_topic
        background = vocab[n_topic_terms:]
        for t in range(spec.topics_per_lang):
            terms = vocab[t * spec.terms_per_topic : (t + 1) * spec.terms_per_topic]
            topic_terms[(lang, t)] = tuple(terms)

        topic_pids: dict[int, list[str]] = {}
        for t in range(spec.topics_per_lang):
            terms = list(topic_terms[(lang, t)])
            core = terms[: spec.core_terms_per_topic]
            pids = []
            for j in range(spec.passages_per_topic):
                jitter = int(rng.integers(-(spec.passage_len // 5), spec.passage_len // 5 + 1))
                length = max(len(core) + 1, spec.passage_len + jitter)
                toks = list(core)
                for _ in range(length - len(core)):
                    if rng.random() < spec.topic_token_frac:
                        toks.append(terms[int(rng.integers(len(terms)))])
                    else:
                        toks.append(background[int(rng.integers(len(background)))])
                order = rng.permutation(len(toks))
                toks = [toks[i] for i in order]
                pid = f"{lang}-t{t:03d}-p{j:02d}"
                passages.append(Passage(id=pid, text=" ".join(toks), lang=lang))
                passage_topics[pid] = (lang, t)
                pids.append(pid)
            topic_pids[t] = pids

        n_labeled = int(round(spec.labeled_frac * spec.queries_per_lang))
        for qi in range(spec.queries_per_lang):
            t = int(rng.integers(spec.topics_per_lang))
            terms = list(topic_terms[(lang, t)])
            core = terms[: spec.core_terms_per_topic]
            lo = max(1, spec.query_len - 1)
            length = int(rng.integers(lo, spec.query_len + 2))
            toks = [core[int(rng.integers(len(core)))]]
            for _ in range(length - 1):
                if rng.random() < spec.query_topic_frac:
                    toks.append(terms[int(rng.integers(len(terms)))])
                else:
                    toks.append(background[int(rng.integers(len(background)))])
            labeled = qi < n_labeled
            qid = f"{lang}-{'q' if labeled else 'u'}{qi:05d}"
            query = Query(id=qid, text=" ".join(toks), lang=lang)
            query_topics[qid] = (lang, t)
            if labeled:
                queries.append(query)
                for pid in topic_pids[t]:
                    judgments.append(Judgment(query_id=qid, passage_id=pid, grade=1))
            else:
                unlabeled.append(query)

    return SynthBenchmark(
        corpus=Corpus(passages),
        queries=QuerySet(queries),
        judgments=JudgmentSet(judgments),
        unlabeled=QuerySet(unlabeled),
        passage_topics=passage_topics,
        query_topics=query_topics,
        topic_terms=topic_terms,
        source_lang=spec.languages[0],
        target_langs=tuple(spec.languages[1:]),
    )
