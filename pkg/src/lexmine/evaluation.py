"""Retrieval metrics, TREC run file IO, and the paired significance test.

Recall@k follows the hit-rate definition: the fraction of queries whose top-k
results contain at least one relevant passage. A coverage variant (fraction of
the relevant set retrieved) is available behind a flag for comparability with
other toolkits. Unjudged retrieved passages count as non-relevant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .corpus import DataFormatError, JudgmentSet
from .sparse import RankedList

__all__ = [
    "RunFile",
    "MetricsReport",
    "TTestResult",
    "mrr_at_k",
    "recall_at_k",
    "paired_t_test",
    "save_run",
    "load_run",
    "format_lang_table",
]

# query_id -> ranked results
RunFile = dict[str, RankedList]


@dataclass
class MetricsReport:
    metric: str
    k: int
    per_query: dict[str, float]
    mean: float
    per_lang: dict[str, float] = field(default_factory=dict)
    unjudged_in_run: list[str] = field(default_factory=list)
    no_relevant: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        values = list(self.per_query.values()) + [self.mean] + list(self.per_lang.values())
        if any(v < 0.0 or v > 1.0 for v in values):
            raise ValueError("metric values must lie in [0, 1]")


def _evaluated_queries(run: RunFile, qrels: JudgmentSet) -> tuple[list[str], list[str], list[str]]:
    """Queries to score: those with at least one relevant judgment.

    Also reports run queries lacking any qrels entry and judged queries whose
    judgments are all non-relevant; both are excluded from the mean.
    """
    evaluated = [qid for qid in qrels.by_query if qrels.relevant(qid)]
    no_relevant = [qid for qid in qrels.by_query if not qrels.relevant(qid)]
    unjudged = [qid for qid in run if qid not in qrels.by_query]
    return evaluated, unjudged, no_relevant


def _finish(
    metric: str,
    k: int,
    per_query: dict[str, float],
    unjudged: list[str],
    no_relevant: list[str],
    query_langs: dict[str, str] | None,
) -> MetricsReport:
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    per_lang: dict[str, float] = {}
    if query_langs:
        sums: dict[str, list[float]] = {}
        for qid, val in per_query.items():
            lang = query_langs.get(qid)
            if lang is not None:
                sums.setdefault(lang, []).append(val)
        per_lang = {lang: sum(vals) / len(vals) for lang, vals in sorted(sums.items())}
    return MetricsReport(
        metric=metric,
        k=k,
        per_query=per_query,
        mean=mean,
        per_lang=per_lang,
        unjudged_in_run=sorted(unjudged),
        no_relevant=sorted(no_relevant),
    )


def mrr_at_k(
    run: RunFile,
    qrels: JudgmentSet,
    k: int,
    query_langs: dict[str, str] | None = None,
) -> MetricsReport:
    """Mean reciprocal rank of the first relevant passage within the top k.

    Judged queries absent from the run contribute 0. Run queries without any
    judgment are excluded and listed in the report diagnostics.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    evaluated, unjudged, no_relevant = _evaluated_queries(run, qrels)
    per_query: dict[str, float] = {}
    for qid in evaluated:
        relevant = qrels.relevant(qid)
        rr = 0.0
        for rank, (pid, _) in enumerate(run.get(qid, [])[:k], 1):
            if pid in relevant:
                rr = 1.0 / rank
                break
        per_query[qid] = rr
    return _finish("mrr", k, per_query, unjudged, no_relevant, query_langs)


def recall_at_k(
    run: RunFile,
    qrels: JudgmentSet,
    k: int,
    query_langs: dict[str, str] | None = None,
    coverage: bool = False,
) -> MetricsReport:
    """Fraction of queries with at least one relevant passage in the top k.

    With ``coverage=True`` returns instead, per query, the fraction of its
    relevant passages found in the top k (the more common external definition).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    evaluated, unjudged, no_relevant = _evaluated_queries(run, qrels)
    per_query: dict[str, float] = {}
    for qid in evaluated:
        relevant = qrels.relevant(qid)
        retrieved = {pid for pid, _ in run.get(qid, [])[:k]}
        hits = len(relevant & retrieved)
        per_query[qid] = (hits / len(relevant)) if coverage else (1.0 if hits else 0.0)
    return _finish("recall_coverage" if coverage else "recall", k, per_query, unjudged, no_relevant, query_langs)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_two_sided: float
    degenerate_variance: bool = False


def paired_t_test(per_query_a: list[float], per_query_b: list[float]) -> TTestResult:
    """Student's paired t-test on per-query differences (two-sided).

    Conventions: all-zero differences report t=0, p=1; zero variance with a
    nonzero mean reports p=0 (< 1e-12) with the degenerate flag set.
    """
    if len(per_query_a) != len(per_query_b):
        raise ValueError("paired samples must have equal length")
    n = len(per_query_a)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    diffs = np.asarray(per_query_a, dtype=float) - np.asarray(per_query_b, dtype=float)
    if not diffs.any():
        return TTestResult(t=0.0, p_two_sided=1.0)
    sd = float(diffs.std(ddof=1))
    mean = float(diffs.mean())
    if sd == 0.0:
        return TTestResult(
            t=float(np.inf) if mean > 0 else float(-np.inf),
            p_two_sided=0.0,
            degenerate_variance=True,
        )
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), n - 1))
    return TTestResult(t=float(t), p_two_sided=min(p, 1.0))


# ---------------------------------------------------------------------------
# TREC run files
# ---------------------------------------------------------------------------


def save_run(run: RunFile, path: str | Path, tag: str = "lexmine") -> None:
    """Write `query_id Q0 passage_id rank score tag` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranked in run.items():
            for rank, (pid, score) in enumerate(ranked, 1):
                fh.write(f"{qid} Q0 {pid} {rank} {score:.6f} {tag}\n")


def load_run(path: str | Path) -> RunFile:
    run: RunFile = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise DataFormatError(
                    f"expected 6 whitespace-separated fields, got {len(parts)}", path, lineno
                )
            qid, _, pid, rank_s, score_s, _ = parts
            try:
                int(rank_s), float(score_s)
            except ValueError as exc:
                raise DataFormatError(f"bad rank/score: {exc}", path, lineno) from exc
            run.setdefault(qid, []).append((pid, float(score_s)))
    return run


def format_lang_table(reports: dict[str, MetricsReport]) -> str:
    """Align per-language means of several metrics into a text table."""
    langs: list[str] = []
    for rep in reports.values():
        for lang in rep.per_lang:
            if lang not in langs:
                langs.append(lang)
    header = ["metric", *langs, "avg"]
    rows = [header]
    for name, rep in reports.items():
        row = [f"{name}@{rep.k}"]
        row += [f"{rep.per_lang.get(lang, float('nan')):.4f}" for lang in langs]
        row.append(f"{rep.mean:.4f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)
