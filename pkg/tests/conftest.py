import numpy as np
import pytest

from lexmine.corpus import Corpus, Passage, Query


@pytest.fixture
def tiny_corpus() -> Corpus:
    return Corpus(
        [
            Passage(id="p1", text="apple banana apple", lang="en"),
            Passage(id="p2", text="banana cherry", lang="en"),
            Passage(id="p3", text="cherry date fig", lang="en"),
            Passage(id="p4", text="apple fig", lang="en"),
        ]
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_query(text: str, qid: str = "q1", lang: str = "en") -> Query:
    return Query(id=qid, text=text, lang=lang)
