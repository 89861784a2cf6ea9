"""Okapi-family lexical index and top-k search.

Classic inverted-index BM25: postings keep (passage position, term frequency),
scores use the positive ln(1 + (N - df + 0.5)/(df + 0.5)) IDF so very common
terms never push a score negative. Defaults k1=1.2, b=0.75.

Stopword removal and stemming are off by default (exact terms matter in
legal text) but available as index-time knobs; queries are normalized with
whatever the index was built with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import Corpus, tokenize
from .errors import EmptyCorpus
from .rankings import RankedList, ranked

# tiny rule-based stemmer: strips common English suffixes to a fixpoint so
# document and query forms land on the same stem, never below three leading
# characters
_SUFFIXES = ("ing", "ed", "es", "s")


def light_stem(token: str) -> str:
    while True:
        for suffix in _SUFFIXES:
            if token.endswith(suffix) and len(token) - len(suffix) >= 3:
                token = token[: -len(suffix)]
                break
        else:
            return token


@dataclass
class SparseIndex:
    """Immutable after build; safe for concurrent searches."""

    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avg_doc_length: float
    doc_count: int
    k1: float
    b: float
    refs: list[tuple[str, str]]
    stopwords: frozenset[str] = frozenset()
    stem: bool = False


def _terms(text: str, stopwords: frozenset[str], stem: bool) -> list[str]:
    tokens = tokenize(text)
    if stopwords:
        tokens = [t for t in tokens if t not in stopwords]
    if stem:
        tokens = [light_stem(t) for t in tokens]
    return tokens


def build_sparse_index(
    corpus: Corpus,
    k1: float = 1.2,
    b: float = 0.75,
    stopwords: frozenset[str] = frozenset(),
    stem: bool = False,
) -> SparseIndex:
    if len(corpus) == 0:
        raise EmptyCorpus("cannot index an empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for position, passage in enumerate(corpus.passages):
        tokens = _terms(passage.text, stopwords, stem)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for token, tf in counts.items():
            postings.setdefault(token, []).append((position, tf))
    return SparseIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / len(doc_lengths),
        doc_count=len(doc_lengths),
        k1=k1,
        b=b,
        refs=[p.ref for p in corpus.passages],
        stopwords=frozenset(stopwords),
        stem=stem,
    )


def idf(index: SparseIndex, term: str) -> float:
    df = len(index.postings.get(term, ()))
    return math.log(1.0 + (index.doc_count - df + 0.5) / (df + 0.5))


def sparse_search(index: SparseIndex, query: str, k: int, query_id: str = "", retriever_id: str = "bm25") -> RankedList:
    """Top-k passages by Okapi BM25.

    Repeated query tokens count once; passages sharing no token with the
    query are excluded, so an empty result is legal.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = list(dict.fromkeys(_terms(query, index.stopwords, index.stem)))
    scores: dict[int, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index, term)
        for position, tf in plist:
            length_norm = 1.0 - index.b + index.b * index.doc_lengths[position] / index.avg_doc_length
            gain = term_idf * tf * (index.k1 + 1.0) / (tf + index.k1 * length_norm)
            scores[position] = scores.get(position, 0.0) + gain
    return ranked(
        query_id,
        retriever_id,
        ((index.refs[position], score) for position, score in scores.items()),
        k=k,
    )
