"""Ontology lexicon, longest-match term extraction and copy-tag construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Report, tokenize
from .tensor import ContractError

logger = logging.getLogger(__name__)

_END = object()


class Lexicon:
    """Flat set of multiword terms backed by a token-level trie."""

    def __init__(self, terms: Iterable[Sequence[str]] = ()):
        self.terms: list[tuple[str, ...]] = []
        self._root: dict = {}
        for term in terms:
            self.add(term)

    @classmethod
    def from_strings(cls, lines: Iterable[str]) -> "Lexicon":
        return cls(tokenize(line) for line in lines)

    def add(self, term: Sequence[str]) -> bool:
        term = tuple(t.lower() for t in term)
        if not term:
            return False
        node = self._root
        for tok in term:
            node = node.setdefault(tok, {})
        if _END in node:
            return False
        node[_END] = term
        self.terms.append(term)
        return True

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term) -> bool:
        node = self._root
        for tok in term:
            node = node.get(tok)
            if node is None:
                return False
        return _END in node

    def longest_at(self, tokens: Sequence[str], start: int) -> tuple[str, ...] | None:
        node, best = self._root, None
        for j in range(start, len(tokens)):
            node = node.get(tokens[j])
            if node is None:
                break
            if _END in node:
                best = node[_END]
        return best


def load_lexicon(path: str | Path) -> Lexicon:
    """One term per line; blank and ``#`` lines skipped, terms lowercased and deduplicated."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    lex = Lexicon.from_strings(lines)
    if not len(lex):
        logger.warning("lexicon %s is empty", path)
    return lex


@dataclass(frozen=True)
class OntologySpan:
    start: int
    length: int
    term: tuple[str, ...]

    @property
    def end(self) -> int:
        return self.start + self.length


def match_ontology(tokens: Sequence[str], lexicon: Lexicon) -> list[OntologySpan]:
    """Greedy left-to-right longest match; matched tokens are consumed."""
    spans = []
    i = 0
    while i < len(tokens):
        term = lexicon.longest_at(tokens, i)
        if term is None:
            i += 1
            continue
        spans.append(OntologySpan(i, len(term), term))
        i += len(term)
    return spans


@dataclass
class TaggedReport:
    report: Report
    tags: list[int]

    def __post_init__(self):
        if len(self.tags) != len(self.report.findings):
            raise ContractError(
                f"report {self.report.id}: {len(self.tags)} tags for {len(self.report.findings)} tokens"
            )


def align_tags(report: Report, lexicon: Lexicon) -> TaggedReport:
    """Tag 1 where a findings token sits inside an ontology match and also occurs in the impression."""
    tags = [0] * len(report.findings)
    in_impression = set(report.impression)
    for span in match_ontology(report.findings, lexicon):
        for i in range(span.start, span.end):
            if report.findings[i] in in_impression:
                tags[i] = 1
    return TaggedReport(report, tags)


def span_probability(span: OntologySpan, probs: Sequence[float]) -> float:
    """A multiword term is only as salient as its least salient word."""
    return min(probs[span.start : span.end])


def selection_filter(
    spans: Sequence[OntologySpan], probs: Sequence[float], epsilon: float
) -> list[OntologySpan]:
    """Keep spans whose probability reaches ``epsilon``, in findings order."""
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must lie in [0, 1], got {epsilon}")
    return [s for s in spans if span_probability(s, probs) >= epsilon]


def ontology_words(spans: Iterable[OntologySpan]) -> list[str]:
    """Words of the selected terms concatenated in findings order."""
    return [w for s in spans for w in s.term]
