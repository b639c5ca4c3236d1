"""Report ingestion: tokenizer, vocabulary, embedding files, corpus IO, splits."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import ContractError

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED = (PAD, UNK, BOS, EOS)

# decimals stay whole ("3.5"), letter/digit runs are words, anything else is a one-char token
_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?|[^\W_]+|\S")


class FormatError(ValueError):
    """Malformed input file; message carries the line number when known."""


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Report:
    id: str
    findings: list[str]
    impression: list[str]
    raw_findings: str = ""
    raw_impression: str = ""

    @classmethod
    def from_text(cls, id: str, findings: str, impression: str) -> "Report":
        return cls(id, tokenize(findings), tokenize(impression), findings, impression)


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, i: int) -> str:
        return self.itos[i]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def content_tokens(self) -> list[str]:
        return self.itos[len(RESERVED) :]

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def build_vocab(reports: Iterable[Report], min_freq: int = 1, max_size: int | None = None) -> Vocab:
    """Frequency-ordered vocabulary (ties lexicographic) over findings and impressions."""
    if min_freq < 1:
        raise ContractError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    for r in reports:
        counts.update(r.findings)
        counts.update(r.impression)
    ranked = sorted((t for t, n in counts.items() if n >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocab(ranked)


@dataclass
class EmbeddingTable:
    dim: int
    matrix: np.ndarray
    trainable: bool = True
    coverage: float = 0.0
    found: int = 0

    @classmethod
    def random(cls, vocab: Vocab, dim: int, rng: np.random.Generator, trainable: bool = True):
        return cls(dim, rng.uniform(-0.1, 0.1, size=(len(vocab), dim)), trainable)


def load_embeddings(
    path: str | Path,
    vocab: Vocab,
    rng: np.random.Generator | None = None,
    trainable: bool = True,
) -> EmbeddingTable:
    """Read a text embedding file (``token v1 ... vD``) into a table aligned with ``vocab``.

    Rows for tokens absent from the file are drawn uniformly from [-0.1, 0.1].
    """
    rng = rng or np.random.default_rng(0)
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError(f"line {lineno}: no vector values")
            elif len(values) != dim:
                raise FormatError(f"line {lineno}: expected {dim} values, found {len(values)}")
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: unreadable float ({exc})") from None
            if token in vocab and token not in vectors:
                vectors[token] = vec
    if dim is None:
        raise FormatError(f"{path}: empty embedding file")
    table = EmbeddingTable.random(vocab, dim, rng, trainable)
    for tok, vec in vectors.items():
        table.matrix[vocab.index(tok)] = vec
    table.found = len(vectors)
    table.coverage = len(vectors) / len(vocab)
    logger.info("embeddings: %d/%d vocab entries found (%.1f%%)", len(vectors), len(vocab), 100 * table.coverage)
    return table


def _truncate(tokens: list[str], limit: int | None, what: str, rid: str) -> list[str]:
    if limit is not None and len(tokens) > limit:
        logger.warning("report %s: %s truncated from %d to %d tokens", rid, what, len(tokens), limit)
        return tokens[:limit]
    return tokens


def read_corpus(
    path: str | Path,
    max_findings: int | None = 500,
    max_impression: int | None = 50,
) -> list[Report]:
    """Parse a line-delimited JSON corpus with string fields ``id``, ``findings``, ``impression``."""
    reports = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON @ line {lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise FormatError(f"expected a JSON object @ line {lineno}")
            for key in ("id", "findings", "impression"):
                if key not in obj:
                    raise FormatError(f"missing field: {key} @ line {lineno}")
            rid = str(obj["id"])
            findings, impression = str(obj["findings"]), str(obj["impression"])
            reports.append(
                Report(
                    rid,
                    _truncate(tokenize(findings), max_findings, "findings", rid),
                    _truncate(tokenize(impression), max_impression, "impression", rid),
                    findings,
                    impression,
                )
            )
    return reports


def write_corpus(path: str | Path, reports: Iterable[Report]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            findings = r.raw_findings or " ".join(r.findings)
            impression = r.raw_impression or " ".join(r.impression)
            fh.write(json.dumps({"id": r.id, "findings": findings, "impression": impression}) + "\n")


def split(
    reports: Sequence[Report],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[Report], list[Report], list[Report]]:
    """Shuffle under ``seed`` and cut into train/dev/test.

    Dev and test get ``floor(ratio * N)`` items; train takes the remainder.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(
        math.fsum(ratios), 1.0, abs_tol=1e-9
    ):
        raise ContractError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    items = list(reports)
    random.Random(seed).shuffle(items)
    n = len(items)
    n_dev = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_dev - n_test
    return items[:n_train], items[n_train : n_train + n_dev], items[n_train + n_dev :]


def source_ext_ids(tokens: Sequence[str], vocab: Vocab) -> tuple[list[int], list[str]]:
    """Extended-vocab ids: in-vocab tokens keep their id, OOVs get ``len(vocab) + k``."""
    oovs: list[str] = []
    ids = []
    for t in tokens:
        if t in vocab:
            ids.append(vocab.index(t))
        else:
            if t not in oovs:
                oovs.append(t)
            ids.append(len(vocab) + oovs.index(t))
    return ids, oovs


def pad_ids(seqs: Sequence[Sequence[int]], fill: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    width = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), width), fill, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s
        mask[b, : len(s)] = 1.0
    return ids, mask
