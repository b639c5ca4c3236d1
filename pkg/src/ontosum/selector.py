"""Content selector: a bi-LSTM token tagger estimating each findings token's copy probability."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import Report, Vocab, pad_ids
from .nn import EmbeddingProvider, StaticEmbeddings, bilstm_layers, lstm_from_dict, lstm_param_dict, run_bilstm
from .ontology import Lexicon, OntologySpan, TaggedReport, match_ontology, selection_filter
from .tensor import ContractError, LstmParams, Tensor

logger = logging.getLogger(__name__)


@dataclass
class SelectorConfig:
    hidden_size: int = 256  # per direction
    num_layers: int = 2
    embedding_dim: int = 100
    dropout: float = 0.2
    lr: float = 2e-5
    epochs: int = 50
    batch_size: int = 16
    patience: int = 5
    clip_norm: float | None = 5.0
    seed: int = 0


class SelectorParams:
    def __init__(
        self,
        embeddings: EmbeddingProvider,
        layers: list[tuple[LstmParams, LstmParams]],
        proj_w: Tensor,
        proj_b: Tensor,
        dropout: float = 0.0,
    ):
        hidden = layers[-1][0].hidden_size
        if proj_w.shape != (2 * hidden, 2) or proj_b.shape != (2,):
            raise T.DimensionError(f"projection {proj_w.shape} does not map 2x{hidden} -> 2")
        self.embeddings = embeddings
        self.layers = layers
        self.proj_w = proj_w
        self.proj_b = proj_b
        self.dropout = dropout
        self.vocab: Vocab | None = None

    @classmethod
    def init(cls, vocab_size: int, config: SelectorConfig, embedding_matrix: np.ndarray | None = None,
             trainable_embeddings: bool = True) -> "SelectorParams":
        rng = np.random.default_rng(config.seed)
        if embedding_matrix is None:
            embedding_matrix = rng.uniform(-0.1, 0.1, size=(vocab_size, config.embedding_dim))
        emb = StaticEmbeddings(embedding_matrix, trainable_embeddings)
        layers = bilstm_layers(emb.dim, config.hidden_size, config.num_layers, rng)
        proj_w = Tensor(rng.uniform(-0.1, 0.1, size=(2 * config.hidden_size, 2)), requires_grad=True)
        return cls(emb, layers, proj_w, Tensor(np.zeros(2), requires_grad=True), config.dropout)

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.embeddings.parameters())
        for k, (f, b) in enumerate(self.layers):
            out.update(lstm_param_dict(f"encoder.{k}.fwd", f))
            out.update(lstm_param_dict(f"encoder.{k}.bwd", b))
        out["proj.w"] = self.proj_w
        out["proj.b"] = self.proj_b
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters().items() if v.requires_grad}

    @classmethod
    def from_named(cls, params: dict[str, Tensor], dropout: float = 0.0, trainable_embeddings: bool = True):
        num_layers = len({k.split(".")[1] for k in params if k.startswith("encoder.")})
        layers = [
            (lstm_from_dict(f"encoder.{k}.fwd", params), lstm_from_dict(f"encoder.{k}.bwd", params))
            for k in range(num_layers)
        ]
        emb = StaticEmbeddings(params["embedding"].data, trainable_embeddings)
        return cls(emb, layers, params["proj.w"], params["proj.b"], dropout)


@dataclass
class SelectionResult:
    tokens: list[str]
    probs: list[float]


def _class_probs(
    params: SelectorParams,
    ids: np.ndarray,
    mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """``(B * n, 2)`` per-token class distributions for a padded batch."""
    B, n = ids.shape
    emb = params.embeddings.embed(ids)  # (B, n, D)
    steps = [T.index(emb, (slice(None), t)) for t in range(n)]
    outs, _ = run_bilstm(steps, params.layers, mask, params.dropout, rng, training)
    hidden = T.reshape(T.stack(outs, axis=1), (B * n, -1))
    return T.softmax(T.linear(hidden, params.proj_w, params.proj_b), axis=-1)


def selector_forward(tokens: Sequence[str], params: SelectorParams, vocab: Vocab) -> SelectionResult:
    if not tokens:
        raise ContractError("selector_forward needs a non-empty token sequence")
    with T.no_grad():
        probs = _class_probs(params, np.array([vocab.encode(tokens)]), np.ones((1, len(tokens))))
    return SelectionResult(list(tokens), probs.data[:, 1].tolist())


def selector_loss(
    params: SelectorParams,
    batch: Sequence[TaggedReport],
    vocab: Vocab,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean per-token cross entropy over the real (unpadded) tokens of ``batch``."""
    ids, mask = pad_ids([vocab.encode(tr.report.findings) for tr in batch])
    tags, _ = pad_ids([tr.tags for tr in batch], fill=0)
    probs = _class_probs(params, ids, mask, training, rng)
    per_token = T.cross_entropy(probs, tags.reshape(-1))
    flat_mask = mask.reshape(-1)
    return T.mul(T.sum(T.mul(per_token, flat_mask)), 1.0 / flat_mask.sum())


@dataclass
class TagMetrics:
    precision: float
    recall: float
    f1: float


def tag_metrics(gold: Sequence[int], pred: Sequence[int]) -> TagMetrics:
    tp = sum(1 for g, p in zip(gold, pred) if g and p)
    fp = sum(1 for g, p in zip(gold, pred) if p and not g)
    fn = sum(1 for g, p in zip(gold, pred) if g and not p)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return TagMetrics(prec, rec, f1)


def evaluate_selector(
    params: SelectorParams, data: Sequence[TaggedReport], vocab: Vocab, threshold: float = 0.5
) -> TagMetrics:
    gold, pred = [], []
    for tr in data:
        if not tr.report.findings:
            continue
        res = selector_forward(tr.report.findings, params, vocab)
        gold.extend(tr.tags)
        pred.extend(int(p >= threshold) for p in res.probs)
    return tag_metrics(gold, pred)


@dataclass
class SelectorHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = -1.0
    best_dev_loss: float = float("inf")


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, v in params.items():
        v.data[...] = snap[k]


def _dev_loss(params: SelectorParams, dev: Sequence[TaggedReport], vocab: Vocab, batch_size: int) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for start in range(0, len(dev), batch_size):
            batch = [tr for tr in dev[start : start + batch_size] if tr.report.findings]
            if not batch:
                continue
            n = sum(len(tr.tags) for tr in batch)
            total += float(selector_loss(params, batch, vocab).data) * n
            count += n
    return total / count if count else 0.0


def train_selector(
    train: Sequence[TaggedReport],
    dev: Sequence[TaggedReport],
    vocab: Vocab,
    config: SelectorConfig,
    embedding_matrix: np.ndarray | None = None,
    trainable_embeddings: bool = True,
) -> tuple[SelectorParams, SelectorHistory]:
    """Adam on per-token cross entropy, early stopping on dev token F1.

    The returned parameters are those of the best dev epoch.
    """
    train = [tr for tr in train if tr.report.findings]
    if not train:
        raise ContractError("train_selector needs a non-empty training set")
    if not any(any(tr.tags) for tr in train):
        logger.warning("no positive tags in the training data; the selector will learn to predict 0")
    dev = dev or train
    params = SelectorParams.init(len(vocab), config, embedding_matrix, trainable_embeddings)
    trainable = params.trainable_parameters()
    opt = T.Adam(trainable, lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng(config.seed + 1)
    history = SelectorHistory()
    best = _snapshot(trainable)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            opt.zero_grad()
            loss = selector_loss(params, batch, vocab, training=True, rng=rng)
            T.backward(loss)
            opt.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        m = evaluate_selector(params, dev, vocab)
        dev_loss = _dev_loss(params, dev, vocab, config.batch_size)
        row = {"epoch": epoch, "loss": total / count, "dev_loss": dev_loss,
               "precision": m.precision, "recall": m.recall, "f1": m.f1}
        history.epochs.append(row)
        logger.info("selector epoch %d loss %.4f dev P %.3f R %.3f F1 %.3f", epoch, row["loss"], m.precision, m.recall, m.f1)
        # dev loss breaks F1 ties so a model still at F1 = 0 keeps training while it improves
        if m.f1 > history.best_f1 or (m.f1 == history.best_f1 and dev_loss < history.best_dev_loss):
            history.best_f1, history.best_epoch, history.best_dev_loss = m.f1, epoch, dev_loss
            best = _snapshot(trainable)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _restore(trainable, best)
    params.vocab = vocab
    return params, history


def predict_salient(
    report: Report, params: SelectorParams, vocab: Vocab | None, lexicon: Lexicon, epsilon: float = 0.5
) -> list[OntologySpan]:
    """Ontology spans of the findings whose selection probability reaches ``epsilon``.

    ``vocab`` defaults to the one the selector was trained with.
    """
    vocab = vocab or params.vocab
    if vocab is None:
        raise ContractError("no vocabulary given and the selector carries none")
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must lie in [0, 1], got {epsilon}")
    spans = match_ontology(report.findings, lexicon)
    if not spans:
        return []
    probs = selector_forward(report.findings, params, vocab).probs
    return selection_filter(spans, probs, epsilon)


def write_tag_predictions(
    path: str | Path, data: Sequence[TaggedReport], params: SelectorParams, vocab: Vocab
) -> None:
    """Per-token ``token<TAB>gold<TAB>p`` lines, blank line between reports."""
    with open(path, "w", encoding="utf-8") as fh:
        for tr in data:
            if not tr.report.findings:
                continue
            res = selector_forward(tr.report.findings, params, vocab)
            for tok, gold, p in zip(tr.report.findings, tr.tags, res.probs):
                fh.write(f"{tok}\t{gold}\t{p:.6f}\n")
            fh.write("\n")
