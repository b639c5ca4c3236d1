"""Ontology-aware pointer-generator summarizer.

Pipeline per report::

    h      = BiLSTM(findings)                  (findings encoder)
    h_o    = LSTM(selected ontology words)     (ontology encoder; last state = ontology vector)
    F_i    = sigmoid(W [h_i; h_o_last] + b)    (filtering gate)
    h'_i   = h_i * F_i
    s_t    = LSTM(s_{t-1}, y_{t-1})
    a      = softmax(h'^T V s_t),  c_t = sum_i a_i h'_i
    P(w)   = p_gen P_vocab(w) + (1 - p_gen) sum_{i: x_i = w} a_i

``mode`` selects which ontology words feed the gate: ``filtered`` (selector
output), ``all-ontology`` (every lexicon match) or ``plain`` (no gate and no
ontology encoder, i.e. a bare pointer-generator).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS_ID, EOS_ID, UNK_ID, Report, Vocab, pad_ids, source_ext_ids
from .evaluation import rouge_n
from .nn import StaticEmbeddings, bilstm_layers, lstm_from_dict, lstm_param_dict, run_bilstm
from .ontology import Lexicon, OntologySpan, match_ontology, ontology_words
from .tensor import ContractError, LstmParams, Tensor

logger = logging.getLogger(__name__)

MODES = ("filtered", "all-ontology", "plain")
_NEG = -1e9


@dataclass
class SummarizerConfig:
    mode: str = "filtered"
    embedding_dim: int = 100
    hidden_size: int = 200  # findings encoder output (both directions) and decoder state
    encoder_layers: int = 2
    ontology_hidden: int = 100
    dropout: float = 0.0
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    clip_norm: float | None = 5.0
    epsilon: float = 0.5
    beam_size: int = 4
    max_len: int = 50
    length_penalty: float = 1.0
    eval_every: int = 1
    eval_beam_size: int = 1
    patience: int | None = None
    stop_at_rouge: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.hidden_size % 2:
            raise ContractError("hidden_size must be even (split across two directions)")


class SummarizerParams:
    """Named parameter set; gate and ontology-encoder tensors exist only outside plain mode."""

    def __init__(self, tensors: dict[str, Tensor], mode: str, trainable_embeddings: bool = True):
        self.tensors = tensors
        self.mode = mode
        self.embeddings = StaticEmbeddings(tensors["embedding"], trainable_embeddings)
        n_layers = len({k.split(".")[1] for k in tensors if k.startswith("encoder.")})
        self.encoder = [
            (lstm_from_dict(f"encoder.{k}.fwd", tensors), lstm_from_dict(f"encoder.{k}.bwd", tensors))
            for k in range(n_layers)
        ]
        self.decoder = lstm_from_dict("decoder", tensors)
        self.ontology = lstm_from_dict("ontology", tensors) if self.gated else None
        self._check()

    @property
    def gated(self) -> bool:
        return self.mode != "plain"

    @property
    def enc_dim(self) -> int:
        return 2 * self.encoder[-1][0].hidden_size

    @property
    def vocab_size(self) -> int:
        return self.tensors["embedding"].shape[0]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def _check(self) -> None:
        d, hd = self.enc_dim, self.decoder.hidden_size
        expect = {
            "attn.v": (d, hd),
            "init.w_h": (d, hd),
            "init.w_c": (d, hd),
            "out.w": (hd + d, self.vocab_size),
            "pgen.w": (d + hd + self.embeddings.dim, 1),
        }
        if self.gated:
            expect["gate.w"] = (d + self.ontology.hidden_size, d)
            expect["gate.b"] = (d,)
        for name, shape in expect.items():
            if self.tensors[name].shape != shape:
                raise T.DimensionError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    @classmethod
    def init(
        cls,
        vocab_size: int,
        config: SummarizerConfig,
        embedding_matrix: np.ndarray | None = None,
        trainable_embeddings: bool = True,
    ) -> "SummarizerParams":
        rng = np.random.default_rng(config.seed)
        if embedding_matrix is None:
            embedding_matrix = rng.uniform(-0.1, 0.1, size=(vocab_size, config.embedding_dim))
        emb_dim = embedding_matrix.shape[1]
        d, hd = config.hidden_size, config.hidden_size

        def p(*shape, scale=0.1):
            return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        tensors: dict[str, Tensor] = {"embedding": Tensor(np.array(embedding_matrix), requires_grad=True)}
        for k, (f, b) in enumerate(bilstm_layers(emb_dim, d // 2, config.encoder_layers, rng)):
            tensors.update(lstm_param_dict(f"encoder.{k}.fwd", f))
            tensors.update(lstm_param_dict(f"encoder.{k}.bwd", b))
        if config.mode != "plain":
            tensors.update(lstm_param_dict("ontology", LstmParams.init(emb_dim, config.ontology_hidden, rng)))
            tensors["gate.w"] = p(d + config.ontology_hidden, d)
            tensors["gate.b"] = zeros(d)
        tensors["init.w_h"] = p(d, hd)
        tensors["init.b_h"] = zeros(hd)
        tensors["init.w_c"] = p(d, hd)
        tensors["init.b_c"] = zeros(hd)
        tensors.update(lstm_param_dict("decoder", LstmParams.init(emb_dim, hd, rng)))
        tensors["attn.v"] = p(d, hd)
        tensors["out.w"] = p(hd + d, vocab_size)
        tensors["out.b"] = zeros(vocab_size)
        tensors["pgen.w"] = p(d + hd + emb_dim, 1)
        tensors["pgen.b"] = zeros(1)
        return cls(tensors, config.mode, trainable_embeddings)

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.tensors)

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if v.requires_grad}


# ---------------------------------------------------------------- batching


@dataclass
class SourceBatch:
    ids: np.ndarray  # (B, n) base vocab ids
    ext: np.ndarray  # (B, n) extended vocab ids
    mask: np.ndarray  # (B, n)
    oovs: list[list[str]]
    onto_ids: np.ndarray  # (B, l) ontology word ids, may have width 0
    onto_mask: np.ndarray

    @property
    def ext_size_extra(self) -> int:
        return max((len(o) for o in self.oovs), default=0)


def make_source_batch(
    findings: Sequence[Sequence[str]], onto: Sequence[Sequence[str]], vocab: Vocab
) -> SourceBatch:
    if any(len(f) == 0 for f in findings):
        raise ContractError("findings must be non-empty")
    ext, oovs = zip(*(source_ext_ids(f, vocab) for f in findings))
    ids, mask = pad_ids([vocab.encode(f) for f in findings])
    ext_ids, _ = pad_ids(ext)
    onto_ids, onto_mask = pad_ids([vocab.encode(o) for o in onto])
    return SourceBatch(ids, ext_ids, mask, list(oovs), onto_ids, onto_mask)


def target_ids(impression: Sequence[str], vocab: Vocab, oovs: Sequence[str]) -> list[int]:
    """Gold output ids on the extended vocabulary, EOS appended."""
    out = []
    for t in impression:
        if t in vocab:
            out.append(vocab.index(t))
        elif t in oovs:
            out.append(len(vocab) + list(oovs).index(t))
        else:
            out.append(UNK_ID)
    return out + [EOS_ID]


# ---------------------------------------------------------------- model pieces


@dataclass
class EncodedFindings:
    h: Tensor  # (B, n, D)
    h_prime: Tensor  # (B, n, D)
    ontology_vector: Tensor | None  # (B, Do)
    gates: Tensor | None  # (B, n, D)
    mask: np.ndarray
    init_state: tuple[Tensor, Tensor]


def _encode_batch(
    params: SummarizerParams,
    ids: np.ndarray,
    mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    emb = T.dropout(params.embeddings.embed(ids), dropout, rng, training)
    steps = [T.index(emb, (slice(None), t)) for t in range(ids.shape[1])]
    outs, finals = run_bilstm(steps, params.encoder, mask, dropout, rng, training)
    return T.stack(outs, axis=1), finals[-1]


def _ontology_batch(params: SummarizerParams, onto_ids: np.ndarray, onto_mask: np.ndarray) -> tuple[list[Tensor], Tensor]:
    B, l = onto_ids.shape
    H = params.ontology.hidden_size
    if l == 0:
        return [], Tensor(np.zeros((B, H)))
    emb = params.embeddings.embed(onto_ids)
    steps = [T.index(emb, (slice(None), t)) for t in range(l)]
    hs = T.run_lstm(steps, params.ontology, [onto_mask[:, t] for t in range(l)])
    return hs, hs[-1]


def _gate_batch(params: SummarizerParams, h: Tensor, hol: Tensor) -> tuple[Tensor, Tensor]:
    """``F = sigmoid(W [h_i; h_o] + b)`` for every position, with ``W`` split by input block."""
    B, n, D = h.shape
    w = params["gate.w"]
    w_word, w_onto = T.index(w, slice(0, D)), T.index(w, slice(D, None))
    z_word = T.reshape(T.matmul(T.reshape(h, (B * n, D)), w_word), (B, n, D))
    z_onto = T.expand_dims(T.matmul(hol, w_onto), 1)
    gates = T.sigmoid(T.add(T.add(z_word, z_onto), params["gate.b"]))
    return T.mul(h, gates), gates


def _encode(
    params: SummarizerParams,
    src: SourceBatch,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
    bypass_gate: bool = False,
) -> EncodedFindings:
    h, (hf, hb) = _encode_batch(params, src.ids, src.mask, training, rng, dropout)
    if params.gated and not bypass_gate:
        _, hol = _ontology_batch(params, src.onto_ids, src.onto_mask)
        h_prime, gates = _gate_batch(params, h, hol)
    else:
        hol, h_prime, gates = None, h, None
    final = T.concat([hf, hb], axis=1)
    s0 = T.linear(final, params["init.w_h"], params["init.b_h"])
    c0 = T.linear(final, params["init.w_c"], params["init.b_c"])
    return EncodedFindings(h, h_prime, hol, gates, src.mask, (s0, c0))


def encode_findings(findings: Sequence[str], params: SummarizerParams, vocab: Vocab) -> Tensor:
    """Per-token findings-encoder states ``(n, D)``, forward half first."""
    if not findings:
        raise ContractError("encode_findings needs at least one token")
    ids = np.array([vocab.encode(findings)])
    h, _ = _encode_batch(params, ids, np.ones(ids.shape))
    return T.index(h, 0)


def encode_ontology(words: Sequence[str], params: SummarizerParams, vocab: Vocab) -> tuple[list[Tensor], Tensor]:
    """Ontology encoder states and the ontology vector (zeros when ``words`` is empty)."""
    if params.ontology is None:
        raise ContractError("plain-mode parameters have no ontology encoder")
    ids, mask = pad_ids([vocab.encode(words)])
    hs, last = _ontology_batch(params, ids, mask)
    return [T.index(h, 0) for h in hs], T.index(last, 0)


def filter_gate(h: Tensor, ontology_vector: Tensor, params: SummarizerParams) -> tuple[Tensor, Tensor]:
    """Gate ``(n, D)`` findings states against one ontology vector; returns ``(h', F)``."""
    if h.ndim != 2 or h.shape[1] + ontology_vector.shape[-1] != params["gate.w"].shape[0]:
        raise T.DimensionError(
            f"gate input {h.shape} + {ontology_vector.shape} does not fit gate.w {params['gate.w'].shape}"
        )
    hp, gates = _gate_batch(params, T.expand_dims(h, 0), T.reshape(ontology_vector, (1, -1)))
    return T.index(hp, 0), T.index(gates, 0)


@dataclass
class DecodeOutput:
    state: tuple[Tensor, Tensor]
    attention: Tensor  # (B, n)
    context: Tensor  # (B, D)
    probs: Tensor  # (B, V + extra)
    p_gen: Tensor  # (B, 1)


def decode_step(
    state: tuple[Tensor, Tensor],
    y_prev: np.ndarray,
    h_prime: Tensor,
    src_mask: np.ndarray,
    src_ext: np.ndarray,
    extra: int,
    params: SummarizerParams,
    force_pgen: float | None = None,
) -> DecodeOutput:
    """One decoder step over a batch; ``y_prev`` may hold extended ids (mapped to UNK for embedding)."""
    V = params.vocab_size
    y_in = np.where(np.asarray(y_prev) >= V, UNK_ID, y_prev)
    emb_y = params.embeddings.embed(y_in)
    s, c = T.lstm_step(emb_y, state[0], state[1], params.decoder)
    u = T.matmul(s, T.transpose(params["attn.v"]))  # (B, D)
    scores = T.sum(T.mul(h_prime, T.expand_dims(u, 1)), axis=2)
    scores = T.add(scores, (1.0 - src_mask) * _NEG)
    attn = T.softmax(scores, axis=-1)
    ctx = T.sum(T.mul(h_prime, T.expand_dims(attn, 2)), axis=1)
    p_vocab = T.softmax(T.linear(T.concat([s, ctx], axis=1), params["out.w"], params["out.b"]), axis=-1)
    if force_pgen is None:
        p_gen = T.sigmoid(T.linear(T.concat([ctx, s, emb_y], axis=1), params["pgen.w"], params["pgen.b"]))
    else:
        p_gen = Tensor(np.full((s.shape[0], 1), float(force_pgen)))
    copy = T.scatter_add(attn, src_ext, V + extra)
    probs = T.add(T.mul(p_gen, T.pad_last(p_vocab, extra)), T.mul(T.add(1.0, T.neg(p_gen)), copy))
    return DecodeOutput((s, c), attn, ctx, probs, p_gen)


# ---------------------------------------------------------------- training objective


def batch_loss(
    params: SummarizerParams,
    reports: Sequence[Report],
    onto: Sequence[Sequence[str]],
    vocab: Vocab,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
    bypass_gate: bool = False,
) -> Tensor:
    """Teacher-forced mean NLL per gold target token (EOS included)."""
    src = make_source_batch([r.findings for r in reports], onto, vocab)
    enc = _encode(params, src, training, rng, dropout, bypass_gate)
    extra = src.ext_size_extra
    targets = [target_ids(r.impression, vocab, o) for r, o in zip(reports, src.oovs)]
    tgt, tmask = pad_ids(targets)
    inputs, _ = pad_ids([[BOS_ID] + t[:-1] for t in targets])
    state = enc.init_state
    total = None
    for t in range(tgt.shape[1]):
        out = decode_step(state, inputs[:, t], enc.h_prime, src.mask, src.ext, extra, params)
        state = out.state
        step_loss = T.sum(T.mul(T.cross_entropy(out.probs, tgt[:, t]), tmask[:, t]))
        total = step_loss if total is None else T.add(total, step_loss)
    return T.mul(total, 1.0 / tmask.sum())


# ---------------------------------------------------------------- ontology input


def ontology_input(
    report: Report,
    mode: str,
    lexicon: Lexicon | None,
    selector=None,
    vocab: Vocab | None = None,
    epsilon: float = 0.5,
) -> list[OntologySpan]:
    """Ontology spans the gate sees for ``report`` under ``mode``."""
    if mode == "plain" or lexicon is None:
        return []
    if mode == "all-ontology":
        return match_ontology(report.findings, lexicon)
    from .selector import predict_salient

    return predict_salient(report, selector, selector.vocab or vocab, lexicon, epsilon)


# ---------------------------------------------------------------- inference


@dataclass
class Hypothesis:
    tokens: list[int]
    logp: float
    state: tuple[np.ndarray, np.ndarray]
    finished: bool = False
    logps: list[float] = field(default_factory=list)

    def score(self, alpha: float = 1.0) -> float:
        return self.logp / max(1, len(self.tokens)) ** alpha


def beam_search(
    findings: Sequence[str],
    onto_words: Sequence[str],
    params: SummarizerParams,
    vocab: Vocab,
    beam_size: int = 4,
    max_len: int = 50,
    length_penalty: float = 1.0,
) -> Hypothesis | None:
    """Best hypothesis by length-normalized log-probability, or None when ``max_len`` is 0."""
    if beam_size < 1 or max_len < 0:
        raise ContractError("beam_size must be >= 1 and max_len >= 0")
    if max_len == 0:
        return None
    with T.no_grad():
        src = make_source_batch([findings], [onto_words], vocab)
        enc = _encode(params, src)
        extra = src.ext_size_extra
        hp = enc.h_prime.data
        s0, c0 = enc.init_state
        live = [Hypothesis([], 0.0, (s0.data[0], c0.data[0]))]
        done: list[Hypothesis] = []
        for _ in range(max_len):
            k = len(live)
            state = (Tensor(np.stack([h.state[0] for h in live])), Tensor(np.stack([h.state[1] for h in live])))
            y_prev = np.array([h.tokens[-1] if h.tokens else BOS_ID for h in live])
            out = decode_step(
                state,
                y_prev,
                Tensor(np.repeat(hp, k, axis=0)),
                np.repeat(src.mask, k, axis=0),
                np.repeat(src.ext, k, axis=0),
                extra,
                params,
            )
            logp = np.minimum(np.log(np.maximum(out.probs.data, T.PROB_FLOOR)), 0.0)
            cands = []
            for j, hyp in enumerate(live):
                top = np.argsort(-logp[j], kind="stable")[:beam_size]
                for w in top:
                    cands.append((hyp.logp + logp[j, w], j, int(w), float(logp[j, w])))
            cands.sort(key=lambda c: -c[0])
            new_live = []
            for total, j, w, lp in cands:
                parent = live[j]
                hyp = Hypothesis(
                    parent.tokens + [w],
                    total,
                    (out.state[0].data[j], out.state[1].data[j]),
                    w == EOS_ID,
                    parent.logps + [lp],
                )
                if hyp.finished:
                    done.append(hyp)
                else:
                    new_live.append(hyp)
                if len(new_live) == beam_size:
                    break
            live = new_live
            if len(done) >= beam_size or not live:
                break
        pool = done if done else live
        return max(pool, key=lambda h: h.score(length_penalty))


def ids_to_tokens(ids: Sequence[int], vocab: Vocab, oovs: Sequence[str]) -> list[str]:
    out = []
    for i in ids:
        if i == EOS_ID:
            break
        out.append(vocab.token(i) if i < len(vocab) else oovs[i - len(vocab)])
    return out


def generate(
    findings: Sequence[str],
    onto_words: Sequence[str],
    params: SummarizerParams,
    vocab: Vocab,
    beam_size: int = 4,
    max_len: int = 50,
    length_penalty: float = 1.0,
) -> list[str]:
    best = beam_search(findings, onto_words, params, vocab, beam_size, max_len, length_penalty)
    if best is None:
        return []
    _, oovs = source_ext_ids(findings, vocab)
    return ids_to_tokens(best.tokens, vocab, oovs)


# ---------------------------------------------------------------- training loop


@dataclass
class SummarizerHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_rouge1: float = -1.0


def train_summarizer(
    train: Sequence[Report],
    dev: Sequence[Report],
    vocab: Vocab,
    config: SummarizerConfig,
    lexicon: Lexicon | None = None,
    selector=None,
    embedding_matrix: np.ndarray | None = None,
    trainable_embeddings: bool = True,
) -> tuple[SummarizerParams, SummarizerHistory]:
    """Adam on teacher-forced NLL; keeps the parameters of the best dev ROUGE-1 epoch."""
    if config.mode == "filtered" and selector is None:
        raise ContractError("filtered mode needs a trained selector")
    if config.mode != "filtered" and selector is not None:
        raise ContractError(f"{config.mode} mode does not use a selector")
    if config.mode != "plain" and lexicon is None:
        raise ContractError(f"{config.mode} mode needs a lexicon")
    train = [r for r in train if r.findings]
    if not train:
        raise ContractError("train_summarizer needs a non-empty training set")
    dev = [r for r in dev if r.findings] or train

    def onto_for(reports):
        return [
            ontology_words(ontology_input(r, config.mode, lexicon, selector, vocab, config.epsilon))
            for r in reports
        ]

    train_onto, dev_onto = onto_for(train), onto_for(dev)
    params = SummarizerParams.init(len(vocab), config, embedding_matrix, trainable_embeddings)
    trainable = params.trainable_parameters()
    opt = T.Adam(trainable, lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng(config.seed + 1)
    history = SummarizerHistory()
    best = {k: v.data.copy() for k, v in trainable.items()}
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = batch_loss(
                params, [train[i] for i in idx], [train_onto[i] for i in idx], vocab,
                training=True, rng=rng, dropout=config.dropout,
            )
            T.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "loss": total / count}
        last = epoch == config.epochs
        if epoch % config.eval_every == 0 or last:
            row["dev_rouge1"] = corpus_rouge1(params, dev, dev_onto, vocab, config.eval_beam_size, config.max_len)
            if row["dev_rouge1"] > history.best_rouge1:
                history.best_rouge1, history.best_epoch = row["dev_rouge1"], epoch
                best = {k: v.data.copy() for k, v in trainable.items()}
                stale = 0
            else:
                stale += 1
        history.epochs.append(row)
        logger.info("summarizer epoch %d loss %.4f dev RG-1 %s", epoch, row["loss"], row.get("dev_rouge1", "-"))
        if config.stop_at_rouge is not None and history.best_rouge1 >= config.stop_at_rouge:
            break
        if config.patience is not None and stale >= config.patience:
            break
    for k, v in trainable.items():
        v.data[...] = best[k]
    return params, history


def corpus_rouge1(
    params: SummarizerParams,
    reports: Sequence[Report],
    onto: Sequence[Sequence[str]],
    vocab: Vocab,
    beam_size: int = 1,
    max_len: int = 50,
) -> float:
    scores = [
        rouge_n(generate(r.findings, o, params, vocab, beam_size, max_len), r.impression, 1).f1
        for r, o in zip(reports, onto)
    ]
    return float(np.mean(scores))
