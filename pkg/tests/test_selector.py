import math

import numpy as np
import pytest

from ontosum import tensor as T
from ontosum.corpus import Report, build_vocab
from ontosum.ontology import Lexicon, align_tags, match_ontology
from ontosum.selector import (
    SelectorConfig,
    SelectorParams,
    predict_salient,
    selector_forward,
    selector_loss,
    tag_metrics,
    train_selector,
    write_tag_predictions,
)
from ontosum.synthetic import SyntheticConfig, generate_reports, lexicon_terms
from ontosum.tensor import ContractError, Tensor

from conftest import tiny_vocab


def small_selector(seed=0, scale=None):
    params = SelectorParams.init(len(tiny_vocab()), SelectorConfig(hidden_size=4, embedding_dim=5, dropout=0.0, seed=seed))
    if scale is not None:
        rng = np.random.default_rng(seed + 50)
        for t in params.named_parameters().values():
            t.data[...] = rng.normal(0, scale, size=t.shape)
    return params


def test_forward_length_and_range():
    params, vocab = small_selector(), tiny_vocab()
    for n in (1, 7, 40):
        res = selector_forward(["small"] * n, params, vocab)
        assert len(res.probs) == n
        assert all(0 < p < 1 for p in res.probs)
    with pytest.raises(ContractError):
        selector_forward([], params, vocab)


def test_forward_is_deterministic():
    params, vocab = small_selector(), tiny_vocab()
    toks = "small left pleural effusion".split()
    assert selector_forward(toks, params, vocab).probs == selector_forward(toks, params, vocab).probs


def test_gradients_on_four_tokens():
    params, vocab = small_selector(scale=0.6), tiny_vocab()
    tr = align_tags(Report("r", "small left pleural effusion".split(), ["pleural", "effusion"]),
                    Lexicon.from_strings(["pleural effusion"]))
    checks = T.gradient_check(lambda: selector_loss(params, [tr], vocab), params.trainable_parameters())
    assert {c.name for c in checks} >= {"embedding", "proj.w", "proj.b", "encoder.1.bwd.w_h"}
    assert max(c.rel_error for c in checks) < 1e-4


def test_padding_does_not_change_loss():
    params, vocab = small_selector(scale=0.5), tiny_vocab()
    lex = Lexicon.from_strings(["effusion"])
    a = align_tags(Report("a", "small effusion".split(), ["effusion"]), lex)
    b = align_tags(Report("b", "left pleural effusion and edema".split(), ["edema"]), lex)
    alone = float(selector_loss(params, [a], vocab).data)
    both = selector_loss(params, [a, b], vocab).data
    b_alone = float(selector_loss(params, [b], vocab).data)
    assert both == pytest.approx((2 * alone + 5 * b_alone) / 7, abs=1e-12)


def test_tag_metrics():
    m = tag_metrics([1, 1, 0, 0], [1, 0, 1, 0])
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)
    assert tag_metrics([0, 0], [0, 0]).f1 == 0.0


def test_predict_salient_with_hand_set_probabilities():
    params, vocab = small_selector(), tiny_vocab()
    params.proj_w.data[...] = 0.0
    params.proj_b.data[...] = [0.0, math.log(0.6 / 0.4)]  # every token p = 0.6
    lex = Lexicon.from_strings(["pleural effusion", "left"])
    r = Report("r", "small left pleural effusion".split(), [])
    assert [s.term for s in predict_salient(r, params, vocab, lex, 0.5)] == [("left",), ("pleural", "effusion")]
    assert predict_salient(r, params, vocab, lex, 0.7) == []
    assert predict_salient(r, params, vocab, lex, 0.0) == match_ontology(r.findings, lex)
    assert predict_salient(Report("q", ["no", "acute"], []), params, vocab, lex, 0.0) == []


def _synthetic_tagged(n, seed):
    lex = Lexicon.from_strings(lexicon_terms())
    reports = generate_reports(SyntheticConfig(n_reports=n, seed=seed))
    return [align_tags(r, lex) for r in reports], build_vocab(reports)


def test_training_learns_rule_and_is_deterministic(tmp_path):
    tagged, vocab = _synthetic_tagged(60, 3)
    cfg = SelectorConfig(hidden_size=16, embedding_dim=16, dropout=0.0, lr=1e-2, batch_size=8, epochs=30, patience=5)
    params, hist = train_selector(tagged[:40], tagged[40:], vocab, cfg)
    assert hist.best_f1 >= 0.95
    assert min(r["loss"] for r in hist.epochs[1:]) <= hist.epochs[0]["loss"]
    assert params.vocab is vocab
    again, _ = train_selector(tagged[:40], tagged[40:], vocab, cfg)
    for k, v in params.named_parameters().items():
        np.testing.assert_array_equal(v.data, again.named_parameters()[k].data)
    out = tmp_path / "pred.tsv"
    write_tag_predictions(out, tagged[40:42], params, vocab)
    first = out.read_text().splitlines()[0].split("\t")
    assert first[0] == tagged[40].report.findings[0] and first[1] in ("0", "1")


def test_training_rejects_empty():
    with pytest.raises(ContractError):
        train_selector([], [], tiny_vocab(), SelectorConfig())


def test_frozen_embeddings_are_untouched():
    tagged, vocab = _synthetic_tagged(10, 0)
    emb = np.random.default_rng(0).normal(size=(len(vocab), 8))
    cfg = SelectorConfig(hidden_size=4, lr=1e-2, epochs=1, batch_size=5)
    params, _ = train_selector(tagged, tagged, vocab, cfg, emb, trainable_embeddings=False)
    assert "embedding" not in params.trainable_parameters()
    np.testing.assert_array_equal(params.named_parameters()["embedding"].data, emb)
