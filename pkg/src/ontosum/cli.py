"""``ontosum`` command-line entry point.

Subcommands: synth, label, train-selector, train-summarizer, summarize,
evaluate, sweep-epsilon.  Exit codes: 0 ok, 1 usage/config, 2 data/format,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError, config_hash, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .corpus import FormatError, Report, Vocab, build_vocab, load_embeddings, read_corpus, split, write_corpus
from .evaluation import (
    EvaluationReport,
    compare_systems,
    emit_report,
    evaluate_generations,
    read_generations,
    rouge_n,
)
from .ontology import Lexicon, TaggedReport, align_tags, load_lexicon, ontology_words
from .selector import SelectorConfig, SelectorParams, train_selector, write_tag_predictions
from .summarizer import SummarizerConfig, SummarizerParams, generate, ontology_input, train_summarizer
from .synthetic import SyntheticConfig, generate_reports, lexicon_terms

logger = logging.getLogger("ontosum")


class VocabMismatch(FormatError):
    pass


# ---------------------------------------------------------------- helpers


def _vocab_from_tokens(tokens: Sequence[str]) -> Vocab:
    v = Vocab(tokens[4:])
    if v.itos != list(tokens):
        raise CheckpointError("checkpoint vocabulary is malformed")
    return v


def _train_split(cfg: RunConfig, reports: list[Report]) -> tuple[list[Report], list[Report], list[Report]]:
    return split(reports, cfg.ratios(), cfg.seed)


def _vocab(cfg: RunConfig, train: list[Report]) -> Vocab:
    return build_vocab(train, cfg.min_freq, cfg.max_vocab or None)


def _embedding_matrix(cfg: RunConfig, vocab: Vocab) -> np.ndarray | None:
    if not cfg.embeddings:
        return None
    table = load_embeddings(cfg.embeddings, vocab, np.random.default_rng(cfg.seed), cfg.trainable_embeddings)
    print(f"embedding coverage: {table.coverage:.3f} ({table.found}/{len(vocab)})")
    return table.matrix


def _read_corpus(cfg: RunConfig, path: str) -> list[Report]:
    return read_corpus(path, cfg.max_findings, cfg.max_impression)


def _lexicon(cfg: RunConfig) -> Lexicon:
    cfg.require("lexicon")
    return load_lexicon(cfg.lexicon)


def _selector_path(cfg: RunConfig) -> Path:
    return Path(cfg.selector_checkpoint) if cfg.selector_checkpoint else Path(cfg.output_dir) / "selector.ckpt"


def _metadata(cfg: RunConfig, vocab: Vocab, **extra) -> dict:
    conf = cfg.as_dict()
    return {"config": conf, "config_hash": config_hash(conf), "vocab_hash": vocab.hash(), "seed": cfg.seed, **extra}


def _check_vocab(ckpt: Checkpoint) -> Vocab:
    vocab = _vocab_from_tokens(ckpt.vocab)
    if ckpt.metadata.get("vocab_hash") not in (None, vocab.hash()):
        raise VocabMismatch("checkpoint vocabulary does not match its recorded hash")
    return vocab


def _write_rows(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def save_selector(path: str | Path, params: SelectorParams, vocab: Vocab, metadata: dict) -> None:
    tensors = {k: v.data for k, v in params.named_parameters().items()}
    save_checkpoint(Checkpoint("selector", list(vocab.itos), tensors, metadata), path)


def load_selector(path: str | Path) -> SelectorParams:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "selector":
        raise CheckpointError(f"{path} holds a {ckpt.kind} checkpoint, expected selector")
    params = SelectorParams.from_named({k: T.Tensor(v) for k, v in ckpt.tensors.items()})
    params.vocab = _check_vocab(ckpt)
    return params


def save_summarizer(path: str | Path, params: SummarizerParams, vocab: Vocab, metadata: dict) -> None:
    tensors = {k: v.data for k, v in params.named_parameters().items()}
    save_checkpoint(Checkpoint("summarizer", list(vocab.itos), tensors, {"mode": params.mode, **metadata}), path)


def load_summarizer(path: str | Path) -> tuple[SummarizerParams, Vocab, dict]:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "summarizer":
        raise CheckpointError(f"{path} holds a {ckpt.kind} checkpoint, expected summarizer")
    tensors = {k: T.Tensor(v) for k, v in ckpt.tensors.items()}
    return SummarizerParams(tensors, ckpt.metadata["mode"]), _check_vocab(ckpt), ckpt.metadata


def _selector_config(cfg: RunConfig) -> SelectorConfig:
    return SelectorConfig(
        hidden_size=cfg.selector_hidden,
        num_layers=cfg.selector_layers,
        embedding_dim=cfg.embedding_dim,
        dropout=cfg.selector_dropout,
        lr=cfg.selector_lr,
        epochs=cfg.selector_epochs,
        batch_size=cfg.batch_size,
        patience=cfg.selector_patience,
        clip_norm=cfg.clip_norm or None,
        seed=cfg.seed,
    )


def _summarizer_config(cfg: RunConfig) -> SummarizerConfig:
    return SummarizerConfig(
        mode=cfg.mode,
        embedding_dim=cfg.embedding_dim,
        hidden_size=cfg.hidden_size,
        encoder_layers=cfg.encoder_layers,
        ontology_hidden=cfg.ontology_hidden,
        dropout=cfg.dropout,
        lr=cfg.lr,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        clip_norm=cfg.clip_norm or None,
        epsilon=cfg.epsilon,
        beam_size=cfg.beam_size,
        max_len=cfg.max_len,
        length_penalty=cfg.length_penalty,
        eval_every=cfg.eval_every,
        patience=cfg.patience or None,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------- subcommands


def cmd_synth(cfg: RunConfig) -> tuple[Path, Path]:
    reports = generate_reports(SyntheticConfig(n_reports=cfg.synth_reports, seed=cfg.seed))
    corpus = Path(cfg.corpus) if cfg.corpus else cfg.out("corpus.jsonl")
    lexicon = Path(cfg.lexicon) if cfg.lexicon else cfg.out("lexicon.txt")
    corpus.parent.mkdir(parents=True, exist_ok=True)
    lexicon.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, reports)
    lexicon.write_text("# synthetic radiology lexicon\n" + "\n".join(lexicon_terms()) + "\n", encoding="utf-8")
    print(f"wrote {len(reports)} reports to {corpus} and {len(lexicon_terms())} terms to {lexicon}")
    return corpus, lexicon


def cmd_label(cfg: RunConfig) -> Path:
    cfg.require("corpus", "lexicon")
    reports = _read_corpus(cfg, cfg.corpus)
    lexicon = _lexicon(cfg)
    out = Path(cfg.tagged) if cfg.tagged else cfg.out("tagged.jsonl")
    pos = total = 0
    with open(out, "w", encoding="utf-8") as fh:
        for r in reports:
            tr = align_tags(r, lexicon)
            pos += sum(tr.tags)
            total += len(tr.tags)
            fh.write(json.dumps({"id": r.id, "findings": r.findings, "impression": r.impression, "tags": tr.tags}) + "\n")
    rate = pos / total if total else 0.0
    print(f"labeled {len(reports)} reports -> {out}; tag-positive rate {rate:.4f} ({pos}/{total})")
    return out


def read_tagged(path: str | Path) -> list[TaggedReport]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: malformed JSON @ line {lineno}: {exc.msg}") from None
            for key in ("id", "findings", "impression", "tags"):
                if key not in obj:
                    raise FormatError(f"{path}: missing field: {key} @ line {lineno}")
            try:
                out.append(TaggedReport(Report(str(obj["id"]), obj["findings"], obj["impression"]), obj["tags"]))
            except ValueError as exc:
                raise FormatError(f"{path} @ line {lineno}: {exc}") from None
    return out


def cmd_train_selector(cfg: RunConfig) -> Path:
    tagged_path = cfg.tagged or str(cfg.out("tagged.jsonl"))
    tagged = read_tagged(tagged_path)
    by_id = {t.report.id: t for t in tagged}
    train, dev, _ = _train_split(cfg, [t.report for t in tagged])
    vocab = _vocab(cfg, train)
    emb = _embedding_matrix(cfg, vocab)
    params, history = train_selector(
        [by_id[r.id] for r in train], [by_id[r.id] for r in dev], vocab, _selector_config(cfg), emb, cfg.trainable_embeddings
    )
    cfg.out("")
    out = _selector_path(cfg)
    save_selector(out, params, vocab, _metadata(cfg, vocab, epoch=history.best_epoch, dev_f1=history.best_f1))
    _write_rows(cfg.out("selector_metrics.csv"), history.epochs)
    write_tag_predictions(cfg.out("selector_dev_predictions.tsv"), [by_id[r.id] for r in dev], params, vocab)
    print(f"selector: best dev F1 {history.best_f1:.4f} at epoch {history.best_epoch}; saved {out}")
    return out


def cmd_train_summarizer(cfg: RunConfig) -> Path:
    cfg.require("corpus")
    if cfg.mode == "filtered" and not _selector_path(cfg).exists():
        raise T.ContractError(f"filtered mode needs a trained selector; {_selector_path(cfg)} not found")
    reports = _read_corpus(cfg, cfg.corpus)
    train, dev, _ = _train_split(cfg, reports)
    vocab = _vocab(cfg, train)
    lexicon = _lexicon(cfg) if cfg.mode != "plain" else None
    selector = load_selector(_selector_path(cfg)) if cfg.mode == "filtered" else None
    emb = _embedding_matrix(cfg, vocab)
    params, history = train_summarizer(
        train, dev, vocab, _summarizer_config(cfg), lexicon, selector, emb, cfg.trainable_embeddings
    )
    out = Path(cfg.summarizer_checkpoint) if cfg.summarizer_checkpoint else cfg.out(f"summarizer-{cfg.mode}.ckpt")
    save_summarizer(
        out, params, vocab, _metadata(cfg, vocab, epsilon=cfg.epsilon, epoch=history.best_epoch, dev_rouge1=history.best_rouge1)
    )
    _write_rows(cfg.out(f"summarizer-{cfg.mode}_metrics.csv"), history.epochs)
    print(f"summarizer ({cfg.mode}): best dev ROUGE-1 {history.best_rouge1:.4f} at epoch {history.best_epoch}; saved {out}")
    return out


def _load_for_inference(cfg: RunConfig):
    ckpt_path = cfg.summarizer_checkpoint or str(cfg.out(f"summarizer-{cfg.mode}.ckpt"))
    params, vocab, meta = load_summarizer(ckpt_path)
    if cfg.corpus:
        train, _, _ = _train_split(cfg, _read_corpus(cfg, cfg.corpus))
        if _vocab(cfg, train).hash() != vocab.hash():
            raise VocabMismatch(f"vocabulary of {ckpt_path} does not match the one built from {cfg.corpus}")
    mode = meta["mode"]
    lexicon = _lexicon(cfg) if mode != "plain" else None
    selector = None
    if mode == "filtered":
        selector = load_selector(_selector_path(cfg))
    return params, vocab, mode, lexicon, selector


def _inputs(cfg: RunConfig) -> list[Report]:
    if cfg.input:
        return _read_corpus(cfg, cfg.input)
    cfg.require("corpus")
    return _train_split(cfg, _read_corpus(cfg, cfg.corpus))[2]


def _generate_all(cfg, reports, params, vocab, mode, lexicon, selector, epsilon) -> list[dict]:
    rows = []
    for r in reports:
        if not r.findings:
            gen: list[str] = []
        else:
            onto = ontology_words(ontology_input(r, mode, lexicon, selector, vocab, epsilon))
            gen = generate(r.findings, onto, params, vocab, cfg.beam_size, cfg.max_len, cfg.length_penalty)
        rows.append({"id": r.id, "generated": " ".join(gen), "reference": " ".join(r.impression)})
    return rows


def cmd_summarize(cfg: RunConfig) -> Path:
    params, vocab, mode, lexicon, selector = _load_for_inference(cfg)
    rows = _generate_all(cfg, _inputs(cfg), params, vocab, mode, lexicon, selector, cfg.epsilon)
    out = Path(cfg.generations) if cfg.generations else cfg.out(f"generations-{mode}.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(rows)} generations to {out}")
    return out


def cmd_evaluate(cfg: RunConfig) -> EvaluationReport:
    cfg.require("generations")
    system = evaluate_generations(read_generations(cfg.generations))
    if cfg.generations_b:
        report = compare_systems(system, evaluate_generations(read_generations(cfg.generations_b)))
    else:
        report = EvaluationReport(system)
    out = emit_report(report, cfg.out(f"report.{cfg.report_format}"), cfg.report_format)
    m = system.means
    print(f"RG-1 {m['rg1']:.4f}  RG-2 {m['rg2']:.4f}  RG-L {m['rgl']:.4f}  (n={len(system.examples)})")
    for metric, c in report.comparisons.items():
        print(f"{metric}: mean diff {c.mean_diff:+.4f}  t={c.t:.4f}  df={c.df}  p={c.p:.4g}")
    print(f"report written to {out}")
    return report


def cmd_sweep_epsilon(cfg: RunConfig) -> list[dict]:
    params, vocab, mode, lexicon, selector = _load_for_inference(cfg)
    if mode != "filtered":
        raise T.ContractError("sweep-epsilon needs a filtered-mode summarizer")
    cfg.require("corpus")
    dev = _train_split(cfg, _read_corpus(cfg, cfg.corpus))[1]
    if not dev:
        raise T.ContractError("the dev split is empty")
    rows = []
    for k in range(1, 10):
        eps = k / 10
        gens = _generate_all(cfg, dev, params, vocab, mode, lexicon, selector, eps)
        score = float(np.mean([rouge_n(g["generated"].split(), g["reference"].split(), 1).f1 for g in gens]))
        rows.append({"epsilon": eps, "dev_rouge1": score})
        print(f"epsilon {eps:.1f}: dev ROUGE-1 {score:.4f}")
    best = max(rows, key=lambda r: r["dev_rouge1"])
    print(f"best epsilon {best['epsilon']:.1f}")
    _write_rows(cfg.out("sweep_epsilon.csv"), rows)
    return rows


COMMANDS = {
    "synth": cmd_synth,
    "label": cmd_label,
    "train-selector": cmd_train_selector,
    "train-summarizer": cmd_train_summarizer,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "sweep-epsilon": cmd_sweep_epsilon,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ontosum", description="Ontology-aware clinical report summarization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--mode", choices=["filtered", "all-ontology", "plain"])
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key (repeatable)"
        )
        for key in ("corpus", "lexicon", "embeddings", "output-dir", "input", "generations", "generations-b",
                    "selector-checkpoint", "summarizer-checkpoint", "tagged"):
            p.add_argument(f"--{key}")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "set", "verbose")}
    try:
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        cfg = load_config(args.config, overrides)
        T.set_precision(cfg.precision)
        COMMANDS[args.command](cfg)
    except (ConfigError, T.ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except T.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
