"""Ontology-guided summarization of radiology findings into impressions."""

from .corpus import Report, Vocab, build_vocab, read_corpus, tokenize
from .evaluation import evaluate_corpus, paired_t_test, rouge_l, rouge_n
from .ontology import Lexicon, align_tags, match_ontology, selection_filter
from .selector import SelectorConfig, predict_salient, train_selector
from .summarizer import SummarizerConfig, generate, train_summarizer

__version__ = "0.1.0"

__all__ = [
    "Lexicon",
    "Report",
    "SelectorConfig",
    "SummarizerConfig",
    "Vocab",
    "align_tags",
    "build_vocab",
    "evaluate_corpus",
    "generate",
    "match_ontology",
    "paired_t_test",
    "predict_salient",
    "read_corpus",
    "rouge_l",
    "rouge_n",
    "selection_filter",
    "tokenize",
    "train_selector",
    "train_summarizer",
]
