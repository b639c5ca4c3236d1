import numpy as np
import pytest

from ontosum import tensor as T
from ontosum.corpus import Report, Vocab
from ontosum.summarizer import SummarizerConfig, SummarizerParams


@pytest.fixture(autouse=True)
def _fp64():
    T.set_precision("fp64")
    yield
    T.set_precision("fp64")


def tiny_vocab() -> Vocab:
    return Vocab("small left pleural effusion edema no acute . and right".split())


def tiny_summarizer(mode="filtered", hidden=8, onto_hidden=4, emb=6, seed=0, scale=None) -> SummarizerParams:
    """Small summarizer; ``scale`` redraws every tensor from N(0, scale)."""
    cfg = SummarizerConfig(mode=mode, hidden_size=hidden, ontology_hidden=onto_hidden, embedding_dim=emb, seed=seed)
    params = SummarizerParams.init(len(tiny_vocab()), cfg)
    if scale is not None:
        rng = np.random.default_rng(seed + 100)
        for t in params.named_parameters().values():
            t.data[...] = rng.normal(0.0, scale, size=t.shape)
    return params


def report(findings: str, impression: str, rid: str = "r") -> Report:
    return Report.from_text(rid, findings, impression)


_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, [title, True, []])
    if call.excinfo is not None:
        entry[1] = False
        entry[2].append(f"{item.name}: {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, notes = _CRITERIA[number]
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}"
        if notes:
            line += " (" + "; ".join(notes) + ")"
        terminalreporter.write_line(line)
