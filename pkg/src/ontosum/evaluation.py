"""ROUGE-1/2/L scoring, corpus aggregation and paired significance testing."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import FormatError, tokenize
from .tensor import ContractError

METRICS = ("rg1", "rg2", "rgl")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, cand_total: int, ref_total: int) -> "RougeScore":
        p = overlap / cand_total if cand_total else 0.0
        r = overlap / ref_total if ref_total else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


# ---------------------------------------------------------------- corpus level


@dataclass
class ExampleScores:
    id: str
    rg1: RougeScore
    rg2: RougeScore
    rgl: RougeScore

    def f1s(self) -> dict[str, float]:
        return {"rg1": self.rg1.f1, "rg2": self.rg2.f1, "rgl": self.rgl.f1}


@dataclass
class CorpusScores:
    examples: list[ExampleScores]
    means: dict[str, float]

    def vector(self, metric: str) -> np.ndarray:
        return np.array([getattr(e, metric).f1 for e in self.examples])

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.examples]


def score_pair(id: str, candidate: Sequence[str], reference: Sequence[str]) -> ExampleScores:
    return ExampleScores(id, rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference))


def evaluate_corpus(pairs: Sequence[tuple]) -> CorpusScores:
    """Score ``(candidate, reference)`` or ``(id, candidate, reference)`` pairs; means of per-example F1."""
    if not pairs:
        raise ContractError("evaluate_corpus needs at least one pair")
    examples = []
    for k, pair in enumerate(pairs):
        if len(pair) == 3:
            examples.append(score_pair(str(pair[0]), pair[1], pair[2]))
        else:
            examples.append(score_pair(str(k), pair[0], pair[1]))
    means = {m: float(np.mean([getattr(e, m).f1 for e in examples])) for m in METRICS}
    return CorpusScores(examples, means)


# ---------------------------------------------------------------- t distribution


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-16) -> float:
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


@dataclass
class SystemComparison:
    scores_a: list[float]
    scores_b: list[float]
    mean_diff: float
    t: float
    p: float
    df: int
    degenerate: bool = False


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> SystemComparison:
    """Two-sided paired t-test on ``a - b``."""
    a, b = np.asarray(scores_a, dtype=float), np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ContractError(f"paired_t_test needs equal-length vectors of length >= 2, got {a.shape} and {b.shape}")
    d = a - b
    n = len(d)
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return SystemComparison(a.tolist(), b.tolist(), 0.0, 0.0, 1.0, df, degenerate=True)
        return SystemComparison(a.tolist(), b.tolist(), mean, math.copysign(math.inf, mean), 0.0, df, True)
    t = mean / (sd / math.sqrt(n))
    return SystemComparison(a.tolist(), b.tolist(), mean, t, t_two_sided_p(t, df), df)


# ---------------------------------------------------------------- reports


@dataclass
class EvaluationReport:
    system: CorpusScores
    other: CorpusScores | None = None
    comparisons: dict[str, SystemComparison] = field(default_factory=dict)

    def summary(self) -> dict:
        out: dict = {"n": len(self.system.examples), "mean": dict(self.system.means)}
        if self.other is not None:
            out["mean_b"] = dict(self.other.means)
        if self.comparisons:
            out["comparison"] = {
                m: {"mean_diff": c.mean_diff, "t": c.t, "p": c.p, "df": c.df, "degenerate": c.degenerate}
                for m, c in self.comparisons.items()
            }
        return out


def compare_systems(a: CorpusScores, b: CorpusScores) -> EvaluationReport:
    """Align ``b`` to ``a`` by id and run a paired t-test per metric."""
    ids_a, ids_b = set(a.ids), set(b.ids)
    if ids_a != ids_b:
        missing_b = sorted(ids_a - ids_b)
        missing_a = sorted(ids_b - ids_a)
        raise FormatError(f"example ids differ: missing from second system {missing_b}, missing from first {missing_a}")
    by_id = {e.id: e for e in b.examples}
    b_aligned = CorpusScores([by_id[i] for i in a.ids], b.means)
    comps = {m: paired_t_test(a.vector(m), b_aligned.vector(m)) for m in METRICS}
    return EvaluationReport(a, b_aligned, comps)


def _num(x: float) -> str:
    return repr(float(x))


def emit_report(report: EvaluationReport, path: str | Path, fmt: str = "csv") -> Path:
    """Write per-example F1 rows plus a summary block.

    CSV summary rows use ``#``-prefixed ids (``#mean``, ``#mean_b``,
    ``#mean_diff``, ``#t``, ``#p``, ``#df``) in the ``id`` column so the file
    stays a single rectangular table.
    """
    path = Path(path)
    try:
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["id", *METRICS])
                for e in report.system.examples:
                    w.writerow([e.id, *(_num(v) for v in e.f1s().values())])
                w.writerow(["#mean", *(_num(report.system.means[m]) for m in METRICS)])
                if report.other is not None:
                    w.writerow(["#mean_b", *(_num(report.other.means[m]) for m in METRICS)])
                if report.comparisons:
                    for key in ("mean_diff", "t", "p", "df"):
                        w.writerow([f"#{key}", *(_num(getattr(report.comparisons[m], key)) for m in METRICS)])
        elif fmt == "json":
            doc = {
                "examples": [{"id": e.id, **e.f1s()} for e in report.system.examples],
                "details": [
                    {"id": e.id, **{m: asdict(getattr(e, m)) for m in METRICS}} for e in report.system.examples
                ],
                "summary": report.summary(),
            }
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2)
        else:
            raise ContractError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc.strerror}") from exc
    return path


def read_report_csv(path: str | Path) -> tuple[list[dict], dict[str, dict[str, float]]]:
    """Parse :func:`emit_report` CSV output into (rows, summary)."""
    rows, summary = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            vals = {m: float(rec[m]) for m in METRICS}
            if rec["id"].startswith("#"):
                summary[rec["id"][1:]] = vals
            else:
                rows.append({"id": rec["id"], **vals})
    return rows, summary


def read_generations(path: str | Path) -> list[dict]:
    """Line-delimited ``{id, generated, reference}``; string fields are tokenized."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON @ line {lineno}: {exc.msg}") from None
            for key in ("id", "generated", "reference"):
                if key not in obj:
                    raise FormatError(f"missing field: {key} @ line {lineno}")
            gen, ref = obj["generated"], obj["reference"]
            out.append({
                "id": str(obj["id"]),
                "generated": tokenize(gen) if isinstance(gen, str) else list(gen),
                "reference": tokenize(ref) if isinstance(ref, str) else list(ref),
            })
    return out


def evaluate_generations(records: Sequence[dict]) -> CorpusScores:
    return evaluate_corpus([(r["id"], r["generated"], r["reference"]) for r in records])
