"""Synthetic radiology-style corpus for tests and desk runs.

Rule: each findings text mixes positive abnormal findings ("there is a small
left pleural effusion ."), negated findings ("no pneumothorax .") and routine
normal statements.  The impression lists the positive findings (location +
term) in findings order, joined by "and".  With the bundled lexicon, the copy
tags are therefore exactly the words of the positive findings.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import Report

ABNORMAL = [
    "pleural effusion", "pneumothorax", "consolidation", "atelectasis", "pulmonary edema",
    "nodule", "opacity", "pneumonia", "mass", "emphysema", "fracture", "granuloma",
    "infiltrate", "scarring", "cavitation", "calcification", "lymphadenopathy", "hernia",
]
LOCATIONS = ["left", "right", "bilateral", "basilar", "apical", "perihilar", "retrocardiac"]
SIZES = ["small", "moderate", "large", "tiny", "mild"]
NORMAL = [
    "the heart size is normal .",
    "the mediastinal contours are unremarkable .",
    "osseous structures are intact .",
    "the trachea is midline .",
    "the hila are within normal limits .",
    "the aorta is tortuous .",
]
NORMAL_TERMS = ["heart", "mediastinal", "osseous", "trachea", "hila", "aorta"]
POSITIVE_TEMPLATES = [
    "there is a {size} {loc} {term} .",
    "{size} {loc} {term} is seen .",
    "{loc} {term} is present .",
    "again noted is a {size} {loc} {term} .",
]
NEGATIVE_TEMPLATES = ["no {term} .", "there is no {term} .", "no evidence of {term} ."]
NO_ACUTE = "no acute cardiopulmonary process ."


def lexicon_terms() -> list[str]:
    return ABNORMAL + LOCATIONS + NORMAL_TERMS


@dataclass
class SyntheticConfig:
    n_reports: int = 100
    min_positive: int = 1
    max_positive: int = 3
    min_negative: int = 1
    max_negative: int = 3
    n_normal: int = 2
    seed: int = 0


def generate_reports(cfg: SyntheticConfig) -> list[Report]:
    rng = random.Random(cfg.seed)
    reports = []
    for k in range(cfg.n_reports):
        n_pos = rng.randint(cfg.min_positive, cfg.max_positive)
        n_neg = rng.randint(cfg.min_negative, cfg.max_negative)
        terms = rng.sample(ABNORMAL, n_pos + n_neg)
        positives = [(t, rng.choice(LOCATIONS)) for t in terms[:n_pos]]
        sentences = []
        for term, loc in positives:
            tpl = rng.choice(POSITIVE_TEMPLATES)
            sentences.append(("pos", (term, loc), tpl.format(size=rng.choice(SIZES), loc=loc, term=term)))
        for term in terms[n_pos:]:
            sentences.append(("neg", None, rng.choice(NEGATIVE_TEMPLATES).format(term=term)))
        for s in rng.sample(NORMAL, cfg.n_normal):
            sentences.append(("normal", None, s))
        rng.shuffle(sentences)
        ordered = [payload for kind, payload, _ in sentences if kind == "pos"]
        findings = " ".join(s for _, _, s in sentences)
        if ordered:
            impression = " and ".join(f"{loc} {term}" for term, loc in ordered) + " ."
        else:
            impression = NO_ACUTE
        reports.append(Report.from_text(f"syn-{cfg.seed}-{k:05d}", findings, impression))
    return reports
