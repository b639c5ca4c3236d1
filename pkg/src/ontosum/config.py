"""Run configuration: flat ``key = value`` files with ``#`` comments, overridable from the command line."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    corpus: str = ""
    lexicon: str = ""
    embeddings: str = ""
    output_dir: str = "runs"
    tagged: str = ""
    selector_checkpoint: str = ""
    summarizer_checkpoint: str = ""
    input: str = ""
    generations: str = ""
    generations_b: str = ""
    # data
    split_ratios: str = "0.8,0.1,0.1"
    min_freq: int = 1
    max_vocab: int = 0  # 0 = unlimited
    max_findings: int = 500
    max_impression: int = 50
    trainable_embeddings: bool = True
    # selector
    selector_hidden: int = 256
    selector_layers: int = 2
    selector_dropout: float = 0.2
    selector_lr: float = 2e-5
    selector_epochs: int = 50
    selector_patience: int = 5
    # summarizer
    mode: str = "filtered"
    embedding_dim: int = 100
    hidden_size: int = 200
    encoder_layers: int = 2
    ontology_hidden: int = 100
    dropout: float = 0.0
    lr: float = 1e-3
    epochs: int = 30
    patience: int = 0  # 0 = no early stopping
    eval_every: int = 1
    # shared training / decoding
    batch_size: int = 16
    clip_norm: float = 5.0
    epsilon: float = 0.5
    beam_size: int = 4
    max_len: int = 50
    length_penalty: float = 1.0
    seed: int = 0
    precision: str = "fp64"
    report_format: str = "csv"
    # synthetic corpus
    synth_reports: int = 250

    def ratios(self) -> tuple[float, float, float]:
        try:
            parts = tuple(float(x) for x in self.split_ratios.split(","))
        except ValueError:
            raise ConfigError(f"split_ratios must be comma-separated floats, got {self.split_ratios!r}") from None
        if len(parts) != 3:
            raise ConfigError(f"split_ratios needs three values, got {self.split_ratios!r}")
        return parts  # type: ignore[return-value]

    def validate(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.mode not in ("filtered", "all-ontology", "plain"):
            raise ConfigError(f"mode must be filtered, all-ontology or plain, got {self.mode!r}")
        if self.precision not in ("fp64", "fp32"):
            raise ConfigError(f"precision must be fp64 or fp32, got {self.precision!r}")
        if self.report_format not in ("csv", "json"):
            raise ConfigError(f"report_format must be csv or json, got {self.report_format!r}")
        r = self.ratios()
        if any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be non-negative and sum to 1, got {self.split_ratios!r}")

    def require(self, *names: str) -> None:
        missing = [n for n in names if not getattr(self, n)]
        if missing:
            raise ConfigError(f"missing required setting(s): {', '.join(missing)}")

    def out(self, name: str) -> Path:
        d = Path(self.output_dir)
        d.mkdir(parents=True, exist_ok=True)
        return d / name

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str) -> Any:
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """File values first, then non-None ``overrides``; logs which keys kept their defaults."""
    values: dict[str, Any] = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        values.update(parse_config_text(text, str(p)))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    cfg = RunConfig(**values)
    cfg.validate()
    defaults = sorted(set(_FIELDS) - set(values))
    logger.info("config defaults used for: %s", ", ".join(defaults))
    return cfg
