"""Flat ``key = value`` run configuration.

Keys are ``<component>.<parameter>`` using the usual hyperparameter names of
each learner, plus a few top-level pipeline keys. Lines starting with ``#``
are comments. Unknown keys and malformed values are rejected.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterator, Mapping

from .gat import GatConfig
from .learners import KINDS, LearnerSpec
from .stacker import MetaConfig

MODALITIES = ("FP", "Desc", "GAT")

# key -> default; the default's type decides how values are parsed
DEFAULTS: dict[str, Any] = {
    "test_fraction": 0.2,
    "n_folds": 5,
    "select_k": 1024,
    "variance_threshold": 0.05,
    "modalities": "FP,Desc,GAT",
    "fp.path_bits": 1024,
    "fp.pathring_bits": 1024,
    "fp.max_path_len": 7,
    "gat.iterations": 40,
    "gat.learning_rate": 0.001,
    "gat.attention_heads": 8,
    "gat.hidden_size": 300,
    "gat.batch_size": 32,
    "gat.drop_out": 0.2,
    "gat.n_layers": 2,
    "svm.kernel": "linear",
    "svm.C": 1.0,
    "svm.epochs": 60,
    "rf.n_estimators": 120,
    "rf.max_depth": 17,
    "rf.min_samples_split": 2,
    "rf.min_samples_leaf": 1,
    "extratrees.n_estimators": 350,
    "extratrees.criterion": "gini",
    "extratrees.min_samples_split": 2,
    "extratrees.min_samples_leaf": 1,
    "histgbdt.objective": "logloss",
    "histgbdt.num_leaves": 31,
    "histgbdt.learning_rate": 0.1,
    "histgbdt.feature_fraction": 0.9,
    "histgbdt.n_estimators": 200,
    "obliviousgbdt.iterations": 40,
    "obliviousgbdt.learning_rate": 0.2,
    "obliviousgbdt.depth": 6,
    "dnn.hidden_neurons": 100,
    "dnn.learning_rate": 0.001,
    "dnn.batch_size": "auto",
    "dnn.epochs": 200,
}

_GAT_KEYS = {
    "gat.iterations": "epochs", "gat.learning_rate": "learning_rate",
    "gat.attention_heads": "heads", "gat.hidden_size": "hidden_size",
    "gat.batch_size": "batch_size", "gat.drop_out": "dropout", "gat.n_layers": "n_layers",
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


class PipelineConfig(Mapping[str, Any]):
    """Immutable view of the defaults overlaid with user values."""

    def __init__(self, overrides: Mapping[str, Any] | None = None):
        values = dict(DEFAULTS)
        for key, val in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse_value(key, val) if isinstance(val, str) else val
        self._values = values
        self._validate()

    def _validate(self) -> None:
        v = self._values
        if not 0.0 < v["test_fraction"] < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if v["select_k"] < 1:
            raise ConfigError("select_k must be positive")
        if v["dnn.batch_size"] != "auto":
            try:
                if int(v["dnn.batch_size"]) < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError("dnn.batch_size must be 'auto' or a positive integer") from None
        self.modalities  # noqa: B018  (raises on bad values)
        try:
            self.gat_config()
            self.learner_specs()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other) -> bool:
        return isinstance(other, PipelineConfig) and self._values == other._values

    def __hash__(self):
        return hash(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        overrides = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if key in overrides:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            overrides[key] = val
        return cls(overrides)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def replace(self, **changes: Any) -> "PipelineConfig":
        """Copy with changes; dotted keys are passed with ``__`` for the dot."""
        merged = dict(self._values)
        merged.update({k.replace("__", "."): v for k, v in changes.items()})
        return PipelineConfig(merged)

    def to_text(self) -> str:
        return "".join(f"{k} = {self._values[k]}\n" for k in DEFAULTS)

    @property
    def modalities(self) -> tuple[str, ...]:
        return parse_modalities(self._values["modalities"])

    def gat_config(self) -> GatConfig:
        return GatConfig(**{field: self._values[key] for key, field in _GAT_KEYS.items()})

    def learner_specs(self) -> list[LearnerSpec]:
        specs = []
        for kind in KINDS:
            prefix = kind + "."
            params = {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}
            specs.append(LearnerSpec(kind, params))
        return specs

    def meta_config(self) -> MetaConfig:
        bs = self._values["dnn.batch_size"]
        return MetaConfig(hidden=self._values["dnn.hidden_neurons"],
                          learning_rate=self._values["dnn.learning_rate"],
                          epochs=self._values["dnn.epochs"],
                          batch_size=None if bs == "auto" else int(bs))


def parse_modalities(text: str) -> tuple[str, ...]:
    """``"GAT,FP"`` -> ``("FP", "GAT")``; order is always FP, Desc, GAT."""
    parts = {p.strip() for p in str(text).split(",") if p.strip()}
    lookup = {m.lower(): m for m in MODALITIES}
    unknown = {p for p in parts if p.lower() not in lookup}
    if unknown:
        raise ConfigError(f"unknown modalities {sorted(unknown)}; choose from {MODALITIES}")
    chosen = {lookup[p.lower()] for p in parts}
    if not chosen:
        raise ConfigError("at least one modality is required")
    return tuple(m for m in MODALITIES if m in chosen)
