"""
promptad.config
---------------
Declarative run configuration: one YAML file, then environment overrides,
then command-line flags (flags win). Unknown keys are rejected and
`validate()` reports every problem at once.

    data_root: data/adress
    source: manual
    diagnosis_template: "The diagnosis is <MASK>."
    train:
      paradigm: prompt
      prompt_position: back
    seeds: [0, 1, 2]
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union
import os

import yaml

from .constants import (
    ASR, DEFAULT_DIAGNOSIS_TEMPLATE, DEFAULT_FOLDS, DEFAULT_LABEL_WORDS, DEFAULT_MULTI_TASK_TEMPLATE,
    DEFAULT_SEEDS, MANUAL, POOL_SUB_DECISIONS, SOURCES, TIE_POLICIES,
)
from .disfluency import DisfluencyLexicon
from .ensemble import PRESETS
from .errors import ConfigError, PromptADError
from .prompting import PromptTemplate, Verbalizer
from .trainer import ClassifierSpec, TrainConfig

AUTO = "auto"
DISFL_SUFFIX = "+disfl"

_SOURCE_ALIASES = {"manual": MANUAL, "asr": ASR}
_BACKEND_KEYS = {"mode", "dim", "hidden", "vocab_size", "pooling", "max_len", "device"}


@dataclass
class RunConfig:
    data_root: str = ""
    source: str = MANUAL
    labels_file: str = "labels.tsv"
    output_dir: str = "runs"
    folds: int = DEFAULT_FOLDS
    fold_seed: int = 0
    diagnosis_template: str = DEFAULT_DIAGNOSIS_TEMPLATE
    multi_task_template: str = DEFAULT_MULTI_TASK_TEMPLATE
    label_words: Dict[str, Dict[str, str]] = field(default_factory=lambda: {t: dict(m) for t, m in DEFAULT_LABEL_WORDS.items()})
    lexicon: Dict[str, Any] = field(default_factory=dict)
    threshold: Union[str, int] = AUTO
    reference_profiles: str = ""
    train: Dict[str, Any] = field(default_factory=dict)
    classifier: Dict[str, Any] = field(default_factory=dict)
    backend: Dict[str, Any] = field(default_factory=dict)
    presets: List[str] = field(default_factory=lambda: list(PRESETS))
    tie_policy: str = POOL_SUB_DECISIONS
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    workers: int = 1

    # --- loading ---
    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        cfg = cls(**dict(data))
        source = str(cfg.source)
        cfg.source = _SOURCE_ALIASES.get(source.lower(), source)
        return cfg

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError([f"{path}: {e}"]) from e
        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "RunConfig":
        cfg = cls.from_yaml(path) if path else cls()
        env_root = os.getenv("PROMPTAD_DATA_ROOT")
        if env_root:
            cfg.data_root = env_root
        return cfg

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied; `train.*` keys go into `train`."""
        cfg = replace(self, train=dict(self.train), backend=dict(self.backend))
        for key, value in overrides.items():
            if value is None:
                continue
            if key.startswith("train."):
                cfg.train[key[len("train."):]] = value
            elif key.startswith("backend."):
                cfg.backend[key[len("backend."):]] = value
            else:
                setattr(cfg, key, value)
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    # --- derived objects ---
    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": seed})

    def classifier_spec(self) -> ClassifierSpec:
        return ClassifierSpec(**self.classifier)

    def disfluency_lexicon(self) -> DisfluencyLexicon:
        return DisfluencyLexicon.from_dict(self.lexicon)

    def verbalizer(self) -> Verbalizer:
        return Verbalizer.from_dict(self.label_words)

    def template(self, multi_task: bool) -> PromptTemplate:
        return PromptTemplate.parse(self.multi_task_template if multi_task else self.diagnosis_template)

    def condition(self, multi_task: bool) -> str:
        return self.source.lower() + (DISFL_SUFFIX if multi_task else "")

    # --- validation ---
    def problems(self) -> List[str]:
        out: List[str] = []
        if self.source not in SOURCES:
            out.append(f"source must be one of {', '.join(s.lower() for s in SOURCES)}, got {self.source!r}")
        if self.folds < 2:
            out.append(f"folds must be >= 2, got {self.folds}")
        if self.workers < 1:
            out.append(f"workers must be >= 1, got {self.workers}")
        if not self.seeds:
            out.append("seeds must not be empty")
        elif len(set(self.seeds)) != len(self.seeds):
            out.append("seeds must be unique")
        if self.tie_policy not in TIE_POLICIES:
            out.append(f"tie_policy must be one of {', '.join(TIE_POLICIES)}")
        if not (self.threshold == AUTO or (isinstance(self.threshold, int) and self.threshold >= 0)):
            out.append(f"threshold must be 'auto' or a non-negative integer, got {self.threshold!r}")
        bad_presets = [p for p in self.presets if p not in PRESETS]
        if bad_presets:
            out.append(f"unknown preset(s): {', '.join(bad_presets)}")
        bad_backend = sorted(set(self.backend) - _BACKEND_KEYS)
        if bad_backend:
            out.append(f"unknown backend key(s): {', '.join(bad_backend)}")

        for label, build in (
            ("diagnosis_template", lambda: self.template(False)),
            ("multi_task_template", lambda: self.template(True)),
            ("lexicon", self.disfluency_lexicon),
            ("classifier", self.classifier_spec),
        ):
            try:
                build()
            except (PromptADError, ValueError, TypeError) as e:
                out.append(f"{label}: {e}")
        try:
            out += [f"train.{p}" for p in self.train_config().problems()]
        except ConfigError as e:
            out += e.problems
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self
