"""
promptad
========
Prompt-based fine-tuning of masked language models for Alzheimer's disease
detection from picture-description transcripts.

Provides:
- CHAT / ASR transcript ingestion and stratified fold plans
- Disfluency profiles and fluency-label thresholds
- Prompt templates, verbalizers and prompt / MLM fine-tuning
- Majority-vote ensembles, seed sweeps and result reports
"""

__version__ = "0.1.0"

from .config import RunConfig
from .corpus import DatasetManifest, SubjectRecord, build_manifest, discover_records, parse_chat
from .disfluency import DisfluencyLexicon, profile, select_threshold_by_correlation
from .ensemble import PRESETS, combine_runs, majority_vote
from .evaluation import AccuracyStats, Experiment, run_cv, run_test
from .prompting import PromptTemplate, Verbalizer, assemble, default_template
from .trainer import SystemRun, TrainConfig

__all__ = [
    "AccuracyStats",
    "DatasetManifest",
    "DisfluencyLexicon",
    "Experiment",
    "PRESETS",
    "PromptTemplate",
    "RunConfig",
    "SubjectRecord",
    "SystemRun",
    "TrainConfig",
    "Verbalizer",
    "assemble",
    "build_manifest",
    "combine_runs",
    "default_template",
    "discover_records",
    "majority_vote",
    "parse_chat",
    "profile",
    "run_cv",
    "run_test",
    "select_threshold_by_correlation",
]
