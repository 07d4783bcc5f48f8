"""
promptad.evaluation
-------------------
Cross-validation, seed sweeps, accuracy statistics and report tables.

A CV run trains one model per fold and evaluates it on the held-out fold. The
fold runs are merged into one `SystemRun` covering every train subject, so CV
and test runs go through the same voting, combination and statistics code.
"""

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .backend.base import MaskedLMBackend
from .constants import (
    CONDITIONS, CV, MLM, POOL_SUB_DECISIONS, PROMPT, STATS_HEADER, TEST_SPLIT,
)
from .corpus import DatasetManifest, SubjectRecord
from .ensemble import accuracy, report_order, vote_run
from .errors import EvaluationError, PromptADError
from .logger import get_logger
from .prompting import PromptTemplate, Verbalizer, validate_verbalizer
from .trainer import (
    ClassifierSpec, EpochDecisions, SystemRun, TrainConfig,
    run_baseline_classification, run_mlm_training, run_prompt_training,
)
from .utils import format_float

log = get_logger("promptad.evaluation")

T = TypeVar("T")

# builds a fresh backend for one run from (seed, training records)
BackendMaker = Callable[[int, Sequence[SubjectRecord]], MaskedLMBackend]


@dataclass(frozen=True)
class AccuracyStats:
    mean: float
    std: float
    best: float
    n_runs: int

    @classmethod
    def from_accuracies(cls, values: Iterable[float], ddof: int = 0) -> "AccuracyStats":
        arr = np.asarray(list(values), dtype=float)
        if arr.size == 0:
            raise EvaluationError("statistics need at least one run")
        std = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
        return cls(mean=float(arr.mean()), std=std, best=float(arr.max()), n_runs=int(arr.size))

    def percentages(self) -> Tuple[str, str, str]:
        return f"{100 * self.mean:.2f}", f"{100 * self.std:.2f}", f"{100 * self.best:.2f}"


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------
@dataclass
class Experiment:
    """Everything needed to train and decide for one system at any seed."""
    config: TrainConfig
    make_backend: BackendMaker
    template: Optional[PromptTemplate] = None
    verbalizer: Verbalizer = field(default_factory=Verbalizer)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    fluency_labels: Optional[Mapping[str, str]] = None
    tie_policy: str = POOL_SUB_DECISIONS
    checkpoint_dir: Optional[Path] = None

    def with_seed(self, seed: int) -> "Experiment":
        return replace(self, config=replace(self.config, seed=seed))

    def train_and_decide(self, train: Sequence[SubjectRecord], eval_records: Sequence[SubjectRecord]) -> SystemRun:
        backend = self.make_backend(self.config.seed, train)
        if self.config.paradigm == PROMPT:
            if self.template is None:
                raise EvaluationError("prompt experiments need a template", self.config.seed)
            template = self.template.with_position(self.config.prompt_position)
            verbalizer = validate_verbalizer(self.verbalizer, backend.tokenizer)
            return run_prompt_training(
                self.config, train, eval_records, template, verbalizer,
                backend=backend, fluency_labels=self.fluency_labels,
            )
        if self.config.paradigm == MLM:
            training = run_mlm_training(self.config, train, backend=backend, checkpoint_dir=self.checkpoint_dir)
            return run_baseline_classification(
                training.checkpoints, train, eval_records, self.classifier, backend=backend, config=self.config,
            )
        raise EvaluationError(f"unknown paradigm {self.config.paradigm!r}", self.config.seed)


@dataclass
class CvResult:
    run: SystemRun
    fold_correct: List[int]
    fold_sizes: List[int]

    @property
    def accuracy(self) -> float:
        """Correct voted decisions pooled over every train subject."""
        return sum(self.fold_correct) / sum(self.fold_sizes)

    @property
    def fold_mean_accuracy(self) -> float:
        return float(np.mean([c / n for c, n in zip(self.fold_correct, self.fold_sizes)]))


def merge_fold_runs(config: TrainConfig, fold_runs: Sequence[SystemRun], records: Sequence[SubjectRecord]) -> SystemRun:
    """Union of held-out decisions, captured epoch by captured epoch."""
    gold = {r.subject_id: r.ad_label for r in records}
    epochs = fold_runs[0].epochs
    if any(r.epochs != epochs for r in fold_runs):
        raise EvaluationError("fold runs captured different epochs", config.seed)
    merged = []
    for i, epoch in enumerate(epochs):
        decisions: Dict[str, str] = {}
        for r in fold_runs:
            decisions.update(r.epoch_decisions[i].decisions)
        acc = sum(decisions[s] == gold[s] for s in decisions) / len(decisions)
        merged.append(EpochDecisions(epoch=epoch, decisions=decisions, accuracy=acc))
    return SystemRun(config=config, epoch_decisions=merged)


def run_cv(experiment: Experiment, manifest: DatasetManifest) -> CvResult:
    if not manifest.fold_of:
        raise EvaluationError("manifest has no fold plan", experiment.config.seed)
    train_records = manifest.train_records()
    fold_runs, fold_correct, fold_sizes = [], [], []
    for fold in range(manifest.fold_count):
        fit, held_out = manifest.fold_split(fold)
        if not held_out:
            continue
        run = experiment.train_and_decide(fit, held_out)
        voted = vote_run(run, experiment.tie_policy)
        fold_runs.append(run)
        fold_correct.append(sum(voted.decisions[r.subject_id] == r.ad_label for r in held_out))
        fold_sizes.append(len(held_out))
        log.info(f"{experiment.config.system_id} seed={experiment.config.seed} fold={fold} "
                 f"correct={fold_correct[-1]}/{fold_sizes[-1]}")
    pooled = merge_fold_runs(experiment.config, fold_runs, train_records)
    return CvResult(run=pooled, fold_correct=fold_correct, fold_sizes=fold_sizes)


def run_test(experiment: Experiment, manifest: DatasetManifest) -> SystemRun:
    test = manifest.test_records()
    if not test:
        raise EvaluationError("manifest has no test records", experiment.config.seed)
    return experiment.train_and_decide(manifest.train_records(), test)


def run_split(experiment: Experiment, manifest: DatasetManifest, split: str) -> SystemRun:
    if split == CV:
        return run_cv(experiment, manifest).run
    if split == TEST_SPLIT:
        return run_test(experiment, manifest)
    raise EvaluationError(f"unknown evaluation split {split!r}")


def run_accuracy(run: SystemRun, gold: Mapping[str, str], tie_policy: str = POOL_SUB_DECISIONS) -> float:
    return accuracy(vote_run(run, tie_policy), {s: gold[s] for s in run.subjects})


# ---------------------------------------------------------------------------
# Seed sweeps
# ---------------------------------------------------------------------------
def map_seeds(fn: Callable[[int], T], seeds: Sequence[int], workers: int = 1) -> Dict[int, T]:
    """Run `fn` once per seed, up to `workers` at a time; results keyed by seed.

    The first failing seed (in seed order) aborts the sweep.
    """
    seeds = list(seeds)
    if not seeds:
        raise EvaluationError("a seed sweep needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise EvaluationError(f"duplicate seeds in {seeds}")

    def guarded(seed: int) -> T:
        try:
            return fn(seed)
        except EvaluationError:
            raise
        except PromptADError as e:
            raise EvaluationError(str(e), seed) from e

    if workers <= 1:
        return {s: guarded(s) for s in seeds}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {s: pool.submit(guarded, s) for s in seeds}
        return {s: futures[s].result() for s in seeds}


def sweep_seeds(
    run_one: Callable[[int], float],
    seeds: Sequence[int],
    workers: int = 1,
    ddof: int = 0,
) -> AccuracyStats:
    accuracies = map_seeds(run_one, seeds, workers)
    stats = AccuracyStats.from_accuracies(accuracies.values(), ddof=ddof)
    log.info(f"sweep over {stats.n_runs} seeds mean={stats.mean:.4f} std={stats.std:.4f} best={stats.best:.4f}")
    return stats


# ---------------------------------------------------------------------------
# Stats files: split, mean, std, best, n_runs
# ---------------------------------------------------------------------------
def dump_stats(stats: Mapping[str, AccuracyStats], system_id: Optional[str] = None) -> str:
    lines = [STATS_HEADER] + ([f"#system\t{system_id}"] if system_id else [])
    for split in sorted(stats):
        s = stats[split]
        lines.append("\t".join([split, format_float(s.mean), format_float(s.std), format_float(s.best), str(s.n_runs)]))
    return "\n".join(lines) + "\n"


def load_stats(text: str) -> Dict[str, AccuracyStats]:
    lines = text.splitlines()
    if not lines or lines[0] != STATS_HEADER:
        raise EvaluationError(f"stats file must start with {STATS_HEADER!r}")
    out = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise EvaluationError(f"stats line {line_no}: expected 5 fields, got {len(parts)}")
        out[parts[0]] = AccuracyStats(float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]))
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ReportEntry:
    system_id: str
    condition: str
    split: str
    stats: AccuracyStats


@dataclass
class ReportTable:
    rows: List[str]
    columns: List[Tuple[str, str]]
    cells: Dict[Tuple[str, str, str], AccuracyStats]

    def cell(self, system_id: str, condition: str, split: str) -> Optional[AccuracyStats]:
        return self.cells.get((system_id, condition, split))

    def to_text(self) -> str:
        header = ["system"]
        for condition, split in self.columns:
            header += [f"{condition}:{split} mean", "std", "best"]
        body = []
        for system_id in self.rows:
            row = [system_id]
            for condition, split in self.columns:
                stats = self.cell(system_id, condition, split)
                row += list(stats.percentages()) if stats else ["-", "-", "-"]
            body.append(row)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

        def fmt(cells: List[str]) -> str:
            out = [cells[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
            return "  ".join(out).rstrip()

        return "\n".join(fmt(r) for r in [header] + body) + "\n"

    def to_tsv(self) -> str:
        lines = ["system\tcondition\tsplit\tmean\tstd\tbest\tn_runs"]
        for system_id in self.rows:
            for condition, split in self.columns:
                stats = self.cell(system_id, condition, split)
                if stats:
                    lines.append("\t".join([system_id, condition, split, *stats.percentages(), str(stats.n_runs)]))
        return "\n".join(lines) + "\n"


def render_report(entries: Sequence[ReportEntry]) -> ReportTable:
    """Arrange stats into rows (report order) and populated columns (condition, split)."""
    if not entries:
        raise EvaluationError("no stored runs to report")
    cells = {(e.system_id, e.condition, e.split): e.stats for e in entries}

    known = report_order()
    present = {e.system_id for e in entries}
    rows = [s for s in known if s in present] + sorted(present - set(known))

    condition_rank = {c: i for i, c in enumerate(CONDITIONS)}
    split_rank = {CV: 0, TEST_SPLIT: 1}
    columns = sorted(
        {(e.condition, e.split) for e in entries},
        key=lambda cs: (condition_rank.get(cs[0], len(CONDITIONS)), cs[0], split_rank.get(cs[1], 2), cs[1]),
    )
    return ReportTable(rows=rows, columns=columns, cells=cells)
