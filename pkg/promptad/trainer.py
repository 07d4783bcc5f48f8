"""
promptad.trainer
----------------
One fine-tuning run for one seed, under either paradigm:

- prompt: the masked-LM predicts a label word at each task's mask slot and is
  trained with cross-entropy over the two label-word logits of every task
- mlm: the masked-LM is fine-tuned on masked-token prediction, then a linear
  SVM is fit on its sentence embeddings at each of the last k checkpoints

Both paths return a `SystemRun` holding the AD decisions of the last k epochs,
which the ensemble module votes over.
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from .backend.base import DECAY_GROUPS, DECAY_LAYER_NORM, MaskLogits, MaskedLMBackend, PromptedInput
from .backend.checkpoint import load_checkpoint, save_checkpoint
from .constants import (
    AD, BACK, CAPTURE_LAST_K, DECISIONS_HEADER, DEFAULT_LR, DEFAULT_WEIGHT_DECAY, DIAGNOSIS,
    FLUENCY, FRONT, MLM, MLM_EPOCHS, NON_AD, POSITION_NA, PROMPT, PROMPT_EPOCHS, TASKS,
)
from .corpus import SubjectRecord
from .errors import ConfigError, PromptADError, TrainingError
from .logger import get_logger
from .prompting import PromptTemplate, Verbalizer, assemble
from .utils import format_float, seeded_rng

log = get_logger("promptad.trainer")

INTERPOLATE = "interpolate"
SUM = "sum"
LOSS_MODES = (INTERPOLATE, SUM)

# fixed masks for the per-epoch MLM loss are drawn from this stream
_MLM_EVAL_STREAM = 0


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    paradigm: str = PROMPT
    plm: str = "bert"
    prompt_position: str = BACK
    multi_task: bool = False
    task_weights: Mapping[str, float] = field(default_factory=dict)
    loss_mode: str = INTERPOLATE
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    decay_group: str = DECAY_LAYER_NORM
    batch_size: int = 1
    epochs: Optional[int] = None
    capture_last_k: int = CAPTURE_LAST_K
    seed: int = 0
    masking_rate: float = 0.15

    def __post_init__(self):
        if self.paradigm == MLM:
            object.__setattr__(self, "prompt_position", POSITION_NA)

    @property
    def n_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return PROMPT_EPOCHS if self.paradigm == PROMPT else MLM_EPOCHS

    @property
    def weights(self) -> Dict[str, float]:
        """Effective per-task loss weights; single-task runs train the diagnosis slot only."""
        if not self.multi_task:
            return {DIAGNOSIS: 1.0}
        if self.task_weights:
            return {t: float(self.task_weights.get(t, 0.0)) for t in TASKS}
        share = 0.5 if self.loss_mode == INTERPOLATE else 1.0
        return {t: share for t in TASKS}

    @property
    def active_tasks(self) -> Tuple[str, ...]:
        w = self.weights
        return tuple(t for t in TASKS if w.get(t, 0.0) > 0.0)

    @property
    def system_id(self) -> str:
        if self.paradigm == MLM:
            return f"{self.plm}:{MLM}"
        return f"{self.plm}:{PROMPT}:{self.prompt_position}"

    def problems(self) -> List[str]:
        out = []
        if self.paradigm not in (PROMPT, MLM):
            out.append(f"paradigm must be {PROMPT!r} or {MLM!r}, got {self.paradigm!r}")
        if self.paradigm == PROMPT and self.prompt_position not in (FRONT, BACK):
            out.append(f"prompt_position must be {FRONT!r} or {BACK!r} for prompt runs")
        if self.paradigm == MLM and self.multi_task:
            out.append("multi_task applies to prompt runs only")
        if self.n_epochs < 1:
            out.append(f"epochs must be >= 1, got {self.n_epochs}")
        if not 1 <= self.capture_last_k <= max(self.n_epochs, 1):
            out.append(f"capture_last_k must be in [1, epochs], got {self.capture_last_k}")
        if self.lr < 0:
            out.append(f"lr must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            out.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.decay_group not in DECAY_GROUPS:
            out.append(f"decay_group must be one of {', '.join(DECAY_GROUPS)}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.masking_rate <= 1.0:
            out.append(f"masking_rate must be in [0, 1], got {self.masking_rate}")
        if self.loss_mode not in LOSS_MODES:
            out.append(f"loss_mode must be one of {', '.join(LOSS_MODES)}")
        unknown = [t for t in self.task_weights if t not in TASKS]
        if unknown:
            out.append(f"task_weights has unknown task(s): {', '.join(unknown)}")
        if any(w < 0 for w in self.task_weights.values()):
            out.append("task_weights must be non-negative")
        if self.multi_task and self.loss_mode == INTERPOLATE and self.task_weights:
            if abs(sum(self.task_weights.values()) - 1.0) > 1e-9:
                out.append("task_weights must sum to 1 in interpolate mode")
        if self.multi_task and DIAGNOSIS not in self.active_tasks:
            out.append("the diagnosis task needs a positive weight")
        return out

    def validate(self) -> "TrainConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["task_weights"] = dict(self.task_weights)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown train key {k!r}" for k in unknown])
        return cls(**dict(data))


@dataclass(frozen=True)
class ClassifierSpec:
    kernel: str = "linear"
    C: float = 1.0
    standardize: bool = False


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------
@dataclass
class EpochDecisions:
    epoch: int
    decisions: Dict[str, str]
    accuracy: float


@dataclass
class SystemRun:
    config: TrainConfig
    epoch_decisions: List[EpochDecisions] = field(default_factory=list)

    @property
    def system_id(self) -> str:
        return self.config.system_id

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def subjects(self) -> List[str]:
        return sorted(self.epoch_decisions[0].decisions) if self.epoch_decisions else []

    @property
    def epochs(self) -> List[int]:
        return [e.epoch for e in self.epoch_decisions]

    def decisions_for(self, subject_id: str) -> List[str]:
        return [e.decisions[subject_id] for e in self.epoch_decisions]


def _accuracy(decisions: Mapping[str, str], records: Sequence[SubjectRecord]) -> float:
    return sum(decisions[r.subject_id] == r.ad_label for r in records) / len(records)


def _captured(config: TrainConfig, epoch: int) -> bool:
    return epoch > config.n_epochs - config.capture_last_k


# ---------------------------------------------------------------------------
# Prompt paradigm
# ---------------------------------------------------------------------------
@dataclass
class PromptLoss:
    value: float
    per_task: Dict[str, float]
    grad: Dict[int, np.ndarray]


def prompt_loss(
    logits: MaskLogits,
    mask_positions: Mapping[str, int],
    verbalizer: Verbalizer,
    labels: Mapping[str, str],
    weights: Mapping[str, float],
) -> PromptLoss:
    """Weighted sum of per-task cross-entropies over each task's label-word pair.

    Returns the loss with its gradient w.r.t. the full logit vector at every
    mask position used.
    """
    value = 0.0
    per_task: Dict[str, float] = {}
    grad: Dict[int, np.ndarray] = {}
    for task in TASKS:
        w = float(weights.get(task, 0.0))
        if w == 0.0:
            continue
        if task not in mask_positions:
            raise TrainingError(f"no mask slot for active task {task!r}")
        pos = mask_positions[task]
        vec = logits.at(pos)
        ids = list(verbalizer.class_ids(task))
        target = verbalizer.classes(task).index(labels[task])
        pair = vec[ids]
        task_loss = float(-log_softmax(pair)[target])
        per_task[task] = task_loss
        value += w * task_loss

        g_pair = softmax(pair)
        g_pair[target] -= 1.0
        g = grad.setdefault(pos, np.zeros_like(vec, dtype=float))
        g[ids] += w * g_pair
    return PromptLoss(value=value, per_task=per_task, grad=grad)


def decide(backend: MaskedLMBackend, prompted: PromptedInput, verbalizer: Verbalizer) -> str:
    pos = prompted.mask_positions[DIAGNOSIS]
    vec = backend.forward(prompted, [pos]).at(pos)
    ad_id, non_ad_id = verbalizer.class_ids(DIAGNOSIS)
    return AD if vec[ad_id] >= vec[non_ad_id] else NON_AD


def run_prompt_training(
    config: TrainConfig,
    train: Sequence[SubjectRecord],
    eval_records: Sequence[SubjectRecord],
    template: PromptTemplate,
    verbalizer: Verbalizer,
    *,
    backend: MaskedLMBackend,
    fluency_labels: Optional[Mapping[str, str]] = None,
) -> SystemRun:
    config.validate()
    if not backend.descriptor.supports_training:
        raise TrainingError(f"backend {backend.descriptor.name!r} does not support training")
    if not train or not eval_records:
        raise TrainingError("prompt training needs non-empty train and eval record sets")
    if not verbalizer.resolved:
        raise TrainingError("verbalizer must be validated against the backend tokenizer first")

    weights = config.weights
    active = config.active_tasks
    missing_slots = [t for t in active if t not in template.tasks]
    if missing_slots:
        raise TrainingError(f"template has no slot for active task(s): {', '.join(missing_slots)}")
    if FLUENCY in active:
        fluency_labels = fluency_labels or {}
        unlabelled = [r.subject_id for r in train if r.subject_id not in fluency_labels]
        if unlabelled:
            raise TrainingError(f"no fluency label for: {', '.join(unlabelled[:5])}")

    # zero-weight slots are left out of the input
    template = template.restrict(active)
    max_len = backend.descriptor.max_len
    train_inputs = {r.subject_id: assemble(template, r.merged_text, backend.tokenizer, max_len) for r in train}
    eval_inputs = {r.subject_id: assemble(template, r.merged_text, backend.tokenizer, max_len) for r in eval_records}
    backend.configure_optimizer(config.lr, config.weight_decay, config.decay_group)

    run = SystemRun(config=config)
    for epoch in range(1, config.n_epochs + 1):
        order = seeded_rng(config.seed, epoch).permutation(len(train))
        losses: List[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            for rec in batch:
                try:
                    prompted = train_inputs[rec.subject_id]
                    positions = [prompted.mask_positions[t] for t in active]
                    logits = backend.forward(prompted, positions, train=True)
                    labels = {DIAGNOSIS: rec.ad_label}
                    if FLUENCY in active:
                        labels[FLUENCY] = fluency_labels[rec.subject_id]
                    loss = prompt_loss(logits, prompted.mask_positions, verbalizer, labels, weights)
                    backend.backward({p: g / len(batch) for p, g in loss.grad.items()})
                except PromptADError as e:
                    raise TrainingError(str(e), epoch=epoch, subject_id=rec.subject_id) from e
                losses.append(loss.value)
            try:
                backend.step()
            except PromptADError as e:
                raise TrainingError(str(e), epoch=epoch, subject_id=batch[-1].subject_id) from e

        message = f"{config.system_id} seed={config.seed} epoch={epoch} loss={np.mean(losses):.4f}"
        if _captured(config, epoch):
            decisions = {
                r.subject_id: decide(backend, eval_inputs[r.subject_id], verbalizer) for r in eval_records
            }
            acc = _accuracy(decisions, eval_records)
            run.epoch_decisions.append(EpochDecisions(epoch=epoch, decisions=decisions, accuracy=acc))
            message += f" accuracy={acc:.4f}"
        log.info(message)
    return run


# ---------------------------------------------------------------------------
# MLM paradigm
# ---------------------------------------------------------------------------
@dataclass
class MlmCheckpoint:
    """In-memory parameter snapshot, or the sidecar of one written to disk."""
    epoch: int
    state: Any = None
    path: Optional[str] = None


@dataclass
class MlmTraining:
    checkpoints: List[MlmCheckpoint]
    epoch_losses: List[float]


def mlm_input(record: SubjectRecord, backend: MaskedLMBackend) -> PromptedInput:
    tok = backend.tokenizer
    body = tok.encode(record.merged_text)[: backend.descriptor.max_len - 2]
    return PromptedInput(token_ids=tuple([tok.bos_id] + body + [tok.eos_id]))


def select_mlm_positions(length: int, rate: float, rng: np.random.Generator) -> List[int]:
    """Positions to mask, excluding the begin and end markers."""
    draws = rng.random(max(length - 2, 0))
    return [i + 1 for i in np.flatnonzero(draws < rate)]


def masked_lm_loss(logits: MaskLogits, targets: Mapping[int, int]) -> Tuple[float, Dict[int, np.ndarray]]:
    """Mean cross-entropy over masked positions; no positions means zero loss."""
    if not targets:
        return 0.0, {}
    n = len(targets)
    value = 0.0
    grad: Dict[int, np.ndarray] = {}
    for pos, target in targets.items():
        vec = logits.at(pos)
        value -= float(log_softmax(vec)[target])
        g = softmax(vec)
        g[target] -= 1.0
        grad[pos] = g / n
    return value / n, grad


def _mask(prompted: PromptedInput, positions: Sequence[int], mask_id: int) -> Tuple[PromptedInput, Dict[int, int]]:
    ids = list(prompted.token_ids)
    targets = {p: ids[p] for p in positions}
    for p in positions:
        ids[p] = mask_id
    return PromptedInput(token_ids=tuple(ids)), targets


def _mlm_eval_loss(backend: MaskedLMBackend, fixed: Sequence[Tuple[PromptedInput, Dict[int, int]]]) -> float:
    values = []
    for masked, targets in fixed:
        if targets:
            values.append(masked_lm_loss(backend.forward(masked, list(targets)), targets)[0])
    return float(np.mean(values)) if values else 0.0


def run_mlm_training(
    config: TrainConfig,
    train: Sequence[SubjectRecord],
    *,
    backend: MaskedLMBackend,
    checkpoint_dir: Optional[Path] = None,
) -> MlmTraining:
    """Masked-token fine-tuning; keeps a parameter snapshot after each of the last k epochs,
    in memory or, given `checkpoint_dir`, as checkpoint files.

    `epoch_losses` is measured after each epoch on masks drawn once from the
    seed, so the values are comparable across epochs.
    """
    config.validate()
    if not backend.descriptor.supports_training:
        raise TrainingError(f"backend {backend.descriptor.name!r} does not support training")
    if not train:
        raise TrainingError("MLM training needs a non-empty train set")

    mask_id = backend.descriptor.mask_token_id
    inputs = [mlm_input(r, backend) for r in train]
    eval_rng = seeded_rng(config.seed, _MLM_EVAL_STREAM)
    fixed = [_mask(p, select_mlm_positions(len(p), config.masking_rate, eval_rng), mask_id) for p in inputs]
    backend.configure_optimizer(config.lr, config.weight_decay, config.decay_group)

    checkpoints: List[MlmCheckpoint] = []
    losses: List[float] = []
    for epoch in range(1, config.n_epochs + 1):
        rng = seeded_rng(config.seed, epoch)
        order = rng.permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            for i in batch:
                positions = select_mlm_positions(len(inputs[i]), config.masking_rate, rng)
                if not positions:
                    continue
                try:
                    masked, targets = _mask(inputs[i], positions, mask_id)
                    logits = backend.forward(masked, positions, train=True)
                    _, grad = masked_lm_loss(logits, targets)
                    backend.backward({p: g / len(batch) for p, g in grad.items()})
                except PromptADError as e:
                    raise TrainingError(str(e), epoch=epoch, subject_id=train[i].subject_id) from e
            try:
                backend.step()
            except PromptADError as e:
                raise TrainingError(str(e), epoch=epoch, subject_id=train[batch[-1]].subject_id) from e

        losses.append(_mlm_eval_loss(backend, fixed))
        log.info(f"{config.system_id} seed={config.seed} epoch={epoch} mlm_loss={losses[-1]:.4f}")
        if _captured(config, epoch):
            if checkpoint_dir is None:
                checkpoints.append(MlmCheckpoint(epoch=epoch, state=backend.snapshot()))
            else:
                info = save_checkpoint(backend, checkpoint_dir, name=config.system_id, epoch=epoch, seed=config.seed)
                sidecar = Path(checkpoint_dir) / info.blob.replace(".bin", ".json")
                checkpoints.append(MlmCheckpoint(epoch=epoch, path=str(sidecar)))
    return MlmTraining(checkpoints=checkpoints, epoch_losses=losses)


def fit_classifier(features: np.ndarray, labels: Sequence[str], spec: ClassifierSpec):
    """Max-margin classifier over sentence embeddings."""
    if len(set(labels)) < 2:
        raise TrainingError("training labels contain a single class; cannot fit a classifier")
    svc = SVC(kernel=spec.kernel, C=spec.C)
    model = make_pipeline(StandardScaler(), svc) if spec.standardize else svc
    return model.fit(features, list(labels))


def run_baseline_classification(
    checkpoints: Sequence[MlmCheckpoint],
    train: Sequence[SubjectRecord],
    eval_records: Sequence[SubjectRecord],
    classifier_spec: ClassifierSpec,
    *,
    backend: MaskedLMBackend,
    config: TrainConfig,
) -> SystemRun:
    """Embed, fit and predict once per checkpoint; one decision map each."""
    if not checkpoints:
        raise TrainingError("no MLM checkpoints to classify with")
    labels = [r.ad_label for r in train]
    if len(set(labels)) < 2:
        raise TrainingError("training labels contain a single class; cannot fit a classifier")

    train_inputs = [mlm_input(r, backend) for r in train]
    eval_inputs = [mlm_input(r, backend) for r in eval_records]
    run = SystemRun(config=config)
    for ckpt in checkpoints:
        if ckpt.state is not None:
            backend.restore(ckpt.state)
        elif ckpt.path:
            load_checkpoint(backend, Path(ckpt.path))
        else:
            raise TrainingError(f"checkpoint of epoch {ckpt.epoch} has neither a snapshot nor a file")
        x_train = np.stack([backend.embed(p) for p in train_inputs])
        x_eval = np.stack([backend.embed(p) for p in eval_inputs])
        model = fit_classifier(x_train, labels, classifier_spec)
        predicted = model.predict(x_eval)
        decisions = {r.subject_id: str(d) for r, d in zip(eval_records, predicted)}
        acc = _accuracy(decisions, eval_records)
        run.epoch_decisions.append(EpochDecisions(epoch=ckpt.epoch, decisions=decisions, accuracy=acc))
        log.info(f"{config.system_id} seed={config.seed} checkpoint={ckpt.epoch} accuracy={acc:.4f}")
    return run


# ---------------------------------------------------------------------------
# Serialization:
# system_id, plm, paradigm, position, multi_task, seed, epoch, subject_id, decision
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DecisionRow:
    system_id: str
    plm: str
    paradigm: str
    position: str
    multi_task: bool
    seed: str
    epoch: str
    subject_id: str
    decision: str

    def to_line(self) -> str:
        return "\t".join([
            self.system_id, self.plm, self.paradigm, self.position, "1" if self.multi_task else "0",
            self.seed, self.epoch, self.subject_id, self.decision,
        ])

    @classmethod
    def from_line(cls, line: str, line_no: int = 0) -> "DecisionRow":
        parts = line.split("\t")
        if len(parts) != 9:
            raise TrainingError(f"decision line {line_no}: expected 9 fields, got {len(parts)}")
        sid, plm, paradigm, position, multi, seed, epoch, subject, decision = parts
        if decision not in (AD, NON_AD):
            raise TrainingError(f"decision line {line_no}: unknown decision {decision!r}")
        return cls(sid, plm, paradigm, position, multi == "1", seed, epoch, subject, decision)


def dumps_rows(rows: Sequence[DecisionRow], meta: Sequence[str] = ()) -> str:
    return "\n".join([DECISIONS_HEADER, *meta, *(r.to_line() for r in rows)]) + "\n"


def loads_rows(text: str) -> Tuple[List[DecisionRow], List[str]]:
    lines = text.splitlines()
    if not lines or lines[0] != DECISIONS_HEADER:
        raise TrainingError(f"decision file must start with {DECISIONS_HEADER!r}")
    rows, meta = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            meta.append(line)
            continue
        rows.append(DecisionRow.from_line(line, line_no))
    return rows, meta


def dump_run(run: SystemRun) -> str:
    c = run.config
    position = c.prompt_position if c.paradigm == PROMPT else POSITION_NA
    rows = [
        DecisionRow(c.system_id, c.plm, c.paradigm, position, c.multi_task, str(c.seed), str(e.epoch), sid, e.decisions[sid])
        for e in run.epoch_decisions
        for sid in sorted(e.decisions)
    ]
    meta = [f"#accuracy\t{e.epoch}\t{format_float(e.accuracy)}" for e in run.epoch_decisions]
    return dumps_rows(rows, meta)


def load_run(text: str) -> SystemRun:
    rows, meta = loads_rows(text)
    if not rows:
        raise TrainingError("decision file holds no decisions")
    first = rows[0]
    accuracies = {}
    for m in meta:
        parts = m.split("\t")
        if parts[0] == "#accuracy" and len(parts) == 3:
            accuracies[int(parts[1])] = float(parts[2])

    by_epoch: Dict[int, Dict[str, str]] = {}
    for r in rows:
        if (r.system_id, r.seed) != (first.system_id, first.seed):
            raise TrainingError("decision file mixes systems or seeds")
        by_epoch.setdefault(int(r.epoch), {})[r.subject_id] = r.decision

    epochs = sorted(by_epoch)
    config = TrainConfig(
        paradigm=first.paradigm,
        plm=first.plm,
        prompt_position=first.position,
        multi_task=first.multi_task,
        seed=int(first.seed),
        epochs=epochs[-1],
        capture_last_k=len(epochs),
    )
    return SystemRun(
        config=config,
        epoch_decisions=[EpochDecisions(e, by_epoch[e], accuracies.get(e, float("nan"))) for e in epochs],
    )
