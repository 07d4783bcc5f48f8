"""
promptad.prompting
------------------
Prompt templates, label-word verbalizers, and assembly of prompted inputs.

A template is a sequence of phrases, each holding exactly one mask slot bound
to a task:

    "Speech is <MASK>. Diagnosis is <MASK>."
        -> [("Speech is", fluency, "."), ("Diagnosis is", diagnosis, ".")]

Slots may be annotated (`<MASK task=fluency>`); unannotated slots are bound in
slot order, a lone slot to the diagnosis task.
"""

from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Tuple
import re

from .backend.base import PromptedInput, Tokenizer
from .constants import (
    AD_LABELS, BACK, DEFAULT_DIAGNOSIS_TEMPLATE, DEFAULT_LABEL_WORDS, DEFAULT_MULTI_TASK_TEMPLATE,
    DIAGNOSIS, FLUENCY, FLUENCY_LABELS, FRONT, MASK_PLACEHOLDER, TASKS,
)
from .errors import PromptAssemblyError, VerbalizerError

_SLOT_RE = re.compile(r"<MASK(?:\s+task=(\w+))?>")
_LEADING_TOKEN_RE = re.compile(r"^\S*")

TASK_CLASSES: Dict[str, Tuple[str, str]] = {DIAGNOSIS: AD_LABELS, FLUENCY: FLUENCY_LABELS}


@dataclass(frozen=True)
class PromptPhrase:
    before: str
    task: str
    after: str = ""

    def render(self) -> str:
        head = f"{self.before} " if self.before else ""
        return f"{head}{MASK_PLACEHOLDER}{self.after}"


@dataclass(frozen=True)
class PromptTemplate:
    phrases: Tuple[PromptPhrase, ...]
    position: str = BACK

    def __post_init__(self):
        if not self.phrases:
            raise PromptAssemblyError("template needs at least one mask slot")
        tasks = [p.task for p in self.phrases]
        unknown = [t for t in tasks if t not in TASKS]
        if unknown:
            raise PromptAssemblyError(f"unknown task(s) in template: {', '.join(unknown)}")
        if len(set(tasks)) != len(tasks):
            raise PromptAssemblyError(f"template binds a task to more than one slot: {tasks}")
        if DIAGNOSIS not in tasks:
            raise PromptAssemblyError("template has no diagnosis slot")
        if self.position not in (FRONT, BACK):
            raise PromptAssemblyError(f"prompt position must be {FRONT!r} or {BACK!r}, got {self.position!r}")

    @classmethod
    def parse(cls, text: str, position: str = BACK) -> "PromptTemplate":
        slots = list(_SLOT_RE.finditer(text))
        if not slots:
            raise PromptAssemblyError(f"template {text!r} contains no {MASK_PLACEHOLDER} slot")

        annotated = [m.group(1) for m in slots]
        free = [t for t in TASKS if t not in annotated]
        if len(slots) == 1 and annotated[0] is None:
            free = [DIAGNOSIS]
        tasks = []
        for a in annotated:
            if a is not None:
                tasks.append(a)
            elif free:
                tasks.append(free.pop(0))
            else:
                raise PromptAssemblyError(f"template {text!r} has more slots than tasks")

        phrases = []
        before = text[: slots[0].start()]
        for i, m in enumerate(slots):
            rest = text[m.end(): slots[i + 1].start()] if i + 1 < len(slots) else text[m.end():]
            if i + 1 < len(slots):
                after = _LEADING_TOKEN_RE.match(rest).group(0)
                next_before = rest[len(after):]
            else:
                after, next_before = rest.rstrip(), ""
            phrases.append(PromptPhrase(before=before.strip(), task=tasks[i], after=after))
            before = next_before
        return cls(phrases=tuple(phrases), position=position)

    @property
    def tasks(self) -> Tuple[str, ...]:
        return tuple(p.task for p in self.phrases)

    @property
    def text(self) -> str:
        return " ".join(p.render() for p in self.phrases)

    def segments(self) -> List[Tuple[str, str]]:
        """("text", literal) and ("slot", task) elements in reading order."""
        out: List[Tuple[str, str]] = []
        for p in self.phrases:
            if p.before:
                out.append(("text", p.before))
            out.append(("slot", p.task))
            if p.after:
                out.append(("text", p.after))
        return out

    def restrict(self, tasks: Iterable[str]) -> "PromptTemplate":
        keep = set(tasks)
        return replace(self, phrases=tuple(p for p in self.phrases if p.task in keep))

    def with_position(self, position: str) -> "PromptTemplate":
        return replace(self, position=position)


def default_template(multi_task: bool = False, position: str = BACK) -> PromptTemplate:
    return PromptTemplate.parse(DEFAULT_MULTI_TASK_TEMPLATE if multi_task else DEFAULT_DIAGNOSIS_TEMPLATE, position)


# ---------------------------------------------------------------------------
# Verbalizer
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Verbalizer:
    words: Mapping[str, Mapping[str, str]] = field(default_factory=lambda: DEFAULT_LABEL_WORDS)
    ids: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    @property
    def resolved(self) -> bool:
        return bool(self.ids)

    @staticmethod
    def classes(task: str) -> Tuple[str, str]:
        return TASK_CLASSES[task]

    def class_ids(self, task: str) -> Tuple[int, int]:
        """Label-word ids of `task` in class order (AD, NonAD) / (Stumbling, Fluent)."""
        if task not in self.ids:
            raise VerbalizerError(task, 0, "is not a resolved task of this verbalizer")
        return tuple(self.ids[task][c] for c in TASK_CLASSES[task])

    def all_words(self) -> List[str]:
        return [self.words[t][c] for t in TASKS if t in self.words for c in TASK_CLASSES[t]]

    def to_dict(self) -> Dict[str, Dict[str, str]]:
        return {t: dict(m) for t, m in self.words.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, str]]) -> "Verbalizer":
        words = {t: dict(m) for t, m in DEFAULT_LABEL_WORDS.items()}
        for task, mapping in data.items():
            words.setdefault(task, {}).update(mapping)
        return cls(words=words)


def validate_verbalizer(verbalizer: Verbalizer, tokenizer: Tokenizer) -> Verbalizer:
    """Resolve every label word to exactly one vocabulary id of `tokenizer`."""
    ids: Dict[str, Dict[str, int]] = {}
    for task, mapping in verbalizer.words.items():
        if task not in TASK_CLASSES:
            raise VerbalizerError(task, 0, f"belongs to unknown task {task!r}")
        missing = [c for c in TASK_CLASSES[task] if c not in mapping]
        if missing:
            raise VerbalizerError(task, 0, f"has no label word for {', '.join(missing)}")
        ids[task] = {}
        for cls in TASK_CLASSES[task]:
            word = mapping[cls]
            tokens = tokenizer.encode(word)
            if len(tokens) != 1:
                raise VerbalizerError(word, len(tokens))
            if tokenizer.unk_id is not None and tokens[0] == tokenizer.unk_id:
                raise VerbalizerError(word, 1, "is not in the vocabulary")
            ids[task][cls] = tokens[0]
        if len(set(ids[task].values())) != len(ids[task]):
            raise VerbalizerError(mapping[TASK_CLASSES[task][0]], 1, f"shares its token with another {task} label")
    return replace(verbalizer, ids=ids)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------
def vocabulary_words(template: PromptTemplate, verbalizer: Verbalizer) -> List[str]:
    """Literal template text and label words; a small vocabulary must keep all of them."""
    return [value for kind, value in template.segments() if kind == "text"] + verbalizer.all_words()


def assemble(template: PromptTemplate, transcript_text: str, tokenizer: Tokenizer, max_len: int) -> PromptedInput:
    """Concatenate transcript and prompt between the begin and end markers.

    Front: <s> prompt transcript </s>; Back: <s> transcript prompt </s>.
    Overlong inputs lose transcript tokens from the end; the prompt and the
    markers are never cut.
    """
    if tokenizer.mask_id is None:
        raise PromptAssemblyError("tokenizer has no mask token")

    prompt_ids: List[int] = []
    slot_offsets: Dict[str, int] = {}
    for kind, value in template.segments():
        if kind == "slot":
            slot_offsets[value] = len(prompt_ids)
            prompt_ids.append(tokenizer.mask_id)
        else:
            prompt_ids.extend(tokenizer.encode(value))

    budget = max_len - 2 - len(prompt_ids)
    if budget < 0:
        raise PromptAssemblyError(
            f"prompt of {len(prompt_ids)} tokens plus sequence markers exceeds max_len {max_len}"
        )
    transcript_ids = tokenizer.encode(transcript_text)[:budget]

    if template.position == FRONT:
        token_ids = [tokenizer.bos_id] + prompt_ids + transcript_ids + [tokenizer.eos_id]
        offset = 1
    else:
        token_ids = [tokenizer.bos_id] + transcript_ids + prompt_ids + [tokenizer.eos_id]
        offset = 1 + len(transcript_ids)
    return PromptedInput(
        token_ids=tuple(token_ids),
        mask_positions={task: offset + o for task, o in slot_offsets.items()},
    )
