from __future__ import annotations
from typing import Iterable, Optional


class PromptADError(Exception):
    pass


class ChatParseError(PromptADError):
    def __init__(self, line_no: int, line: str, reason: str = "malformed tier line"):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {reason}: {line[:60]!r}")


class RecordRejected(PromptADError):
    def __init__(self, subject_id: str, reason: str):
        self.subject_id = subject_id
        self.reason = reason
        super().__init__(f"record {subject_id!r} rejected: {reason}")


class ManifestError(PromptADError):
    pass


class ThresholdError(PromptADError):
    pass


class PromptAssemblyError(PromptADError):
    pass


class VerbalizerError(PromptADError):
    def __init__(self, word: str, token_count: int, reason: str = ""):
        self.word = word
        self.token_count = token_count
        detail = reason or f"tokenizes to {token_count} tokens, expected exactly 1"
        super().__init__(f"label word {word!r} {detail}")


class BackendError(PromptADError):
    pass


class NonFiniteGradientError(BackendError):
    def __init__(self, group: str):
        self.group = group
        super().__init__(f"non-finite gradient in parameter group {group!r}")


class TrainingError(PromptADError):
    def __init__(self, message: str, epoch: Optional[int] = None, subject_id: Optional[str] = None):
        self.epoch = epoch
        self.subject_id = subject_id
        where = []
        if epoch is not None:
            where.append(f"epoch={epoch}")
        if subject_id is not None:
            where.append(f"subject={subject_id}")
        prefix = f"[{' '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class EnsembleError(PromptADError):
    pass


class EvaluationError(PromptADError):
    def __init__(self, message: str, seed: Optional[int] = None):
        self.seed = seed
        super().__init__(f"seed {seed}: {message}" if seed is not None else message)


class ConfigError(PromptADError):
    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


class StoreError(PromptADError):
    pass
