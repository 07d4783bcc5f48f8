"""
promptad.backend.base
---------------------
Contract between the pipeline and a masked-language-model runtime.

The trainer never touches model internals: it asks the backend for logits at
mask positions, hands back the loss gradient with respect to those logits,
and tells the optimizer to step. Any runtime that implements
`MaskedLMBackend` (the numpy toy model or a transformers checkpoint) can be
fine-tuned with either paradigm.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Protocol, Sequence

import numpy as np

from ..errors import BackendError

# decay_group values
DECAY_LAYER_NORM = "layer_norm"
DECAY_NON_LAYER_NORM = "non_layer_norm"
DECAY_ALL = "all"
DECAY_NONE = "none"
DECAY_GROUPS = (DECAY_LAYER_NORM, DECAY_NON_LAYER_NORM, DECAY_ALL, DECAY_NONE)

# embed() pooling
POOL_CLS = "cls"
POOL_MEAN = "mean"


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    vocab_size: int
    max_len: int
    mask_token_id: int
    supports_training: bool = True

    def __post_init__(self):
        if self.max_len < 8:
            raise BackendError(f"max_len must be >= 8, got {self.max_len}")
        if not 0 <= self.mask_token_id < self.vocab_size:
            raise BackendError(f"mask_token_id {self.mask_token_id} outside vocabulary of {self.vocab_size}")


@dataclass(frozen=True)
class PromptedInput:
    """Token ids ready for a forward pass, with the mask index of every task."""
    token_ids: Sequence[int]
    mask_positions: Dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class MaskLogits:
    """Unnormalized vocabulary scores keyed by sequence position."""
    vectors: Dict[int, np.ndarray]

    def at(self, position: int) -> np.ndarray:
        if position not in self.vectors:
            raise BackendError(f"no logits for position {position}")
        return self.vectors[position]


class Tokenizer(Protocol):
    bos_id: int
    eos_id: int
    mask_id: Optional[int]
    unk_id: Optional[int]
    vocab_size: int

    def encode(self, text: str) -> List[int]: ...
    def decode(self, ids: Iterable[int]) -> List[str]: ...


class MaskedLMBackend(Protocol):
    """Canonical runtime contract. One instance is owned by one run."""

    descriptor: BackendDescriptor
    tokenizer: Tokenizer

    # --- inference ---
    def forward(self, prompted: PromptedInput, positions: Optional[Sequence[int]] = None,
                train: bool = False) -> MaskLogits: ...
    def embed(self, prompted: PromptedInput) -> np.ndarray: ...

    # --- training ---
    def configure_optimizer(self, lr: float, weight_decay: float, decay_group: str) -> None: ...
    def backward(self, grad_logits: Dict[int, np.ndarray]) -> None: ...
    def step(self) -> None: ...

    # --- state ---
    def snapshot(self) -> Any: ...
    def restore(self, state: Any) -> None: ...
    def save_state(self, path: str) -> None: ...
    def load_state(self, path: str) -> None: ...


def check_input(prompted: PromptedInput, descriptor: BackendDescriptor, positions: Iterable[int] = ()) -> None:
    """Shared precondition checks for forward/embed."""
    n = len(prompted.token_ids)
    if n == 0:
        raise BackendError("empty input")
    if n > descriptor.max_len:
        raise BackendError(f"input length {n} exceeds max_len {descriptor.max_len}")
    ids = np.asarray(prompted.token_ids)
    if ids.min() < 0 or ids.max() >= descriptor.vocab_size:
        raise BackendError(f"token id outside vocabulary of {descriptor.vocab_size}")
    for p in positions:
        if not 0 <= p < n:
            raise BackendError(f"mask position {p} outside input of length {n}")
