"""
promptad.backend.hf
-------------------
Adapter exposing a pre-trained transformers masked-LM (BERT, RoBERTa) through
the `MaskedLMBackend` contract. Needs the optional `plm` extra:

    pip install promptad-core[plm]

Weight decay is attached per parameter group: parameters whose name contains
"LayerNorm" form the layer-norm group.
"""

from __future__ import annotations
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..constants import CHECKPOINT_VERSION, DEFAULT_MAX_LEN, PLM_MODELS
from ..errors import BackendError, NonFiniteGradientError
from ..logger import get_logger
from .base import (
    BackendDescriptor, DECAY_ALL, DECAY_GROUPS, DECAY_LAYER_NORM, DECAY_NON_LAYER_NORM,
    MaskLogits, POOL_CLS, POOL_MEAN, PromptedInput, check_input,
)
from .optim import LAYER_NORM_GROUP

log = get_logger("promptad.backend.hf")


def _is_layer_norm(param_name: str) -> bool:
    lowered = param_name.lower()
    return "layernorm" in lowered or "layer_norm" in lowered


class HFTokenizer:
    """Wraps a transformers tokenizer; special tokens are added by `assemble`, not here."""

    def __init__(self, tokenizer: Any):
        self._tok = tokenizer
        self.bos_id = tokenizer.cls_token_id if tokenizer.cls_token_id is not None else tokenizer.bos_token_id
        self.eos_id = tokenizer.sep_token_id if tokenizer.sep_token_id is not None else tokenizer.eos_token_id
        self.mask_id: Optional[int] = tokenizer.mask_token_id
        self.unk_id: Optional[int] = tokenizer.unk_token_id
        self.vocab_size = len(tokenizer)
        # byte-level BPE vocabularies (RoBERTa) encode a word differently after a space
        self._space_prefix = "roberta" in type(tokenizer).__name__.lower() or "gpt2" in type(tokenizer).__name__.lower()

    def encode(self, text: str) -> List[int]:
        text = text.strip()
        if not text:
            return []
        if self._space_prefix:
            text = " " + text
        return list(self._tok.encode(text, add_special_tokens=False))

    def decode(self, ids: Iterable[int]) -> List[str]:
        return self._tok.convert_ids_to_tokens(list(ids))


class TransformersBackend:
    def __init__(
        self,
        plm: str,
        *,
        seed: int = 0,
        max_len: int = DEFAULT_MAX_LEN,
        pooling: str = POOL_CLS,
        device: Optional[str] = None,
    ):
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as e:
            raise BackendError("the transformers backend needs the 'plm' extra (torch, transformers)") from e
        if pooling not in (POOL_CLS, POOL_MEAN):
            raise BackendError(f"unknown pooling {pooling!r}")

        self._torch = torch
        self.pooling = pooling
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        model_name = PLM_MODELS.get(plm, plm)
        torch.manual_seed(seed)

        hf_tok = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForMaskedLM.from_pretrained(model_name).to(self.device)
        self.tokenizer = HFTokenizer(hf_tok)
        self.descriptor = BackendDescriptor(
            name=plm,
            vocab_size=self.tokenizer.vocab_size,
            max_len=min(max_len, int(getattr(hf_tok, "model_max_length", max_len))),
            mask_token_id=self.tokenizer.mask_id,
            supports_training=True,
        )
        self._optimizer = None
        self._pending: Optional[Dict[int, Any]] = None
        log.info(f"loaded {model_name} on {self.device}")

    def _input_ids(self, prompted: PromptedInput):
        return self._torch.tensor([list(prompted.token_ids)], dtype=self._torch.long, device=self.device)

    def _group_of(self, param_name: str) -> str:
        return LAYER_NORM_GROUP if _is_layer_norm(param_name) else "other"

    # --- inference ---
    def forward(self, prompted: PromptedInput, positions: Optional[Sequence[int]] = None,
                train: bool = False) -> MaskLogits:
        positions = list(prompted.mask_positions.values()) if positions is None else list(positions)
        check_input(prompted, self.descriptor, positions)
        ids = self._input_ids(prompted)
        if train:
            self.model.train()
            logits = self.model(input_ids=ids).logits[0]
            self._pending = {p: logits[p] for p in positions}
            return MaskLogits({p: logits[p].detach().cpu().double().numpy() for p in positions})
        self.model.eval()
        with self._torch.no_grad():
            logits = self.model(input_ids=ids).logits[0]
        return MaskLogits({p: logits[p].cpu().double().numpy() for p in positions})

    def embed(self, prompted: PromptedInput) -> np.ndarray:
        check_input(prompted, self.descriptor)
        self.model.eval()
        with self._torch.no_grad():
            out = self.model(input_ids=self._input_ids(prompted), output_hidden_states=True)
        hidden = out.hidden_states[-1][0]
        pooled = hidden[0] if self.pooling == POOL_CLS else hidden.mean(dim=0)
        return pooled.cpu().double().numpy()

    # --- training ---
    def configure_optimizer(self, lr: float, weight_decay: float, decay_group: str) -> None:
        if decay_group not in DECAY_GROUPS:
            raise BackendError(f"unknown decay_group {decay_group!r}")
        ln, other = [], []
        for name, p in self.model.named_parameters():
            (ln if _is_layer_norm(name) else other).append(p)
        ln_decay = weight_decay if decay_group in (DECAY_LAYER_NORM, DECAY_ALL) else 0.0
        other_decay = weight_decay if decay_group in (DECAY_NON_LAYER_NORM, DECAY_ALL) else 0.0
        self._optimizer = self._torch.optim.AdamW(
            [{"params": ln, "weight_decay": ln_decay}, {"params": other, "weight_decay": other_decay}],
            lr=lr,
        )

    def backward(self, grad_logits: Dict[int, np.ndarray]) -> None:
        if self._pending is None:
            raise BackendError("backward() called without a preceding training forward()")
        total = None
        for p, g in grad_logits.items():
            if p not in self._pending:
                raise BackendError(f"no training activations for position {p}")
            logit = self._pending[p]
            term = (logit * self._torch.as_tensor(g, dtype=logit.dtype, device=logit.device)).sum()
            total = term if total is None else total + term
        if total is not None:
            total.backward()

    def step(self) -> None:
        if self._optimizer is None:
            raise BackendError("configure_optimizer() must be called before step()")
        for name, p in self.model.named_parameters():
            if p.grad is not None and not bool(self._torch.isfinite(p.grad).all()):
                raise NonFiniteGradientError(self._group_of(name))
        self._optimizer.step()
        self._optimizer.zero_grad(set_to_none=True)
        self._pending = None

    # --- state ---
    def snapshot(self) -> Dict[str, Any]:
        return {k: v.detach().cpu().clone() for k, v in self.model.state_dict().items()}

    def restore(self, state: Dict[str, Any]) -> None:
        self.model.load_state_dict(state)

    def save_state(self, path: str) -> None:
        self._torch.save({"version": CHECKPOINT_VERSION, "state": self.snapshot()}, path)

    def load_state(self, path: str) -> None:
        blob = self._torch.load(path, map_location="cpu")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise BackendError(f"unsupported checkpoint version {blob.get('version')}")
        self.restore(blob["state"])
