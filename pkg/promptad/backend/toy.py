"""
promptad.backend.toy
--------------------
Desk-scale reference runtime: a whitespace tokenizer over a small vocabulary
and a single-hidden-layer masked-token predictor written in numpy.

For a mask at position m the model reads two bags of token embeddings, the
tokens before m and the tokens after m, so the same sequence yields different
predictions at different mask slots:

    z = [mean E[t<m] ; mean E[t>m]]
    u = LayerNorm(z) * gain + bias
    h = tanh(W_h u + b_h)
    logits = W_o h + b_o

Gradients are derived by hand so they can be checked against finite
differences, and every parameter lives in a named group so weight decay can be
aimed at the layer-norm group.
"""

from __future__ import annotations
from collections import Counter
from typing import Any, Dict, Iterable, List, Optional, Sequence
import re

import numpy as np

from ..constants import CHECKPOINT_VERSION, DEFAULT_MAX_LEN
from ..errors import BackendError
from ..utils import seeded_rng
from .base import (
    BackendDescriptor, MaskLogits, POOL_CLS, POOL_MEAN, PromptedInput, check_input,
)
from .optim import AdamW, LAYER_NORM_GROUP

SPECIALS = ("<pad>", "<s>", "</s>", "<mask>", "<unk>")
_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")
LN_EPS = 1e-5


class ToyTokenizer:
    """Lowercasing word tokenizer; punctuation marks are tokens of their own."""

    pad_id, bos_id, eos_id, mask_id, unk_id = range(len(SPECIALS))

    def __init__(self, words: Iterable[str]):
        self.vocab: List[str] = list(SPECIALS)
        for w in words:
            if w not in self.vocab:
                self.vocab.append(w)
        self.index: Dict[str, int] = {w: i for i, w in enumerate(self.vocab)}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @staticmethod
    def split(text: str) -> List[str]:
        return _TOKEN_RE.findall(text.lower())

    def encode(self, text: str) -> List[int]:
        return [self.index.get(w, self.unk_id) for w in self.split(text)]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.vocab[i] for i in ids]

    @classmethod
    def from_texts(cls, texts: Iterable[str], extra: Iterable[str] = (), max_vocab: int = 64) -> "ToyTokenizer":
        """Reserve `extra` words (template and label words), fill up with the most frequent corpus words."""
        reserved: List[str] = []
        for text in extra:
            for w in cls.split(text):
                if w not in reserved and w not in SPECIALS:
                    reserved.append(w)
        budget = max_vocab - len(SPECIALS) - len(reserved)
        if budget < 0:
            raise BackendError(f"{len(reserved)} reserved words do not fit a vocabulary of {max_vocab}")
        counts = Counter(w for t in texts for w in cls.split(t) if w not in reserved and w not in SPECIALS)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
        return cls(reserved + [w for w, _ in ranked])


class ToyBackend:
    """Numpy masked-LM implementing the `MaskedLMBackend` contract."""

    GROUPS = {
        "embedding": "embedding",
        "ln_gain": LAYER_NORM_GROUP,
        "ln_bias": LAYER_NORM_GROUP,
        "w_hidden": "hidden",
        "b_hidden": "hidden",
        "w_out": "output",
        "b_out": "output",
    }

    def __init__(
        self,
        tokenizer: ToyTokenizer,
        *,
        dim: int = 16,
        hidden: int = 32,
        seed: int = 0,
        salt: int = 0,
        max_len: int = DEFAULT_MAX_LEN,
        pooling: str = POOL_CLS,
        name: str = "toy",
    ):
        if pooling not in (POOL_CLS, POOL_MEAN):
            raise BackendError(f"unknown pooling {pooling!r}")
        self.tokenizer = tokenizer
        self.pooling = pooling
        self.dim = dim
        v, n = tokenizer.vocab_size, 2 * dim
        rng = seeded_rng(seed, salt)
        self.params: Dict[str, np.ndarray] = {
            "embedding": rng.normal(0.0, 1.0, (v, dim)),
            "ln_gain": np.ones(n),
            "ln_bias": np.zeros(n),
            "w_hidden": rng.normal(0.0, 1.0 / np.sqrt(n), (hidden, n)),
            "b_hidden": np.zeros(hidden),
            "w_out": rng.normal(0.0, 1.0 / np.sqrt(hidden), (v, hidden)),
            "b_out": np.zeros(v),
        }
        self.descriptor = BackendDescriptor(
            name=name, vocab_size=v, max_len=max_len, mask_token_id=tokenizer.mask_id, supports_training=True,
        )
        self.optimizer = AdamW(dict(self.GROUPS))
        self._grads: Optional[Dict[str, np.ndarray]] = None
        self._pending: Optional[Dict[int, Dict[str, Any]]] = None

    # ------------------------------------------------------------------
    # model
    # ------------------------------------------------------------------
    def _activations(self, ids: np.ndarray, m: int) -> Dict[str, Any]:
        p = self.params
        emb = p["embedding"]
        before, after = ids[:m], ids[m + 1:]
        zb = emb[before].mean(axis=0) if len(before) else np.zeros(self.dim)
        za = emb[after].mean(axis=0) if len(after) else np.zeros(self.dim)
        z = np.concatenate([zb, za])
        s = np.sqrt(z.var() + LN_EPS)
        zhat = (z - z.mean()) / s
        u = p["ln_gain"] * zhat + p["ln_bias"]
        h = np.tanh(p["w_hidden"] @ u + p["b_hidden"])
        logits = p["w_out"] @ h + p["b_out"]
        return {"before": before, "after": after, "s": s, "zhat": zhat, "u": u, "h": h, "logits": logits}

    def _backprop(self, grads: Dict[str, np.ndarray], act: Dict[str, Any], g_logits: np.ndarray) -> None:
        p = self.params
        h, u, zhat = act["h"], act["u"], act["zhat"]
        grads["w_out"] += np.outer(g_logits, h)
        grads["b_out"] += g_logits
        g_pre = (p["w_out"].T @ g_logits) * (1.0 - h * h)
        grads["w_hidden"] += np.outer(g_pre, u)
        grads["b_hidden"] += g_pre
        g_u = p["w_hidden"].T @ g_pre
        grads["ln_gain"] += g_u * zhat
        grads["ln_bias"] += g_u
        g_zhat = g_u * p["ln_gain"]
        g_z = (g_zhat - g_zhat.mean() - zhat * np.mean(g_zhat * zhat)) / act["s"]
        before, after = act["before"], act["after"]
        if len(before):
            np.add.at(grads["embedding"], before, g_z[: self.dim] / len(before))
        if len(after):
            np.add.at(grads["embedding"], after, g_z[self.dim:] / len(after))

    def _zero_grads(self) -> Dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # ------------------------------------------------------------------
    # MaskedLMBackend
    # ------------------------------------------------------------------
    def forward(self, prompted: PromptedInput, positions: Optional[Sequence[int]] = None,
                train: bool = False) -> MaskLogits:
        positions = list(prompted.mask_positions.values()) if positions is None else list(positions)
        check_input(prompted, self.descriptor, positions)
        ids = np.asarray(prompted.token_ids, dtype=np.int64)
        acts = {m: self._activations(ids, m) for m in positions}
        if train:
            self._pending = acts
        return MaskLogits({m: a["logits"].copy() for m, a in acts.items()})

    def gradients(self, prompted: PromptedInput, grad_logits: Dict[int, np.ndarray]) -> Dict[str, np.ndarray]:
        """Parameter gradients for the given logit gradients, without touching optimizer state."""
        check_input(prompted, self.descriptor, grad_logits)
        ids = np.asarray(prompted.token_ids, dtype=np.int64)
        grads = self._zero_grads()
        for m, g in sorted(grad_logits.items()):
            self._backprop(grads, self._activations(ids, m), np.asarray(g, dtype=float))
        return grads

    def backward(self, grad_logits: Dict[int, np.ndarray]) -> None:
        if self._pending is None:
            raise BackendError("backward() called without a preceding training forward()")
        if self._grads is None:
            self._grads = self._zero_grads()
        for m, g in sorted(grad_logits.items()):
            if m not in self._pending:
                raise BackendError(f"no training activations for position {m}")
            self._backprop(self._grads, self._pending[m], np.asarray(g, dtype=float))

    def step(self) -> None:
        if self._grads is None:
            return
        self.optimizer.step(self.params, self._grads)
        self._grads = None
        self._pending = None

    def configure_optimizer(self, lr: float, weight_decay: float, decay_group: str) -> None:
        self.optimizer = AdamW(dict(self.GROUPS), lr=lr, weight_decay=weight_decay, decay_group=decay_group)

    def embed(self, prompted: PromptedInput) -> np.ndarray:
        check_input(prompted, self.descriptor)
        ids = np.asarray(prompted.token_ids, dtype=np.int64)
        if self.pooling == POOL_CLS:
            return self._activations(ids, 0)["h"].copy()
        return np.mean([self._activations(ids, m)["h"] for m in range(len(ids))], axis=0)

    # ------------------------------------------------------------------
    # state
    # ------------------------------------------------------------------
    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise BackendError("checkpoint parameters do not match this toy backend")
        self.params = {k: np.array(v, dtype=float) for k, v in state.items()}

    def save_state(self, path: str) -> None:
        with open(path, "wb") as f:
            np.savez(f, __version__=np.array(CHECKPOINT_VERSION), **self.params)

    def load_state(self, path: str) -> None:
        with np.load(path) as blob:
            version = int(blob["__version__"])
            if version != CHECKPOINT_VERSION:
                raise BackendError(f"unsupported checkpoint version {version}")
            self.restore({k: blob[k] for k in blob.files if k != "__version__"})
