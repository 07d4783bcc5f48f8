# promptad/backend/__init__.py

from typing import Any, Dict, Iterable, Optional
import os
import zlib

from ..errors import BackendError
from ..logger import get_logger
from .base import (
    BackendDescriptor, MaskLogits, MaskedLMBackend, PromptedInput, Tokenizer,
    DECAY_ALL, DECAY_GROUPS, DECAY_LAYER_NORM, DECAY_NONE, DECAY_NON_LAYER_NORM,
    POOL_CLS, POOL_MEAN,
)
from .optim import AdamW, LAYER_NORM_GROUP
from .toy import ToyBackend, ToyTokenizer

TOY = "toy"
HF = "hf"

log = get_logger("promptad.backend")


def backend_mode(options: Optional[Dict[str, Any]] = None) -> str:
    return (options or {}).get("mode") or os.getenv("PROMPTAD_BACKEND", HF)


def seed_workers(options: Optional[Dict[str, Any]], requested: int) -> int:
    """Concurrent seed runs the backend can take without sharing random state.

    torch keeps one process-wide generator, so transformers runs go one at a time.
    """
    if backend_mode(options) == HF and requested > 1:
        log.warning(f"hf backend runs seeds one at a time; ignoring workers={requested}")
        return 1
    return max(requested, 1)


def backend_factory(
    plm: str,
    *,
    seed: int,
    texts: Iterable[str] = (),
    extra_words: Iterable[str] = (),
    options: Optional[Dict[str, Any]] = None,
) -> MaskedLMBackend:
    """
    Factory resolver for the masked-LM runtime of one run.

    Mode comes from options["mode"] or PROMPTAD_BACKEND:
        - hf (default): pre-trained transformers checkpoint named by `plm`
        - toy: numpy model whose vocabulary is built from `texts`, always
          keeping `extra_words` (template and label words)
    """
    options = dict(options or {})
    mode = backend_mode(options)
    max_len = int(options.get("max_len", 512))
    pooling = options.get("pooling", POOL_CLS)

    if mode == TOY:
        tokenizer = ToyTokenizer.from_texts(texts, extra_words, max_vocab=int(options.get("vocab_size", 64)))
        return ToyBackend(
            tokenizer,
            dim=int(options.get("dim", 16)),
            hidden=int(options.get("hidden", 32)),
            seed=seed,
            # different PLM names start from different initial weights
            salt=zlib.crc32(plm.encode("utf-8")),
            max_len=max_len,
            pooling=pooling,
            name=plm,
        )

    if mode == HF:
        from .hf import TransformersBackend
        return TransformersBackend(plm, seed=seed, max_len=max_len, pooling=pooling, device=options.get("device"))

    raise BackendError(f"Unknown backend mode: {mode}")


__all__ = [
    "AdamW",
    "BackendDescriptor",
    "DECAY_ALL",
    "DECAY_GROUPS",
    "DECAY_LAYER_NORM",
    "DECAY_NONE",
    "DECAY_NON_LAYER_NORM",
    "HF",
    "LAYER_NORM_GROUP",
    "MaskLogits",
    "MaskedLMBackend",
    "POOL_CLS",
    "POOL_MEAN",
    "PromptedInput",
    "TOY",
    "Tokenizer",
    "ToyBackend",
    "ToyTokenizer",
    "backend_factory",
    "backend_mode",
    "seed_workers",
]
