"""
promptad.backend.checkpoint
---------------------------
Parameter checkpoints on disk: the backend writes an opaque versioned blob,
and a JSON sidecar next to it records `name, epoch, seed, descriptor` plus the
blob digest so a checkpoint is never restored into the wrong model.
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict
import json

from ..constants import CHECKPOINT_VERSION
from ..errors import BackendError
from ..logger import get_logger
from ..utils import canonical_json, safe_name, sha256
from .base import MaskedLMBackend

log = get_logger("promptad.backend.checkpoint")


@dataclass
class CheckpointInfo:
    name: str
    epoch: int
    seed: int
    descriptor: Dict[str, Any] = field(default_factory=dict)
    blob: str = ""
    digest: str = ""
    version: int = CHECKPOINT_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CheckpointInfo":
        return cls(
            name=data["name"],
            epoch=int(data["epoch"]),
            seed=int(data["seed"]),
            descriptor=dict(data.get("descriptor", {})),
            blob=data.get("blob", ""),
            digest=data.get("digest", ""),
            version=int(data.get("version", CHECKPOINT_VERSION)),
        )


def checkpoint_stem(name: str, seed: int, epoch: int) -> str:
    return f"{safe_name(name)}.seed{seed}.epoch{epoch}"


def save_checkpoint(backend: MaskedLMBackend, directory: Path, *, name: str, epoch: int, seed: int) -> CheckpointInfo:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = checkpoint_stem(name, seed, epoch)
    blob = directory / f"{stem}.bin"
    backend.save_state(str(blob))
    info = CheckpointInfo(
        name=name,
        epoch=epoch,
        seed=seed,
        descriptor=asdict(backend.descriptor),
        blob=blob.name,
        digest=sha256(blob.read_bytes()),
    )
    (directory / f"{stem}.json").write_bytes(canonical_json(info.to_dict()) + b"\n")
    log.debug(f"checkpoint written {blob}")
    return info


def load_checkpoint(backend: MaskedLMBackend, sidecar: Path) -> CheckpointInfo:
    """Restore `backend` from the checkpoint described by `sidecar`."""
    sidecar = Path(sidecar)
    if not sidecar.is_file():
        raise BackendError(f"checkpoint sidecar not found: {sidecar}")
    info = CheckpointInfo.from_dict(json.loads(sidecar.read_text(encoding="utf-8")))
    if info.version != CHECKPOINT_VERSION:
        raise BackendError(f"unsupported checkpoint version {info.version}")
    expected = asdict(backend.descriptor)
    if info.descriptor != expected:
        raise BackendError(f"checkpoint {sidecar.name} was written by {info.descriptor.get('name')!r}, "
                           f"not by this backend ({expected['name']!r})")
    blob = sidecar.parent / info.blob
    if sha256(blob.read_bytes()) != info.digest:
        raise BackendError(f"checkpoint blob {blob.name} does not match its recorded digest")
    backend.load_state(str(blob))
    return info
