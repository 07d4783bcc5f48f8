# promptad/storage/__init__.py

from .models import RunKey, StatsKey
from .provider import RunStore
from .providers.memory_provider import InMemoryRunStore
from .providers.directory_provider import DirectoryRunStore
import os


def load_run_store(config: dict | None = None) -> RunStore:
    """
    Factory resolver for selecting the run store.

    For now:
        - directory (default)
        - memory
    """
    config = config or {}
    provider = config.get("provider") or os.getenv("PROMPTAD_STORE_PROVIDER", "directory")

    if provider == "memory":
        return InMemoryRunStore()

    if provider == "directory":
        root = config.get("root") or os.getenv("PROMPTAD_OUTPUT_DIR", "runs")
        return DirectoryRunStore(root)

    raise ValueError(f"Unknown run store provider: {provider}")


__all__ = [
    "RunKey",
    "StatsKey",
    "RunStore",
    "InMemoryRunStore",
    "DirectoryRunStore",
    "load_run_store",
]
