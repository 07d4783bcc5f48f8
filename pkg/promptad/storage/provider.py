# promptad/storage/provider.py
"""
RunStore is the persistence contract for trained runs, combined decision
vectors and accuracy statistics. The CLI and the report rely on this
interface only.
"""

from typing import Dict, List, Optional, Protocol, Tuple, TYPE_CHECKING

if TYPE_CHECKING:
    from promptad.ensemble import DecisionVector
    from promptad.evaluation import AccuracyStats
    from promptad.trainer import SystemRun


class RunStore(Protocol):
    """Canonical storage contract for stored runs."""

    # --- single-system runs ---
    def save_run(self, condition: str, split: str, run: "SystemRun") -> None: ...
    def load_run(self, condition: str, split: str, system_id: str, seed: int) -> Optional["SystemRun"]: ...
    def has_run(self, condition: str, split: str, system_id: str, seed: int) -> bool: ...
    def list_runs(self, condition: str, split: str, system_id: Optional[str] = None) -> List["SystemRun"]: ...

    # --- combined systems ---
    def save_combined(self, condition: str, split: str, vector: "DecisionVector") -> None: ...
    def list_combined(self, condition: str, split: str, system_id: str) -> List["DecisionVector"]: ...

    # --- statistics ---
    def save_stats(self, condition: str, system_id: str, stats: Dict[str, "AccuracyStats"]) -> None: ...
    def load_stats(self, condition: str, system_id: str) -> Dict[str, "AccuracyStats"]: ...
    def list_stats(self) -> List[Tuple[str, str]]: ...
