from typing import Dict, List, Optional, Tuple

from promptad.ensemble import DecisionVector
from promptad.evaluation import AccuracyStats
from promptad.storage.models import RunKey, StatsKey
from promptad.storage.provider import RunStore
from promptad.trainer import SystemRun


class InMemoryRunStore(RunStore):
    def __init__(self):
        self.runs: Dict[RunKey, SystemRun] = {}
        self.combined: Dict[RunKey, DecisionVector] = {}
        self.stats: Dict[StatsKey, Dict[str, AccuracyStats]] = {}

    # runs
    def save_run(self, condition: str, split: str, run: SystemRun):
        self.runs[RunKey(condition, split, run.system_id, str(run.seed))] = run

    def load_run(self, condition: str, split: str, system_id: str, seed: int) -> Optional[SystemRun]:
        return self.runs.get(RunKey(condition, split, system_id, str(seed)))

    def has_run(self, condition: str, split: str, system_id: str, seed: int) -> bool:
        return RunKey(condition, split, system_id, str(seed)) in self.runs

    def list_runs(self, condition: str, split: str, system_id: Optional[str] = None) -> List[SystemRun]:
        found = [
            run for key, run in self.runs.items()
            if key.condition == condition and key.split == split and system_id in (None, key.system_id)
        ]
        return sorted(found, key=lambda r: (r.system_id, r.seed))

    # combined
    def save_combined(self, condition: str, split: str, vector: DecisionVector):
        self.combined[RunKey(condition, split, vector.system_id, vector.seed_label, combined=True)] = vector

    def list_combined(self, condition: str, split: str, system_id: str) -> List[DecisionVector]:
        found = [
            v for key, v in self.combined.items()
            if (key.condition, key.split, key.system_id) == (condition, split, system_id)
        ]
        return sorted(found, key=lambda v: v.seeds)

    # stats
    def save_stats(self, condition: str, system_id: str, stats: Dict[str, AccuracyStats]):
        self.stats.setdefault(StatsKey(condition, system_id), {}).update(stats)

    def load_stats(self, condition: str, system_id: str) -> Dict[str, AccuracyStats]:
        return dict(self.stats.get(StatsKey(condition, system_id), {}))

    def list_stats(self) -> List[Tuple[str, str]]:
        return sorted((k.condition, k.system_id) for k in self.stats)
