from __future__ import annotations
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from promptad.ensemble import DecisionVector, dump_vector, load_vector
from promptad.errors import PromptADError, StoreError
from promptad.evaluation import AccuracyStats, dump_stats, load_stats
from promptad.logger import get_logger
from promptad.storage.models import RunKey, StatsKey
from promptad.storage.provider import RunStore
from promptad.trainer import SystemRun, dump_run, load_run
from promptad.utils import safe_name

log = get_logger("promptad.storage")


class DirectoryRunStore(RunStore):
    """
    Plain-text files under one output directory:

        <root>/<condition>/runs/<split>/<system>/seed<seed>.tsv
        <root>/<condition>/combined/<split>/<system>/<seed-tuple>.tsv
        <root>/<condition>/stats/<system>.tsv
    """

    def __init__(self, root="runs"):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _write(self, relpath: str, text: str) -> None:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        # files appear atomically
        tmp = path.with_suffix(".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
        log.debug(f"wrote {path}")

    def _read(self, path: Path, loader):
        try:
            return loader(path.read_text(encoding="utf-8"))
        except PromptADError as e:
            raise StoreError(f"{path}: {e}") from e

    # runs
    def save_run(self, condition: str, split: str, run: SystemRun):
        self._write(RunKey(condition, split, run.system_id, str(run.seed)).relpath(), dump_run(run))

    def load_run(self, condition: str, split: str, system_id: str, seed: int) -> Optional[SystemRun]:
        path = self.root / RunKey(condition, split, system_id, str(seed)).relpath()
        return self._read(path, load_run) if path.is_file() else None

    def has_run(self, condition: str, split: str, system_id: str, seed: int) -> bool:
        return (self.root / RunKey(condition, split, system_id, str(seed)).relpath()).is_file()

    def list_runs(self, condition: str, split: str, system_id: Optional[str] = None) -> List[SystemRun]:
        base = self.root / condition / "runs" / split
        pattern = f"{safe_name(system_id)}/seed*.tsv" if system_id else "*/seed*.tsv"
        runs = [self._read(p, load_run) for p in sorted(base.glob(pattern))] if base.is_dir() else []
        return sorted(runs, key=lambda r: (r.system_id, r.seed))

    # combined
    def save_combined(self, condition: str, split: str, vector: DecisionVector):
        key = RunKey(condition, split, vector.system_id, vector.seed_label, combined=True)
        self._write(key.relpath(), dump_vector(vector))

    def list_combined(self, condition: str, split: str, system_id: str) -> List[DecisionVector]:
        base = self.root / condition / "combined" / split / safe_name(system_id)
        vectors = [self._read(p, load_vector) for p in sorted(base.glob("*.tsv"))] if base.is_dir() else []
        return sorted(vectors, key=lambda v: v.seeds)

    # stats
    def save_stats(self, condition: str, system_id: str, stats: Dict[str, AccuracyStats]):
        key = StatsKey(condition, system_id)
        path = self.root / key.relpath()
        merged = self._read(path, load_stats) if path.is_file() else {}
        merged.update(stats)
        self._write(key.relpath(), dump_stats(merged, system_id))

    def load_stats(self, condition: str, system_id: str) -> Dict[str, AccuracyStats]:
        path = self.root / StatsKey(condition, system_id).relpath()
        return self._read(path, load_stats) if path.is_file() else {}

    def list_stats(self) -> List[Tuple[str, str]]:
        found = []
        for path in sorted(self.root.glob("*/stats/*.tsv")):
            condition = path.parent.parent.name
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.startswith("#system\t"):
                    found.append((condition, line.split("\t", 1)[1]))
                    break
        return sorted(found)
