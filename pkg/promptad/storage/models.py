# promptad/storage/models.py
from __future__ import annotations
from dataclasses import dataclass

from ..utils import safe_name


@dataclass(frozen=True)
class RunKey:
    """
    Storage-level address of one decision file.

    `seed_label` is the run seed ("7") or, for combined systems, the
    per-member seed tuple ("3+3+7").
    """
    condition: str      # manual | manual+disfl | asr | asr+disfl
    split: str          # cv | test
    system_id: str
    seed_label: str
    combined: bool = False

    def relpath(self) -> str:
        kind = "combined" if self.combined else "runs"
        stem = self.seed_label if self.combined else f"seed{self.seed_label}"
        return f"{self.condition}/{kind}/{self.split}/{safe_name(self.system_id)}/{stem}.tsv"


@dataclass(frozen=True)
class StatsKey:
    condition: str
    system_id: str

    def relpath(self) -> str:
        return f"{self.condition}/stats/{safe_name(self.system_id)}.tsv"
