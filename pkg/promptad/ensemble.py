"""
promptad.ensemble
-----------------
Hard-decision majority voting: over the captured epochs of one run, and over
the runs of several systems combined by a named preset.

Seed pairing of combined systems:
- SameSeed: every member contributes its run with the same seed
- FullCartesian: members are grouped by PLM; runs within a group share a
  seed, and every cross-group seed combination is evaluated (two PLMs with
  15 seeds each give 15 x 15 = 225 combined decision vectors)
"""

from __future__ import annotations
from collections import Counter
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .constants import (
    AD, AD_LABELS, FULL_CARTESIAN, NON_AD, POOL_SUB_DECISIONS, POSITION_NA, PREFER_AD,
    PREFER_NON_AD, SAME_SEED, TIE_POLICIES, VOTED,
)
from .errors import EnsembleError
from .logger import get_logger
from .trainer import DecisionRow, SystemRun, dumps_rows, loads_rows

log = get_logger("promptad.ensemble")

# paradigm column of combined decision files
COMBINED = "combined"


def majority_vote(
    decisions: Sequence[str],
    tie_policy: str = POOL_SUB_DECISIONS,
    sub_decisions: Optional[Sequence[str]] = None,
) -> str:
    """Strict-majority label of `decisions`.

    Ties follow `tie_policy`; PoolSubDecisions re-votes over `sub_decisions`
    (the constituent epoch decisions) and falls back to AD when those tie too
    or are not given.
    """
    if not decisions:
        raise EnsembleError("cannot vote over an empty decision list")
    if tie_policy not in TIE_POLICIES:
        raise EnsembleError(f"unknown tie policy {tie_policy!r}")
    counts = Counter(decisions)
    unknown = set(counts) - set(AD_LABELS)
    if unknown:
        raise EnsembleError(f"unknown decision label(s): {', '.join(sorted(unknown))}")

    if counts[AD] > counts[NON_AD]:
        return AD
    if counts[NON_AD] > counts[AD]:
        return NON_AD
    if tie_policy == PREFER_NON_AD:
        return NON_AD
    if tie_policy == POOL_SUB_DECISIONS and sub_decisions:
        return majority_vote(sub_decisions, PREFER_AD)
    return AD


@dataclass
class DecisionVector:
    decisions: Dict[str, str]
    system_id: str
    seeds: Tuple[int, ...]
    tie_policy: str
    epoch: str = VOTED

    @property
    def provenance(self) -> Tuple[str, Tuple[int, ...], str]:
        return self.system_id, self.seeds, self.epoch

    @property
    def seed_label(self) -> str:
        return "+".join(str(s) for s in self.seeds)


def vote_run(run: SystemRun, tie_policy: str = POOL_SUB_DECISIONS) -> DecisionVector:
    """Per subject, vote over the run's captured epoch decisions."""
    if not run.epoch_decisions:
        raise EnsembleError(f"run {run.system_id} seed={run.seed} has no captured epochs")
    decisions = {sid: majority_vote(run.decisions_for(sid), tie_policy) for sid in run.subjects}
    return DecisionVector(decisions, run.system_id, (run.seed,), tie_policy)


def accuracy(vector: DecisionVector, gold: Mapping[str, str]) -> float:
    if set(vector.decisions) != set(gold):
        raise EnsembleError(f"decision vector {vector.system_id} covers a different subject set than the gold labels")
    if not gold:
        raise EnsembleError("accuracy over an empty subject set")
    return sum(vector.decisions[s] == gold[s] for s in gold) / len(gold)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CombinationPreset:
    name: str
    members: Tuple[str, ...]
    seed_pairing: str

    @property
    def per_plm(self) -> bool:
        return any("{plm}" in m for m in self.members)

    def member_ids(self, plm: Optional[str] = None) -> Tuple[str, ...]:
        if self.per_plm:
            if not plm:
                raise EnsembleError(f"preset {self.name!r} needs a PLM")
            return tuple(m.format(plm=plm) for m in self.members)
        return self.members

    def system_id(self, plm: Optional[str] = None) -> str:
        return f"{plm}:{self.name}" if self.per_plm else self.name


PRESETS: Dict[str, CombinationPreset] = {
    p.name: p
    for p in (
        CombinationPreset("front+back", ("{plm}:prompt:front", "{plm}:prompt:back"), SAME_SEED),
        CombinationPreset("mlm+front+back", ("{plm}:mlm", "{plm}:prompt:front", "{plm}:prompt:back"), SAME_SEED),
        CombinationPreset("bert+roberta:mlm", ("bert:mlm", "roberta:mlm"), FULL_CARTESIAN),
        CombinationPreset("bert+roberta:front", ("bert:prompt:front", "roberta:prompt:front"), FULL_CARTESIAN),
        CombinationPreset("bert+roberta:back", ("bert:prompt:back", "roberta:prompt:back"), FULL_CARTESIAN),
        CombinationPreset(
            "bert+roberta:prompt",
            ("bert:prompt:front", "bert:prompt:back", "roberta:prompt:front", "roberta:prompt:back"),
            FULL_CARTESIAN,
        ),
        CombinationPreset(
            "bert+roberta:all",
            ("bert:mlm", "bert:prompt:front", "bert:prompt:back",
             "roberta:mlm", "roberta:prompt:front", "roberta:prompt:back"),
            FULL_CARTESIAN,
        ),
    )
}

SINGLE_PLMS = ("bert", "roberta")


def resolve_preset(name: str) -> CombinationPreset:
    if name not in PRESETS:
        raise EnsembleError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    return PRESETS[name]


def report_order() -> List[str]:
    """System ids in report row order: per PLM singles and combinations, then cross-PLM presets."""
    order: List[str] = []
    for plm in SINGLE_PLMS:
        order += [f"{plm}:mlm", f"{plm}:prompt:front", f"{plm}:prompt:back"]
        order += [p.system_id(plm) for p in PRESETS.values() if p.per_plm]
    order += [p.system_id() for p in PRESETS.values() if not p.per_plm]
    return order


def _plm_of(system_id: str) -> str:
    return system_id.split(":", 1)[0]


def seed_tuples(members: Sequence[str], seeds_of: Mapping[str, Sequence[int]], pairing: str) -> List[Tuple[int, ...]]:
    """Per-member seed tuples dictated by `pairing`."""
    if pairing == SAME_SEED:
        common = set.intersection(*(set(seeds_of[m]) for m in members))
        return [tuple(s for _ in members) for s in sorted(common)]
    if pairing == FULL_CARTESIAN:
        groups: Dict[str, List[str]] = {}
        for m in members:
            groups.setdefault(_plm_of(m), []).append(m)
        group_seeds = [sorted(set.intersection(*(set(seeds_of[m]) for m in g))) for g in groups.values()]
        group_index = {m: i for i, g in enumerate(groups.values()) for m in g}
        return [tuple(combo[group_index[m]] for m in members) for combo in product(*group_seeds)]
    raise EnsembleError(f"unknown seed pairing {pairing!r}")


def combine_runs(
    runs: Sequence[SystemRun],
    preset: CombinationPreset,
    tie_policy: str = POOL_SUB_DECISIONS,
    plm: Optional[str] = None,
) -> Dict[Tuple[int, ...], DecisionVector]:
    """Fuse the member runs of `preset`, one decision vector per seed tuple.

    PoolSubDecisions votes per subject over every member's epoch decisions
    jointly; the other policies vote over each member's own voted decision.
    """
    if tie_policy not in TIE_POLICIES:
        raise EnsembleError(f"unknown tie policy {tie_policy!r}")
    members = preset.member_ids(plm)
    by_member: Dict[str, Dict[int, SystemRun]] = {}
    for run in runs:
        by_member.setdefault(run.system_id, {})[run.seed] = run
    missing = [m for m in dict.fromkeys(members) if not by_member.get(m)]
    if missing:
        raise EnsembleError(f"preset {preset.name!r} has no runs for: {', '.join(missing)}")

    subject_sets = {frozenset(r.subjects) for m in members for r in by_member[m].values()}
    if len(subject_sets) != 1:
        raise EnsembleError(f"member runs of {preset.name!r} cover different subject sets")
    subjects = sorted(next(iter(subject_sets)))

    tuples = seed_tuples(members, {m: list(by_member[m]) for m in members}, preset.seed_pairing)
    if not tuples:
        raise EnsembleError(f"member runs of {preset.name!r} share no seeds")

    system_id = preset.system_id(plm)
    combined: Dict[Tuple[int, ...], DecisionVector] = {}
    for seeds in tuples:
        member_runs = [by_member[m][s] for m, s in zip(members, seeds)]
        decisions = {}
        for sid in subjects:
            epoch_votes = [d for r in member_runs for d in r.decisions_for(sid)]
            if tie_policy == POOL_SUB_DECISIONS:
                decisions[sid] = majority_vote(epoch_votes, POOL_SUB_DECISIONS)
            else:
                system_votes = [majority_vote(r.decisions_for(sid), tie_policy) for r in member_runs]
                decisions[sid] = majority_vote(system_votes, tie_policy)
        combined[seeds] = DecisionVector(decisions, system_id, seeds, tie_policy)
    log.info(f"combined {system_id}: {len(combined)} seed tuple(s), pairing={preset.seed_pairing}")
    return combined


# ---------------------------------------------------------------------------
# Serialization, same row format as stored runs with epoch "voted"
# ---------------------------------------------------------------------------
def dump_vector(vector: DecisionVector, multi_task: bool = False) -> str:
    plm = vector.system_id.split(":", 1)[0]
    rows = [
        DecisionRow(vector.system_id, plm, COMBINED, POSITION_NA, multi_task, vector.seed_label, vector.epoch, sid, d)
        for sid, d in sorted(vector.decisions.items())
    ]
    return dumps_rows(rows, [f"#tie_policy\t{vector.tie_policy}"])


def load_vector(text: str) -> DecisionVector:
    rows, meta = loads_rows(text)
    if not rows:
        raise EnsembleError("decision file holds no decisions")
    tie_policy = POOL_SUB_DECISIONS
    for m in meta:
        parts = m.split("\t")
        if parts[0] == "#tie_policy" and len(parts) == 2:
            tie_policy = parts[1]
    first = rows[0]
    seeds = tuple(int(s) for s in first.seed.split("+"))
    return DecisionVector({r.subject_id: r.decision for r in rows}, first.system_id, seeds, tie_policy, first.epoch)
