"""
promptad.disfluency
-------------------
Per-subject disfluency counts and the Stumbling / Fluent labelling used by the
multi-task prompt.

Two threshold selectors are provided:

- by correlation: the threshold whose Stumbling/Fluent split has the highest
  phi coefficient with the AD/non-AD split (manual transcripts)
- by split matching: the threshold whose Stumbling proportion is closest to a
  reference labelling's proportion (ASR transcripts, where pauses and actions
  cannot be transcribed)
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np
from sklearn.metrics import matthews_corrcoef

from .constants import (
    ACTION, AD, DEFAULT_ACTION_PREFIX, DEFAULT_INTERJECTIONS, DEFAULT_PAUSE_MARKERS,
    FLUENT, INTERJECTION, PARTICIPANT_TIER, PAUSE, PROFILES_HEADER, STUMBLING,
)
from .errors import ThresholdError
from .logger import get_logger

if TYPE_CHECKING:
    from .corpus import SubjectRecord

log = get_logger("promptad.disfluency")

# phi / proportion values closer than this are treated as ties
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DisfluencyLexicon:
    """Explicit disfluency vocabulary used while parsing and profiling."""
    interjections: FrozenSet[str] = frozenset(DEFAULT_INTERJECTIONS)
    pause_markers: FrozenSet[str] = frozenset(DEFAULT_PAUSE_MARKERS)
    action_prefix: str = DEFAULT_ACTION_PREFIX

    def __post_init__(self):
        object.__setattr__(self, "interjections", frozenset(w.lower() for w in self.interjections))
        object.__setattr__(self, "pause_markers", frozenset(self.pause_markers))
        if not self.interjections:
            raise ValueError("lexicon needs at least one interjection word")
        if not self.pause_markers:
            raise ValueError("lexicon needs at least one pause marker")
        if not self.action_prefix:
            raise ValueError("lexicon needs an action prefix")

    def to_dict(self) -> Dict[str, object]:
        return {
            "interjections": sorted(self.interjections),
            "pause_markers": sorted(self.pause_markers, key=len),
            "action_prefix": self.action_prefix,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "DisfluencyLexicon":
        return cls(
            interjections=frozenset(data.get("interjections", DEFAULT_INTERJECTIONS)),
            pause_markers=frozenset(data.get("pause_markers", DEFAULT_PAUSE_MARKERS)),
            action_prefix=str(data.get("action_prefix", DEFAULT_ACTION_PREFIX)),
        )


DEFAULT_LEXICON = DisfluencyLexicon()


@dataclass(frozen=True)
class DisfluencyProfile:
    subject_id: str
    count_interjection: int = 0
    count_pause: int = 0
    count_action: int = 0

    @property
    def total(self) -> int:
        return self.count_interjection + self.count_pause + self.count_action


@dataclass
class FluencyLabeling:
    threshold: int
    labels: Dict[str, str] = field(default_factory=dict)

    @property
    def stumbling_count(self) -> int:
        return sum(1 for v in self.labels.values() if v == STUMBLING)

    @property
    def fluent_count(self) -> int:
        return sum(1 for v in self.labels.values() if v == FLUENT)

    @property
    def stumbling_proportion(self) -> float:
        return self.stumbling_count / len(self.labels) if self.labels else 0.0


def profile(record: "SubjectRecord", lexicon: Optional[DisfluencyLexicon] = None) -> DisfluencyProfile:
    """Tally disfluency events over the participant utterances of one record.

    Interjection events whose word is not in `lexicon` are not counted, so a
    record parsed with a broad lexicon can be re-profiled with a narrower one.
    """
    lexicon = lexicon or DEFAULT_LEXICON
    counts = {INTERJECTION: 0, PAUSE: 0, ACTION: 0}
    for utt in record.utterances:
        if utt.tier != PARTICIPANT_TIER:
            continue
        for ev in utt.events:
            if ev.category == INTERJECTION and ev.surface not in lexicon.interjections:
                continue
            counts[ev.category] += 1
    return DisfluencyProfile(
        subject_id=record.subject_id,
        count_interjection=counts[INTERJECTION],
        count_pause=counts[PAUSE],
        count_action=counts[ACTION],
    )


def label_by_threshold(profiles: Iterable[DisfluencyProfile], threshold: int) -> FluencyLabeling:
    """Stumbling iff total >= threshold; works on any population (train or test)."""
    if threshold < 0:
        raise ThresholdError(f"threshold must be non-negative, got {threshold}")
    labels = {p.subject_id: (STUMBLING if p.total >= threshold else FLUENT) for p in profiles}
    return FluencyLabeling(threshold=threshold, labels=labels)


def _candidate_thresholds(profiles: Sequence[DisfluencyProfile]) -> range:
    # 0 makes everyone Stumbling, max_total + 1 makes everyone Fluent
    return range(0, max(p.total for p in profiles) + 2)


def phi_coefficient(stumbling: np.ndarray, is_ad: np.ndarray) -> float:
    """Phi of two binary variables; degenerate 2x2 tables score 0."""
    if stumbling.all() or not stumbling.any() or is_ad.all() or not is_ad.any():
        return 0.0
    return float(matthews_corrcoef(is_ad, stumbling))


def select_threshold_by_correlation(
    profiles: Sequence[DisfluencyProfile],
    ad_labels: Mapping[str, str],
) -> FluencyLabeling:
    """Exhaustive threshold search maximizing phi against the AD labels."""
    profiles = list(profiles)
    ids = {p.subject_id for p in profiles}
    if not profiles:
        raise ThresholdError("no profiles to select a threshold from")
    if ids != set(ad_labels):
        raise ThresholdError("profiles and AD labels cover different subject sets")

    is_ad = np.array([ad_labels[p.subject_id] == AD for p in profiles])
    if is_ad.all() or not is_ad.any():
        raise ThresholdError("AD labels contain a single class; correlation is undefined")

    totals = np.array([p.total for p in profiles])
    best_t, best_phi = 0, -np.inf
    for t in _candidate_thresholds(profiles):
        phi = phi_coefficient(totals >= t, is_ad)
        if phi > best_phi + TIE_TOLERANCE:
            best_t, best_phi = t, phi

    labeling = label_by_threshold(profiles, best_t)
    log.info(
        f"correlation threshold={best_t} phi={best_phi:.4f} "
        f"split={labeling.stumbling_count}/{labeling.fluent_count}"
    )
    return labeling


def select_threshold_by_split_match(
    profiles: Sequence[DisfluencyProfile],
    reference_labeling: FluencyLabeling,
) -> FluencyLabeling:
    """Threshold whose Stumbling proportion is closest to the reference's."""
    profiles = list(profiles)
    if not profiles:
        raise ThresholdError("no profiles to select a threshold from")
    if not reference_labeling.labels:
        raise ThresholdError("reference labelling is empty")

    target = reference_labeling.stumbling_proportion
    totals = np.array([p.total for p in profiles])
    best_t, best_dist = 0, np.inf
    for t in _candidate_thresholds(profiles):
        dist = abs(float(np.mean(totals >= t)) - target)
        if dist < best_dist - TIE_TOLERANCE:
            best_t, best_dist = t, dist

    labeling = label_by_threshold(profiles, best_t)
    log.info(
        f"split-match threshold={best_t} target={target:.4f} "
        f"split={labeling.stumbling_count}/{labeling.fluent_count}"
    )
    return labeling


# ---------------------------------------------------------------------------
# Serialization: subject_id, c_int, c_pause, c_action, total, label
# ---------------------------------------------------------------------------
def dump_profiles(profiles: Iterable[DisfluencyProfile], labeling: Optional[FluencyLabeling] = None) -> str:
    lines = [PROFILES_HEADER if labeling is None else f"{PROFILES_HEADER} threshold={labeling.threshold}"]
    for p in sorted(profiles, key=lambda p: p.subject_id):
        label = labeling.labels.get(p.subject_id, "-") if labeling else "-"
        lines.append("\t".join([
            p.subject_id, str(p.count_interjection), str(p.count_pause),
            str(p.count_action), str(p.total), label,
        ]))
    return "\n".join(lines) + "\n"


def load_profiles(text: str) -> Tuple[List[DisfluencyProfile], Dict[str, str]]:
    """Inverse of `dump_profiles`; returns profiles and the label map (labelled rows only)."""
    profiles: List[DisfluencyProfile] = []
    labels: Dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ThresholdError(f"profiles line {line_no}: expected 6 fields, got {len(parts)}")
        sid, c_int, c_pause, c_action, total, label = parts
        p = DisfluencyProfile(sid, int(c_int), int(c_pause), int(c_action))
        if p.total != int(total):
            raise ThresholdError(f"profiles line {line_no}: total {total} != sum of counts {p.total}")
        profiles.append(p)
        if label != "-":
            labels[sid] = label
    return profiles, labels
