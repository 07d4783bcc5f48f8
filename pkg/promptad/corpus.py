"""
promptad.corpus
---------------
Transcript ingestion and dataset manifests.

CHAT transcripts (manual) and plain-text recognizer output (ASR) are both
normalized into `SubjectRecord`s: ordered utterances with lowercase word
tokens plus the disfluency events met along the way. Only participant
utterances feed `merged_text`, the model input.

CHAT subset handled here:
- `@...` header lines and `%xxx:` dependent tiers are discarded
- `*XXX:` speaker tiers become utterances; tab-indented lines continue the
  previous tier
- pause markers such as `(.)` become Pause events, `&=laughs` Action events,
  lexicon interjections (`uh`, `&um`) Interjection events and stay in tokens
- bracketed codes (`[/]`, `[: word]`, `[+ exc]`, ...) are dropped, while
  retraced words are kept as plain words
"""

from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import re
import string

from .constants import (
    ACTION, AD, ASR, DEFAULT_FOLDS, INTERJECTION, MANIFEST_HEADER, MANUAL, NON_AD,
    PARTICIPANT_TIER, PAUSE, SOURCES, SPLITS, TEST, TRAIN, AD_LABELS,
)
from .disfluency import DEFAULT_LEXICON, DisfluencyLexicon
from .errors import ChatParseError, ManifestError, RecordRejected
from .logger import get_logger
from .utils import seeded_rng

log = get_logger("promptad.corpus")

_TIER_RE = re.compile(r"^\*([A-Za-z0-9_-]+):(.*)$")
_BULLET_RE = re.compile(r"\x15[^\x15]*\x15")
_BRACKET_RE = re.compile(r"\[[^\]]*\]")
_FILLER_PREFIX_RE = re.compile(r"^&[-+~]?")
_PAREN_ONLY_RE = re.compile(r"^\(.*\)$")
_NON_WORD_RE = re.compile(r"[^a-z0-9']")
_PLACEHOLDERS = frozenset({"xxx", "yyy", "www"})
_ASR_PUNCTUATION = string.punctuation

# ADReSS folder names and common spellings accepted in label listings
_LABEL_ALIASES = {
    "ad": AD, "cd": AD, "dementia": AD, "1": AD,
    "nonad": NON_AD, "non-ad": NON_AD, "cc": NON_AD, "control": NON_AD, "healthy": NON_AD, "0": NON_AD,
}
_SPLIT_ALIASES = {"train": TRAIN, "test": TEST}


@dataclass(frozen=True)
class DisfluencyEvent:
    category: str   # Interjection | Pause | Action
    surface: str    # "uh", "(.)", "laughs"


@dataclass(frozen=True)
class Utterance:
    tier: str                       # speaker code, e.g. "PAR", "INV"
    raw: str                        # verbatim tier line
    tokens: Tuple[str, ...] = ()
    events: Tuple[DisfluencyEvent, ...] = ()


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    split: str          # Train | Test
    ad_label: str       # AD | NonAD
    source: str         # Manual | ASR
    utterances: Tuple[Utterance, ...] = ()
    path: str = ""

    @property
    def merged_text(self) -> str:
        return " ".join(
            tok for utt in self.utterances if utt.tier == PARTICIPANT_TIER for tok in utt.tokens
        )


# ---------------------------------------------------------------------------
# CHAT parsing
# ---------------------------------------------------------------------------
def _pause_pattern(lexicon: DisfluencyLexicon) -> re.Pattern:
    alternatives = sorted(lexicon.pause_markers, key=len, reverse=True)
    return re.compile("|".join(re.escape(m) for m in alternatives))


def _normalize_word(raw: str) -> List[str]:
    """One CHAT word form -> zero or more plain lowercase words."""
    word = _FILLER_PREFIX_RE.sub("", raw)
    if word.startswith("0"):
        return []  # omitted word, never spoken
    word = word.split("@", 1)[0]
    if _PAREN_ONLY_RE.match(word):
        return []  # timed pause or other parenthesised code
    word = word.replace("(", "").replace(")", "").lower()
    out = []
    for part in re.split(r"[+_]", word):
        part = _NON_WORD_RE.sub("", part).strip("'")
        if part and part not in _PLACEHOLDERS:
            out.append(part)
    return out


def _analyze_content(content: str, lexicon: DisfluencyLexicon, pauses: re.Pattern):
    text = _BULLET_RE.sub(" ", content)
    text = _BRACKET_RE.sub(" ", text)
    text = pauses.sub(lambda m: f" {m.group(0)} ", text)
    text = text.replace(lexicon.action_prefix, f" {lexicon.action_prefix}")
    text = text.replace("<", " ").replace(">", " ")

    tokens: List[str] = []
    events: List[DisfluencyEvent] = []
    for raw in text.split():
        if raw in lexicon.pause_markers:
            events.append(DisfluencyEvent(PAUSE, raw))
            continue
        if raw.startswith(lexicon.action_prefix):
            events.append(DisfluencyEvent(ACTION, raw[len(lexicon.action_prefix):].lower()))
            continue
        for word in _normalize_word(raw):
            tokens.append(word)
            if word in lexicon.interjections:
                events.append(DisfluencyEvent(INTERJECTION, word))
    return tuple(tokens), tuple(events)


def _logical_lines(file_content: str) -> Iterable[Tuple[int, str]]:
    """Join tab-indented continuation lines onto the line they continue."""
    current: Optional[List] = None
    for line_no, line in enumerate(file_content.splitlines(), start=1):
        if not line.strip():
            continue
        if line[0] in "\t " and current is not None:
            current[1] += " " + line.strip()
            continue
        if current is not None:
            yield current[0], current[1]
        current = [line_no, line.rstrip("\r\n")]
    if current is not None:
        yield current[0], current[1]


def parse_chat(file_content: str, lexicon: Optional[DisfluencyLexicon] = None) -> List[Utterance]:
    """Parse CHAT text into one `Utterance` per speaker-tier line.

    Raises ChatParseError (with the line number) on a `*` line that has no
    colon after the speaker code.
    """
    lexicon = lexicon or DEFAULT_LEXICON
    pauses = _pause_pattern(lexicon)
    utterances: List[Utterance] = []

    for line_no, line in _logical_lines(file_content):
        head = line.lstrip("\ufeff")[:1]
        if head in ("@", "%"):
            continue
        if head != "*":
            log.debug(f"ignoring non-tier line {line_no}: {line[:40]!r}")
            continue
        m = _TIER_RE.match(line.lstrip("\ufeff"))
        if not m:
            raise ChatParseError(line_no, line, "no colon after speaker code")
        tier, content = m.group(1), m.group(2)
        tokens, events = _analyze_content(content, lexicon, pauses)
        utterances.append(Utterance(tier=tier, raw=line, tokens=tokens, events=events))

    return utterances


def chat_record(
    subject_id: str,
    file_content: str,
    *,
    split: str,
    ad_label: str,
    lexicon: Optional[DisfluencyLexicon] = None,
    path: str = "",
) -> SubjectRecord:
    return SubjectRecord(
        subject_id=subject_id,
        split=split,
        ad_label=ad_label,
        source=MANUAL,
        utterances=tuple(parse_chat(file_content, lexicon)),
        path=path,
    )


def ingest_asr(
    subject_id: str,
    plain_text: str,
    lexicon: Optional[DisfluencyLexicon] = None,
    *,
    split: str = TRAIN,
    ad_label: str = NON_AD,
    path: str = "",
) -> SubjectRecord:
    """Wrap recognizer output as a single participant utterance.

    Recognizers only emit words, so interjections are the only events; any
    CHAT-looking symbol such as "(.)" is kept as a literal token. Punctuation
    around a word does not hide it from the lexicon ("Uh," counts as "uh").
    """
    lexicon = lexicon or DEFAULT_LEXICON
    tokens = tuple(plain_text.lower().split())
    if not tokens:
        raise RecordRejected(subject_id, "empty ASR transcript")
    bare = (t.strip(_ASR_PUNCTUATION) for t in tokens)
    events = tuple(DisfluencyEvent(INTERJECTION, w) for w in bare if w in lexicon.interjections)
    utt = Utterance(tier=PARTICIPANT_TIER, raw=plain_text, tokens=tokens, events=events)
    return SubjectRecord(subject_id, split, ad_label, ASR, (utt,), path)


def admit(records: Iterable[SubjectRecord]) -> Tuple[List[SubjectRecord], List[RecordRejected]]:
    """Split records into admissible ones and rejections (empty participant text)."""
    admitted, rejected = [], []
    for rec in records:
        if rec.merged_text:
            admitted.append(rec)
        else:
            rej = RecordRejected(rec.subject_id, "no participant words")
            log.warning(str(rej))
            rejected.append(rej)
    return admitted, rejected


# ---------------------------------------------------------------------------
# Corpus discovery
# ---------------------------------------------------------------------------
def _read_label_listing(path: Path) -> List[Tuple[str, str, str]]:
    rows = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = [p.strip() for p in re.split(r"[\t,;]", line)]
        if line_no == 1 and parts[0].lower() in ("subject_id", "id"):
            continue
        if len(parts) < 3:
            raise ManifestError(f"{path.name} line {line_no}: expected subject_id, split, ad_label")
        sid, split, label = parts[:3]
        split = _SPLIT_ALIASES.get(split.lower(), split)
        label = _LABEL_ALIASES.get(label.lower(), label)
        if split not in SPLITS:
            raise ManifestError(f"{path.name} line {line_no}: unknown split {split!r}")
        if label not in AD_LABELS:
            raise ManifestError(f"{path.name} line {line_no}: unknown label {label!r}")
        rows.append((sid, split, label))
    return rows


def read_record(
    path: Path, subject_id: str, split: str, ad_label: str, source: str,
    lexicon: Optional[DisfluencyLexicon] = None,
) -> SubjectRecord:
    content = Path(path).read_text(encoding="utf-8")
    if source == MANUAL:
        return chat_record(subject_id, content, split=split, ad_label=ad_label, lexicon=lexicon, path=str(path))
    if source == ASR:
        return ingest_asr(subject_id, content, lexicon, split=split, ad_label=ad_label, path=str(path))
    raise ManifestError(f"unknown transcript source {source!r}")


def discover_records(
    data_root: Path,
    source: str = MANUAL,
    lexicon: Optional[DisfluencyLexicon] = None,
    labels_file: str = "labels.tsv",
) -> Tuple[List[SubjectRecord], List[RecordRejected]]:
    """Load every labelled subject under `data_root`.

    Transcripts are matched by file stem anywhere below the root (`.cha` for
    manual transcripts, `.txt` for ASR output).
    """
    root = Path(data_root)
    listing = root / labels_file
    if not listing.is_file():
        raise ManifestError(f"missing label listing {listing}")
    rows = _read_label_listing(listing)
    if not rows:
        raise ManifestError(f"label listing {listing} is empty")

    suffix = ".cha" if source == MANUAL else ".txt"
    index: Dict[str, Path] = {}
    for p in sorted(root.rglob(f"*{suffix}")):
        if p.stem in index:
            raise ManifestError(f"duplicate transcript for {p.stem}: {index[p.stem]} and {p}")
        index[p.stem] = p.resolve()

    missing = [sid for sid, _, _ in rows if sid not in index]
    if missing:
        raise ManifestError(f"no {suffix} transcript for subjects: {', '.join(sorted(missing))}")

    records, rejected = [], []
    for sid, split, label in sorted(rows):
        try:
            records.append(read_record(index[sid], sid, split, label, source, lexicon))
        except RecordRejected as e:
            log.warning(str(e))
            rejected.append(e)
    admitted, empty = admit(records)
    return admitted, rejected + empty


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------
@dataclass
class DatasetManifest:
    records: List[SubjectRecord]
    fold_of: Dict[str, int] = field(default_factory=dict)
    fold_count: int = DEFAULT_FOLDS
    seed: int = 0

    @property
    def train_count(self) -> int:
        return sum(1 for r in self.records if r.split == TRAIN)

    @property
    def test_count(self) -> int:
        return sum(1 for r in self.records if r.split == TEST)

    def train_records(self) -> List[SubjectRecord]:
        return [r for r in self.records if r.split == TRAIN]

    def test_records(self) -> List[SubjectRecord]:
        return [r for r in self.records if r.split == TEST]

    def fold_split(self, fold: int) -> Tuple[List[SubjectRecord], List[SubjectRecord]]:
        """(training records, held-out records) for one CV fold."""
        train = self.train_records()
        missing = [r.subject_id for r in train if r.subject_id not in self.fold_of]
        if missing:
            raise ManifestError(f"no fold assignment for: {', '.join(missing)}")
        return (
            [r for r in train if self.fold_of[r.subject_id] != fold],
            [r for r in train if self.fold_of[r.subject_id] == fold],
        )

    def labels(self, split: Optional[str] = None) -> Dict[str, str]:
        return {r.subject_id: r.ad_label for r in self.records if split is None or r.split == split}


def build_manifest(records: Sequence[SubjectRecord], fold_count: int = DEFAULT_FOLDS, seed: int = 0) -> DatasetManifest:
    """Assign train subjects to `fold_count` folds stratified by AD label.

    Each class is shuffled with the seed, the classes are laid end to end and
    dealt round-robin, so fold sizes differ by at most one and every fold's AD
    count is within one subject of its proportional share.
    """
    if fold_count < 2:
        raise ManifestError(f"fold_count must be >= 2, got {fold_count}")
    seen = set()
    for r in records:
        if r.subject_id in seen:
            raise ManifestError(f"duplicate subject_id {r.subject_id!r}")
        seen.add(r.subject_id)

    train = sorted((r for r in records if r.split == TRAIN), key=lambda r: r.subject_id)
    if len(train) < fold_count:
        raise ManifestError(f"{len(train)} train records cannot fill {fold_count} folds")

    rng = seeded_rng(seed)
    dealt: List[str] = []
    for label in AD_LABELS:
        ids = [r.subject_id for r in train if r.ad_label == label]
        dealt.extend(ids[i] for i in rng.permutation(len(ids)))
    fold_of = {sid: i % fold_count for i, sid in enumerate(dealt)}

    ordered = sorted(records, key=lambda r: (r.split != TRAIN, r.subject_id))
    log.info(f"manifest train={len(train)} test={len(ordered) - len(train)} folds={fold_count} seed={seed}")
    return DatasetManifest(records=list(ordered), fold_of=fold_of, fold_count=fold_count, seed=seed)


def dumps_manifest(manifest: DatasetManifest) -> str:
    lines = [f"{MANIFEST_HEADER}\tfolds={manifest.fold_count}\tseed={manifest.seed}"]
    for r in manifest.records:
        fold = str(manifest.fold_of[r.subject_id]) if r.subject_id in manifest.fold_of else "-"
        lines.append("\t".join([r.subject_id, r.split, r.ad_label, r.source, fold, r.path]))
    return "\n".join(lines) + "\n"


def loads_manifest(text: str, lexicon: Optional[DisfluencyLexicon] = None) -> DatasetManifest:
    """Parse a manifest and re-read every transcript it points to."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MANIFEST_HEADER):
        raise ManifestError(f"manifest must start with {MANIFEST_HEADER!r}")
    meta = dict(kv.split("=", 1) for kv in lines[0].split("\t")[1:] if "=" in kv)
    fold_count = int(meta.get("folds", DEFAULT_FOLDS))
    seed = int(meta.get("seed", 0))

    records, fold_of = [], {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ManifestError(f"manifest line {line_no}: expected 6 fields, got {len(parts)}")
        sid, split, label, source, fold, path = parts
        if split not in SPLITS or label not in AD_LABELS or source not in SOURCES:
            raise ManifestError(f"manifest line {line_no}: bad split/label/source")
        if not path:
            raise ManifestError(f"manifest line {line_no}: no transcript path for {sid}")
        records.append(read_record(Path(path), sid, split, label, source, lexicon))
        if fold != "-":
            fold_of[sid] = int(fold)
    return DatasetManifest(records=records, fold_of=fold_of, fold_count=fold_count, seed=seed)


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(manifest), encoding="utf-8")


def load_manifest(path: Path, lexicon: Optional[DisfluencyLexicon] = None) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    return loads_manifest(path.read_text(encoding="utf-8"), lexicon)
