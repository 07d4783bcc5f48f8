import json
from collections import Counter

import pytest

from promptad.constants import ACTION, AD, ASR, INTERJECTION, MANUAL, NON_AD, PAUSE, TEST, TRAIN
from promptad.corpus import (
    SubjectRecord, admit, build_manifest, chat_record, discover_records, dumps_manifest, ingest_asr,
    load_manifest, loads_manifest, parse_chat, save_manifest,
)
from promptad.disfluency import DEFAULT_LEXICON
from promptad.errors import ChatParseError, ManifestError, RecordRejected


def _as_dicts(utterances):
    return [
        {"tier": u.tier, "tokens": list(u.tokens), "events": [[e.category, e.surface] for e in u.events]}
        for u in utterances
    ]


def _scan_event_count(text: str) -> int:
    """Count disfluency events on speaker tiers by walking characters and whitespace-split words."""
    count = 0
    tier_lines = []
    for line in text.splitlines():
        if line.startswith("*"):
            tier_lines.append(line)
        elif line.startswith("\t") and tier_lines:
            tier_lines[-1] += " " + line.strip()
    for line in tier_lines:
        content = line.split(":", 1)[1]
        i = 0
        while i < len(content):
            if content.startswith("&=", i):
                count += 1
            if content[i] == "(":
                j = i + 1
                while j < len(content) and content[j] == ".":
                    j += 1
                if 1 <= j - i - 1 <= 3 and j < len(content) and content[j] == ")":
                    count += 1
            i += 1
        for word in content.split():
            if word.startswith("&="):
                continue
            for prefix in ("&-", "&+", "&~", "&"):
                if word.startswith(prefix):
                    word = word[len(prefix):]
                    break
            word = "".join(ch for ch in word.lower() if ch.isalnum())
            if word in DEFAULT_LEXICON.interjections:
                count += 1
    return count


# ---------------------------------------------------------------------------
# CHAT parsing
# ---------------------------------------------------------------------------
def test_chat_golden_corpus(chat_dir):
    expected = json.loads((chat_dir / "expected.json").read_text(encoding="utf-8"))
    files = sorted(p.name for p in chat_dir.glob("*.cha"))
    assert len(files) >= 10
    assert sorted(expected) == files
    for name in files:
        parsed = parse_chat((chat_dir / name).read_text(encoding="utf-8"))
        assert _as_dicts(parsed) == expected[name], name


def test_chat_event_counts_match_character_scan(chat_dir):
    for path in sorted(chat_dir.glob("*.cha")):
        text = path.read_text(encoding="utf-8")
        parsed = parse_chat(text)
        assert sum(len(u.events) for u in parsed) == _scan_event_count(text), path.name


def test_spoken_example_line():
    [utt] = parse_chat("*PAR:\tthe boy (.) uh steals cookies .")
    assert utt.tokens == ("the", "boy", "uh", "steals", "cookies")
    assert [e.category for e in utt.events] == [PAUSE, INTERJECTION]
    assert utt.raw == "*PAR:\tthe boy (.) uh steals cookies ."


def test_investigator_only_record_has_empty_merged_text():
    rec = chat_record("s1", "*INV:\ttell me more .\n", split=TRAIN, ad_label=AD)
    assert len(rec.utterances) == 1
    assert rec.merged_text == ""
    admitted, rejected = admit([rec])
    assert admitted == []
    assert rejected[0].subject_id == "s1"


def test_header_only_and_empty_input():
    assert parse_chat("@Begin") == []
    assert parse_chat("") == []


def test_malformed_tier_names_line_number():
    with pytest.raises(ChatParseError) as exc:
        parse_chat("@Begin\n*PAR:\tfine .\n*PAR the boy\n")
    assert exc.value.line_no == 3
    assert "line 3" in str(exc.value)


def test_parsing_is_pure(chat_dir):
    text = (chat_dir / "mixed_tiers.cha").read_text(encoding="utf-8")
    assert parse_chat(text) == parse_chat(text)


def test_merged_text_uses_participant_tiers_only(chat_dir):
    rec = chat_record("m", (chat_dir / "mixed_tiers.cha").read_text(encoding="utf-8"), split=TRAIN, ad_label=AD)
    assert rec.merged_text == "well um a kitchen hm mhm a sink"
    assert rec.source == MANUAL


def test_action_events_carry_the_action_word():
    [utt] = parse_chat("*PAR:\t&=laughs oh .")
    assert [(e.category, e.surface) for e in utt.events] == [(ACTION, "laughs")]
    assert utt.tokens == ("oh",)


def test_action_attached_to_a_word_is_split_off():
    [utt] = parse_chat("*PAR:\tthe boy&=laughs .")
    assert utt.tokens == ("the", "boy")
    assert [(e.category, e.surface) for e in utt.events] == [(ACTION, "laughs")]


# ---------------------------------------------------------------------------
# ASR ingestion
# ---------------------------------------------------------------------------
def test_asr_interjections_by_lexicon_lookup():
    rec = ingest_asr("a1", "uh the boy is on the stool", split=TEST, ad_label=NON_AD)
    [utt] = rec.utterances
    assert rec.source == ASR
    assert [e.category for e in utt.events] == [INTERJECTION]
    assert rec.merged_text == "uh the boy is on the stool"


def test_asr_pause_symbols_are_literal_tokens():
    rec = ingest_asr("a2", "the (.) boy")
    [utt] = rec.utterances
    assert "(.)" in utt.tokens
    assert utt.events == ()


def test_asr_punctuation_does_not_hide_interjections():
    rec = ingest_asr("a4", "Uh, the boy um. is on the stool")
    [utt] = rec.utterances
    assert [(e.category, e.surface) for e in utt.events] == [(INTERJECTION, "uh"), (INTERJECTION, "um")]
    assert utt.tokens[:4] == ("uh,", "the", "boy", "um.")


@pytest.mark.parametrize("text", ["", "   \n"])
def test_asr_empty_text_is_rejected(text):
    with pytest.raises(RecordRejected):
        ingest_asr("a3", text)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------
def _records(n_ad: int, n_non_ad: int, split: str = TRAIN):
    out = []
    for i in range(n_ad + n_non_ad):
        label = AD if i < n_ad else NON_AD
        out.append(SubjectRecord(f"{split}{i:03d}", split, label, ASR))
    return out


def test_108_records_give_eight_folds_of_11_and_two_of_10():
    m = build_manifest(_records(54, 54), fold_count=10, seed=3)
    sizes = sorted(Counter(m.fold_of.values()).values())
    assert sizes == [10, 10] + [11] * 8
    assert set(m.fold_of.values()) == set(range(10))


def test_ten_records_ten_folds_one_each():
    m = build_manifest(_records(5, 5), fold_count=10)
    assert sorted(Counter(m.fold_of.values()).values()) == [1] * 10


@pytest.mark.parametrize("folds", [0, 1])
def test_fold_count_below_two_is_rejected(folds):
    with pytest.raises(ManifestError):
        build_manifest(_records(5, 5), fold_count=folds)


def test_fewer_records_than_folds_is_rejected():
    with pytest.raises(ManifestError):
        build_manifest(_records(2, 2), fold_count=10)


def test_duplicate_subject_is_rejected():
    recs = _records(6, 6)
    with pytest.raises(ManifestError):
        build_manifest(recs + [recs[0]], fold_count=3)


@pytest.mark.parametrize("seed", range(5))
def test_folds_are_stratified(seed):
    recs = _records(40, 68) + _records(10, 10, split=TEST)
    m = build_manifest(recs, fold_count=10, seed=seed)
    train = [r for r in recs if r.split == TRAIN]
    share = sum(r.ad_label == AD for r in train) / len(train)
    for fold in range(10):
        members = [r for r in train if m.fold_of[r.subject_id] == fold]
        n_ad = sum(r.ad_label == AD for r in members)
        assert abs(n_ad - share * len(members)) <= 1
    assert m.train_count + m.test_count == len(recs)
    assert all(r.subject_id not in m.fold_of for r in recs if r.split == TEST)


def test_fold_assignment_is_deterministic_per_seed():
    recs = _records(30, 30)
    assert build_manifest(recs, seed=7).fold_of == build_manifest(recs, seed=7).fold_of
    assert build_manifest(recs, seed=7).fold_of != build_manifest(recs, seed=8).fold_of


def test_fold_split_partitions_train_records():
    m = build_manifest(_records(10, 10), fold_count=4)
    fit, held = m.fold_split(2)
    assert len(fit) + len(held) == 20
    assert {r.subject_id for r in fit}.isdisjoint(r.subject_id for r in held)


def test_manifest_round_trip(chat_corpus, tmp_path):
    root = chat_corpus(n_train=10, n_test=4)
    records, rejected = discover_records(root, MANUAL)
    assert rejected == []
    manifest = build_manifest(records, fold_count=5, seed=2)
    path = tmp_path / "manifest.tsv"
    save_manifest(manifest, path)
    loaded = load_manifest(path)
    assert loaded.records == manifest.records
    assert loaded.fold_of == manifest.fold_of
    assert (loaded.fold_count, loaded.seed) == (5, 2)
    assert dumps_manifest(loaded) == path.read_text(encoding="utf-8")


def test_manifest_rejects_bad_header():
    with pytest.raises(ManifestError):
        loads_manifest("subject\tsplit\n")


# ---------------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------------
def test_discover_records_reads_listing_and_transcripts(chat_corpus):
    root = chat_corpus(n_train=4, n_test=2)
    records, rejected = discover_records(root, MANUAL)
    assert len(records) == 6
    assert rejected == []
    assert {r.split for r in records} == {TRAIN, TEST}
    assert all(r.merged_text for r in records)


def test_discover_records_without_listing_fails(tmp_path):
    with pytest.raises(ManifestError):
        discover_records(tmp_path, MANUAL)


def test_discover_records_missing_transcript_fails(chat_corpus):
    root = chat_corpus(n_train=4, n_test=2)
    next(root.rglob("*.cha")).unlink()
    with pytest.raises(ManifestError):
        discover_records(root, MANUAL)


def test_discover_records_sets_aside_investigator_only_subjects(chat_corpus):
    root = chat_corpus(n_train=4, n_test=2)
    (root / "train" / "Str000.cha").write_text("@Begin\n*INV:\thello .\n@End\n", encoding="utf-8")
    records, rejected = discover_records(root, MANUAL)
    assert len(records) == 5
    assert [r.subject_id for r in rejected] == ["Str000"]
