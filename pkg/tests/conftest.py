from pathlib import Path

import numpy as np
import pytest

from promptad.backend import TOY, backend_factory
from promptad.constants import AD, NON_AD, TEST, TRAIN
from promptad.corpus import ingest_asr
from promptad.prompting import default_template, validate_verbalizer, vocabulary_words, Verbalizer

FIXTURES = Path(__file__).parent / "fixtures"

FILLERS = ("boy", "girl", "cookie", "jar", "stool", "sink", "water", "mother", "window", "plate", "dishes", "curtain")
AD_MARKERS = ("forgot", "whatsit", "thingy")
NON_AD_MARKERS = ("overflowing", "reaching", "washing")


def planted_text(rng: np.random.Generator, label: str, n_fillers: int = 4, n_markers: int = 4) -> str:
    """Filler words plus class-specific marker words, shuffled."""
    markers = AD_MARKERS if label == AD else NON_AD_MARKERS
    words = list(rng.choice(FILLERS, n_fillers)) + list(rng.choice(markers, n_markers))
    return " ".join(words[i] for i in rng.permutation(len(words)))


def planted_records(n_train: int = 100, n_test: int = 40, seed: int = 0):
    """Balanced ASR-style records whose label is readable from marker words."""
    rng = np.random.default_rng(seed)
    out = {TRAIN: [], TEST: []}
    for split, n in ((TRAIN, n_train), (TEST, n_test)):
        for i in range(n):
            label = AD if i % 2 == 0 else NON_AD
            sid = f"{split[:2].lower()}{i:03d}"
            out[split].append(ingest_asr(sid, planted_text(rng, label), split=split, ad_label=label))
    return out[TRAIN], out[TEST]


@pytest.fixture
def chat_dir() -> Path:
    return FIXTURES / "chat"


@pytest.fixture
def planted():
    return planted_records


@pytest.fixture
def toy_backend():
    """Builder for toy backends whose vocabulary covers the template and label words."""
    def build(records, *, template=None, verbalizer=None, seed=0, plm="toy", **options):
        template = template or default_template()
        verbalizer = verbalizer or Verbalizer()
        return backend_factory(
            plm,
            seed=seed,
            texts=[r.merged_text for r in records],
            extra_words=vocabulary_words(template, verbalizer),
            options={"mode": TOY, **options},
        )
    return build


@pytest.fixture
def resolved_verbalizer():
    def resolve(backend, verbalizer=None):
        return validate_verbalizer(verbalizer or Verbalizer(), backend.tokenizer)
    return resolve


def write_chat_corpus(root: Path, n_train: int = 12, n_test: int = 4, seed: int = 0) -> Path:
    """CHAT transcripts with planted markers plus a labels.tsv listing."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    lines = ["subject_id\tsplit\tad_label"]
    for split, n in (("train", n_train), ("test", n_test)):
        folder = root / split
        folder.mkdir(exist_ok=True)
        for i in range(n):
            label = AD if i % 2 == 0 else NON_AD
            sid = f"S{split[:2]}{i:03d}"
            hesitation = " uh (.)" * (3 if label == AD else int(rng.integers(0, 2)))
            body = planted_text(rng, label)
            (folder / f"{sid}.cha").write_text(
                f"@Begin\n*INV:\ttell me what you see .\n*PAR:\t{body}{hesitation} .\n@End\n", encoding="utf-8",
            )
            lines.append(f"{sid}\t{split}\t{label}")
    (root / "labels.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


@pytest.fixture
def chat_corpus(tmp_path):
    def build(name: str = "corpus", **kwargs) -> Path:
        return write_chat_corpus(tmp_path / name, **kwargs)
    return build
