import pytest

from promptad.constants import AD, CV, NON_AD, PREFER_AD, TEST_SPLIT
from promptad.ensemble import DecisionVector
from promptad.errors import StoreError
from promptad.evaluation import AccuracyStats
from promptad.storage import DirectoryRunStore, InMemoryRunStore, RunKey, StatsKey, load_run_store
from promptad.trainer import EpochDecisions, SystemRun, TrainConfig


def _run(seed, position="back"):
    cfg = TrainConfig(plm="bert", prompt_position=position, seed=seed)
    return SystemRun(cfg, [EpochDecisions(e, {"s1": AD, "s2": NON_AD}, 0.5) for e in (8, 9, 10)])


@pytest.fixture(params=["memory", "directory"])
def store(request, tmp_path):
    if request.param == "memory":
        return InMemoryRunStore()
    return DirectoryRunStore(tmp_path / "runs")


def test_run_keys_map_to_paths():
    assert RunKey("manual", CV, "bert:prompt:back", "7").relpath() == "manual/runs/cv/bert__prompt__back/seed7.tsv"
    assert RunKey("asr+disfl", TEST_SPLIT, "bert+roberta:all", "3+7", combined=True).relpath() == (
        "asr+disfl/combined/test/bert+roberta__all/3+7.tsv"
    )
    assert StatsKey("manual", "bert:mlm").relpath() == "manual/stats/bert__mlm.tsv"


def test_runs_round_trip(store):
    store.save_run("manual", CV, _run(1))
    store.save_run("manual", CV, _run(0))
    store.save_run("manual", CV, _run(0, position="front"))

    assert store.has_run("manual", CV, "bert:prompt:back", 0)
    assert not store.has_run("manual", TEST_SPLIT, "bert:prompt:back", 0)
    assert store.load_run("manual", CV, "bert:prompt:back", 5) is None

    loaded = store.load_run("manual", CV, "bert:prompt:back", 1)
    assert loaded.epochs == [8, 9, 10]
    assert loaded.decisions_for("s1") == [AD, AD, AD]

    back = store.list_runs("manual", CV, "bert:prompt:back")
    assert [r.seed for r in back] == [0, 1]
    assert len(store.list_runs("manual", CV)) == 3
    assert store.list_runs("asr", CV) == []


def test_combined_vectors_listed_by_seed(store):
    for seeds in [(2, 1), (0, 3)]:
        store.save_combined("manual", TEST_SPLIT, DecisionVector({"s1": AD}, "bert+roberta:mlm", seeds, PREFER_AD))
    listed = store.list_combined("manual", TEST_SPLIT, "bert+roberta:mlm")
    assert [v.seeds for v in listed] == [(0, 3), (2, 1)]
    assert listed[0].tie_policy == PREFER_AD
    assert store.list_combined("manual", CV, "bert+roberta:mlm") == []


def test_stats_merge_per_split(store):
    store.save_stats("manual", "bert:mlm", {CV: AccuracyStats(0.8, 0.01, 0.82, 15)})
    store.save_stats("manual", "bert:mlm", {TEST_SPLIT: AccuracyStats(0.75, 0.02, 0.79, 15)})
    store.save_stats("asr", "bert:prompt:front", {CV: AccuracyStats(0.7, 0.0, 0.7, 1)})

    stats = store.load_stats("manual", "bert:mlm")
    assert sorted(stats) == [CV, TEST_SPLIT]
    assert stats[TEST_SPLIT].best == 0.79
    assert store.load_stats("manual", "missing") == {}
    assert store.list_stats() == [("asr", "bert:prompt:front"), ("manual", "bert:mlm")]


def test_directory_store_reports_corrupt_files(tmp_path):
    store = DirectoryRunStore(tmp_path)
    path = tmp_path / RunKey("manual", CV, "bert:mlm", "0").relpath()
    path.parent.mkdir(parents=True)
    path.write_text("not a decision file\n", encoding="utf-8")
    with pytest.raises(StoreError) as exc:
        store.load_run("manual", CV, "bert:mlm", 0)
    assert str(path) in str(exc.value)


def test_directory_store_leaves_no_temp_files(tmp_path):
    store = DirectoryRunStore(tmp_path)
    store.save_run("manual", CV, _run(0))
    assert not list(tmp_path.rglob("*.tmp"))


def test_store_factory(tmp_path, monkeypatch):
    assert isinstance(load_run_store({"provider": "memory"}), InMemoryRunStore)
    store = load_run_store({"provider": "directory", "root": str(tmp_path / "out")})
    assert isinstance(store, DirectoryRunStore) and store.root == tmp_path / "out"

    monkeypatch.setenv("PROMPTAD_STORE_PROVIDER", "memory")
    assert isinstance(load_run_store(), InMemoryRunStore)
    with pytest.raises(ValueError):
        load_run_store({"provider": "s3"})
