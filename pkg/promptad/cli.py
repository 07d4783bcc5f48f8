"""
promptad.cli
------------
Command-line entry point.

    promptad ingest     --config run.yaml
    promptad disfluency --config run.yaml
    promptad train      --config run.yaml --paradigm prompt --position back --seeds 15
    promptad combine    --config run.yaml --preset bert+roberta:all
    promptad report     --config run.yaml

Everything is written below the output directory; `train` and `combine` skip
work whose results are already on disk.
"""

from __future__ import annotations
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import argparse
import sys

from .backend import TOY, backend_factory, seed_workers
from .config import AUTO, RunConfig
from .constants import ASR, CV, MANUAL, MLM, POSITION_NA, PROMPT, TEST_SPLIT, TRAIN
from .corpus import DatasetManifest, build_manifest, discover_records, load_manifest, save_manifest
from .disfluency import (
    FluencyLabeling, dump_profiles, label_by_threshold, load_profiles, profile,
    select_threshold_by_correlation, select_threshold_by_split_match,
)
from .ensemble import PRESETS, SINGLE_PLMS, accuracy, combine_runs, resolve_preset
from .errors import ConfigError, PromptADError
from .evaluation import (
    AccuracyStats, Experiment, ReportEntry, map_seeds, render_report, run_accuracy, run_split, sweep_seeds,
)
from .logger import get_logger
from .prompting import vocabulary_words
from .storage import RunStore, load_run_store

log = get_logger("promptad.cli")


# ---------------------------------------------------------------------------
# Paths and shared loading
# ---------------------------------------------------------------------------
def manifest_path(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / f"manifest.{cfg.source.lower()}.tsv"


def profiles_path(cfg: RunConfig, split: str, source: Optional[str] = None) -> Path:
    return Path(cfg.output_dir) / f"profiles.{(source or cfg.source).lower()}.{split.lower()}.tsv"


def _store(cfg: RunConfig) -> RunStore:
    try:
        return load_run_store({"root": cfg.output_dir})
    except ValueError as e:
        raise ConfigError([str(e)]) from e


def _manifest(cfg: RunConfig) -> DatasetManifest:
    path = manifest_path(cfg)
    if not path.is_file():
        raise ConfigError([f"no manifest at {path}; run `promptad ingest` first"])
    return load_manifest(path, cfg.disfluency_lexicon())


def _fluency_labels(cfg: RunConfig) -> Dict[str, str]:
    labels: Dict[str, str] = {}
    for split in ("train", "test"):
        path = profiles_path(cfg, split)
        if not path.is_file():
            raise ConfigError([f"no disfluency profiles at {path}; run `promptad disfluency` first"])
        labels.update(load_profiles(path.read_text(encoding="utf-8"))[1])
    return labels


def _seeds(args: argparse.Namespace, cfg: RunConfig) -> List[int]:
    if getattr(args, "seed_list", None):
        return [int(s) for s in args.seed_list.split(",") if s.strip()]
    if getattr(args, "seeds", None):
        return list(range(args.seeds))
    return list(cfg.seeds)


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config).with_overrides(
        data_root=args.data_root,
        output_dir=args.output_dir,
        workers=args.workers,
        **{"backend.mode": TOY if args.toy_backend else None},
    )
    return cfg.validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if not cfg.data_root:
        raise ConfigError(["data_root is not set (config, PROMPTAD_DATA_ROOT or --data-root)"])
    records, rejected = discover_records(Path(cfg.data_root), cfg.source, cfg.disfluency_lexicon(), cfg.labels_file)
    manifest = build_manifest(records, fold_count=cfg.folds, seed=cfg.fold_seed)
    save_manifest(manifest, manifest_path(cfg))
    print(f"train={manifest.train_count} test={manifest.test_count} rejected={len(rejected)} "
          f"manifest={manifest_path(cfg)}")
    return 0


def cmd_disfluency(args: argparse.Namespace) -> int:
    cfg = _config(args)
    manifest = _manifest(cfg)
    lexicon = cfg.disfluency_lexicon()
    train = [profile(r, lexicon) for r in manifest.train_records()]
    test = [profile(r, lexicon) for r in manifest.test_records()]

    if cfg.threshold != AUTO:
        labeling = label_by_threshold(train, int(cfg.threshold))
    elif cfg.source == MANUAL:
        labeling = select_threshold_by_correlation(train, manifest.labels(TRAIN))
    else:
        reference = Path(cfg.reference_profiles) if cfg.reference_profiles else profiles_path(cfg, "train", MANUAL)
        if not reference.is_file():
            raise ConfigError([f"split matching for {ASR} transcripts needs manual reference profiles at {reference}"])
        _, ref_labels = load_profiles(reference.read_text(encoding="utf-8"))
        labeling = select_threshold_by_split_match(train, FluencyLabeling(threshold=0, labels=ref_labels))

    test_labeling = label_by_threshold(test, labeling.threshold)
    for split, profiles, lab in (("train", train, labeling), ("test", test, test_labeling)):
        path = profiles_path(cfg, split)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_profiles(profiles, lab), encoding="utf-8")
    print(f"threshold={labeling.threshold} "
          f"train={labeling.stumbling_count}/{labeling.fluent_count} "
          f"test={test_labeling.stumbling_count}/{test_labeling.fluent_count}")
    return 0


def _experiment(cfg: RunConfig, args: argparse.Namespace, fluency: Optional[Dict[str, str]]) -> Experiment:
    multi_task = bool(args.multi_task)
    overrides = {
        "paradigm": args.paradigm,
        "plm": args.plm,
        "prompt_position": POSITION_NA if args.paradigm == MLM else args.position,
        "multi_task": multi_task,
    }
    train_cfg = cfg.with_overrides(**{f"train.{k}": v for k, v in overrides.items()}).train_config()
    train_cfg.validate()
    template = cfg.template(multi_task)
    verbalizer = cfg.verbalizer()
    extra = vocabulary_words(template, verbalizer)
    options = dict(cfg.backend)

    def make_backend(seed, records):
        return backend_factory(
            train_cfg.plm, seed=seed, texts=[r.merged_text for r in records], extra_words=extra, options=options,
        )

    return Experiment(
        config=train_cfg,
        make_backend=make_backend,
        template=template if train_cfg.paradigm == PROMPT else None,
        verbalizer=verbalizer,
        classifier=cfg.classifier_spec(),
        fluency_labels=fluency,
        checkpoint_dir=Path(cfg.output_dir) / "checkpoints" if train_cfg.paradigm == MLM else None,
        tie_policy=cfg.tie_policy,
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.multi_task and args.paradigm == MLM:
        log.warning("--multi-task has no effect on the mlm baseline; storing under the plain condition")
        args.multi_task = False
    manifest = _manifest(cfg)
    fluency = _fluency_labels(cfg) if args.multi_task else None
    experiment = _experiment(cfg, args, fluency)
    system_id = experiment.config.system_id
    condition = cfg.condition(bool(args.multi_task))
    split = CV if args.cv else TEST_SPLIT
    store = _store(cfg)
    seeds = _seeds(args, cfg)

    todo = [s for s in seeds if not store.has_run(condition, split, system_id, s)]
    if len(todo) < len(seeds):
        log.info(f"{system_id} {condition}/{split}: {len(seeds) - len(todo)} seed run(s) already stored")

    def run_one(seed: int):
        run = run_split(experiment.with_seed(seed), manifest, split)
        store.save_run(condition, split, run)
        return run

    if todo:
        map_seeds(run_one, todo, seed_workers(cfg.backend, cfg.workers))

    gold = manifest.labels()
    stats = sweep_seeds(
        lambda s: run_accuracy(store.load_run(condition, split, system_id, s), gold, cfg.tie_policy), seeds,
    )
    store.save_stats(condition, system_id, {split: stats})
    mean, std, best = stats.percentages()
    print(f"{system_id} {condition}/{split} seeds={stats.n_runs} mean={mean} std={std} best={best}")
    return 0


def _member_condition(cfg: RunConfig, system_id: str, multi_task: bool) -> str:
    # the MLM baseline has no disfluency slot; its plain-condition runs join +disfl combinations
    return cfg.condition(multi_task and not system_id.endswith(f":{MLM}"))


def cmd_combine(args: argparse.Namespace) -> int:
    cfg = _config(args)
    manifest = _manifest(cfg)
    gold = manifest.labels()
    condition = cfg.condition(bool(args.multi_task))
    split = CV if args.cv else TEST_SPLIT
    store = _store(cfg)
    names = args.preset or cfg.presets

    for name in names:
        preset = resolve_preset(name)
        plms = ([args.plm] if args.plm else list(SINGLE_PLMS)) if preset.per_plm else [None]
        for plm in plms:
            system_id = preset.system_id(plm)
            runs = [
                r for m in dict.fromkeys(preset.member_ids(plm))
                for r in store.list_runs(_member_condition(cfg, m, bool(args.multi_task)), split, m)
            ]
            combined = combine_runs(runs, preset, cfg.tie_policy, plm)
            stored = {v.seeds: v for v in store.list_combined(condition, split, system_id)}
            accs = []
            for vector in combined.values():
                if stored.get(vector.seeds) != vector:
                    store.save_combined(condition, split, vector)
                accs.append(accuracy(vector, {s: gold[s] for s in vector.decisions}))
            stats = AccuracyStats.from_accuracies(accs)
            store.save_stats(condition, system_id, {split: stats})
            mean, std, best = stats.percentages()
            print(f"{system_id} {condition}/{split} combinations={stats.n_runs} mean={mean} std={std} best={best}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _config(args)
    store = _store(cfg)
    entries = [
        ReportEntry(system_id, condition, split, stats)
        for condition, system_id in store.list_stats()
        for split, stats in store.load_stats(condition, system_id).items()
    ]
    table = render_report(entries)
    out = Path(cfg.output_dir)
    (out / "report.txt").write_text(table.to_text(), encoding="utf-8")
    (out / "report.tsv").write_text(table.to_tsv(), encoding="utf-8")
    sys.stdout.write(table.to_text())
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--data-root", help="corpus directory (overrides config and PROMPTAD_DATA_ROOT)")
    common.add_argument("--output-dir", help="directory for manifests, runs and reports")
    common.add_argument("--workers", type=int, help="seed runs executed concurrently")
    common.add_argument("--toy-backend", action="store_true", help="use the numpy toy masked-LM")

    system = argparse.ArgumentParser(add_help=False)
    system.add_argument("--multi-task", action="store_true", help="add the disfluency slot (+disfl condition)")
    split = system.add_mutually_exclusive_group()
    split.add_argument("--cv", action="store_true", help="cross-validation on the training set")
    split.add_argument("--test", action="store_true", help="train on all training data, evaluate on test (default)")

    parser = argparse.ArgumentParser(prog="promptad", description="Prompt-based AD detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse transcripts and write the dataset manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("disfluency", parents=[common], help="profile disfluencies and pick the fluency threshold")
    p.set_defaults(func=cmd_disfluency)

    p = sub.add_parser("train", parents=[common, system], help="train one system over a seed sweep")
    p.add_argument("--paradigm", choices=[PROMPT, MLM], default=PROMPT)
    p.add_argument("--position", choices=["front", "back"], default="back")
    p.add_argument("--plm", default="bert")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    seeds.add_argument("--seed-list", help="comma-separated seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("combine", parents=[common, system], help="majority-vote stored runs by preset")
    p.add_argument("--preset", action="append", choices=list(PRESETS), help="repeatable; default: config presets")
    p.add_argument("--plm", help="PLM for per-PLM presets (default: every PLM)")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("report", parents=[common], help="render the results table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PromptADError as e:
        print(f"promptad {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
