import math

import numpy as np
import pytest

from promptad.backend import MaskLogits
from promptad.constants import (
    AD, DIAGNOSIS, FLUENCY, FLUENT, FRONT, MLM, NON_AD, POSITION_NA, PROMPT, STUMBLING, TEST,
)
from promptad.corpus import ingest_asr
from promptad.ensemble import accuracy, vote_run
from promptad.errors import ConfigError, TrainingError
from promptad.prompting import PromptTemplate, Verbalizer, default_template
from promptad.trainer import (
    SUM, ClassifierSpec, EpochDecisions, SystemRun, TrainConfig, dump_run, load_run, masked_lm_loss,
    prompt_loss, run_baseline_classification, run_mlm_training, run_prompt_training, select_mlm_positions,
)

VOCAB = 12


def _verbalizer(ad=3, non_ad=7, stumbling=1, fluent=9):
    return Verbalizer(ids={DIAGNOSIS: {AD: ad, NON_AD: non_ad}, FLUENCY: {STUMBLING: stumbling, FLUENT: fluent}})


def _ce_oracle(vec, ids, target):
    pair = [vec[i] for i in ids]
    top = max(pair)
    z = sum(math.exp(p - top) for p in pair)
    probs = [math.exp(p - top) / z for p in pair]
    return -math.log(probs[target]), probs


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------
def test_defaults_follow_protocol():
    prompt = TrainConfig()
    mlm = TrainConfig(paradigm=MLM)
    assert (prompt.lr, prompt.batch_size, prompt.capture_last_k) == (1e-5, 1, 3)
    assert (prompt.n_epochs, mlm.n_epochs) == (10, 30)
    assert mlm.prompt_position == POSITION_NA
    assert mlm.system_id == "bert:mlm"
    assert TrainConfig(prompt_position=FRONT).system_id == "bert:prompt:front"


def test_multi_task_weights():
    assert TrainConfig(multi_task=True).weights == {FLUENCY: 0.5, DIAGNOSIS: 0.5}
    assert TrainConfig(multi_task=True, loss_mode=SUM).weights == {FLUENCY: 1.0, DIAGNOSIS: 1.0}
    assert TrainConfig().weights == {DIAGNOSIS: 1.0}
    cfg = TrainConfig(multi_task=True, task_weights={FLUENCY: 0.0, DIAGNOSIS: 1.0})
    assert cfg.active_tasks == (DIAGNOSIS,)


def test_validation_reports_every_problem():
    cfg = TrainConfig(epochs=2, capture_last_k=3, lr=-1.0, decay_group="bias", task_weights={"x": 1.0})
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    assert len(exc.value.problems) == 4


def test_weights_must_sum_to_one_when_interpolating():
    with pytest.raises(ConfigError):
        TrainConfig(multi_task=True, task_weights={FLUENCY: 0.5, DIAGNOSIS: 0.9}).validate()


def test_config_dict_round_trip_and_unknown_keys():
    cfg = TrainConfig(plm="roberta", multi_task=True, task_weights={FLUENCY: 0.3, DIAGNOSIS: 0.7}, seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
def test_uniform_label_logits_give_ln2():
    logits = MaskLogits({4: np.zeros(VOCAB), 9: np.zeros(VOCAB)})
    v = _verbalizer()
    single = prompt_loss(logits, {DIAGNOSIS: 9}, v, {DIAGNOSIS: AD}, {DIAGNOSIS: 1.0})
    assert single.value == pytest.approx(math.log(2), abs=1e-12)
    both = prompt_loss(logits, {FLUENCY: 4, DIAGNOSIS: 9}, v, {DIAGNOSIS: NON_AD, FLUENCY: FLUENT},
                       {FLUENCY: 0.5, DIAGNOSIS: 0.5})
    assert both.value == pytest.approx(math.log(2), abs=1e-12)


def test_prompt_loss_matches_oracle_on_random_logits():
    rng = np.random.default_rng(5)
    v = _verbalizer()
    for _ in range(100):
        vecs = {4: rng.normal(scale=3, size=VOCAB), 9: rng.normal(scale=3, size=VOCAB)}
        labels = {DIAGNOSIS: AD if rng.random() < 0.5 else NON_AD, FLUENCY: STUMBLING if rng.random() < 0.5 else FLUENT}
        w = float(rng.random())
        weights = {FLUENCY: w, DIAGNOSIS: 1.0 - w}
        loss = prompt_loss(MaskLogits(vecs), {FLUENCY: 4, DIAGNOSIS: 9}, v, labels, weights)

        expected_value = 0.0
        for task, pos, ids, classes in (
            (DIAGNOSIS, 9, (3, 7), (AD, NON_AD)),
            (FLUENCY, 4, (1, 9), (STUMBLING, FLUENT)),
        ):
            target = classes.index(labels[task])
            ce, probs = _ce_oracle(vecs[pos], ids, target)
            expected_value += weights[task] * ce
            expected_grad = np.zeros(VOCAB)
            for k, i in enumerate(ids):
                expected_grad[i] = weights[task] * (probs[k] - (1.0 if k == target else 0.0))
            np.testing.assert_allclose(loss.grad[pos], expected_grad, rtol=0, atol=1e-10)
        assert loss.value == pytest.approx(expected_value, abs=1e-10)


def test_prompt_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    v = _verbalizer()
    eps = 1e-6
    for _ in range(100):
        vec = rng.normal(scale=2, size=VOCAB)
        label = {DIAGNOSIS: AD if rng.random() < 0.5 else NON_AD}

        def f(x):
            return prompt_loss(MaskLogits({2: x}), {DIAGNOSIS: 2}, v, label, {DIAGNOSIS: 1.0}).value

        grad = prompt_loss(MaskLogits({2: vec}), {DIAGNOSIS: 2}, v, label, {DIAGNOSIS: 1.0}).grad[2]
        numeric = np.zeros(VOCAB)
        for i in range(VOCAB):
            up, down = vec.copy(), vec.copy()
            up[i] += eps
            down[i] -= eps
            numeric[i] = (f(up) - f(down)) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


def test_prompt_loss_needs_a_mask_per_active_task():
    logits = MaskLogits({9: np.zeros(VOCAB)})
    with pytest.raises(TrainingError):
        prompt_loss(logits, {DIAGNOSIS: 9}, _verbalizer(), {DIAGNOSIS: AD, FLUENCY: FLUENT},
                    {FLUENCY: 0.5, DIAGNOSIS: 0.5})


def test_masked_lm_loss_is_mean_cross_entropy():
    vec = np.log(np.array([1.0, 2.0, 1.0]))
    value, grad = masked_lm_loss(MaskLogits({1: vec, 2: vec}), {1: 1, 2: 0})
    assert value == pytest.approx((-math.log(0.5) - math.log(0.25)) / 2)
    np.testing.assert_allclose(grad[1], np.array([0.25, -0.5, 0.25]) / 2)
    assert masked_lm_loss(MaskLogits({}), {}) == (0.0, {})


def test_mlm_positions_skip_sequence_markers():
    rng = np.random.default_rng(0)
    assert select_mlm_positions(10, 1.0, rng) == list(range(1, 9))
    assert select_mlm_positions(10, 0.0, rng) == []


# ---------------------------------------------------------------------------
# Prompt training on the toy backend
# ---------------------------------------------------------------------------
def _prompt_config(**kw):
    base = dict(paradigm=PROMPT, plm="toy", lr=0.01, epochs=10, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_planted_corpus_is_learned(planted, toy_backend, resolved_verbalizer):
    train, test = planted(100, 40, seed=1)
    template = default_template()
    backend = toy_backend(train, template=template, seed=0)
    run = run_prompt_training(_prompt_config(), train, test, template, resolved_verbalizer(backend), backend=backend)
    assert run.epochs == [8, 9, 10]
    assert all(set(e.decisions) == {r.subject_id for r in test} for e in run.epoch_decisions)
    gold = {r.subject_id: r.ad_label for r in test}
    assert accuracy(vote_run(run), gold) >= 0.95


def test_zero_learning_rate_freezes_decisions(planted, toy_backend, resolved_verbalizer):
    train, test = planted(20, 10, seed=2)
    backend = toy_backend(train)
    run = run_prompt_training(_prompt_config(lr=0.0, epochs=4), train, test, default_template(),
                              resolved_verbalizer(backend), backend=backend)
    first = run.epoch_decisions[0].decisions
    assert all(e.decisions == first for e in run.epoch_decisions)


def test_training_is_deterministic(planted, toy_backend, resolved_verbalizer):
    train, test = planted(20, 10, seed=3)
    runs = []
    for _ in range(2):
        backend = toy_backend(train, seed=5)
        runs.append(run_prompt_training(_prompt_config(epochs=3, seed=5), train, test, default_template(),
                                        resolved_verbalizer(backend), backend=backend))
    assert dump_run(runs[0]) == dump_run(runs[1])


NEUTRAL_WORDS = ("boy", "girl", "cookie", "jar", "stool", "sink", "water", "mother")


def _unmarked(records):
    """Same subjects and labels, filler words only: the label is no longer readable from the text."""
    rng = np.random.default_rng(11)
    return [ingest_asr(r.subject_id, " ".join(rng.choice(NEUTRAL_WORDS, 6)), split=r.split, ad_label=r.ad_label)
            for r in records]


def test_multi_task_with_zero_fluency_weight_equals_single_task(planted, toy_backend, resolved_verbalizer):
    train, test = planted(30, 12, seed=4)
    test = _unmarked(test)
    template = default_template(multi_task=True)
    fluency = {r.subject_id: STUMBLING if i % 3 == 0 else FLUENT for i, r in enumerate(train)}

    def train_with(cfg, prompt, **kwargs):
        backend = toy_backend(train, template=template, seed=7)
        run = run_prompt_training(cfg, train, test, prompt, resolved_verbalizer(backend), backend=backend, **kwargs)
        return run, backend.snapshot()

    multi_cfg = _prompt_config(epochs=4, seed=7, multi_task=True, task_weights={FLUENCY: 0.0, DIAGNOSIS: 1.0})
    multi, multi_params = train_with(multi_cfg, template, fluency_labels=fluency)
    single, single_params = train_with(_prompt_config(epochs=4, seed=7), template.restrict([DIAGNOSIS]))
    _, other_params = train_with(_prompt_config(epochs=4, seed=7), default_template())

    assert [e.decisions for e in multi.epoch_decisions] == [e.decisions for e in single.epoch_decisions]
    for name, value in multi_params.items():
        np.testing.assert_array_equal(value, single_params[name])
    assert any(not np.array_equal(value, other_params[name]) for name, value in multi_params.items())


def test_multi_task_needs_fluency_labels(planted, toy_backend, resolved_verbalizer):
    train, test = planted(10, 4)
    template = default_template(multi_task=True)
    backend = toy_backend(train, template=template)
    with pytest.raises(TrainingError):
        run_prompt_training(_prompt_config(epochs=2, multi_task=True), train, test, template,
                            resolved_verbalizer(backend), backend=backend, fluency_labels={})


def test_multi_task_runs_both_slots(planted, toy_backend, resolved_verbalizer):
    train, test = planted(16, 6)
    template = default_template(multi_task=True)
    fluency = {r.subject_id: STUMBLING if r.ad_label == AD else FLUENT for r in train}
    backend = toy_backend(train, template=template)
    run = run_prompt_training(_prompt_config(epochs=3, multi_task=True), train, test, template,
                              resolved_verbalizer(backend), backend=backend, fluency_labels=fluency)
    assert len(run.epoch_decisions) == 3


def test_template_without_active_slot_fails(planted, toy_backend, resolved_verbalizer):
    train, test = planted(10, 4)
    template = default_template()
    backend = toy_backend(train)
    with pytest.raises(TrainingError):
        run_prompt_training(_prompt_config(epochs=2, multi_task=True), train, test, template,
                            resolved_verbalizer(backend), backend=backend, fluency_labels={})


def test_unresolved_verbalizer_is_rejected(planted, toy_backend):
    train, test = planted(10, 4)
    with pytest.raises(TrainingError):
        run_prompt_training(_prompt_config(epochs=2), train, test, default_template(), Verbalizer(),
                            backend=toy_backend(train))


def test_front_position_trains_too(planted, toy_backend, resolved_verbalizer):
    train, test = planted(20, 8)
    template = PromptTemplate.parse("The diagnosis is <MASK>.", position=FRONT)
    backend = toy_backend(train, template=template)
    run = run_prompt_training(_prompt_config(epochs=3, prompt_position=FRONT), train, test, template,
                              resolved_verbalizer(backend), backend=backend)
    assert run.system_id == "toy:prompt:front"


# ---------------------------------------------------------------------------
# MLM baseline
# ---------------------------------------------------------------------------
def test_mlm_baseline_on_planted_corpus(planted, toy_backend, tmp_path):
    train, test = planted(100, 40, seed=6)
    backend = toy_backend(train, seed=0)
    cfg = TrainConfig(paradigm=MLM, plm="toy", lr=0.001, epochs=4, seed=0)
    training = run_mlm_training(cfg, train, backend=backend, checkpoint_dir=tmp_path)
    assert [c.epoch for c in training.checkpoints] == [2, 3, 4]
    assert len(training.epoch_losses) == 4
    assert len(list(tmp_path.glob("*.json"))) == 3
    assert all(c.state is None and c.path.endswith(".json") for c in training.checkpoints)

    run = run_baseline_classification(training.checkpoints, train, test, ClassifierSpec(standardize=True),
                                      backend=backend, config=cfg)
    assert run.epochs == [2, 3, 4]
    gold = {r.subject_id: r.ad_label for r in test}
    assert accuracy(vote_run(run), gold) >= 0.90


def test_baseline_needs_both_classes(planted, toy_backend):
    train, test = planted(10, 4)
    only_ad = [r for r in train if r.ad_label == AD]
    backend = toy_backend(train)
    cfg = TrainConfig(paradigm=MLM, plm="toy", epochs=1, capture_last_k=1)
    training = run_mlm_training(cfg, only_ad, backend=backend)
    with pytest.raises(TrainingError):
        run_baseline_classification(training.checkpoints, only_ad, test, ClassifierSpec(), backend=backend, config=cfg)


def test_mlm_loss_drops_on_planted_corpus(planted, toy_backend):
    train, _ = planted(60, 4, seed=8)
    backend = toy_backend(train, seed=1)
    cfg = TrainConfig(paradigm=MLM, plm="toy", lr=0.003, epochs=5, seed=1, masking_rate=0.3)
    losses = run_mlm_training(cfg, train, backend=backend).epoch_losses
    assert losses[-1] < losses[0]
    for before, after in zip(losses, losses[1:]):
        assert after <= before + 0.05


def test_zero_masking_rate_leaves_parameters_unchanged(planted, toy_backend):
    train, _ = planted(12, 4)
    backend = toy_backend(train)
    before = backend.snapshot()
    cfg = TrainConfig(paradigm=MLM, plm="toy", lr=0.01, epochs=3, masking_rate=0.0)
    training = run_mlm_training(cfg, train, backend=backend)
    assert training.epoch_losses == [0.0, 0.0, 0.0]
    for name, value in backend.snapshot().items():
        np.testing.assert_array_equal(value, before[name])


def test_identical_embeddings_give_a_constant_prediction(toy_backend):
    text = "the boy is on the stool"
    train = [ingest_asr(f"tr{i:03d}", text, ad_label=AD if i % 2 == 0 else NON_AD) for i in range(10)]
    test = [ingest_asr(f"te{i:03d}", text, split=TEST, ad_label=AD if i % 2 == 0 else NON_AD) for i in range(6)]
    backend = toy_backend(train)
    cfg = TrainConfig(paradigm=MLM, plm="toy", epochs=1, capture_last_k=1)
    training = run_mlm_training(cfg, train, backend=backend)
    run = run_baseline_classification(training.checkpoints, train, test, ClassifierSpec(standardize=True),
                                      backend=backend, config=cfg)
    [decisions] = [e.decisions for e in run.epoch_decisions]
    assert len(set(decisions.values())) == 1


# ---------------------------------------------------------------------------
# Decision files
# ---------------------------------------------------------------------------
def test_decision_file_round_trip():
    cfg = TrainConfig(plm="roberta", prompt_position=FRONT, multi_task=True, seed=9, epochs=10)
    run = SystemRun(cfg, [
        EpochDecisions(8, {"b": AD, "a": NON_AD}, 0.5),
        EpochDecisions(9, {"b": AD, "a": AD}, 0.25),
        EpochDecisions(10, {"b": NON_AD, "a": AD}, 1.0),
    ])
    text = dump_run(run)
    lines = text.splitlines()
    assert lines[0] == "#decisions v1"
    assert lines[4] == "roberta:prompt:front\troberta\tprompt\tfront\t1\t9\t8\ta\tNonAD"
    loaded = load_run(text)
    assert loaded.system_id == run.system_id
    assert loaded.seed == 9
    assert loaded.epochs == [8, 9, 10]
    assert [e.decisions for e in loaded.epoch_decisions] == [e.decisions for e in run.epoch_decisions]
    assert [e.accuracy for e in loaded.epoch_decisions] == [0.5, 0.25, 1.0]


def test_decision_file_rejects_unknown_label():
    with pytest.raises(TrainingError):
        load_run("#decisions v1\nbert:mlm\tbert\tmlm\tn/a\t0\t0\t30\ts1\tMaybe\n")
