"""
promptad.constants
------------------
Shared constants for file-format versions, label vocabularies, and defaults
taken from the experimental protocol (512-token PLMs, 15 seeds, 10 folds).
"""

MANIFEST_HEADER = "#manifest v1"
DECISIONS_HEADER = "#decisions v1"
PROFILES_HEADER = "#profiles v1"
STATS_HEADER = "#stats v1"
CHECKPOINT_VERSION = 1

# splits
TRAIN = "Train"
TEST = "Test"
SPLITS = (TRAIN, TEST)

# diagnosis classes
AD = "AD"
NON_AD = "NonAD"
AD_LABELS = (AD, NON_AD)

# fluency classes
STUMBLING = "Stumbling"
FLUENT = "Fluent"
FLUENCY_LABELS = (STUMBLING, FLUENT)

# transcript sources
MANUAL = "Manual"
ASR = "ASR"
SOURCES = (MANUAL, ASR)

# speaker tier
PARTICIPANT_TIER = "PAR"

# disfluency event categories
INTERJECTION = "Interjection"
PAUSE = "Pause"
ACTION = "Action"

DEFAULT_INTERJECTIONS = ("uh", "um", "hm", "er", "ah", "eh", "mhm")
DEFAULT_PAUSE_MARKERS = ("(.)", "(..)", "(...)")
DEFAULT_ACTION_PREFIX = "&="

# prompt tasks; order is the slot order of unannotated multi-task templates
FLUENCY = "fluency"
DIAGNOSIS = "diagnosis"
TASKS = (FLUENCY, DIAGNOSIS)

MASK_PLACEHOLDER = "<MASK>"
DEFAULT_DIAGNOSIS_TEMPLATE = "The diagnosis is <MASK>."
DEFAULT_MULTI_TASK_TEMPLATE = "Speech is <MASK>. Diagnosis is <MASK>."

DEFAULT_LABEL_WORDS = {
    DIAGNOSIS: {AD: "dementia", NON_AD: "healthy"},
    FLUENCY: {STUMBLING: "stumbling", FLUENT: "fluent"},
}

# prompt placement
FRONT = "front"
BACK = "back"
POSITION_NA = "n/a"

# fine-tuning paradigms
PROMPT = "prompt"
MLM = "mlm"

# tie policies
PREFER_AD = "PreferAD"
PREFER_NON_AD = "PreferNonAD"
POOL_SUB_DECISIONS = "PoolSubDecisions"
TIE_POLICIES = (PREFER_AD, PREFER_NON_AD, POOL_SUB_DECISIONS)

# seed pairing for combined systems
SAME_SEED = "SameSeed"
FULL_CARTESIAN = "FullCartesian"

# evaluation splits for stored runs
CV = "cv"
TEST_SPLIT = "test"
VOTED = "voted"

# transcript conditions in the report
CONDITIONS = ("manual", "manual+disfl", "asr", "asr+disfl")

DEFAULT_MAX_LEN = 512
DEFAULT_FOLDS = 10
DEFAULT_SEEDS = tuple(range(15))
DEFAULT_LR = 1e-5
DEFAULT_WEIGHT_DECAY = 0.01
PROMPT_EPOCHS = 10
MLM_EPOCHS = 30
CAPTURE_LAST_K = 3

PLM_MODELS = {
    "bert": "bert-base-uncased",
    "roberta": "roberta-base",
}
