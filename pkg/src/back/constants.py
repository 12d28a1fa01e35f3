"""Constants for the ECG classification pipeline."""

# Abnormality classes, in the fixed order used by every vector in the project
CLASS_NAMES = ("1dAVb", "RBBB", "LBBB", "SB", "AF", "ST")
N_CLASSES = len(CLASS_NAMES)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

# Signal geometry
N_LEADS = 12
INPUT_SAMPLES = 4096
SAMPLE_RATE_HZ = 400
DURATION_S = 10.24  # 400 Hz * 10.24 s = 4096 samples
MAX_DECIMATION = 13  # single-stage IIR decimation limit

# Network architecture defaults
N_BLOCKS = 4
KERNEL_LENGTH = 16
BASE_FILTERS = 64
FILTER_GROWTH = 64
SUBSAMPLE = 4
DROPOUT_RATE = 0.2

# Batch normalization
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# Loss
PROB_CLAMP = 1e-7

# Optimizer and schedule
INITIAL_LR = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EPOCHS = 50
PLATEAU_PATIENCE = 7
LR_FACTOR = 10.0
BATCH_SIZE = 32
VALIDATION_FRACTION = 0.02
DEFAULT_SEED = 0

# Adjudication thresholds (strict inequalities)
ST_MAX_REJECT_HR = 100.0     # ST rejected when heart rate < 100
SB_MIN_REJECT_HR = 50.0      # SB rejected when heart rate > 50
BBB_MAX_REJECT_QRS_MS = 115.0  # RBBB/LBBB rejected when QRS < 115 ms
AVB_MAX_REJECT_PR_MS = 190.0   # 1dAVb rejected when PR < 190 ms
AF_MIN_ACCEPT_SDNN = 646.0     # AF accepted when SDNN > 646

# Synthetic generator
R_PEAK_REFRACTORY_S = 0.2
NORMAL_HR_RANGE = (55.0, 95.0)
ST_HR_RANGE = (105.0, 150.0)
SB_HR_RANGE = (35.0, 47.5)
AF_HR_RANGE = (60.0, 95.0)
NORMAL_PR_RANGE_MS = (120.0, 180.0)
AVB_PR_RANGE_MS = (210.0, 300.0)
NORMAL_QRS_RANGE_MS = (80.0, 105.0)
BBB_QRS_RANGE_MS = (125.0, 160.0)
NORMAL_JITTER_RANGE = (0.0, 0.03)
AF_JITTER_RANGE = (0.2, 0.3)
AF_MIN_JITTER = 0.15
ST_MIN_HR = 100.0
SB_MAX_HR = 50.0
AVB_MIN_PR_MS = 200.0
BBB_MIN_QRS_MS = 120.0
DEFAULT_NOISE_STD = 0.02

# Prevalences (train/validation and test columns of the published table)
TRAIN_PREVALENCE = {"1dAVb": 0.015, "RBBB": 0.026, "LBBB": 0.015, "SB": 0.016, "AF": 0.017, "ST": 0.023}
TEST_PREVALENCE = {"1dAVb": 0.035, "RBBB": 0.038, "LBBB": 0.035, "SB": 0.023, "AF": 0.014, "ST": 0.044}
DESK_PREVALENCE = {name: 0.10 for name in CLASS_NAMES}
PREVALENCE_PRESETS = {"train": TRAIN_PREVALENCE, "test": TEST_PREVALENCE, "desk": DESK_PREVALENCE}

# Published test-set confusion matrices: (tp, fn, fp, tn)
PUBLISHED_CONFUSION = {
    "1dAVb": (24, 9, 2, 918),
    "RBBB": (36, 0, 5, 912),
    "LBBB": (33, 0, 1, 919),
    "SB": (19, 3, 5, 926),
    "AF": (11, 2, 2, 938),
    "ST": (40, 2, 6, 905),
}
PUBLISHED_TEST_SIZE = 953

# Published model metrics: (precision, recall, specificity, f1)
PUBLISHED_MODEL_METRICS = {
    "1dAVb": (0.923, 0.727, 0.998, 0.813),
    "RBBB": (0.878, 1.000, 0.995, 0.935),
    "LBBB": (0.971, 1.000, 0.999, 0.985),
    "SB": (0.792, 0.864, 0.995, 0.826),
    "AF": (0.846, 0.846, 0.998, 0.846),
    "ST": (0.870, 0.952, 0.993, 0.909),
}

# Published cardiology resident metrics, reference only
PUBLISHED_DOCTOR_METRICS = {
    "1dAVb": (0.905, 0.679, 0.998, 0.776),
    "RBBB": (0.868, 0.971, 0.994, 0.917),
    "LBBB": (1.000, 0.900, 1.000, 0.947),
    "SB": (0.833, 0.938, 0.996, 0.882),
    "AF": (0.769, 0.769, 0.996, 0.769),
    "ST": (0.938, 0.833, 0.998, 0.882),
}

PUBLISHED_AVERAGE_PRECISION = {"1dAVb": 0.91, "RBBB": 0.94, "LBBB": 1.00, "SB": 0.87, "AF": 0.90, "ST": 0.96}
METRIC_TOLERANCE = 0.001
DISPLAY_DECIMALS = 3

# File formats
WEIGHTS_MAGIC = b"RNW1"
WEIGHTS_VERSION = 1
SIGNAL_MAGIC = b"ECG1"
SIGNAL_VERSION = 1

# Output file names
MANIFEST_FILE = "manifest.jsonl"
SIGNALS_DIR = "signals"
SIGNAL_SUFFIX = ".ecg"
WEIGHTS_FILE = "weights.rnw"
TRAIN_LOG_FILE = "train_log.jsonl"
TRAIN_TIMES_FILE = "train_times.jsonl"
RUN_CONFIG_FILE = "run_config.json"
DECISIONS_FILE = "decisions.jsonl"
SUMMARY_FILE = "summary.json"
REPORT_FILE = "report.json"
THRESHOLDS_FILE = "thresholds.json"
PR_CURVES_DIR = "pr_curves"
LOCK_FILE = ".lock"

# Gradient checking
FD_EPS = 1e-5
OP_GRAD_TOLERANCE = 1e-4
NETWORK_GRAD_TOLERANCE = 1e-3
INIT_VARIANCE_FACTOR = 4.0  # stage variances at init stay within [1/4, 4]

# Share of an eval dataset used to pick thresholds when none are given
THRESHOLD_SELECTION_FRACTION = 0.5
SELFCHECK_FILE = "selfcheck.json"
