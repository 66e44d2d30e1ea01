"""Constants for the SPAD gesture spiking network package."""

import logging
from enum import Enum

LOGGER = logging.getLogger(__package__)

# Sensor frame geometry (8x8 intensity mode)
FRAME_SIZE = 8

# Upsampled network input
UPSAMPLED_SIZE = 25
INPUT_SHAPE = (1, UPSAMPLED_SIZE, UPSAMPLED_SIZE)

# Ten gestures plus the no-gesture class
NUM_CLASSES = 11
NO_GESTURE_CLASS = 10

# Spiking dynamics
DEFAULT_TIMESTEPS = 8
DEFAULT_V_THRESHOLD = 1.0
DEFAULT_V_RESET = 0.0
DEFAULT_SURROGATE_ALPHA = 4.0

# Bicubic (Keys) kernel parameter
BICUBIC_A = -0.5

# Batch normalization
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1

# Training recipe
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_BATCH_SIZE = 32
DEFAULT_MAX_EPOCHS = 300
DEFAULT_PATIENCE = 20
DEFAULT_SEED = 0
DEFAULT_VALIDATION_RATIO = 0.9  # share of the training set kept for training
DEFAULT_DROPOUT = 0.5

# Evaluation
DEFAULT_EVAL_SEEDS = 1
DEFAULT_AMBIENT_LAMBDA = 200.0

# Released dataset sizes
RELEASED_TRAIN_FRAMES = 5100
RELEASED_TEST_FRAMES = 1100

# Synthetic generator
SYNTH_RENDER_SIZE = 64
DEFAULT_SYNTH_PHOTON_BUDGET = 2000.0
DEFAULT_SYNTH_BACKGROUND = 2.0
DEFAULT_SYNTH_ROTATION = 30.0

# Checkpoint container
CHECKPOINT_MAGIC = "spad-gesture-checkpoint"
CHECKPOINT_VERSION = 1

# Dataset container
DATASET_VERSION = 1
FRAMES_FILE = "frames.csv"
MANIFEST_FILE = "manifest"

# Output artifacts
CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"
CONFUSION_FILE = "confusion.csv"
METRICS_FILE = "metrics"
PROFILE_FILE = "profile"
PROFILE_CSV_FILE = "profile.csv"
PROFILE_SUMMARY_FILE = "profile_summary"  # CSV-mode report name

# Environment and run config keys
ENV_OUTPUT_DIR = "SPAD_GESTURE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"

CONF_LEARNING_RATE = "lr"
CONF_BETAS = "betas"
CONF_ADAM_EPS = "eps_adam"
CONF_BATCH_SIZE = "batch_size"
CONF_MAX_EPOCHS = "max_epochs"
CONF_PATIENCE = "patience"
CONF_SEED = "seed"
CONF_TIMESTEPS = "timesteps"

DEFAULT_CLASS_NAMES = (
    "fist",
    "thumb",
    "index",
    "peace",
    "three",
    "four",
    "open_palm",
    "shaka",
    "l_shape",
    "rock",
    "no_gesture",
)


class ModelKind(Enum):
    """Network families."""

    CNN = "cnn"
    SCNN = "scnn"
    SMLP = "smlp"

    @property
    def is_spiking(self) -> bool:
        """Return True for spiking network families."""
        return self is not ModelKind.CNN


class LayerKind(Enum):
    """Layer descriptor types understood by the model builder."""

    CONV = "conv"
    BATCHNORM = "batchnorm"
    POOL = "pool"
    FLATTEN = "flatten"
    FC = "fc"
    DROPOUT = "dropout"
    SPIKE = "spike"
    RELU = "relu"


MODEL_KINDS = [e.value for e in ModelKind]
LAYER_KINDS = [e.value for e in LayerKind]


class DatasetSource(Enum):
    """Provenance of a native dataset directory."""

    RELEASED = "released"
    SYNTHETIC = "synthetic"


class ReportFormat(Enum):
    """Report encodings emitted by the CLI."""

    TEXT = "text"
    CSV = "csv"


class Command(Enum):
    """CLI subcommands."""

    SYNTH = "synth"
    TRAIN = "train"
    EVAL = "eval"
    PROFILE = "profile"
    IMPORT = "import"
