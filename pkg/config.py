"""
SpecNet Toolkit - Configuration
"""
import os
from pathlib import Path

# Base paths
BASE_DIR = Path(__file__).parent
DATA_DIR = Path(os.getenv("SPECNET_DATA_DIR", str(BASE_DIR / "data")))
RUNS_DIR = BASE_DIR / "runs"

# Reference training protocol (--reference-protocol)
REFERENCE_BATCH_SIZE = 128
REFERENCE_LR = 0.02
REFERENCE_LR_PERIOD = 50  # epochs between halvings
REFERENCE_MOMENTUM = 0.95
REFERENCE_EPOCHS = 300

# Desk-scale defaults
BATCH_SIZE = 32
LR = REFERENCE_LR
LR_PERIOD = REFERENCE_LR_PERIOD
MOMENTUM = REFERENCE_MOMENTUM
EPOCHS = 30
BETA = 1.0
SEED = 0
DATASET = "synthetic"
SUBSET = 10000
SYNTHETIC_SIZE = 512
MODE = "spectral"
ACTIVATION = "tanh"
PRECISION = "f64"

# Beta calibration: training images used to fit the per-block beta scales
CALIBRATION_SAMPLES = 32

# Beta sweep
SWEEP_BETAS = (0.5, 0.75, 1.0, 1.25, 1.5)

# Max logit deviation allowed by `compare` at beta=0
COMPARE_TOLERANCE = 1e-6

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# Logging
LOG_LEVEL = os.getenv("SPECNET_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
