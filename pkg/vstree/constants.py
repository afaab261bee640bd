"""
Constantes do projeto vstree
Centraliza todas as configurações para fácil manutenção
"""
import os

from dotenv import load_dotenv

load_dotenv()

# ========================
# TIPOS NUMÉRICOS
# ========================
TORCH_THREADS = int(os.getenv("VSTREE_TORCH_THREADS", "1"))

# ========================
# ÁRVORE SUAVE (defaults da CLI, faixas de tuning entre parênteses)
# ========================
DEFAULT_DEPTH = 3
DEPTH_RANGE = (1, 5)
DEFAULT_LEAF_KIND = "linear"
DEFAULT_BETA = 10.0
BETA_RANGE = (1.0, 50.0)
DEFAULT_RANK = 5

# ========================
# TREINAMENTO (ELBO + Adam)
# ========================
DEFAULT_PRIOR_SCALE = 1.0
PRIOR_SCALE_RANGE = (0.01, 2.5)
DEFAULT_LEARNING_RATE = 1e-3
LEARNING_RATE_RANGE = (1e-4, 1e-3)
DEFAULT_STEPS = 5000
DEFAULT_BATCH_SIZE = 256
DEFAULT_MC_SAMPLES_TRAIN = 2
DEFAULT_SEED = 0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

INIT_MEAN_STD = 0.1
INIT_POSTERIOR_STD = 1e-3

LOG_EVERY = 50
ELBO_EVAL_SAMPLES = 16

# ========================
# VSGBM
# ========================
DEFAULT_NUM_TREES = 1
NUM_TREES_RANGE = (1, 10)
DEFAULT_A_SIGMA = 3.0
A_SIGMA_RANGE = (2.5, 5.0)
DEFAULT_B_SIGMA = 1.0
B_SIGMA_RANGE = (0.1, 5.0)
DEFAULT_WEAK_LEARNER_NOISE_SCALE = 1.0
DEFAULT_SHRINKAGE = 1.0

# ========================
# AVALIAÇÃO
# ========================
EVAL_SAMPLES = int(os.getenv("VSTREE_EVAL_SAMPLES", "256"))
DEFAULT_FOLDS = 10
DEFAULT_TRAIN_FRACTION = 0.8

SAMPLE_GRID_MIN = -2.0
SAMPLE_GRID_MAX = 2.0
SAMPLE_GRID_POINTS = 200
DEFAULT_FUNCTION_SAMPLES = 10

# ========================
# BANDIT
# ========================
EXPLORATION_ALPHA = 0.2
EXPLORATION_BETA = 50.0
EXPLORATION_DELTA = 0.01
EXPLORATION_ARMS = 8
EXPLORATION_OFFSET_RANGE = (-0.9, 0.9)

PORTFOLIO_FEATURE_DIM = 21
PORTFOLIO_ARMS = 8
PORTFOLIO_NOISE_STD = 0.1
PORTFOLIO_CONTEXT_STD = 1.0

DEFAULT_HORIZON = 20000
DEFAULT_RETRAIN_EVERY = 50
BANDIT_TRAIN_STEPS = 200
BANDIT_BATCH_SIZE = 128
REPLAY_REWARD_PREFIX = "reward_"

# ========================
# DADOS / SÍNTESE
# ========================
SYNTH_NAMES = (
    "step", "gap_blobs", "tail_line", "friedman", "linear",
    "gaussian", "gaussian_shifted",
)
GAUSSIAN_DIM = 4
GAUSSIAN_SHIFT = 5.0
DEFAULT_TARGET_COLUMN = "y"

# ========================
# ARQUIVO DE MODELO
# ========================
MODEL_FORMAT_VERSION = 1

# ========================
# BANCO DE RUNS
# ========================
DATABASE_URL = "sqlite:///./vstree_runs.db"

# ========================
# CONFIGURAÇÕES DE LOGS
# ========================
LOG_LEVEL = os.getenv("VSTREE_LOG_LEVEL", "INFO")

# ========================
# CÓDIGOS DE SAÍDA
# ========================
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# ========================
# MENSAGENS DE ERRO
# ========================
ERROR_DIMENSION_MISMATCH = "{what}: expected {expected}, got {got}"
ERROR_NON_FINITE = "Non-finite values in {what}"
ERROR_DIVERGENCE = "Objective became non-finite at step {step}"
ERROR_CONSTANT_TARGET = "Target column has zero variance; refusing to standardize"
ERROR_EMPTY_DATA = "Dataset is empty"
ERROR_MISSING_COLUMN = "Column '{column}' not found in {path}"
ERROR_MALFORMED_TABLE = "Malformed table {path}: {reason}"
ERROR_UNPARSEABLE_CELL = "Unparseable value {value!r} at row {row}, column '{column}'"
ERROR_UNKNOWN_FORMAT = "Unsupported model file format_version {version}"
ERROR_UNKNOWN_NAME = "Unknown {what} '{name}'; expected one of {choices}"
