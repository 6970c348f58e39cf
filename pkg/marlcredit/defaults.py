DEFAULT_GAMMA = 0.99
DEFAULT_HIDDEN_SIZES = (64, 64)
DEFAULT_LEARNING_RATE = 5e-4
DEFAULT_REPLAY_CAPACITY = 50000
DEFAULT_MINIBATCH_SIZE = 64
DEFAULT_TARGET_SYNC_INTERVAL = 200
DEFAULT_EPSILON_START = 1.0
DEFAULT_EPSILON_END = 0.05
DEFAULT_EPSILON_ANNEAL_FRACTION = 0.6
DEFAULT_GRAD_CLIP = 10.0
DEFAULT_OPTIMIZER = "adam"
DEFAULT_D_TASK = 4
DEFAULT_DROPOUT_MAX = 0.5

DEFAULT_EPISODES_PER_ITERATION = 8
DEFAULT_ITERATIONS = 100
DEFAULT_UPDATE_EPOCHS = 1
DEFAULT_EVAL_EPISODES = 100
DEFAULT_EVAL_INTERVAL = 10

DEFAULT_CRITIC_RETRIES = 2
DEFAULT_NORMALIZATION = "symmetric"
DEFAULT_COLLISION_PENALTY = -5.0
DEFAULT_PICKUP_BONUS = 0.1
DEFAULT_MATRIX_OPTIMAL_BONUS = 1.0

DEFAULT_ENDPOINT = "http://localhost:8000/v1"
DEFAULT_MODEL = "gemma-7b-it"
DEFAULT_TOKEN_BUDGET = 8192
DEFAULT_TIMEOUT = 120.0
DEFAULT_RETRIES = 5
DEFAULT_BACKOFF_BASE = 1.0
DEFAULT_BACKOFF_FACTOR = 2.0
API_KEY_ENV = "LLM_API_KEY"

DATASET_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
