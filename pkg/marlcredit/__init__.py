from marlcredit.exceptions import (
    ConfigError,
    CriticError,
    MarlCreditError,
    ParseError,
    TransportError,
)

from marlcredit.core import (
    CreditMatrix,
    CreditSource,
    EnvKind,
    EnvSpec,
    EpisodeBatch,
    TaskAssignmentMatrix,
    TimeStep,
    Trajectory,
    episode_return,
    per_agent_surrogate_return,
    validate_credit_matrix,
)
from marlcredit.environments import make_env
from marlcredit.critic import (
    llm_mca_assign,
    llm_taca_assign,
    oracle_assign,
    shared_reward_assign,
)
from marlcredit.parsing import parse_response
from marlcredit.llm_client import ChatSession

__version__ = "0.1.0"
