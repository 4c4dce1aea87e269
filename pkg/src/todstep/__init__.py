"""Goal-conditioned token-level rewards and a small RL loop for task-oriented dialogue.

The package turns an annotated dialogue turn into a per-token reward
stream: an extractor walks the generated token sequence, and every newly
completed belief triple or requested-slot placeholder moves a combined
task reward whose deltas sum to the final turn score.  Around that core
sit corpus generation, standard TOD metrics, a hashed log-linear policy
with supervised and PPO training, and a line-JSON reward service.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainNotFoundError,
    EvaluationError,
    GenerationError,
    MalformedSequenceError,
    SchemaFormatError,
    TodstepError,
    ValidationError,
)
from .schema import (
    DialogueGoal,
    DialogueSchema,
    Entity,
    EntityDatabase,
    TurnGoal,
    derive_turn_goal,
    load_database,
    load_schema,
    lookup_entities,
    serialize_database,
    serialize_schema,
)
from .linearizer import (
    ExtractorState,
    Region,
    Vocabulary,
    build_vocab,
    parse_belief,
    serialize_acts,
    serialize_belief,
    serialize_response,
)
from .reward import (
    AdaptiveKL,
    EpisodeSummary,
    RewardConfig,
    RewardTracker,
    TraceRecord,
    generation_reward,
    kl_update,
    shaped_step,
    tod_reward,
    tracker_step,
    understanding_reward,
)
from .metrics import (
    DialogueEval,
    EvalReport,
    EvalTurn,
    combined_score,
    corpus_bleu,
    evaluate_corpus,
    inform_rate,
    match_rate,
    succ_f1,
    success_rate,
)
from .envgen import (
    Corpus,
    Dialogue,
    EpisodeState,
    GenConfig,
    Turn,
    build_database,
    env_step,
    generate_corpus,
    load_corpus,
    reset_episode,
    toy_schema,
    write_corpus,
)
from .policy import (
    PolicySnapshot,
    action_distribution,
    load_snapshot,
    new_snapshot,
    sample_action,
    save_snapshot,
    sft_train,
    state_value,
)
from .trainer import (
    TrainConfig,
    TrainResult,
    collect_rollouts,
    evaluate_snapshot,
    greedy_decode,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
    train,
)
from .kernels import BACKEND

__all__ = [
    "__version__",
    "BACKEND",
    "TodstepError",
    "SchemaFormatError",
    "ValidationError",
    "DomainNotFoundError",
    "MalformedSequenceError",
    "EvaluationError",
    "ConfigError",
    "GenerationError",
    "DialogueSchema",
    "Entity",
    "EntityDatabase",
    "TurnGoal",
    "DialogueGoal",
    "load_schema",
    "serialize_schema",
    "load_database",
    "serialize_database",
    "lookup_entities",
    "derive_turn_goal",
    "ExtractorState",
    "Region",
    "Vocabulary",
    "build_vocab",
    "parse_belief",
    "serialize_belief",
    "serialize_acts",
    "serialize_response",
    "RewardConfig",
    "RewardTracker",
    "TraceRecord",
    "EpisodeSummary",
    "AdaptiveKL",
    "understanding_reward",
    "generation_reward",
    "tod_reward",
    "tracker_step",
    "kl_update",
    "shaped_step",
    "EvalTurn",
    "DialogueEval",
    "EvalReport",
    "inform_rate",
    "success_rate",
    "match_rate",
    "succ_f1",
    "corpus_bleu",
    "combined_score",
    "evaluate_corpus",
    "GenConfig",
    "Turn",
    "Dialogue",
    "Corpus",
    "toy_schema",
    "build_database",
    "generate_corpus",
    "write_corpus",
    "load_corpus",
    "EpisodeState",
    "reset_episode",
    "env_step",
    "PolicySnapshot",
    "new_snapshot",
    "save_snapshot",
    "load_snapshot",
    "action_distribution",
    "sample_action",
    "state_value",
    "sft_train",
    "TrainConfig",
    "TrainResult",
    "collect_rollouts",
    "ppo_update",
    "train",
    "greedy_decode",
    "evaluate_snapshot",
    "save_checkpoint",
    "load_checkpoint",
]
