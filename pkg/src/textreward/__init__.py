"""Query-dependent prompt optimization driven by textual rewards.

An iterative loop that synthesizes (prompt, textual-reward) training data by
driving three model roles over the chat-completions protocol, hands the data
to a pluggable fine-tuning backend, and hill-climbs the optimal reward text
against validation failures. Fully runnable hermetically against the bundled
scripted simulator.
"""

from .config import RunConfig, load_config
from .corpus import DatasetKind, QuestionRecord, QuestionSet, load_dataset, split_train_val
from .evaluation import EvalReport, Evaluator, gains
from .gateway import ChatGateway, EndpointBinding, GenerationParams, ModelRole
from .grading import Answer, accuracy, extract_final_answer, grade, normalize_answer
from .manifest import RunManifest
from .orchestrator import Orchestrator, resume, run
from .reward_search import DEFAULT_INITIAL_REWARD, OptimalReward, RewardSearch
from .simserver import ScriptRule, record_replay, serve_script
from .synthesis import Synthesizer, SyntheticDataset, TrainingSample
from .templating import ChatMessage, TemplateSet
from .training import CheckpointRegistry, ModelRef, TrainerSpec, select_checkpoint

__all__ = [
    "Answer", "ChatGateway", "ChatMessage", "CheckpointRegistry", "DatasetKind",
    "DEFAULT_INITIAL_REWARD", "EndpointBinding", "EvalReport", "Evaluator",
    "GenerationParams", "ModelRef", "ModelRole", "OptimalReward", "Orchestrator",
    "QuestionRecord", "QuestionSet", "RewardSearch", "RunConfig", "RunManifest",
    "ScriptRule", "Synthesizer", "SyntheticDataset", "TemplateSet", "TrainerSpec",
    "TrainingSample", "accuracy", "extract_final_answer", "gains", "grade",
    "load_config", "load_dataset", "normalize_answer", "record_replay", "resume",
    "run", "select_checkpoint", "serve_script", "split_train_val",
]

__version__ = "0.1.0"
