"""Deep predictive-coding networks in numpy: precision-scheduled relaxation,
forward weight updates, BatchNorm freezing and a backprop reference."""
from .errors import ConfigError, DimensionError, DivergenceError, FormatError, ScheduleError, StateError
from .estimator import BPClassifier, PCClassifier
from .experiment import ExperimentConfig, MetricsRecord, evaluate, run_experiment
from .inference import InferenceConfig, relax, relax_step
from .layers import Network, build_mlp, build_network, build_vgg
from .learning import AdamW, LearningConfig, warmup_cosine_lr
from .pcgraph import OutputNudging, PCState, PrecisionSchedule, precision_at
from .training import Trainer

__version__ = "0.1.0"

__all__ = [
    "AdamW", "BPClassifier", "ConfigError", "DimensionError", "DivergenceError",
    "ExperimentConfig", "FormatError", "InferenceConfig", "LearningConfig", "MetricsRecord",
    "Network", "OutputNudging", "PCClassifier", "PCState", "PrecisionSchedule",
    "ScheduleError", "StateError", "Trainer", "build_mlp", "build_network", "build_vgg",
    "evaluate", "precision_at", "relax", "relax_step", "run_experiment", "warmup_cosine_lr",
]
