"""STL-constrained BarrierNet: trainable time-varying HOCBFs in a differentiable QP."""
__version__ = "0.1.0"

from .config import ConfigError, ScenarioConfig, bundled_scenarios, load_config, parse_config
from .controller import Policy, evaluate, rollout, train
from .diffqp import BACKEND as QP_BACKEND

__all__ = ["ConfigError", "Policy", "QP_BACKEND", "ScenarioConfig", "__version__", "bundled_scenarios",
           "evaluate", "load_config", "parse_config", "rollout", "train"]
