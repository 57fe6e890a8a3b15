"""Top-level package for skytwin."""

__version__ = "0.1.0"

from .config import load_config, default_config
from .world import generate_environment, obstacle_ratio
from .mdp import Simulation
from .agent import Td3Agent, train
from .experiments import run_eval, run_sweep, run_train
from .report import Report
