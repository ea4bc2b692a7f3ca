"""Safe switching between an uncertified primary and a stabilizing fallback output-feedback controller."""

from .model import (
    AugmentedSystem,
    DynamicController,
    SystemModel,
    load_model,
    perturb_controller,
    random_stable_system,
    save_model,
    synth_optimal_controller,
    zero_controller,
)
from .supervisor import SupervisorConfig, SupervisorState, advance, decide

__version__ = "0.1.0"
