"""Byzantine lattice agreement: protocol, seeded adversarial simulator and checkers."""
from .harness import TrialConfig, TrialResult, matrix, run_battery, run_trial
from .lattice import Label, TreeParams

__all__ = ["Label", "TreeParams", "TrialConfig", "TrialResult", "matrix", "run_battery", "run_trial"]
__version__ = "0.1.0"
