"""poisonforge: poison-only clean-label backdoor construction.

Builds poisoned image-classification datasets from training-dynamics logs:
hardness-based sample selection, stealthiness ranking via image-quality
metrics, and per-channel trigger synthesis. No model training happens
here; pretraining logs and evaluation predictions come from an external
harness.
"""

__version__ = "0.1.0"

from .errors import DegenerateStatisticsError, PoisonforgeError, ValidationError

__all__ = [
    "__version__",
    "PoisonforgeError",
    "ValidationError",
    "DegenerateStatisticsError",
]
