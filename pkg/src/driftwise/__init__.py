"""Online label-shift adaptation by re-weighting a fixed base classifier."""

from .adaptation import (
    FixedAdapter,
    FTFWHAdapter,
    FTHAdapter,
    OGDAdapter,
    OgdConfig,
    estimate_lipschitz,
    ofc_solve,
)
from .classifier import GaussianMixtureTask, HoldoutSet, estimate_confusion, fit_temperature
from .estimation import FiniteDiffConfig, LossContext, estimate_marginal, expected_loss
from .shift import ShiftSchedule, generate_stream, load_stream
from .simplex import project_to_simplex

__version__ = "0.1.0"

__all__ = [
    "FTFWHAdapter",
    "FTHAdapter",
    "FiniteDiffConfig",
    "FixedAdapter",
    "GaussianMixtureTask",
    "HoldoutSet",
    "LossContext",
    "OGDAdapter",
    "OgdConfig",
    "ShiftSchedule",
    "estimate_confusion",
    "estimate_lipschitz",
    "estimate_marginal",
    "expected_loss",
    "fit_temperature",
    "generate_stream",
    "load_stream",
    "ofc_solve",
    "project_to_simplex",
]
