"""Two-layer Gaussian interfaces above a hard wall: simulation and checks."""
from .dynamics import Ensemble, InitialLaw, NumericalError, SimConfig, run_trajectory
from .lattice import LatticeBox, ScalarField
from .noise import NoiseStream
from .penalty import PenaltyParams

__version__ = "0.1.0"

__all__ = [
    "Ensemble",
    "InitialLaw",
    "LatticeBox",
    "NoiseStream",
    "NumericalError",
    "PenaltyParams",
    "ScalarField",
    "SimConfig",
    "run_trajectory",
    "__version__",
]
