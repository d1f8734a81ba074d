"""UWB seat-level localization for aircraft cabins: simulation, correction and evaluation."""

from .geometry import CabinLayout, generate_cabin
from .channel_sim import Dataset, generate_dataset, get_profile
from .localization import assign_seat, evaluate, multilaterate

__version__ = "0.1.0"

__all__ = ["CabinLayout", "Dataset", "assign_seat", "evaluate", "generate_cabin", "generate_dataset",
           "get_profile", "multilaterate", "__version__"]
