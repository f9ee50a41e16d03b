from .baseline import DeadlockDetected, NocParams, simulate_baseline
from .fabric import RuntimeConflict, SimResult, SimulationError, simulate_metro
from .tiles import TileSimResult, instant_arrivals, simulate_tiles

__all__ = [
    "DeadlockDetected",
    "NocParams",
    "RuntimeConflict",
    "SimResult",
    "SimulationError",
    "TileSimResult",
    "instant_arrivals",
    "simulate_baseline",
    "simulate_metro",
    "simulate_tiles",
]
