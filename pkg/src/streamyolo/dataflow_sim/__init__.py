"""Cycle-stepped simulator of the streaming architecture."""

from .channel import (
    Channel,
    FifoRun,
    SoftFifoChannel,
    SoftFifoConfig,
    simulate_ideal_fifo,
    simulate_soft_fifo,
)
from .engine import (
    DeadlockError,
    Pipeline,
    SimResult,
    SimulationError,
    build_pipeline,
    measure_fifo_depths,
    run_sim,
)

__all__ = [
    "Channel", "FifoRun", "SoftFifoChannel", "SoftFifoConfig", "simulate_ideal_fifo",
    "simulate_soft_fifo", "DeadlockError", "Pipeline", "SimResult", "SimulationError",
    "build_pipeline", "measure_fifo_depths", "run_sim",
]
