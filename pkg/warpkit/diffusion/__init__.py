from .sampler import add_noise, ddim_invert, ddim_step, epsilon_loss, sample
from .schedule import Schedule, ScheduleConfig
from .trajectory import Trajectory

__all__ = [
    "Schedule",
    "ScheduleConfig",
    "Trajectory",
    "add_noise",
    "epsilon_loss",
    "ddim_step",
    "sample",
    "ddim_invert",
]
