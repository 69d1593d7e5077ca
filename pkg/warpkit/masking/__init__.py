from .config import MaskConfig
from .cycle import combine, cycle_error, cycle_mask
from .foreground import SubjectAttention, foreground_mask, threshold_map
from .mask import Mask, MaskKind, write_pgm

__all__ = [
    "Mask",
    "MaskKind",
    "MaskConfig",
    "SubjectAttention",
    "foreground_mask",
    "threshold_map",
    "cycle_error",
    "cycle_mask",
    "combine",
    "write_pgm",
]
