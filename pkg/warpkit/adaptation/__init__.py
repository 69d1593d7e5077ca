from .checkpoint import load_adapters, save_adapters
from .config import TrainConfig
from .lora import AdapterTarget, LoraAdapter, SubjectToken, apply_lora, attach, init_adapters
from .optim import AdamState, adamw_step
from .trainer import CoarseTrainer, NoiseDraw, TrainResult, parameter_checksums, train_coarse

__all__ = [
    "TrainConfig",
    "AdapterTarget",
    "LoraAdapter",
    "SubjectToken",
    "apply_lora",
    "attach",
    "init_adapters",
    "AdamState",
    "adamw_step",
    "CoarseTrainer",
    "NoiseDraw",
    "TrainResult",
    "train_coarse",
    "parameter_checksums",
    "save_adapters",
    "load_adapters",
]
