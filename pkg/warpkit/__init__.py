from .adaptation import TrainConfig, TrainResult, train_coarse
from .correspondence import FlowDirection, FlowField, MatchEvalReport, descriptor_sweep, match_descriptors, pck
from .diffusion import Schedule, ScheduleConfig, ddim_invert, sample
from .errors import WarpKitError
from .event_emitter import EventEmitter
from .injection import DualBranchResult, DualBranchSampler, InjectionConfig, StrategyName, run_dual_branch
from .masking import Mask, MaskConfig
from .mmdit import MMDiT, ModelConfig
from .numerics import SeededRng, Tensor
from .pipeline import RunConfig, RunReport, load_checkpoint, save_checkpoint
from .scenes import SceneParams, ground_truth, make_reference_set, make_scene
from .version import __version__

__all__ = [
    "__version__",
    "WarpKitError",
    "EventEmitter",
    "Tensor",
    "SeededRng",
    "ModelConfig",
    "MMDiT",
    "Schedule",
    "ScheduleConfig",
    "sample",
    "ddim_invert",
    "TrainConfig",
    "TrainResult",
    "train_coarse",
    "FlowDirection",
    "FlowField",
    "match_descriptors",
    "pck",
    "descriptor_sweep",
    "MatchEvalReport",
    "Mask",
    "MaskConfig",
    "InjectionConfig",
    "StrategyName",
    "DualBranchSampler",
    "DualBranchResult",
    "run_dual_branch",
    "SceneParams",
    "make_scene",
    "make_reference_set",
    "ground_truth",
    "RunConfig",
    "RunReport",
    "save_checkpoint",
    "load_checkpoint",
]
