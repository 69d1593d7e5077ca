from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .commands import (
    ABLATION_STRATEGIES,
    baseline_generate,
    cmd_ablate,
    cmd_adapt,
    cmd_config,
    cmd_gen_scene,
    cmd_generate,
    cmd_init_model,
    cmd_match_eval,
    read_prompt,
    scene_anchor,
    strategy_config,
)
from .config import SCHEMA_VERSION, PathsConfig, RunConfig
from .corpus import PROMPT_TEMPLATES, Corpus, CorpusEntry, generate_corpus, load_corpus
from .outputs import latent_hash, read_reference, write_csv, write_flow_csv, write_frames, write_jsonl
from .report import RunReport

__all__ = [
    "SCHEMA_VERSION",
    "PathsConfig",
    "RunConfig",
    "RunReport",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "PROMPT_TEMPLATES",
    "Corpus",
    "CorpusEntry",
    "generate_corpus",
    "load_corpus",
    "latent_hash",
    "read_reference",
    "write_csv",
    "write_flow_csv",
    "write_frames",
    "write_jsonl",
    "ABLATION_STRATEGIES",
    "baseline_generate",
    "scene_anchor",
    "strategy_config",
    "read_prompt",
    "cmd_config",
    "cmd_init_model",
    "cmd_gen_scene",
    "cmd_adapt",
    "cmd_generate",
    "cmd_match_eval",
    "cmd_ablate",
]
