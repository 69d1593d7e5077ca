from .params import SceneParams
from .scene import (
    GroundTruth,
    ReferenceSet,
    Scene,
    ground_truth,
    gt_flow,
    gt_mask,
    make_reference_set,
    make_scene,
    reference_mask,
    render_latent,
    render_reference,
    repeated_reference,
    tokens_to_latent,
)
from .spec import SCENE_SPEC_VERSION, SceneSpec, dump_scene_spec, load_scene_spec, parse_scene_spec

__all__ = [
    "SceneParams",
    "Scene",
    "GroundTruth",
    "ReferenceSet",
    "make_scene",
    "render_latent",
    "render_reference",
    "repeated_reference",
    "tokens_to_latent",
    "gt_flow",
    "gt_mask",
    "reference_mask",
    "ground_truth",
    "make_reference_set",
    "SCENE_SPEC_VERSION",
    "SceneSpec",
    "load_scene_spec",
    "dump_scene_spec",
    "parse_scene_spec",
]
