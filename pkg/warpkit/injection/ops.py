from __future__ import annotations

import numpy as np

from ..correspondence.flow import FlowDirection, FlowField
from ..errors import InjectionError, ShapeError, UsageError
from ..masking.mask import Mask
from ..mmdit import joint_attention, merge_heads, patched_values, split_heads
from ..numerics import Tensor, as_tensor, concat, narrow, take, where


def _flat_mask(mask: Mask | np.ndarray, rows: int) -> np.ndarray:
    values = mask.flat() if isinstance(mask, Mask) else np.asarray(mask, dtype=bool).reshape(-1)
    if values.shape != (rows,):
        raise ShapeError(f"Mask covers {values.size} tokens, expected {rows}")
    return values


def warp_values(reference_values: Tensor | np.ndarray, flow: FlowField) -> Tensor:
    """Gather reference rows onto the generation lattice: ``out[p] = V_ref[match(p)]``.

    ``flow`` is the generation-indexed field (``GEN_TO_REF``): it says, for
    every generation token, which reference token supplies its value.
    A ``REF_TO_GEN`` field would scatter reference rows instead and raises
    :class:`UsageError`.
    """
    if flow.direction is not FlowDirection.GEN_TO_REF:
        raise UsageError(
            "Value warping gathers along the generation-indexed flow; got a ref_to_gen field.\n"
            "Use MatchResult.gen_to_ref."
        )
    values = as_tensor(reference_values)
    indices = flow.global_indices()
    if values.ndim != 2 or values.shape[0] != indices.size:
        raise ShapeError(f"Reference values {values.shape} do not cover the {indices.size} tokens of the flow")
    if indices.max() >= values.shape[0]:
        raise InjectionError("Flow points past the reference branch's tokens")
    return take(values, indices, axis=0)


def blend_values(warped: Tensor | np.ndarray, generated: Tensor, mask: Mask | np.ndarray) -> Tensor:
    """``mask * warped + (1 - mask) * generated``, row by row."""
    warped = as_tensor(warped, like=generated)
    if warped.shape != generated.shape:
        raise ShapeError(f"Warped values {warped.shape} and generation values {generated.shape} differ")
    selected = _flat_mask(mask, generated.shape[0])
    return where(selected[:, None], warped, generated)


def injected_mma(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    video_values: Tensor | np.ndarray,
    n_video: int,
) -> tuple[Tensor, Tensor]:
    """Joint attention with the video rows of ``v`` swapped for ``video_values``.

    ``q`` and ``k`` are per head ``[heads, L, hd]`` (already rotated), ``v``
    and ``video_values`` merged ``[L, d]`` and ``[N, d]``. Returns the merged
    output and the untouched attention probabilities.
    """
    values = patched_values(v, video_values, n_video)
    out, probs = joint_attention(q, k, split_heads(values, q.shape[0]))
    return merge_heads(out), probs


def _key_mask(video: np.ndarray, text: int) -> np.ndarray:
    return np.concatenate([video, np.ones(text, dtype=bool)])[None, None, :]


def kv_replacement_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    reference_keys: Tensor | np.ndarray,
    reference_values: Tensor | np.ndarray,
    reference_mask: Mask | np.ndarray,
    generation_mask: Mask | np.ndarray,
    n_video: int,
) -> Tensor:
    """Foreground rows attend to reference video keys, background rows to generation background keys.

    All tensors are per head; text keys and values always come from the
    generation branch. Text query rows keep the plain joint attention.
    """
    rows = q.shape[1]
    text = rows - n_video
    reference_keys = as_tensor(reference_keys, like=k)
    reference_values = as_tensor(reference_values, like=v)
    expected_keys = (k.shape[0], n_video, k.shape[2])
    expected_values = (v.shape[0], n_video, v.shape[2])
    if reference_keys.shape != expected_keys or reference_values.shape != expected_values:
        raise InjectionError(
            f"Reference keys/values {reference_keys.shape}/{reference_values.shape} do not match "
            f"{n_video} video tokens of the generation branch."
        )
    ref_fg = _flat_mask(reference_mask, n_video)
    gen_fg = _flat_mask(generation_mask, n_video)

    keys = concat([reference_keys, narrow(k, 1, n_video, rows)], axis=1)
    values = concat([reference_values, narrow(v, 1, n_video, rows)], axis=1)
    from_reference, _ = joint_attention(q, keys, values, where=_key_mask(ref_fg, text))
    from_generation, _ = joint_attention(q, k, v, where=_key_mask(~gen_fg, text))
    baseline, _ = joint_attention(q, k, v)

    video_rows = np.arange(rows) < n_video
    use_reference = np.concatenate([gen_fg, np.zeros(text, dtype=bool)])
    out = where(video_rows[None, :, None], from_generation, baseline)
    out = where(use_reference[None, :, None], from_reference, out)
    return merge_heads(out)


def token_concat_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    reference_keys: Tensor | np.ndarray,
    reference_values: Tensor | np.ndarray,
    n_video: int,
    *,
    mask_reference: bool = False,
) -> tuple[Tensor, Tensor]:
    """One joint pass over ``[X_gen; X_ref; C_T]`` keys, read back for the generation rows.

    Reference keys keep their own lattice rotation. Returns the merged output
    ``[L, d]`` and probabilities ``[heads, L, N + N_ref + M]``.
    """
    rows = q.shape[1]
    reference_keys = as_tensor(reference_keys, like=k)
    reference_values = as_tensor(reference_values, like=v)
    if reference_keys.shape[0] != k.shape[0] or reference_keys.shape[2] != k.shape[2]:
        raise InjectionError(f"Reference keys {reference_keys.shape} do not fit generation keys {k.shape}")
    keys = concat([narrow(k, 1, 0, n_video), reference_keys, narrow(k, 1, n_video, rows)], axis=1)
    values = concat([narrow(v, 1, 0, n_video), reference_values, narrow(v, 1, n_video, rows)], axis=1)
    mask = None
    if mask_reference:
        visible = np.ones(keys.shape[1], dtype=bool)
        visible[n_video : n_video + reference_keys.shape[1]] = False
        mask = visible[None, None, :]
    out, probs = joint_attention(q, keys, values, where=mask)
    return merge_heads(out), probs
