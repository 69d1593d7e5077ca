from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..correspondence.flow import FlowDirection, FlowField
from ..errors import ParamError
from ..masking.mask import Mask, MaskKind
from ..numerics import SeededRng, Tensor, resolve_dtype
from .params import SceneParams

logger = logging.getLogger(__name__)


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


def _signature_mask(params: SceneParams) -> np.ndarray:
    c = params.channels
    return np.arange(params.patch_dim) % c == c - 1


def _unit_texture(rng: SeededRng, shape: tuple[int, ...], params: SceneParams, norm: float) -> np.ndarray:
    values = rng.normal((*shape, params.patch_dim), dtype=np.float64)
    values[..., _signature_mask(params)] = 0.0
    return norm * values / np.linalg.norm(values, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Scene:
    """A textured sprite moving over a textured background, in patch space.

    Every token is a unit-norm patch vector. Background tokens use only the
    texture channels; sprite tokens add a fixed signature on the last channel.
    """

    seed: int
    params: SceneParams
    background: np.ndarray
    """[H, W, patch_dim] background of frame 0."""

    texture: np.ndarray
    """[s, s, patch_dim] sprite texture, zero on the signature channel."""

    signature: np.ndarray
    """[patch_dim] sprite signature, nonzero only on the last channel."""

    positions: np.ndarray
    """[F, 2] top-left sprite token per generated frame."""

    @property
    def canonical(self) -> tuple[int, int]:
        return self.params.canonical

    @property
    def lattice(self) -> tuple[int, int, int]:
        return self.params.lattice

    def sprite_tokens(self, gap: float = 1.0) -> np.ndarray:
        tokens = gap * self.texture + self.signature
        return tokens / np.linalg.norm(tokens, axis=-1, keepdims=True)

    def footprint(self, top_left: tuple[int, int] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices covered by a sprite at ``top_left``."""
        s = self.params.sprite_size
        rows = (int(top_left[0]) + np.arange(s)) % self.params.grid_h
        cols = (int(top_left[1]) + np.arange(s)) % self.params.grid_w
        return rows, cols

    def token_frames(self) -> np.ndarray:
        """Generated video as patch vectors, [F, H, W, patch_dim]."""
        sprite = self.sprite_tokens(self.params.appearance_gap)
        frames = []
        for position in self.positions:
            shift = tuple(position - self.positions[0]) if self.params.pan_background else (0, 0)
            frames.append(self._compose(np.roll(self.background, shift, axis=(0, 1)), sprite, position))
        return np.stack(frames)

    def reference_tokens(
        self,
        *,
        background: np.ndarray | None = None,
        offset: tuple[int, int] = (0, 0),
    ) -> np.ndarray:
        """Reference image as patch vectors, [1, H, W, patch_dim]."""
        background = self.background if background is None else background
        top_left = self.place(np.asarray(self.canonical) + np.asarray(offset))
        return self._compose(background, self.sprite_tokens(), top_left)[None]

    def _compose(self, background: np.ndarray, sprite: np.ndarray, top_left: np.ndarray) -> np.ndarray:
        tokens = np.array(background, copy=True)
        rows, cols = self.footprint(top_left)
        tokens[np.ix_(rows, cols)] = sprite
        return tokens

    def place(self, top_left: np.ndarray) -> np.ndarray:
        return _place(self.params, top_left)

    def latent(self, dtype: np.dtype | str | None = None) -> Tensor:
        return render_latent(self, dtype)

    def reference_latent(self, dtype: np.dtype | str | None = None) -> Tensor:
        return repeated_reference(self, dtype)

    def truth(self) -> GroundTruth:
        return ground_truth(self)


def _place(params: SceneParams, top_left: np.ndarray) -> np.ndarray:
    """Wrap (toroidal) or clip (clamped) a sprite top-left into the grid."""
    if params.mode == "toroidal":
        return np.mod(top_left, (params.grid_h, params.grid_w))
    return np.clip(top_left, 0, (params.grid_h - params.sprite_size, params.grid_w - params.sprite_size))


def make_scene(seed: int, params: SceneParams | None = None) -> Scene:
    """Deterministic scene for ``seed``."""
    params = params or SceneParams()
    rng = SeededRng(seed=seed)
    signature = np.zeros(params.patch_dim)
    mask = _signature_mask(params)
    signature[mask] = np.sqrt(params.signature_fraction / mask.sum())
    start = np.asarray(params.canonical) + np.asarray(params.start_offset)
    steps = np.arange(params.frames)[:, None] * np.asarray(params.velocity)[None, :]
    positions = np.stack([_place(params, start + step) for step in steps]).astype(np.int64)
    logger.debug(f"Scene {seed}: sprite path {positions.tolist()}")
    return Scene(
        seed=seed,
        params=params,
        background=_readonly(_unit_texture(rng.split("background"), (params.grid_h, params.grid_w), params, 1.0)),
        texture=_readonly(
            _unit_texture(
                rng.split("sprite"),
                (params.sprite_size, params.sprite_size),
                params,
                np.sqrt(1.0 - params.signature_fraction),
            )
        ),
        signature=_readonly(signature),
        positions=_readonly(positions),
    )


def tokens_to_latent(tokens: np.ndarray, params: SceneParams, dtype: np.dtype | str | None = None) -> Tensor:
    """[F, H, W, patch_dim] patch vectors to a latent video [F, H*p, W*p, c]."""
    p, c = params.patch_size, params.channels
    frames, rows, cols, _ = tokens.shape
    x = tokens.reshape(frames, rows, cols, p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return Tensor(x.reshape(frames, rows * p, cols * p, c), dtype=resolve_dtype() if dtype is None else dtype)


def render_latent(scene: Scene, dtype: np.dtype | str | None = None) -> Tensor:
    return tokens_to_latent(scene.token_frames(), scene.params, dtype)


def render_reference(scene: Scene, dtype: np.dtype | str | None = None) -> Tensor:
    """Single-frame reference: the full-texture sprite at its canonical position."""
    return tokens_to_latent(scene.reference_tokens(), scene.params, dtype)


def repeated_reference(scene: Scene, dtype: np.dtype | str | None = None) -> Tensor:
    """The reference image repeated along all frames."""
    tokens = np.repeat(scene.reference_tokens(), scene.params.frames, axis=0)
    return tokens_to_latent(tokens, scene.params, dtype)


def _flat(rows: np.ndarray, cols: np.ndarray, width: int) -> np.ndarray:
    return (rows[:, None] * width + cols[None, :]).reshape(-1)


def gt_flow(scene: Scene, direction: FlowDirection = FlowDirection.GEN_TO_REF) -> FlowField:
    """Analytic sprite correspondence; tokens off the sprite keep the identity match.

    ``GEN_TO_REF`` displacements equal ``canonical - position(frame)``.
    """
    direction = FlowDirection(direction)
    frames, rows, cols = scene.lattice
    flow = FlowField.identity(scene.lattice, direction)
    match = np.array(flow.match)
    ref = _flat(*scene.footprint(scene.canonical), cols)
    for f, position in enumerate(scene.positions):
        gen = _flat(*scene.footprint(position), cols)
        frame = match[f].reshape(-1)
        if direction is FlowDirection.GEN_TO_REF:
            frame[gen] = ref
        else:
            frame[ref] = gen
        match[f] = frame.reshape(rows, cols)
    return FlowField(match=match, direction=direction)


def gt_mask(scene: Scene) -> Mask:
    """Sprite footprint in every generated frame."""
    values = np.zeros(scene.lattice, dtype=bool)
    for f, position in enumerate(scene.positions):
        values[f][np.ix_(*scene.footprint(position))] = True
    return Mask(values=values, kind=MaskKind.FOREGROUND)


def reference_mask(scene: Scene) -> Mask:
    """Sprite footprint of the repeated reference."""
    values = np.zeros(scene.lattice, dtype=bool)
    footprint = np.ix_(*scene.footprint(scene.canonical))
    for frame in values:
        frame[footprint] = True
    return Mask(values=values, kind=MaskKind.FOREGROUND)


@dataclass(frozen=True)
class GroundTruth:
    mask: Mask
    flow: FlowField
    """Generation to reference."""

    reference_mask: Mask
    bijective: bool
    """True when every foreground token has a unique partner (pure toroidal translation)."""


def ground_truth(scene: Scene) -> GroundTruth:
    return GroundTruth(
        mask=gt_mask(scene),
        flow=gt_flow(scene),
        reference_mask=reference_mask(scene),
        bijective=scene.params.mode == "toroidal",
    )


@dataclass(frozen=True)
class ReferenceSet:
    latents: tuple[Tensor, ...]
    """Single-frame latents [1, H*p, W*p, c]."""

    masks: tuple[Mask, ...]
    offsets: tuple[tuple[int, int], ...]


def make_reference_set(
    scene: Scene,
    k: int = 5,
    jitter: int = 0,
    dtype: np.dtype | str | None = None,
) -> ReferenceSet:
    """``k`` reference images of the sprite.

    With ``jitter > 0`` each image moves the sprite by up to ``jitter`` tokens
    and draws a fresh background; ``jitter == 0`` gives ``k`` identical images.
    """
    if k < 1:
        raise ParamError(f"A reference set needs k >= 1 images, got {k}")
    if jitter < 0:
        raise ParamError(f"Reference jitter must be non-negative, got {jitter}")
    params = scene.params
    latents, masks, offsets = [], [], []
    for index in range(k):
        background, offset = None, (0, 0)
        if jitter > 0:
            rng = SeededRng(seed=scene.seed).split(f"reference.{index}")
            drow, dcol = rng.integers(-jitter, jitter + 1, size=2)
            offset = (int(drow), int(dcol))
            background = _unit_texture(rng.split("background"), (params.grid_h, params.grid_w), params, 1.0)
        tokens = scene.reference_tokens(background=background, offset=offset)
        top_left = scene.place(np.asarray(scene.canonical) + np.asarray(offset))
        values = np.zeros((1, params.grid_h, params.grid_w), dtype=bool)
        values[0][np.ix_(*scene.footprint(top_left))] = True
        latents.append(tokens_to_latent(tokens, params, dtype))
        masks.append(Mask(values=values, kind=MaskKind.FOREGROUND))
        offsets.append(offset)
    return ReferenceSet(latents=tuple(latents), masks=tuple(masks), offsets=tuple(offsets))
