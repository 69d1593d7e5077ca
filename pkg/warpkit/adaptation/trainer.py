from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

from ..diffusion import Schedule, epsilon_loss
from ..errors import InputError, NumericError, ShapeError
from ..event_emitter import EventEmitter
from ..mmdit import MMDiT, checksum, subject_index, tokenize
from ..numerics import GradTape, SeededRng, Tensor, add, backward, scale
from .config import TrainConfig
from .lora import LoraAdapter, SubjectToken, attach, init_adapters
from .optim import AdamState, adamw_step

logger = logging.getLogger(__name__)

TrainerEvent = Literal["step"]


@dataclass(frozen=True)
class NoiseDraw:
    reference: int
    t: int
    noise: Tensor


@dataclass
class TrainResult:
    adapters: list[LoraAdapter]
    token: SubjectToken
    losses: list[float] = field(default_factory=list)

    def attach_to(self, model: MMDiT) -> MMDiT:
        return attach(model, self.adapters, self.token)


class CoarseTrainer(EventEmitter[TrainerEvent]):
    """Fits K/V/O adapters and the subject embedding on single-frame references.

    Emits ``"step"`` with ``(step, loss)`` after each loss evaluation. Only
    adapter factors and the subject embedding are ever updated.
    """

    def __init__(self, model: MMDiT, cfg: TrainConfig, schedule: Schedule | None = None) -> None:
        super().__init__()
        if model.adapters or model.subject is not None:
            raise InputError("Coarse adaptation starts from a base model, got an adapted view.")
        self.model = model
        self.cfg = cfg
        self.schedule = schedule or Schedule()
        self.token_ids = tokenize(cfg.prompt, model.config)
        subject_index(self.token_ids)

    def run(self, references: Sequence[Tensor]) -> TrainResult:
        references = self._prepare(references)
        cfg, model = self.cfg, self.model
        root = SeededRng(seed=cfg.seed)
        adapters = init_adapters(model, cfg.effective_rank(model.config.dim), cfg.seed, alpha=cfg.alpha)
        token = SubjectToken.from_model(model)
        adapter_states = [(AdamState.zeros_like(a.down.data), AdamState.zeros_like(a.up.data)) for a in adapters]
        token_state = AdamState.zeros_like(token.embedding.data)
        bank = self._draws(root.split("noise-bank"), references) if cfg.noise == "bank" else None

        result = TrainResult(adapters=adapters, token=token)
        for step in range(cfg.steps):
            draws = bank if bank is not None else self._draws(root.split(f"noise.{step}"), references)
            leaves = [leaf for a in adapters for leaf in (a.down, a.up)] + [token.embedding]
            try:
                with GradTape() as tape:
                    tape.watch(*leaves)
                    view = attach(model, adapters, token)
                    total = None
                    for draw in draws:
                        reference = references[draw.reference]
                        loss = epsilon_loss(view, reference, self.token_ids, draw.t, draw.noise, self.schedule)
                        total = loss if total is None else add(total, loss)
                    objective = scale(total, 1.0 / len(draws))
            except NumericError as ex:
                raise NumericError(f"Coarse adaptation diverged: {ex}", step=step) from ex
            value = objective.item()
            if not math.isfinite(value):
                raise NumericError("Coarse adaptation loss is not finite", step=step)
            result.losses.append(value)
            self.emit("step", step, value)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                logger.info(f"Adaptation step {step}/{cfg.steps}: loss {value:.6f}")

            grads = backward(tape, objective)
            updated = []
            for index, adapter in enumerate(adapters):
                down_state, up_state = adapter_states[index]
                down, down_state = adamw_step(adapter.down.data, grads[adapter.down], down_state, cfg.adapter_lr, cfg)
                up, up_state = adamw_step(adapter.up.data, grads[adapter.up], up_state, cfg.adapter_lr, cfg)
                adapter_states[index] = (down_state, up_state)
                updated.append(replace(adapter, down=Tensor.leaf(down), up=Tensor.leaf(up)))
            adapters = updated
            embedding, token_state = adamw_step(
                token.embedding.data, grads[token.embedding], token_state, cfg.token_lr, cfg
            )
            token = replace(token, embedding=Tensor.leaf(embedding))

        result.adapters, result.token = adapters, token
        return result

    def _prepare(self, references: Sequence[Tensor]) -> list[Tensor]:
        if len(references) == 0:
            raise InputError(
                "No reference images were given.\n"
                "Coarse adaptation needs at least one reference latent (five per subject by default)."
            )
        prepared = []
        expected = self.model.config.latent_shape(1)
        for reference in references:
            if reference.ndim == 3:
                reference = Tensor(reference.data[None], dtype=self.model.dtype)
            if reference.shape != expected:
                raise ShapeError(f"Reference latent {reference.shape} is not a single frame of shape {expected}")
            prepared.append(Tensor(reference.data, dtype=self.model.dtype))
        return prepared

    def _draws(self, rng: SeededRng, references: list[Tensor]) -> list[NoiseDraw]:
        draws = []
        for index, reference in enumerate(references):
            for _ in range(self.cfg.batch):
                t = int(rng.integers(1, self.schedule.steps + 1))
                noise = Tensor(rng.normal(reference.shape, dtype=self.model.dtype))
                draws.append(NoiseDraw(reference=index, t=t, noise=noise))
        return draws


def train_coarse(
    model: MMDiT,
    references: Sequence[Tensor],
    cfg: TrainConfig | None = None,
    *,
    schedule: Schedule | None = None,
) -> TrainResult:
    """Image-only adaptation; the prompt with the subject id comes from ``cfg.prompt``."""
    return CoarseTrainer(model, cfg or TrainConfig(), schedule).run(references)


def parameter_checksums(model: MMDiT) -> dict[str, str]:
    """Per-tensor digests of the base weights, for freeze checks."""
    return {name: checksum(model.weights, [name]) for name in model.weights}
