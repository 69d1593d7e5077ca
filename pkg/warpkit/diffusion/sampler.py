from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError
from ..mmdit import MMDiT
from ..numerics import Tensor, add, mse, scale, sub
from .schedule import Schedule
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, int, Tensor], None]


def add_noise(x0: Tensor, noise: Tensor, t: int, schedule: Schedule) -> Tensor:
    """Forward process ``sqrt(a_t) x0 + sqrt(1 - a_t) eps``."""
    if x0.shape != noise.shape:
        raise ShapeError(f"Latent {x0.shape} and noise {noise.shape} differ in shape")
    signal, sigma = schedule.coefficients(t)
    return add(scale(x0, signal), scale(noise, sigma))


def epsilon_loss(
    model: MMDiT,
    x0: Tensor,
    token_ids: Sequence[int] | np.ndarray,
    t: int,
    noise: Tensor,
    schedule: Schedule,
) -> Tensor:
    """Mean squared error between the model's noise prediction and ``noise``."""
    noisy = add_noise(x0, noise, t, schedule)
    prediction = model.forward(noisy, token_ids, schedule.fraction(t)).output
    return mse(prediction, noise)


def ddim_step(x: Tensor, eps: Tensor, t: int, t_next: int, schedule: Schedule) -> Tensor:
    """Deterministic (eta = 0) DDIM move from ``t`` to ``t_next``.

    Works in either direction: sampling uses ``t_next < t``, inversion
    ``t_next > t``.
    """
    schedule.check(t)
    schedule.check(t_next)
    if t_next == t:
        return x
    signal, sigma = schedule.coefficients(t)
    signal_next, sigma_next = schedule.coefficients(t_next)
    x0_hat = scale(sub(x, scale(eps, sigma)), 1.0 / signal)
    return add(scale(x0_hat, signal_next), scale(eps, sigma_next))


def sample(
    model: MMDiT,
    x_T: Tensor,
    token_ids: Sequence[int] | np.ndarray,
    schedule: Schedule,
    *,
    on_step: StepCallback | None = None,
) -> Trajectory:
    """Denoise ``x_T`` to ``x_0`` over every timestep of ``schedule``."""
    x = x_T
    latents, timesteps = [x], [schedule.steps]
    for index in range(schedule.steps):
        t = schedule.timestep_of(index)
        try:
            eps = model.forward(x, token_ids, schedule.fraction(t)).output
            x = ddim_step(x, eps, t, t - 1, schedule)
        except NumericError as ex:
            raise NumericError(f"Sampling diverged: {ex}", step=index) from ex
        latents.append(x)
        timesteps.append(t - 1)
        if on_step is not None:
            on_step(index, t, x)
    return Trajectory(latents=tuple(latents), timesteps=tuple(timesteps), schedule_hash=schedule.hash())


def ddim_invert(
    model: MMDiT,
    x0: Tensor,
    token_ids: Sequence[int] | np.ndarray,
    schedule: Schedule,
) -> Trajectory:
    """Run the deterministic sampler backwards in time, ``x_0 -> x_T``.

    The returned trajectory is ordered like a sampling run so step ``i`` of a
    sampler lines up with ``latent_at(T - i)``.
    """
    x = x0
    latents = [x]
    for t in range(schedule.steps):
        try:
            eps = model.forward(x, token_ids, schedule.fraction(t)).output
            x = ddim_step(x, eps, t, t + 1, schedule)
        except NumericError as ex:
            raise NumericError(f"DDIM inversion diverged: {ex}", step=t) from ex
        latents.append(x)
    logger.info(f"Inverted latent {tuple(x0.shape)} over {schedule.steps} steps")
    return Trajectory(
        latents=tuple(reversed(latents)),
        timesteps=tuple(range(schedule.steps, -1, -1)),
        schedule_hash=schedule.hash(),
    )
