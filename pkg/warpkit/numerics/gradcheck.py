from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError
from .rng import SeededRng
from .tensor import GradTape, Tensor, backward

logger = logging.getLogger(__name__)

Objective = Callable[[Sequence[Tensor]], Tensor]


def finite_diff_check(
    f: Objective,
    params: Sequence[np.ndarray],
    h: float = 1e-3,
    *,
    coords: int | None = None,
    rng: SeededRng | None = None,
    atol: float = 1e-6,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` receives fresh leaves built from ``params`` and must return a scalar.
    With ``coords`` set, only that many coordinates per parameter are checked,
    chosen by ``rng``.
    """
    if h <= 0:
        raise ContractError(f"Step size h must be positive, got {h}")
    arrays = [np.array(p, copy=True) for p in params]

    leaves = [Tensor.leaf(a) for a in arrays]
    with GradTape() as tape:
        tape.watch(*leaves)
        loss = f(leaves)
    analytic = backward(tape, loss)

    def evaluate(values: list[np.ndarray]) -> float:
        result = f([Tensor(v) for v in values]).item()
        if not np.isfinite(result):
            raise NumericError("Objective returned a non-finite value during finite differencing.")
        return result

    worst = 0.0
    for index, (array, leaf) in enumerate(zip(arrays, leaves)):
        flat_count = array.size
        if coords is not None and coords < flat_count:
            picker = rng or SeededRng(seed=index)
            chosen = picker.integers(0, flat_count, size=coords)
        else:
            chosen = np.arange(flat_count)
        grad = analytic[leaf].reshape(-1)
        for flat in chosen:
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[index].reshape(-1)[flat] += h
            minus[index].reshape(-1)[flat] -= h
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * h)
            exact = float(grad[flat])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol)
            worst = max(worst, error)
    logger.debug(f"finite_diff_check worst relative error {worst:.3e}")
    return worst
