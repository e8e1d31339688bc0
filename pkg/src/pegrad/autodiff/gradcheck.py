"""Central finite-difference oracle for tape gradients."""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from pegrad.autodiff.grad import grad, grad_name
from pegrad.autodiff.interpreter import evaluate
from pegrad.autodiff.tape import Tape
from pegrad.errors import ContractError
from pegrad.tensor_core.tensor import Tensor

logger = logging.getLogger(__name__)

STEP = 1e-4
RTOL = 1e-5
ATOL = 1e-7
MAX_RESAMPLES = 5


@dataclass
class GradCheckResult:
    param: str
    coords: list[tuple[int, ...]]
    analytic: np.ndarray
    numeric: np.ndarray
    rtol: float
    atol: float

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.analytic - self.numeric), initial=0.0))

    @property
    def passed(self) -> bool:
        return bool(np.allclose(self.analytic, self.numeric, rtol=self.rtol, atol=self.atol))


def _loss_fn(tape: Tape, inputs: Mapping[str, Tensor]):
    loss_only = tape.with_outputs({"loss": tape.loss})

    def loss(params: Mapping[str, Tensor]) -> float:
        return float(evaluate(loss_only, inputs, params)["loss"])

    return loss


def numerical_gradient(
    tape: Tape,
    inputs: Mapping[str, Tensor],
    params: Mapping[str, Tensor],
    name: str,
    coord: tuple[int, ...],
    h: float = STEP,
) -> float:
    """Central difference of the loss along one parameter coordinate."""
    loss = _loss_fn(tape, inputs)
    return _central(loss, params, name, coord, h)


def _central(loss, params: Mapping[str, Tensor], name: str, coord, h: float) -> float:
    shifted = dict(params)
    value = np.array(params[name], dtype=np.float64, copy=True)
    original = value[coord]
    value[coord] = original + h
    shifted[name] = value.copy()
    up = loss(shifted)
    value[coord] = original - h
    shifted[name] = value.copy()
    down = loss(shifted)
    return (up - down) / (2 * h)


def check_gradients(
    tape: Tape,
    inputs: Mapping[str, Tensor],
    params: Mapping[str, Tensor],
    num_coords: int = 20,
    seed: int = 0,
    h: float = STEP,
    rtol: float = RTOL,
    atol: float = ATOL,
    wrt: Optional[list[str]] = None,
) -> list[GradCheckResult]:
    """Compare reverse-mode gradients with finite differences on random coordinates.

    The tape must be recorded at 64-bit. Coordinates where the difference quotients at
    ``h`` and ``h/2`` disagree sit on a kink (relu, max) and are replaced by fresh ones.
    The comparison uses the Richardson combination of both quotients.

    :param num_coords: Coordinates sampled per parameter (capped by its size).
    :return: One result per checked parameter.
    """
    if tape.node(tape.loss).spec.dtype != np.float64:
        raise ContractError("gradient checks need a tape recorded at 64-bit")
    names = list(tape.params) if wrt is None else wrt
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    analytic = evaluate(grad(tape, wrt=names), inputs, params)
    loss = _loss_fn(tape, inputs)
    rng = np.random.default_rng(seed)

    results = []
    for name in names:
        shape = params[name].shape
        size = int(np.prod(shape, dtype=np.int64))
        pool = list(rng.permutation(size))
        wanted = min(num_coords, size)
        coords, numeric = [], []
        resamples = 0
        while len(coords) < wanted and pool:
            coord = tuple(int(i) for i in np.unravel_index(pool.pop(), shape))
            coarse = _central(loss, params, name, coord, h)
            fine = _central(loss, params, name, coord, h / 2)
            if abs(coarse - fine) > 1e-4 * max(1.0, abs(fine)) and resamples < MAX_RESAMPLES * wanted:
                resamples += 1
                continue
            coords.append(coord)
            numeric.append((4 * fine - coarse) / 3)
        full = analytic[grad_name(name)]
        result = GradCheckResult(
            param=name,
            coords=coords,
            analytic=np.array([full[c] for c in coords], dtype=np.float64),
            numeric=np.array(numeric, dtype=np.float64),
            rtol=rtol,
            atol=atol,
        )
        if resamples:
            logger.debug(f"Resampled {resamples} non-smooth coordinates of {name}")
        results.append(result)
    return results
