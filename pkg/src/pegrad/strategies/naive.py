import numpy as np

from pegrad.models.model import Model
from pegrad.strategies.base import PerExampleGrads, Strategy
from pegrad.strategies.programs import batch_grad_tape, grads_from


class NaiveLoop(Strategy):
    """One single-example gradient call per example, stacked in example order.

    This is the reference every other strategy is checked against.
    """

    name = "naive"
    vectorized = False

    def _compute(self, model: Model, params, x, y) -> PerExampleGrads:
        key = (self.name, model.signature, 1)
        names = list(model.param_specs())
        rows = []
        for i in range(len(x)):
            outputs = self.engine.run(
                key, lambda: batch_grad_tape(model, 1), {"x": x[i : i + 1], "y": y[i : i + 1]}, params
            )
            rows.append(grads_from(outputs, names))
        return PerExampleGrads({name: np.stack([row[name] for row in rows]) for name in names})

    def footprint_bytes(self, model: Model, batch_size: int) -> int:
        single = self.engine.peak_bytes(lambda: batch_grad_tape(model, 1))
        return single + batch_size * model.parameter_bytes
