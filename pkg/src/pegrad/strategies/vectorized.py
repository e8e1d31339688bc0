from pegrad.models.model import Model
from pegrad.strategies.base import PerExampleGrads, Strategy
from pegrad.strategies.programs import grads_from, vmapped_grad_tape


class VmapStrategy(Strategy):
    """Batch the single-example gradient program with the vmap transform."""

    name = "vmap"

    def _compute(self, model: Model, params, x, y) -> PerExampleGrads:
        batch_size = len(x)
        outputs = self.engine.run(
            (self.name, model.signature, batch_size),
            lambda: vmapped_grad_tape(model, batch_size),
            {"x": x, "y": y},
            params,
        )
        return PerExampleGrads(grads_from(outputs, model.param_specs()))

    def footprint_bytes(self, model: Model, batch_size: int) -> int:
        return self.engine.peak_bytes(lambda: vmapped_grad_tape(model, batch_size))
