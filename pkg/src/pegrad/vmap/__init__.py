from .batching_rules import BatchRule, batching_rule, registered_batching_rules
from .vmap import InAxes, batch_tape, batched_per_example_grads, vmap

__all__ = [
    "BatchRule",
    "InAxes",
    "batch_tape",
    "batched_per_example_grads",
    "batching_rule",
    "registered_batching_rules",
    "vmap",
]
