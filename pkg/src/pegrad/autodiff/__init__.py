from .grad import ACT_PREFIX, COT_PREFIX, GRAD_PREFIX, grad, grad_name
from .gradcheck import GradCheckResult, check_gradients, numerical_gradient
from .interpreter import evaluate, leaf_values
from .tape import Node, Tap, Tape, TapeBuilder, Tracer, check_feed, record
from .vjp_rules import PartialCotangent, VjpContext, VjpRule, registered_rules, vjp_rule

__all__ = [
    "ACT_PREFIX",
    "COT_PREFIX",
    "GRAD_PREFIX",
    "GradCheckResult",
    "Node",
    "PartialCotangent",
    "Tap",
    "Tape",
    "TapeBuilder",
    "Tracer",
    "VjpContext",
    "VjpRule",
    "check_feed",
    "check_gradients",
    "evaluate",
    "grad",
    "grad_name",
    "leaf_values",
    "numerical_gradient",
    "record",
    "registered_rules",
    "vjp_rule",
]
