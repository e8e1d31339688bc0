from typing import Mapping, Optional

from pegrad.autodiff.tape import Tape, check_feed
from pegrad.errors import ShapeError
from pegrad.tensor_core.tensor import Tensor


def leaf_values(
    tape: Tape, inputs: Mapping[str, Tensor], params: Optional[Mapping[str, Tensor]] = None
) -> dict[int, Tensor]:
    """Resolve every leaf of ``tape`` to a validated array."""
    feeds = {**(params or {}), **inputs}
    values: dict[int, Tensor] = {}
    for name, node_id in {**tape.params, **tape.inputs}.items():
        node = tape.node(node_id)
        if name not in feeds:
            raise ShapeError(f"leaf {name}: no value supplied")
        values[node_id] = check_feed(node, feeds[name])
    for node_id, value in tape.constants.items():
        values[node_id] = value
    return values


def evaluate(
    tape: Tape, inputs: Mapping[str, Tensor], params: Optional[Mapping[str, Tensor]] = None
) -> dict[str, Tensor]:
    """Replay ``tape`` node by node, allocating a fresh array for every result.

    Parameters and inputs may be passed together in ``inputs``.
    """
    env = leaf_values(tape, inputs, params)
    for node in tape.nodes:
        if node.is_leaf:
            continue
        env[node.id] = node.primitive.impl(*(env[i] for i in node.inputs), **node.attrs)
    return {name: env[node_id] for name, node_id in tape.outputs.items()}
