"""Graph-to-graph optimization passes. Every pass preserves outputs bit for bit."""

import logging
from dataclasses import replace

from pegrad.autodiff.tape import Tape
from pegrad.graph_optimizer.graph import FusionGroup, Graph

logger = logging.getLogger(__name__)


def dce(graph: Graph) -> Graph:
    """Drop nodes that no output depends on.

    Parameter and input leaves are always kept so feeds stay valid; parameters
    with no path to an output are reported as dead.
    """
    tape = graph.tape
    live = set(tape.outputs.values())
    for node in reversed(tape.nodes):
        if node.id in live:
            live.update(node.inputs)

    kept = tuple(
        node for node in tape.nodes if node.id in live or node.op in ("param", "input")
    )
    removed = len(tape.nodes) - len(kept)
    dead_params = [name for name, node_id in tape.params.items() if node_id not in live]
    taps = {
        name: tap
        for name, tap in tape.taps.items()
        if tap.activation in live and tap.output in live
    }
    pruned = Tape(
        kept,
        {i: v for i, v in tape.constants.items() if i in live},
        dict(tape.params),
        dict(tape.inputs),
        dict(tape.outputs),
        taps,
    )
    if removed:
        logger.info(f"Removed {removed} dead nodes")
    for name in dead_params:
        logger.warning(f"Parameter {name} does not reach any output")
    report = replace(graph.report, removed_nodes=removed, dead_params=dead_params)
    return Graph(pruned, report=report)


def fuse_elementwise(graph: Graph) -> Graph:
    """Merge maximal single-consumer chains of elementwise nodes.

    A node joins its consumer's chain when it has exactly one use, the consumer is
    elementwise, and both produce the same shape and element type, so the whole
    chain can run in one buffer.
    """
    tape = graph.tape
    uses = graph.use_counts
    users = tape.consumers()

    successor: dict[int, int] = {}
    predecessor: dict[int, int] = {}
    for node in tape.nodes:
        # an output with no consumer also has a single use
        if node.is_leaf or not node.primitive.elementwise or uses[node.id] != 1 or not users[node.id]:
            continue
        consumer = tape.node(users[node.id][0])
        if not consumer.primitive.elementwise or consumer.spec != node.spec:
            continue
        if consumer.id in predecessor:
            continue
        successor[node.id] = consumer.id
        predecessor[consumer.id] = node.id

    groups = []
    for node in tape.nodes:
        if node.id in successor and node.id not in predecessor:
            chain = [node.id]
            while chain[-1] in successor:
                chain.append(successor[chain[-1]])
            groups.append(FusionGroup(tuple(chain)))

    fused = sum(len(g) for g in groups)
    if groups:
        logger.info(f"Fused {fused} elementwise nodes into {len(groups)} groups")
    report = replace(graph.report, fusion_groups=len(groups), fused_nodes=fused)
    return Graph(tape, tuple(groups), report=report)
