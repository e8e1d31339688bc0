"""Liveness analysis and greedy buffer reuse."""

import logging
from dataclasses import replace

from pegrad.errors import ContractError
from pegrad.graph_optimizer.graph import BufferPlan, FusionGroup, Graph

logger = logging.getLogger(__name__)


def liveness(graph: Graph) -> dict[int, tuple[int, int]]:
    """Inclusive ``[def_step, last_use_step]`` of every value that needs a buffer.

    Fused intermediates never leave their group and get no interval of their own.
    Tape outputs stay live until the last step.
    """
    tape = graph.tape
    step_of = graph.step_of
    last_step = len(graph.steps) - 1
    intervals: dict[int, tuple[int, int]] = {}
    for i, step in enumerate(graph.steps):
        value = step.tail if isinstance(step, FusionGroup) else step.id
        intervals[value] = (i, i)
    for node in tape.nodes:
        if node.is_leaf:
            continue
        for input_id in node.inputs:
            if input_id in intervals:
                start, end = intervals[input_id]
                intervals[input_id] = (start, max(end, step_of[node.id]))
    for node_id in tape.outputs.values():
        if node_id in intervals:
            intervals[node_id] = (intervals[node_id][0], last_step)
    return intervals


def _leaf_bytes(graph: Graph) -> int:
    return sum(node.spec.nbytes for node in graph.tape.nodes if node.is_leaf)


def plan_buffers(graph: Graph) -> Graph:
    """Assign values to buffers, reusing a buffer once its occupant is dead.

    Values are placed in definition order. A free buffer of exactly the right size
    is preferred, then the smallest free buffer that is large enough; otherwise a
    new buffer is opened.
    """
    tape = graph.tape
    intervals = liveness(graph)
    order = sorted(intervals, key=lambda v: (intervals[v][0], v))

    sizes: list[int] = []
    occupant_end: list[int] = []
    assignment: dict[int, int] = {}
    for value in order:
        start, end = intervals[value]
        need = tape.node(value).spec.nbytes
        free = [b for b in range(len(sizes)) if occupant_end[b] < start and sizes[b] >= need]
        exact = [b for b in free if sizes[b] == need]
        if exact:
            chosen = exact[0]
        elif free:
            chosen = min(free, key=lambda b: (sizes[b], b))
        else:
            chosen = len(sizes)
            sizes.append(need)
            occupant_end.append(end)
        occupant_end[chosen] = end
        assignment[value] = chosen

    for group in graph.groups:
        for node_id in group.nodes[:-1]:
            assignment[node_id] = assignment[group.tail]

    leaf_bytes = _leaf_bytes(graph)
    plan = BufferPlan(
        assignment=assignment,
        buffer_sizes=sizes,
        intervals=intervals,
        leaf_bytes=leaf_bytes,
        no_reuse_bytes=sum(tape.node(v).spec.nbytes for v in intervals) + leaf_bytes,
    )
    planned = Graph(tape, graph.groups, plan, graph.report)
    problems = audit_plan(planned)
    if problems:
        raise ContractError(f"buffer plan failed its audit: {problems[:3]}")
    report = replace(graph.report, peak_bytes=plan.peak_bytes, no_reuse_bytes=plan.no_reuse_bytes)
    logger.info(
        f"Planned {plan.num_buffers} buffers for {len(intervals)} values: "
        f"peak {plan.peak_bytes} bytes vs {plan.no_reuse_bytes} without reuse"
    )
    return Graph(tape, graph.groups, plan, report)


def audit_plan(graph: Graph) -> list[str]:
    """Describe every pair of simultaneously live values sharing a buffer."""
    plan = graph.plan
    if plan is None:
        return ["graph has no buffer plan"]
    problems = []
    by_buffer: dict[int, list[int]] = {}
    for value in plan.intervals:
        by_buffer.setdefault(plan.assignment[value], []).append(value)
    for buffer_id, values in by_buffer.items():
        values.sort(key=lambda v: plan.intervals[v][0])
        for value in values:
            if graph.tape.node(value).spec.nbytes > plan.buffer_sizes[buffer_id]:
                problems.append(f"value {value} does not fit buffer {buffer_id}")
        for a, b in zip(values, values[1:]):
            if plan.intervals[a][1] >= plan.intervals[b][0]:
                problems.append(f"values {a} and {b} overlap in buffer {buffer_id}")
    if plan.peak_bytes > plan.no_reuse_bytes:
        problems.append("planned peak exceeds the no-reuse baseline")
    return problems
