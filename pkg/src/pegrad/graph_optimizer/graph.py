from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional, Union

from pegrad.autodiff.tape import Node, Tape


@dataclass(frozen=True)
class FusionGroup:
    """A single-consumer chain of elementwise nodes, executed in the tail's buffer."""

    nodes: tuple[int, ...]

    @property
    def tail(self) -> int:
        return self.nodes[-1]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class BufferPlan:
    """Assignment of every computed value to a reusable byte buffer.

    :param assignment: Value node id to buffer id. Fused intermediates map to
        their group's buffer.
    :param buffer_sizes: Byte size of each buffer, indexed by buffer id.
    :param intervals: Inclusive ``(def_step, last_use_step)`` per planned value.
    :param leaf_bytes: Bytes held by parameters, inputs and constants.
    :param no_reuse_bytes: Peak when every value gets its own allocation.
    """

    assignment: dict[int, int]
    buffer_sizes: list[int]
    intervals: dict[int, tuple[int, int]]
    leaf_bytes: int
    no_reuse_bytes: int

    @property
    def peak_bytes(self) -> int:
        return sum(self.buffer_sizes) + self.leaf_bytes

    @property
    def num_buffers(self) -> int:
        return len(self.buffer_sizes)


@dataclass
class OptimizerReport:
    removed_nodes: int = 0
    dead_params: list[str] = field(default_factory=list)
    fusion_groups: int = 0
    fused_nodes: int = 0
    peak_bytes: int = 0
    no_reuse_bytes: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


Step = Union[Node, FusionGroup]


@dataclass(frozen=True, eq=False)
class Graph:
    """A tape together with the results of the optimization passes run on it."""

    tape: Tape
    groups: tuple[FusionGroup, ...] = ()
    plan: Optional[BufferPlan] = None
    report: OptimizerReport = field(default_factory=OptimizerReport)

    @classmethod
    def from_tape(cls, tape: Tape) -> "Graph":
        return cls(tape)

    @cached_property
    def use_counts(self) -> dict[int, int]:
        """Consumers per node; each tape output counts as one extra use."""
        counts = {node_id: len(users) for node_id, users in self.tape.consumers().items()}
        for node_id in self.tape.outputs.values():
            counts[node_id] += 1
        return counts

    @cached_property
    def group_of(self) -> dict[int, FusionGroup]:
        return {node_id: group for group in self.groups for node_id in group.nodes}

    @cached_property
    def steps(self) -> list[Step]:
        """Scheduling units in execution order; a fusion group runs at its tail."""
        steps: list[Step] = []
        for node in self.tape.nodes:
            if node.is_leaf:
                continue
            group = self.group_of.get(node.id)
            if group is None:
                steps.append(node)
            elif group.tail == node.id:
                steps.append(group)
        return steps

    @cached_property
    def step_of(self) -> dict[int, int]:
        """Step index at which each computed node's value becomes available."""
        index = {}
        for i, step in enumerate(self.steps):
            for node_id in step.nodes if isinstance(step, FusionGroup) else (step.id,):
                index[node_id] = i
        return index
