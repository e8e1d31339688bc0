from .buffer_planner import audit_plan, liveness, plan_buffers
from .executor import CompiledGraph, ExecutionMode, execute, optimize
from .graph import BufferPlan, FusionGroup, Graph, OptimizerReport
from .passes import dce, fuse_elementwise

__all__ = [
    "BufferPlan",
    "CompiledGraph",
    "ExecutionMode",
    "FusionGroup",
    "Graph",
    "OptimizerReport",
    "audit_plan",
    "dce",
    "execute",
    "fuse_elementwise",
    "liveness",
    "optimize",
    "plan_buffers",
]
