"""Self-checks run by ``pegrad verify``: strategy equivalence, finite-difference
gradients, DPSGD reductions and graph optimizer soundness, all at 64-bit."""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, get_args

import numpy as np

from pegrad.autodiff import check_gradients, evaluate
from pegrad.dpsgd import DpConfig, clip, dpsgd_step, microbatch
from pegrad.graph_optimizer import CompiledGraph, audit_plan, optimize
from pegrad.harness.datasets import dataset_for
from pegrad.models import Model, build
from pegrad.models.builders import ModelKind
from pegrad.strategies import NaiveLoop, PerExampleGrads, get_strategy
from pegrad.strategies.programs import batch_grad_tape
from pegrad.tensor_core.rng import RngState

logger = logging.getLogger(__name__)

EQUIVALENCE_RTOL = 1e-8
GRADCHECK_COORDS = 20
BATCH_SIZES = (1, 2, 4)
SEQ_LEN = 8


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Largest absolute difference relative to the largest expected magnitude."""
    scale = max(float(np.max(np.abs(expected), initial=0.0)), 1e-300)
    return float(np.max(np.abs(np.asarray(actual) - expected), initial=0.0)) / scale


def sample_batch(model: Model, batch_size: int, seed: int = 0):
    data = dataset_for(model.kind, batch_size, seed, model.dtype, seq_len=SEQ_LEN)
    return data.x, data.y


def _check(name: str, run: Callable[[], tuple[bool, str]]) -> CheckResult:
    try:
        passed, detail = run()
    except Exception as e:
        passed, detail = False, f"{type(e).__name__}: {e}"
    result = CheckResult(name, passed, detail)
    if passed:
        logger.info(f"PASS {name} {detail}")
    else:
        logger.warning(f"FAIL {name} {detail}")
    return result


def _equivalence(model: Model, strategy_name: str, batch_size: int):
    def run():
        x, y = sample_batch(model, batch_size, seed=batch_size)
        reference = NaiveLoop("eager").per_example_grads(model, model.params, x, y)
        result = get_strategy(strategy_name).per_example_grads(model, model.params, x, y)
        if result.norms_only:
            err = relative_error(result.norms(), reference.norms())
        else:
            err = max(relative_error(result.grads[k], g) for k, g in reference.grads.items())
        return err <= EQUIVALENCE_RTOL, f"relative error {err:.2e}"

    return run


def _gradcheck(model: Model):
    def run():
        x, y = sample_batch(model, 2, seed=7)
        per_param = max(2, math.ceil(GRADCHECK_COORDS / len(model.params)))
        results = check_gradients(model.loss_tape(2), {"x": x, "y": y}, model.params, num_coords=per_param)
        failed = [r.param for r in results if not r.passed]
        worst = max(r.max_abs_error for r in results)
        return not failed, f"max abs error {worst:.2e}" + (f", failed {failed}" if failed else "")

    return run


def _optimizer(model: Model):
    def run():
        x, y = sample_batch(model, 2, seed=3)
        tape = batch_grad_tape(model, 2)
        graph = optimize(tape)
        problems = audit_plan(graph)
        expected = evaluate(tape, {"x": x, "y": y}, model.params)
        actual = CompiledGraph(graph).run({"x": x, "y": y}, model.params)
        mismatched = [k for k in expected if not np.array_equal(expected[k], actual[k])]
        report = graph.report
        ok = not problems and not mismatched and report.peak_bytes <= report.no_reuse_bytes
        ratio = report.peak_bytes / report.no_reuse_bytes
        return ok, f"peak/no-reuse {ratio:.2f}, mismatched {mismatched}, audit {problems}"

    return run


def _dpsgd_reductions(model: Model):
    def run():
        x, y = sample_batch(model, 4, seed=11)
        strategy = NaiveLoop("eager")
        grads = strategy.per_example_grads(model, model.params, x, y)

        # sigma = 0 with a clip norm above every norm is a plain mean-gradient step
        cfg = DpConfig(clip_norm=10 * float(grads.norms().max()) + 1, noise_multiplier=0.0, learning_rate=0.1)
        stepped, _ = dpsgd_step(model, model.params, x, y, strategy, cfg, RngState(0))
        mean = {k: g / len(x) for k, g in grads.sum().items()}
        sgd_err = max(relative_error(stepped[k], model.params[k] - 0.1 * mean[k]) for k in mean)

        clipped = clip(grads, 0.1)
        bound_ok = bool(np.all(clipped.norms() <= 0.1 * (1 + 1e-12)))
        identity = microbatch(grads, 1) is grads
        whole = clip(microbatch(grads, len(x)), 0.1).sum()
        means = PerExampleGrads({k: g.mean(axis=0, keepdims=True) for k, g in grads.grads.items()})
        manual = clip(means, 0.1).sum()
        whole_err = max(relative_error(whole[k], manual[k]) for k in whole)
        ok = sgd_err <= 1e-9 and bound_ok and identity and whole_err <= 1e-12
        return ok, f"sgd error {sgd_err:.2e}, clip bound {bound_ok}, microbatch error {whole_err:.2e}"

    return run


def run_verification(kinds: Optional[Iterable[str]] = None) -> list[CheckResult]:
    """Run every check on every model kind (at a short sequence length for the token
    models) and return one result per check."""
    kinds = list(kinds) if kinds is not None else list(get_args(ModelKind))
    results = []
    for kind in kinds:
        model = build(kind, RngState(1), dtype=np.float64, seq_len=SEQ_LEN)
        for strategy_name in ("vmap", "outer", "norms", "groupconv", "jacmm"):
            strategy = get_strategy(strategy_name)
            if not strategy.supports(model):
                continue
            for batch_size in BATCH_SIZES:
                name = f"equivalence/{kind}/{strategy_name}/B={batch_size}"
                results.append(_check(name, _equivalence(model, strategy_name, batch_size)))
        results.append(_check(f"gradcheck/{kind}", _gradcheck(model)))
        results.append(_check(f"optimizer/{kind}", _optimizer(model)))
        results.append(_check(f"dpsgd/{kind}", _dpsgd_reductions(model)))
    passed = sum(r.passed for r in results)
    logger.info(f"{passed}/{len(results)} checks passed")
    return results
