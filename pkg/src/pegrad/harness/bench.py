"""The benchmark protocol: median epoch time per batch size, and the largest batch
that fits a memory cap."""

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from pegrad.dpsgd import DpConfig, Trainer
from pegrad.errors import OutOfMemoryError
from pegrad.harness.datasets import Dataset, dataset_for
from pegrad.harness.records import BenchRecord
from pegrad.models import Model, build
from pegrad.models.builders import SEQ_LEN
from pegrad.strategies import ExecutionMode, Strategy, StrategyName, get_strategy
from pegrad.strategies.programs import Engine, batch_grad_tape
from pegrad.tensor_core.rng import RngState

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZES = (16, 32, 64, 128, 256)
DEFAULT_EPOCHS = 20
DEFAULT_EXAMPLES = 4096
MAX_SEARCH_BATCH = 1 << 24
PLAIN_SGD = "sgd"


def bench_model(
    model_kind: str,
    mode: ExecutionMode,
    seed: int = 0,
    dtype=np.float32,
    seq_len: Optional[int] = None,
) -> Model:
    """Build a benchmark model. The LSTM is statically unrolled in graph mode and
    runs as one scan op in eager mode."""
    kwargs = {} if seq_len is None else {"seq_len": seq_len}
    unroll = model_kind == "lstm" and mode == "graph"
    return build(model_kind, RngState(seed), dtype=dtype, unroll=unroll, **kwargs)


def _record(
    model: Model, strategy: Optional[Strategy], mode: str, batch_size: int, epochs: int, cfg: DpConfig, **values
):
    """Record of one configuration; no strategy means a plain SGD run."""
    return BenchRecord(
        model=model.kind,
        strategy=strategy.name if strategy is not None else PLAIN_SGD,
        mode=mode,
        vectorized=strategy.vectorized if strategy is not None else True,
        private=strategy is not None,
        batch_size=batch_size,
        epochs=epochs,
        seed=cfg.seed,
        element_width=8 * model.dtype.itemsize,
        **values,
    )


def _report_for(engine: Engine, batch_size: int) -> dict:
    reports = [r for key, r in engine.reports.items() if key[-1] == batch_size]
    if not reports:
        return {}
    return max(reports, key=lambda r: r.peak_bytes).to_dict()


def run_bench(
    model_kind: str,
    strategy_name: StrategyName,
    mode: ExecutionMode = "graph",
    batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
    epochs: int = DEFAULT_EPOCHS,
    cfg: Optional[DpConfig] = None,
    dataset: Optional[Dataset] = None,
    mem_cap: Optional[int] = None,
    dtype=np.float32,
    seq_len: Optional[int] = None,
    data_dir: Optional[str] = None,
    num_examples: int = DEFAULT_EXAMPLES,
    private: bool = True,
) -> list[BenchRecord]:
    """Train for ``epochs`` epochs at every batch size and record the epoch timings.

    With ``private`` the run is DPSGD through ``strategy_name``. Without it the
    same loop runs plain SGD on the batch gradient program, the baseline private
    runs are compared against; ``strategy_name`` is then unused and the records
    carry strategy ``sgd``.

    A strategy that cannot handle the model yields ``skipped`` records with reason
    ``unsupported layer``. A batch size whose footprint exceeds ``mem_cap`` yields an
    ``oom`` record; the sweep goes on.
    """
    cfg = cfg or DpConfig()
    model = bench_model(model_kind, mode, cfg.seed, dtype, seq_len)
    strategy = get_strategy(strategy_name, mode) if private else None
    engine = strategy.engine if strategy is not None else Engine(mode)
    label = strategy.name if strategy is not None else PLAIN_SGD
    if strategy is not None and not strategy.supports(model):
        kind = strategy.unsupported_layer(model)
        logger.warning(f"Skipping {strategy.name} on {model.kind}: unsupported {kind} layer")
        return [
            _record(model, strategy, mode, b, epochs, cfg, status="skipped", reason="unsupported layer")
            for b in batch_sizes
        ]
    if dataset is None:
        n = max(num_examples, max(batch_sizes))
        dataset = dataset_for(model.kind, n, cfg.seed, dtype, seq_len or SEQ_LEN, data_dir)
    dataset.check_model(model)

    records = []
    for batch_size in batch_sizes:
        try:
            if strategy is not None:
                peak = strategy.footprint_bytes(model, batch_size)
            else:
                peak = engine.peak_bytes(lambda: batch_grad_tape(model, batch_size))
            if mem_cap is not None and peak > mem_cap:
                raise OutOfMemoryError(peak, mem_cap)
            engine.clear()
            trainer = Trainer(model, cfg, strategy, private=private, engine=engine)
            result = trainer.fit(dataset.x, dataset.y, epochs, batch_size)
        except MemoryError as e:
            logger.warning(f"{model.kind}/{label} at batch size {batch_size}: {e}")
            records.append(_record(model, strategy, mode, batch_size, epochs, cfg, status="oom", reason=str(e)))
            continue
        records.append(
            _record(
                model,
                strategy,
                mode,
                batch_size,
                epochs,
                cfg,
                epoch_seconds=result.epoch_seconds,
                peak_bytes=peak,
                optimizer_report=_report_for(engine, batch_size),
                compile_seconds=result.compile_seconds,
                epoch_losses=result.epoch_losses,
            )
        )
        logger.info(
            f"{model.kind}/{label}/{mode} B={batch_size}: "
            f"median epoch {records[-1].median_epoch_seconds:.4f}s, compile {result.compile_seconds:.3f}s"
        )
    return records


def search_max_batch(footprint: Callable[[int], int], cap: int, limit: int = MAX_SEARCH_BATCH) -> int:
    """Largest batch size whose footprint fits ``cap``, for a footprint that grows
    with the batch size: doubling to bracket it, then binary search.

    :raises OutOfMemoryError: Not even a single example fits.
    """
    smallest = footprint(1)
    if smallest > cap:
        raise OutOfMemoryError(smallest, cap)
    feasible = 1
    while feasible * 2 <= limit and footprint(feasible * 2) <= cap:
        feasible *= 2
    infeasible = min(feasible * 2, limit + 1)
    while infeasible - feasible > 1:
        middle = (feasible + infeasible) // 2
        if footprint(middle) <= cap:
            feasible = middle
        else:
            infeasible = middle
    return feasible


def max_batch_search(
    model_kind: str,
    strategy_name: StrategyName,
    mode: ExecutionMode,
    mem_cap: int,
    dtype=np.float32,
    seq_len: Optional[int] = None,
) -> int:
    """Largest batch one DPSGD step of ``strategy_name`` can run within ``mem_cap``
    bytes, from planned footprints; nothing is allocated."""
    model = bench_model(model_kind, mode, dtype=dtype, seq_len=seq_len)
    strategy = get_strategy(strategy_name, mode)
    strategy.check_support(model)
    result = search_max_batch(lambda b: strategy.footprint_bytes(model, b), mem_cap)
    logger.info(f"{model.kind}/{strategy.name}/{mode}: max batch {result} under {mem_cap} bytes")
    return result
