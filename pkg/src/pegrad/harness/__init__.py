from .bench import bench_model, max_batch_search, run_bench, search_max_batch
from .datasets import Dataset, dataset_for, load_idx, read_idx, synth
from .records import BenchRecord, emit, load_records
from .verify import CheckResult, run_verification

__all__ = [
    "BenchRecord",
    "CheckResult",
    "Dataset",
    "bench_model",
    "dataset_for",
    "emit",
    "load_idx",
    "load_records",
    "max_batch_search",
    "read_idx",
    "run_bench",
    "run_verification",
    "search_max_batch",
    "synth",
]
