"""Benchmark records and their JSON / CSV files."""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from statistics import median
from typing import Literal, Optional, Sequence, get_args

import polars as pl

from pegrad.errors import ContractError

logger = logging.getLogger(__name__)

RecordFormat = Literal["json", "csv"]
RecordStatus = Literal["ok", "skipped", "oom"]

LIST_SEPARATOR = ";"


@dataclass
class BenchRecord:
    """One (model, strategy, mode, batch size) benchmark configuration.

    :param vectorized: The strategy processes the batch at once rather than
        looping over examples.
    :param private: DPSGD run; false for the plain SGD baseline.
    :param epoch_seconds: Wall-clock time of every epoch, compile time excluded.
    :param peak_bytes: Accounted footprint of one step: the buffer plan in graph
        mode, every intermediate held separately in eager mode.
    :param optimizer_report: Graph optimizer statistics of the step program; empty
        in eager mode.
    :param status: ``ok``, ``skipped`` (strategy cannot handle the model) or
        ``oom`` (footprint above the memory cap).
    """

    model: str
    strategy: str
    mode: str
    vectorized: bool
    batch_size: int
    epochs: int
    private: bool = True
    median_epoch_seconds: Optional[float] = None
    epoch_seconds: list[float] = field(default_factory=list)
    peak_bytes: Optional[int] = None
    optimizer_report: dict = field(default_factory=dict)
    seed: int = 0
    element_width: int = 32
    compile_seconds: float = 0.0
    epoch_losses: list[float] = field(default_factory=list)
    status: str = "ok"
    reason: Optional[str] = None

    def __post_init__(self):
        if self.status not in get_args(RecordStatus):
            raise ValueError(f"Unknown status: {self.status}. Please choose from {get_args(RecordStatus)}")
        if self.median_epoch_seconds is None and self.epoch_seconds:
            self.median_epoch_seconds = median(self.epoch_seconds)


FIELD_NAMES = [f.name for f in fields(BenchRecord)]


def _check_format(fmt: str) -> None:
    if fmt not in get_args(RecordFormat):
        raise ValueError(f"Unknown format: {fmt}. Please choose from {get_args(RecordFormat)}")


def _join(values: Sequence[float]) -> str:
    return LIST_SEPARATOR.join(repr(float(v)) for v in values)


def _split(cell: Optional[str]) -> list[float]:
    if not cell:
        return []
    return [float(v) for v in cell.split(LIST_SEPARATOR)]


def _optional(convert):
    return lambda cell: None if cell is None else convert(cell)


def _to_cell(name: str, value) -> Optional[str]:
    if value is None:
        return None
    if name in ("epoch_seconds", "epoch_losses"):
        return _join(value)
    if name == "optimizer_report":
        return json.dumps(value, sort_keys=True)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FROM_CELL = {
    "model": str,
    "strategy": str,
    "mode": str,
    "vectorized": lambda cell: cell == "true",
    "batch_size": int,
    "epochs": int,
    "private": lambda cell: cell == "true",
    "median_epoch_seconds": _optional(float),
    "epoch_seconds": _split,
    "peak_bytes": _optional(int),
    "optimizer_report": lambda cell: json.loads(cell) if cell else {},
    "seed": int,
    "element_width": int,
    "compile_seconds": float,
    "epoch_losses": _split,
    "status": str,
    "reason": _optional(str),
}


def to_frame(records: Sequence[BenchRecord]) -> pl.DataFrame:
    """Records as a string-typed frame, one column per field, as written to CSV."""
    rows = {name: [_to_cell(name, getattr(r, name)) for r in records] for name in FIELD_NAMES}
    return pl.DataFrame(rows, schema={name: pl.String for name in FIELD_NAMES})


def emit(records: Sequence[BenchRecord], fmt: RecordFormat, path: str) -> None:
    """Write records as a JSON array of objects keyed by field name, or as CSV with
    a header row, per-epoch lists joined by ``;`` and the optimizer report as a
    JSON cell."""
    _check_format(fmt)
    if not records:
        raise ContractError("no benchmark records to write")
    if fmt == "json":
        with open(path, "w") as f:
            json.dump([asdict(r) for r in records], f, indent=2)
    else:
        to_frame(records).write_csv(path)
    logger.info(f"Wrote {len(records)} records to {path}")


def load_records(path: str, fmt: Optional[RecordFormat] = None) -> list[BenchRecord]:
    """Read records written by :func:`emit`; the format defaults to the file suffix."""
    fmt = fmt or ("csv" if path.endswith(".csv") else "json")
    _check_format(fmt)
    if fmt == "json":
        with open(path) as f:
            return [BenchRecord(**row) for row in json.load(f)]
    frame = pl.read_csv(path, infer_schema=False)
    missing = set(FIELD_NAMES) - set(frame.columns)
    if missing:
        logger.error(f"{path} lacks the columns {sorted(missing)}")
        raise ValueError(f"{path} is not a benchmark record file: missing {sorted(missing)}")
    return [
        BenchRecord(**{name: _FROM_CELL[name](row[name]) for name in FIELD_NAMES})
        for row in frame.iter_rows(named=True)
    ]
