import json
import struct

import numpy as np
import polars as pl
import pytest

from pegrad.errors import ContractError, IdxFormatError, OutOfMemoryError
from pegrad.harness import (
    BenchRecord,
    dataset_for,
    emit,
    load_idx,
    load_records,
    max_batch_search,
    read_idx,
    run_bench,
    run_verification,
    search_max_batch,
    synth,
)
from pegrad.harness.cli import main
from pegrad.models import build


def write_idx(path, type_code, shape, payload: bytes):
    header = struct.pack(">HBB", 0, type_code, len(shape)) + struct.pack(f">{len(shape)}I", *shape)
    path.write_bytes(header + payload)
    return str(path)


@pytest.fixture
def mnist_files(tmp_path):
    pixels = bytes(range(0, 24 * 10, 10))
    images = write_idx(tmp_path / "images", 0x08, (2, 3, 4), pixels)
    labels = write_idx(tmp_path / "labels", 0x08, (2,), bytes([7, 2]))
    return images, labels


def test_read_idx(mnist_files):
    images, _ = mnist_files
    values = read_idx(images)
    assert values.shape == (2, 3, 4)
    assert values[1, 2, 3] == 230


def test_read_idx_big_endian_words(tmp_path):
    path = write_idx(tmp_path / "words", 0x0C, (2,), struct.pack(">2i", 1, -300))
    np.testing.assert_array_equal(read_idx(path), [1, -300])


def test_load_idx_scales_pixels(mnist_files):
    data = load_idx(*mnist_files)
    assert data.x.shape == (2, 1, 3, 4)
    assert data.x.dtype == np.float32
    assert data.x.max() == pytest.approx(230 / 255)
    np.testing.assert_array_equal(data.y, [7, 2])
    assert data.num_classes == 10


def test_bad_idx_magic(tmp_path, mnist_files):
    bogus = tmp_path / "bogus"
    bogus.write_bytes(b"\x12\x34\x08\x01" + b"\x00" * 8)
    with pytest.raises(IdxFormatError) as excinfo:
        read_idx(str(bogus))
    assert excinfo.value.offset == 0
    images, labels = mnist_files
    # swapped files carry the other magic number
    with pytest.raises(IdxFormatError):
        load_idx(labels, images)


def test_truncated_idx(tmp_path):
    path = write_idx(tmp_path / "short", 0x08, (10,), bytes(4))
    with pytest.raises(IdxFormatError) as excinfo:
        read_idx(path)
    assert excinfo.value.offset == 12


@pytest.mark.parametrize(
    "kind, shape, num_classes",
    [
        ("adult_like", (104,), 2),
        ("tokens", (12,), 2),
        ("cifar_like", (3, 32, 32), 10),
        ("mnist_like", (1, 28, 28), 10),
    ],
)
def test_synthetic_datasets(kind, shape, num_classes):
    data = synth(kind, 40, seed=5, seq_len=12)
    again = synth(kind, 40, seed=5, seq_len=12)
    assert data.x.shape == (40,) + shape
    assert data.num_classes == num_classes
    assert 0 <= data.y.min() and data.y.max() < num_classes
    np.testing.assert_array_equal(data.x, again.x)
    np.testing.assert_array_equal(data.y, again.y)


def test_token_ids_stay_in_the_vocabulary():
    data = synth("tokens", 50, seq_len=30)
    assert data.x.dtype.kind == "i"
    assert data.x.min() >= 0 and data.x.max() < 10_004


def test_synth_errors():
    with pytest.raises(ValueError):
        synth("imagenet", 4)
    with pytest.raises(ContractError):
        synth("adult_like", 0)


def test_dataset_for_matches_the_model():
    for kind in ("logreg", "mnist_cnn", "embed"):
        model = build(kind, seq_len=6)
        dataset_for(kind, 8, seq_len=6).check_model(model)
    with pytest.raises(ContractError):
        dataset_for("fcnn", 8).check_model(build("mnist_cnn"))


def test_dataset_for_falls_back_without_mnist_files(tmp_path, caplog):
    data = dataset_for("mnist_cnn", 4, data_dir=str(tmp_path))
    assert data.name == "mnist_like"
    assert "No MNIST IDX files" in caplog.text


def test_dataset_for_reads_mnist_files(tmp_path):
    pixels = bytes(range(256)) * (3 * 28 * 28 // 256 + 1)
    write_idx(tmp_path / "train-images-idx3-ubyte", 0x08, (3, 28, 28), pixels[: 3 * 28 * 28])
    write_idx(tmp_path / "train-labels-idx1-ubyte", 0x08, (3,), bytes([1, 2, 3]))
    data = dataset_for("mnist_cnn", 2, data_dir=str(tmp_path))
    assert data.name == "mnist"
    np.testing.assert_array_equal(data.y, [1, 2])


@pytest.fixture
def records():
    return [
        BenchRecord("fcnn", "vmap", "graph", True, 16, 3, epoch_seconds=[0.5, 0.25, 0.75], peak_bytes=1024),
        BenchRecord(
            "embed",
            "groupconv",
            "graph",
            True,
            16,
            3,
            status="skipped",
            reason="unsupported layer",
        ),
    ]


def test_record_median(records):
    assert records[0].median_epoch_seconds == 0.5
    assert records[1].median_epoch_seconds is None
    with pytest.raises(ValueError):
        BenchRecord("fcnn", "vmap", "graph", True, 16, 3, status="crashed")


def test_emit_json(tmp_path, records):
    path = str(tmp_path / "out.json")
    emit(records, "json", path)
    with open(path) as f:
        rows = json.load(f)
    assert len(rows) == 2
    assert rows[0]["median_epoch_seconds"] == 0.5
    assert rows[1]["reason"] == "unsupported layer"
    assert load_records(path) == records


def test_emit_csv(tmp_path, records):
    path = str(tmp_path / "out.csv")
    emit(records, "csv", path)
    with open(path) as f:
        lines = f.read().splitlines()
    assert len(lines) == 3
    frame = pl.read_csv(path, infer_schema=False)
    assert frame["epoch_seconds"][0] == "0.5;0.25;0.75"
    assert load_records(path) == records


def test_emit_errors(tmp_path, records):
    with pytest.raises(ContractError):
        emit([], "json", str(tmp_path / "empty.json"))
    with pytest.raises(ValueError):
        emit(records, "xml", str(tmp_path / "out.xml"))


def test_search_max_batch_on_a_linear_footprint():
    assert search_max_batch(lambda b: 100 + 10 * b, 1000) == 90
    assert search_max_batch(lambda b: 100 + 10 * b, 110) == 1
    assert search_max_batch(lambda b: b, 10**9, limit=1000) == 1000
    with pytest.raises(OutOfMemoryError):
        search_max_batch(lambda b: 100 + 10 * b, 50)


def test_search_max_batch_is_monotone_in_the_cap():
    def footprint(b):
        return 64 + 7 * b + b * b // 3

    results = [search_max_batch(footprint, cap) for cap in (100, 1_000, 10_000, 100_000)]
    assert results == sorted(results)
    for cap, batch in zip((100, 1_000, 10_000, 100_000), results):
        assert footprint(batch) <= cap < footprint(batch + 1)


def test_norms_fit_larger_batches_than_vmap():
    cap = 4 * 1024 * 1024
    norms = max_batch_search("fcnn", "norms", "graph", cap)
    vmapped = max_batch_search("fcnn", "vmap", "graph", cap)
    assert norms >= vmapped


def test_bench_records_every_batch_size():
    data = synth("adult_like", 64, seed=0)
    records = run_bench("logreg", "vmap", "graph", [8, 16], epochs=3, dataset=data)
    assert [r.batch_size for r in records] == [8, 16]
    for r in records:
        assert r.status == "ok"
        assert len(r.epoch_seconds) == 3
        assert len(r.epoch_losses) == 3
        assert r.median_epoch_seconds == sorted(r.epoch_seconds)[1]
        assert r.element_width == 32
        assert r.vectorized
        assert r.peak_bytes > 0
        assert r.optimizer_report["peak_bytes"] > 0


def test_bench_skips_unsupported_architectures():
    records = run_bench("embed", "groupconv", batch_sizes=[4, 8], epochs=1)
    assert [r.status for r in records] == ["skipped", "skipped"]
    assert all(r.reason == "unsupported layer" for r in records)
    assert records[0].median_epoch_seconds is None


def test_bench_records_out_of_memory():
    data = synth("adult_like", 32, seed=0)
    records = run_bench("logreg", "naive", "eager", [4], epochs=1, dataset=data, mem_cap=16)
    assert records[0].status == "oom"
    assert records[0].epoch_seconds == []


def test_bench_times_plain_sgd(tmp_path):
    data = synth("adult_like", 64, seed=0)
    records = run_bench("logreg", "vmap", "graph", [8, 16], epochs=2, dataset=data, private=False)
    for r in records:
        assert r.status == "ok"
        assert not r.private
        assert r.strategy == "sgd"
        assert len(r.epoch_seconds) == 2
        assert r.peak_bytes > 0
        assert r.optimizer_report["peak_bytes"] > 0
    path = str(tmp_path / "plain.csv")
    emit(records, "csv", path)
    assert load_records(path) == records


def test_plain_sgd_runs_where_the_strategy_cannot():
    records = run_bench("embed", "groupconv", "eager", [4], epochs=1, num_examples=8, private=False)
    assert records[0].status == "ok"
    assert not records[0].private


@pytest.mark.slow
def test_vectorized_graph_beats_eager_and_the_loop():
    data = synth("adult_like", 2048, seed=0)

    def median_seconds(strategy, mode, epochs):
        (record,) = run_bench("fcnn", strategy, mode, [128], epochs=epochs, dataset=data)
        return record.median_epoch_seconds

    graph = median_seconds("vmap", "graph", 5)
    eager = median_seconds("vmap", "eager", 5)
    loop = median_seconds("naive", "eager", 3)
    assert graph < eager < loop
    assert loop / graph >= 5


def test_verification_passes_on_small_models():
    results = run_verification(["logreg", "fcnn"])
    assert results
    assert all(r.passed for r in results), [(r.name, r.detail) for r in results if not r.passed]
    names = {r.name for r in results}
    assert "gradcheck/fcnn" in names
    assert "equivalence/logreg/norms/B=4" in names


def test_cli_bench_writes_records(tmp_path, monkeypatch):
    monkeypatch.setenv("PEGRAD_ELEMENT_WIDTH", "64")
    out = tmp_path / "bench.csv"
    args = ["bench", "--model", "logreg", "--batch-sizes", "8,16", "--epochs", "1", "--examples", "32"]
    assert main(args + ["--out", str(out), "--format", "csv"]) == 0
    loaded = load_records(str(out))
    assert [r.batch_size for r in loaded] == [8, 16]
    assert all(r.element_width == 64 for r in loaded)


def test_cli_vectorize_off_uses_the_loop(tmp_path):
    out = tmp_path / "bench.json"
    args = ["bench", "--model", "logreg", "--vectorize", "off", "--batch-sizes", "4", "--epochs", "1"]
    assert main(args + ["--examples", "8", "--out", str(out)]) == 0
    (record,) = load_records(str(out))
    assert record.strategy == "naive"
    assert not record.vectorized


def test_cli_bench_no_private(tmp_path):
    out = tmp_path / "bench.json"
    args = ["bench", "--model", "logreg", "--no-private", "--batch-sizes", "4", "--epochs", "1"]
    assert main(args + ["--examples", "8", "--out", str(out)]) == 0
    (record,) = load_records(str(out))
    assert not record.private
    assert record.strategy == "sgd"


def test_cli_maxbatch(capsys):
    assert main(["maxbatch", "--model", "logreg", "--strategy", "outer", "--mem-cap", "1000000"]) == 0
    assert int(capsys.readouterr().out.strip()) >= 1


def test_cli_train(capsys):
    args = ["train", "--model", "logreg", "--epochs", "2", "--batch-size", "16", "--examples", "64"]
    assert main(args) == 0
    assert "train accuracy" in capsys.readouterr().out


def test_cli_rejects_bad_batch_sizes():
    with pytest.raises(SystemExit):
        main(["bench", "--model", "logreg", "--batch-sizes", "0,8", "--out", "x.json"])
