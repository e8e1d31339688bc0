"""Training data: MNIST IDX files and deterministic synthetic stand-ins with the
benchmark datasets' shapes."""

import logging
import os
import struct
from dataclasses import dataclass
from typing import Literal, Optional, get_args

import numpy as np

from pegrad.errors import ContractError, IdxFormatError
from pegrad.models.builders import ADULT_FEATURES, SEQ_LEN, VOCAB_SIZE
from pegrad.models.model import Model
from pegrad.tensor_core.tensor import INDEX_DTYPE, Tensor

logger = logging.getLogger(__name__)

SynthKind = Literal["adult_like", "tokens", "cifar_like", "mnist_like"]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_TRAIN_IMAGES = "train-images-idx3-ubyte"
MNIST_TRAIN_LABELS = "train-labels-idx1-ubyte"

# IDX element type code -> big-endian numpy dtype
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    """Inputs and integer labels of one training set.

    :param x: Real features ``[n, ...]`` or integer token ids ``[n, L]``.
    :param y: Labels ``[n]`` in ``[0, num_classes)``.
    """

    name: str
    x: Tensor
    y: Tensor
    num_classes: int

    def __post_init__(self):
        if len(self.x) == 0:
            raise ContractError(f"dataset {self.name} is empty")
        if len(self.x) != len(self.y):
            raise ContractError(f"dataset {self.name} has {len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.x)

    def head(self, n: int) -> "Dataset":
        return Dataset(self.name, self.x[:n], self.y[:n], self.num_classes)

    def check_model(self, model: Model) -> None:
        """Labels must index the model's classes and examples must match its input shape."""
        if self.x.shape[1:] != model.example_shape:
            raise ContractError(
                f"dataset {self.name} examples have shape {self.x.shape[1:]}, "
                f"model {model.kind} expects {model.example_shape}"
            )
        if self.y.min() < 0 or self.y.max() >= model.num_classes:
            raise ContractError(
                f"dataset {self.name} labels fall outside the {model.num_classes} classes of {model.kind}"
            )


def read_idx(path: str) -> np.ndarray:
    """Parse an IDX file: two zero bytes, a type code, the number of dimensions,
    one big-endian uint32 per dimension, then the raw elements.

    :return: Array in native byte order with the declared shape.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        logger.error(f"{path} is too short for an IDX header")
        raise IdxFormatError(f"{path}: truncated header", len(data))
    zero, type_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or type_code not in _IDX_DTYPES:
        logger.error(f"{path} has an invalid IDX magic number {data[:4].hex()}")
        raise IdxFormatError(f"{path}: bad magic number 0x{data[:4].hex()}", 0)
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        logger.error(f"{path} ends inside its dimension list")
        raise IdxFormatError(f"{path}: truncated dimensions", len(data))
    shape = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = _IDX_DTYPES[type_code]
    expected = header_end + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) < expected:
        logger.error(f"{path} holds {len(data)} bytes but its header declares {expected}")
        raise IdxFormatError(f"{path}: truncated data, expected {expected} bytes", len(data))
    values = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=header_end)
    return values.reshape(shape).astype(dtype.newbyteorder("="))


def _magic(path: str) -> int:
    with open(path, "rb") as f:
        head = f.read(4)
    return struct.unpack(">I", head)[0] if len(head) == 4 else -1


def load_idx(images_path: str, labels_path: Optional[str] = None, dtype=np.float32) -> Dataset:
    """Load an MNIST-style image file, scaling pixels to [0, 1].

    Images come back as ``[n, 1, rows, cols]``. Without a labels file every label is 0.
    """
    if _magic(images_path) != IDX_IMAGES_MAGIC:
        logger.error(f"{images_path} is not an IDX image file")
        raise IdxFormatError(f"{images_path}: expected magic 0x{IDX_IMAGES_MAGIC:08x}", 0)
    images = read_idx(images_path)
    x = (images.astype(np.float64) / 255.0).astype(dtype)[:, None, :, :]
    if labels_path is None:
        y = np.zeros(len(x), dtype=INDEX_DTYPE)
    else:
        if _magic(labels_path) != IDX_LABELS_MAGIC:
            logger.error(f"{labels_path} is not an IDX label file")
            raise IdxFormatError(f"{labels_path}: expected magic 0x{IDX_LABELS_MAGIC:08x}", 0)
        y = read_idx(labels_path).astype(INDEX_DTYPE)
        if len(y) != len(x):
            raise ContractError(f"{len(x)} images but {len(y)} labels")
    logger.info(f"Loaded {len(x)} images of {x.shape[2]}x{x.shape[3]} from {images_path}")
    return Dataset("mnist", x, y, 10)


def _planted_labels(features: np.ndarray, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Labels from a fixed random linear rule, so a linear read-out can fit them."""
    if num_classes == 2:
        w = rng.standard_normal(features.shape[1])
        return (features @ w > 0).astype(INDEX_DTYPE)
    w = rng.standard_normal((features.shape[1], num_classes))
    return np.argmax(features @ w, axis=1).astype(INDEX_DTYPE)


def _block_means(images: np.ndarray, block: int) -> np.ndarray:
    n, c, h, w = images.shape
    pooled = images.reshape(n, c, h // block, block, w // block, block).mean(axis=(3, 5))
    return (pooled - pooled.mean()).reshape(n, -1)


def synth(kind: SynthKind, n: int, seed: int = 0, dtype=np.float32, seq_len: int = SEQ_LEN) -> Dataset:
    """Deterministic synthetic data.

    - ``adult_like``: ``[n, 104]`` standard normal features, binary labels from a
      planted linear rule (separable by construction).
    - ``tokens``: ``[n, seq_len]`` ids below the vocabulary size; the label says
      whether ids from the lower half of the vocabulary outnumber the rest.
    - ``cifar_like`` / ``mnist_like``: uniform images ``[n, 3, 32, 32]`` /
      ``[n, 1, 28, 28]`` with ten classes planted on block-averaged pixels.
    """
    if kind not in get_args(SynthKind):
        raise ValueError(f"Unknown synthetic dataset: {kind}. Please choose from {get_args(SynthKind)}")
    if n <= 0:
        raise ContractError(f"synthetic datasets need n > 0, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "adult_like":
        x = rng.standard_normal((n, ADULT_FEATURES))
        return Dataset(kind, x.astype(dtype), _planted_labels(x, 2, rng), 2)
    if kind == "tokens":
        x = rng.integers(0, VOCAB_SIZE, size=(n, seq_len), dtype=INDEX_DTYPE)
        lower = np.count_nonzero(x < VOCAB_SIZE // 2, axis=1)
        return Dataset(kind, x, (2 * lower > seq_len).astype(INDEX_DTYPE), 2)
    shape, block = ((3, 32, 32), 8) if kind == "cifar_like" else ((1, 28, 28), 7)
    x = rng.uniform(0.0, 1.0, size=(n,) + shape)
    return Dataset(kind, x.astype(dtype), _planted_labels(_block_means(x, block), 10, rng), 10)


def dataset_for(
    model_kind: str,
    n: int,
    seed: int = 0,
    dtype=np.float32,
    seq_len: int = SEQ_LEN,
    data_dir: Optional[str] = None,
) -> Dataset:
    """Training set for a model kind: real MNIST when its IDX files are in
    ``data_dir``, a synthetic stand-in otherwise."""
    if model_kind in ("logreg", "fcnn"):
        return synth("adult_like", n, seed, dtype)
    if model_kind in ("embed", "lstm"):
        return synth("tokens", n, seed, dtype, seq_len)
    if model_kind == "cifar_cnn":
        return synth("cifar_like", n, seed, dtype)
    if model_kind == "mnist_cnn":
        if data_dir is not None:
            images = os.path.join(data_dir, MNIST_TRAIN_IMAGES)
            labels = os.path.join(data_dir, MNIST_TRAIN_LABELS)
            if os.path.exists(images) and os.path.exists(labels):
                return load_idx(images, labels, dtype).head(n)
            logger.warning(f"No MNIST IDX files in {data_dir}, using synthetic images")
        return synth("mnist_like", n, seed, dtype)
    raise ValueError(f"Unknown model kind: {model_kind}")
