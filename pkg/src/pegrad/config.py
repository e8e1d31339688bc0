import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from dotenv import load_dotenv

from pegrad.errors import ConfigError

ELEMENT_WIDTH_VAR = "PEGRAD_ELEMENT_WIDTH"
LOG_LEVEL_VAR = "PEGRAD_LOG_LEVEL"
DATA_DIR_VAR = "PEGRAD_DATA_DIR"

_DTYPES = {32: np.float32, 64: np.float64}


@dataclass(frozen=True)
class Settings:
    """Process-wide settings read from the environment (and a ``.env`` file).

    :param element_width: Bits per real element, 32 for benchmark runs and 64 for
        oracle checks.
    :param log_level: Level name handed to ``logging.basicConfig`` by the CLI.
    :param data_dir: Directory holding MNIST IDX files, if any.
    """

    element_width: int = 32
    log_level: str = "INFO"
    data_dir: Optional[str] = None

    @property
    def dtype(self) -> type[np.floating]:
        return dtype_for_width(self.element_width)


def dtype_for_width(width: int) -> type[np.floating]:
    try:
        return _DTYPES[width]
    except KeyError:
        raise ConfigError(
            f"Unknown element width: {width}. Please choose from {sorted(_DTYPES)}"
        )


def load_settings(dotenv_path: Optional[str] = None) -> Settings:
    load_dotenv(dotenv_path)
    raw_width = os.getenv(ELEMENT_WIDTH_VAR, "32")
    try:
        width = int(raw_width)
    except ValueError:
        raise ConfigError(
            f"{ELEMENT_WIDTH_VAR} must be one of {sorted(_DTYPES)}, got {raw_width!r}"
        )
    if width not in _DTYPES:
        raise ConfigError(
            f"{ELEMENT_WIDTH_VAR} must be one of {sorted(_DTYPES)}, got {raw_width!r}"
        )
    return Settings(
        element_width=width,
        log_level=os.getenv(LOG_LEVEL_VAR, "INFO").upper(),
        data_dir=os.getenv(DATA_DIR_VAR) or None,
    )


def default_dtype() -> type[np.floating]:
    return load_settings().dtype
