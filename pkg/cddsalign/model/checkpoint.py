"""
Checkpoints

A checkpoint directory holds checkpoint.json (config, step, config hash,
tensor index, optimizer and correlation-cache metadata) and checkpoint.bin,
a float64 tensor archive, so a resumed run continues bit-identically.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from cddsalign.config.models import TrainConfig, config_hash
from cddsalign.core.errors import CorruptionError
from cddsalign.data.container import ARCHIVE_VERSION, read_tensor_archive, write_tensor_archive

logger = logging.getLogger(__name__)

HEADER_FILE = "checkpoint.json"
TENSOR_FILE = "checkpoint.bin"

_PARAM = "param/"
_FIRST = "adam_m/"
_SECOND = "adam_v/"
_CORRELATION = "correlation/s"


@dataclass
class Checkpoint:
    """
    Attributes:
        config: Run configuration
        step: Number of optimizer steps taken
        params: Parameter values by name
        first_moments: Adam first moments by parameter name
        second_moments: Adam second moments by parameter name
        correlation: Cached correlation matrix, if the run had one
        correlation_state: Correlation cache metadata
    """
    config: TrainConfig
    step: int
    params: Dict[str, np.ndarray]
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    correlation: Optional[np.ndarray] = None
    correlation_state: Dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def save_checkpoint(directory: Union[str, Path], checkpoint: Checkpoint) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    tensors: Dict[str, np.ndarray] = {}
    for name, values in checkpoint.params.items():
        tensors[_PARAM + name] = values
    for name, values in checkpoint.first_moments.items():
        tensors[_FIRST + name] = values
    for name, values in checkpoint.second_moments.items():
        tensors[_SECOND + name] = values
    if checkpoint.correlation is not None:
        tensors[_CORRELATION] = checkpoint.correlation
    write_tensor_archive(directory / TENSOR_FILE, tensors)

    header = {
        "archive_version": ARCHIVE_VERSION,
        "step": checkpoint.step,
        "config": checkpoint.config.model_dump(mode="json"),
        "config_hash": checkpoint.config_hash,
        "tensors": {name: list(np.shape(values)) for name, values in tensors.items()},
        "correlation_cache": checkpoint.correlation_state,
    }
    with open(directory / HEADER_FILE, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2)

    logger.info(f"Checkpoint written to {directory} (step {checkpoint.step})")
    return directory


def load_checkpoint(directory: Union[str, Path]) -> Checkpoint:
    directory = Path(directory)
    header_path = directory / HEADER_FILE
    if not header_path.exists():
        raise FileNotFoundError(f"no checkpoint header at {header_path}")
    with open(header_path, "r", encoding="utf-8") as f:
        try:
            header = json.load(f)
        except json.JSONDecodeError as e:
            raise CorruptionError(f"{header_path}: invalid JSON ({e})") from e

    config = TrainConfig(**header["config"])
    if config_hash(config) != header.get("config_hash"):
        raise CorruptionError(f"{header_path}: config hash does not match the stored config")

    tensors = read_tensor_archive(directory / TENSOR_FILE)
    missing = set(header.get("tensors", {})) - set(tensors)
    if missing:
        raise CorruptionError(f"{directory}: archive lacks tensors {sorted(missing)}")

    def strip(prefix: str) -> Dict[str, np.ndarray]:
        return {name[len(prefix):]: values for name, values in tensors.items() if name.startswith(prefix)}

    return Checkpoint(
        config=config,
        step=int(header["step"]),
        params=strip(_PARAM),
        first_moments=strip(_FIRST),
        second_moments=strip(_SECOND),
        correlation=tensors.get(_CORRELATION),
        correlation_state=header.get("correlation_cache", {}),
    )
