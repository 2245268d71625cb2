"""
Correlation computation schedule

each-batch: recompute S from the current batch at every step.
random:     compute S fully once, then at every step recompute only the rows
            and columns of a feature subset that is resampled each epoch;
            the other entries stay frozen.
all:        compute S once on the whole training set before training.
"""

import logging
from typing import Any, Dict, Optional

import numpy as np

from cddsalign.alignment.columns import estimate_columns
from cddsalign.alignment.correlation import correlation_matrix
from cddsalign.config.models import CorrelationMode
from cddsalign.core.errors import ConfigError, ContractError
from cddsalign.tensor.tensor import ArrayLike

logger = logging.getLogger(__name__)

MODES = ("each-batch", "random", "all")


class CorrelationCache:
    """
    Holds the current correlation matrix and decides when to refresh it.

    Attributes:
        calls: Number of correlation computations performed (full or partial)
        subset: Feature columns refreshed in random mode for the current epoch
    """

    def __init__(self, mode: CorrelationMode, n_bins: int, seed: int = 0,
                 refresh_fraction: float = 0.25):
        if mode not in MODES:
            raise ConfigError(f"unknown correlation mode '{mode}', expected one of {MODES}")
        self.mode = mode
        self.n_bins = n_bins
        self.seed = seed
        self.refresh_fraction = refresh_fraction
        self.s: Optional[np.ndarray] = None
        self.subset: Optional[np.ndarray] = None
        self.calls = 0

    @property
    def needs_dataset_pass(self) -> bool:
        return self.mode == "all" and self.s is None

    def _columns(self, image_rows: ArrayLike, text_rows: ArrayLike):
        return estimate_columns(image_rows, self.n_bins), estimate_columns(text_rows, self.n_bins)

    def prepare(self, image_rows: ArrayLike, text_rows: ArrayLike) -> np.ndarray:
        """Full computation over the whole dataset (all mode, before training)"""
        c_v, c_t = self._columns(image_rows, text_rows)
        self.s = correlation_matrix(c_v, c_t)
        self.calls += 1
        logger.info(f"Correlation matrix precomputed over {c_v.n_rows} image / {c_t.n_rows} text rows")
        return self.s

    def begin_epoch(self, epoch: int, d: int) -> None:
        if self.mode != "random":
            return
        rng = np.random.default_rng([self.seed, 2, epoch])
        size = max(1, int(round(self.refresh_fraction * d)))
        self.subset = np.sort(rng.choice(d, size=size, replace=False))
        logger.debug(f"Epoch {epoch}: refreshing {size} of {d} feature columns")

    def matrix(self, image_rows: ArrayLike, text_rows: ArrayLike) -> np.ndarray:
        """S for the current step"""
        if self.mode == "all":
            if self.s is None:
                raise ContractError("all mode needs prepare() before the first step")
            return self.s
        if self.mode == "each-batch" or self.s is None:
            c_v, c_t = self._columns(image_rows, text_rows)
            self.s = correlation_matrix(c_v, c_t)
            self.calls += 1
            return self.s
        if self.subset is None:
            self.begin_epoch(0, self.s.shape[0])
        c_v, c_t = self._columns(image_rows, text_rows)
        s = self.s.copy()
        s[self.subset, :] = correlation_matrix(c_v, c_t, rows=self.subset)
        s[:, self.subset] = correlation_matrix(c_v, c_t, cols=self.subset)
        self.s = s
        self.calls += 1
        return self.s

    def state(self) -> Dict[str, Any]:
        return {"mode": self.mode, "calls": self.calls,
                "subset": None if self.subset is None else self.subset.tolist()}

    def restore(self, s: Optional[np.ndarray], state: Dict[str, Any]) -> None:
        self.s = None if s is None else np.array(s, dtype=np.float64)
        self.calls = int(state.get("calls", 0))
        subset = state.get("subset")
        self.subset = None if subset is None else np.asarray(subset, dtype=np.int64)
