"""
Correlation-mode benchmark

Trains the same configuration once per correlation mode and reports the mean
wall time per batch next to the retrieval quality.
"""

import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from cddsalign.alignment.cache import MODES
from cddsalign.config.models import TrainConfig
from cddsalign.data.batch import EmbeddingBatch
from cddsalign.experiments.ablation import VariantResult, run_variants

logger = logging.getLogger(__name__)

BENCH_FIELDS = ("mode", "batch_time_s", "correlation_calls", "steps", "rsum")


def mode_rows(results: Sequence[VariantResult]) -> List[Dict[str, Any]]:
    rows = []
    for result in results:
        wall_ms = [row["wall_ms"] for row in result.history]
        rows.append({
            "mode": result.name,
            "batch_time_s": float(np.mean(wall_ms)) / 1000.0 if wall_ms else 0.0,
            "correlation_calls": result.correlation_calls,
            "steps": len(wall_ms),
            "rsum": result.report.rsum,
        })
    return rows


def bench_modes(config: TrainConfig, train_data: EmbeddingBatch, test_data: EmbeddingBatch,
                modes: Sequence[str] = MODES) -> Tuple[List[VariantResult], List[Dict[str, Any]]]:
    """
    Run sequentially so timings are not distorted by sibling processes.
    """
    variants = [(mode, config.replace(correlation_mode=mode)) for mode in modes]
    results = run_variants(variants, train_data, test_data, workers=1)
    rows = mode_rows(results)
    for row in rows:
        logger.info(f"{row['mode']:>10}: {row['batch_time_s'] * 1000:.2f} ms/batch, "
                    f"{row['correlation_calls']} correlation passes, rSum={row['rsum']:.1f}")
    return results, rows
