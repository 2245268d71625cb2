"""
Ablation sweep and the sampling transfer experiment

Each variant trains from the same seed on the same data and is evaluated on
the same test set; rows report the retrieval recalls plus the relative rSum
change against the reference row.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from cddsalign.config.models import Ablation, TrainConfig
from cddsalign.core.errors import ConfigError
from cddsalign.data.batch import EmbeddingBatch
from cddsalign.evaluation.retrieval import RECALL_KS, RetrievalReport, change_rate, evaluate
from cddsalign.model.checkpoint import Checkpoint
from cddsalign.training.trainer import Trainer

logger = logging.getLogger(__name__)

FULL = "full"
ABLATIONS = (Ablation.DEC, Ablation.MOD, Ablation.INT, Ablation.GAU, Ablation.SAM)
TABLE_FIELDS = (
    ["variant"]
    + [f"i2t_R@{k}" for k in RECALL_KS]
    + [f"t2i_R@{k}" for k in RECALL_KS]
    + ["rsum", "cr"]
)


@dataclass
class VariantResult:
    """
    Attributes:
        name: Row label ("full", "w/o Dec", ...)
        config: Configuration the variant trained with
        checkpoint: Final checkpoint
        history: Per-step loss metrics and wall times
        report: Test retrieval report
    """
    name: str
    config: TrainConfig
    checkpoint: Checkpoint
    history: List[Dict[str, Any]]
    report: RetrievalReport
    correlation_calls: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)


def run_variant(name: str, config: TrainConfig, train_data: EmbeddingBatch,
                test_data: EmbeddingBatch, symmetric: bool = False) -> VariantResult:
    """Train one configuration and evaluate it"""
    logger.info(f"Variant '{name}': ablations={[a.value for a in config.ablations]}")
    trainer = Trainer(config, train_data)
    history = trainer.train()
    checkpoint = trainer.to_checkpoint()
    report = evaluate(checkpoint, test_data, symmetric=symmetric)
    return VariantResult(name, config, checkpoint, history, report, correlation_calls=trainer.cache.calls)


def _run_variant_args(args: Tuple[str, TrainConfig, EmbeddingBatch, EmbeddingBatch, bool]) -> VariantResult:
    return run_variant(*args)


def run_variants(variants: Sequence[Tuple[str, TrainConfig]], train_data: EmbeddingBatch,
                 test_data: EmbeddingBatch, workers: int = 1, symmetric: bool = False) -> List[VariantResult]:
    """Run variants in order, in worker processes when workers > 1"""
    jobs = [(name, config, train_data, test_data, symmetric) for name, config in variants]
    if workers <= 1 or len(jobs) < 2:
        return [_run_variant_args(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_variant_args, jobs))


def comparison_rows(results: Sequence[VariantResult], reference: Optional[str] = None) -> List[Dict[str, Any]]:
    """
    One table row per variant; "cr" is the rSum change rate in percent
    against the reference row (the first row by default), empty for the
    reference itself.
    """
    if not results:
        return []
    reference = reference or results[0].name
    by_name = {r.name: r for r in results}
    full_rsum = by_name[reference].report.rsum
    rows = []
    for result in results:
        row: Dict[str, Any] = {"variant": result.name}
        row.update(result.report.row())
        row["cr"] = "" if result.name == reference else round(change_rate(result.report.rsum, full_rsum), 2)
        rows.append(row)
    return rows


def ablation_variants(config: TrainConfig) -> List[Tuple[str, TrainConfig]]:
    variants = [(FULL, config)]
    for ablation in ABLATIONS:
        variants.append((f"w/o {ablation.value}", config.with_ablation(ablation)))
    return variants


def ablate(config: TrainConfig, train_data: EmbeddingBatch, test_data: EmbeddingBatch,
           workers: int = 1, symmetric: bool = False) -> Tuple[List[VariantResult], List[Dict[str, Any]]]:
    """
    Full model plus one run per single ablation.

    Returns:
        Variant results and the comparison table rows
    """
    if config.ablations:
        raise ConfigError(f"ablate expects a config without ablations, got {config.ablations}")
    results = run_variants(ablation_variants(config), train_data, test_data, workers, symmetric)
    rows = comparison_rows(results, FULL)
    for row in rows:
        logger.info(f"{row['variant']:>10}: rSum={row['rsum']:.1f} CR={row['cr']}")
    return results, rows


def transfer_variants(config: TrainConfig) -> List[Tuple[str, TrainConfig]]:
    """
    Plain matcher and the same matcher with distribution sampling.

    The baseline drops sampling, modal consistency and reconstruction; its
    semantic term is the matching loss. The transfer run keeps the matching
    loss (as l_c with the same weight) and adds the sampling term.
    """
    base = config.replace(ablations=[])
    weights = base.losses
    baseline = base.replace(
        ablations=[Ablation.SAM.value, Ablation.MOD.value, Ablation.INT.value],
        losses=weights.replace(alpha_c=0.0).model_dump(),
    )
    transfer = base.replace(
        ablations=[Ablation.MOD.value, Ablation.INT.value],
        losses=weights.replace(alpha_c=weights.alpha_s).model_dump(),
    )
    return [("baseline", baseline), ("baseline+Sam", transfer)]


def sam_transfer(config: TrainConfig, train_data: EmbeddingBatch, test_data: EmbeddingBatch,
                 workers: int = 1, symmetric: bool = False) -> Tuple[List[VariantResult], List[Dict[str, Any]]]:
    results = run_variants(transfer_variants(config), train_data, test_data, workers, symmetric)
    rows = comparison_rows(results, "baseline")
    logger.info(f"Sampling transfer: rSum {rows[0]['rsum']:.1f} -> {rows[1]['rsum']:.1f} (CR={rows[1]['cr']})")
    return results, rows
