"""
Ablation, transfer and correlation-mode experiments
"""

from cddsalign.experiments.ablation import (
    ABLATIONS, FULL, TABLE_FIELDS, VariantResult, ablate, ablation_variants, comparison_rows,
    run_variant, run_variants, sam_transfer, transfer_variants,
)
from cddsalign.experiments.modes import BENCH_FIELDS, bench_modes, mode_rows

__all__ = [
    'ABLATIONS',
    'FULL',
    'TABLE_FIELDS',
    'VariantResult',
    'run_variant',
    'run_variants',
    'comparison_rows',
    'ablation_variants',
    'transfer_variants',
    'ablate',
    'sam_transfer',
    'BENCH_FIELDS',
    'bench_modes',
    'mode_rows',
]
