import pytest

from cddsalign.config.models import Ablation, LossWeights, TrainConfig
from cddsalign.core.errors import ConfigError
from cddsalign.evaluation.retrieval import RetrievalReport
from cddsalign.experiments import (
    BENCH_FIELDS, FULL, TABLE_FIELDS, VariantResult, ablate, ablation_variants, bench_modes,
    comparison_rows, mode_rows, sam_transfer, transfer_variants,
)


def _result(name: str, recalls, wall_ms=(), calls: int = 0) -> VariantResult:
    i2t = dict(zip((1, 5, 10), recalls[:3]))
    t2i = dict(zip((1, 5, 10), recalls[3:]))
    report = RetrievalReport(i2t, t2i, sum(recalls), n_queries=100)
    history = [{"step": i + 1, "total": 1.0, "wall_ms": ms} for i, ms in enumerate(wall_ms)]
    return VariantResult(name, TrainConfig(), None, history, report, correlation_calls=calls)


def test_ablation_variants_remove_one_mechanism_each():
    variants = ablation_variants(TrainConfig())
    assert [name for name, _ in variants] == [FULL, "w/o Dec", "w/o Mod", "w/o Int", "w/o Gau", "w/o Sam"]
    assert variants[0][1].ablations == []
    assert [config.ablations for _, config in variants[1:]] == [[a] for a in
                                                                (Ablation.DEC, Ablation.MOD, Ablation.INT,
                                                                 Ablation.GAU, Ablation.SAM)]


def test_transfer_variants():
    config = TrainConfig(losses=LossWeights(alpha_s=0.8, alpha_c=0.3))
    (base_name, baseline), (transfer_name, transfer) = transfer_variants(config)
    assert (base_name, transfer_name) == ("baseline", "baseline+Sam")
    assert set(baseline.ablations) == {Ablation.SAM, Ablation.MOD, Ablation.INT}
    assert baseline.losses.alpha_c == 0.0
    assert set(transfer.ablations) == {Ablation.MOD, Ablation.INT}
    assert transfer.losses.alpha_c == 0.8


def test_comparison_rows_report_change_rates():
    full = _result(FULL, [74.8, 93.6, 97.8, 63.1, 88.2, 93.1])
    worse = _result("w/o Dec", [71.8, 92.8, 96.5, 59.4, 84.7, 90.9])
    rows = comparison_rows([full, worse])
    assert list(rows[0]) == list(TABLE_FIELDS)
    assert rows[0]["cr"] == ""
    assert rows[1]["cr"] == -2.84
    assert round(rows[0]["rsum"], 1) == 510.6
    assert comparison_rows([]) == []


def test_mode_rows_average_batch_time():
    rows = mode_rows([_result("all", [0.0] * 6, wall_ms=(10.0, 30.0), calls=1)])
    assert rows == [{"mode": "all", "batch_time_s": 0.02, "correlation_calls": 1, "steps": 2, "rsum": 0.0}]
    assert tuple(rows[0]) == BENCH_FIELDS


def test_ablate_rejects_preablated_configs(tiny_train, tiny_test, tiny_config):
    with pytest.raises(ConfigError):
        ablate(tiny_config.with_ablation(Ablation.MOD), tiny_train, tiny_test)


def test_ablate_runs_every_variant(tiny_train, tiny_test, tiny_config):
    results, rows = ablate(tiny_config.replace(epochs=1), tiny_train, tiny_test)
    assert [r.name for r in results] == [row["variant"] for row in rows]
    assert len(rows) == 6
    assert all(len(r.history) == 6 for r in results)
    assert results[-1].correlation_calls == 0


def test_sam_transfer_runs_both_variants(tiny_train, tiny_test, tiny_config):
    results, rows = sam_transfer(tiny_config.replace(epochs=1), tiny_train, tiny_test)
    assert [row["variant"] for row in rows] == ["baseline", "baseline+Sam"]
    assert results[0].correlation_calls == 0
    assert results[1].correlation_calls == 6
    assert "l_c" not in results[0].history[0]
    assert "l_c" in results[1].history[0]


def test_bench_modes_reports_each_mode(tiny_train, tiny_test, tiny_config):
    _, rows = bench_modes(tiny_config.replace(epochs=1), tiny_train, tiny_test)
    assert [row["mode"] for row in rows] == ["each-batch", "random", "all"]
    assert [row["correlation_calls"] for row in rows] == [6, 6, 1]
    assert all(row["steps"] == 6 and row["batch_time_s"] > 0 for row in rows)
