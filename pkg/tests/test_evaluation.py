import numpy as np
import pytest

from cddsalign.core.errors import ContractError, DimensionError
from cddsalign.evaluation import (
    change_rate, evaluate, group_spread, inspect_model, project_2d, recall_report, rsum_from_recalls,
    similarity, similarity_matrix,
)
from cddsalign.evaluation.retrieval import model_from, semantic_components
from cddsalign.model.cdds import AlignmentModel
from cddsalign.training import train

REFERENCE_ROWS = [
    ([74.8, 93.6, 97.8, 63.1, 88.2, 93.1], 510.6),
    ([71.8, 92.8, 96.5, 59.4, 84.7, 90.9], 496.1),
    ([74.0, 93.4, 97.4, 62.5, 87.3, 92.7], 507.3),
    ([79.5, 96.3, 98.1, 67.5, 90.8, 94.6], 526.8),
]


@pytest.mark.parametrize("recalls,expected", REFERENCE_ROWS)
def test_rsum_of_reference_rows(recalls, expected):
    assert round(rsum_from_recalls(recalls), 1) == expected


def test_change_rate():
    assert change_rate(496.1, 510.6) == pytest.approx(-2.8398, abs=1e-4)
    assert change_rate(510.6, 510.6) == 0.0
    with pytest.raises(ContractError):
        change_rate(1.0, 0.0)


def test_perfect_similarity_recalls_everything():
    report = recall_report(np.eye(12), [(i, i) for i in range(12)])
    assert report.image_to_text == {1: 100.0, 5: 100.0, 10: 100.0}
    assert report.text_to_image == {1: 100.0, 5: 100.0, 10: 100.0}
    assert report.rsum == 600.0
    assert list(report.row()) == ["i2t_R@1", "i2t_R@5", "i2t_R@10",
                                  "t2i_R@1", "t2i_R@5", "t2i_R@10", "rsum"]


def test_ties_count_against_the_query():
    report = recall_report(np.zeros((5, 5)), [(i, i) for i in range(5)])
    assert report.image_to_text[1] == 0.0
    assert report.image_to_text[5] == 100.0


def test_any_paired_text_is_a_hit():
    sim = np.array([
        [0.1, 0.9, 0.0],
        [0.8, 0.0, 0.2],
    ])
    report = recall_report(sim, [(0, 0), (0, 1), (1, 2)], ks=(1, 2))
    assert report.n_queries == 2 and report.n_text_queries == 3
    assert report.image_to_text == {1: 50.0, 2: 100.0}
    # text 0 ranks image 1 first, text 1 ranks image 0 first, text 2 ranks image 1 first
    assert report.text_to_image[1] == pytest.approx(200.0 / 3)


def test_recall_is_monotone_in_k(rng):
    report = recall_report(rng.normal(size=(30, 30)), [(i, i) for i in range(30)])
    for recalls in (report.image_to_text, report.text_to_image):
        assert recalls[1] <= recalls[5] <= recalls[10]


def test_random_scores_give_chance_recall():
    rng = np.random.default_rng(21)
    hits = [recall_report(rng.uniform(size=(100, 100)), [(i, i) for i in range(100)]).image_to_text[10]
            for _ in range(20)]
    # 2000 queries, hit probability 0.1
    band = 4 * 100 * np.sqrt(0.1 * 0.9 / 2000)
    assert abs(np.mean(hits) - 10.0) < band


def test_recall_contracts():
    with pytest.raises(ContractError):
        recall_report(np.eye(3), [])
    with pytest.raises(DimensionError):
        recall_report(np.ones(3), [(0, 0)])


def test_similarity_is_mean_of_best_matches():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    t = np.array([[2.0, 0.0]])
    assert similarity(v, t) == pytest.approx(0.5)
    assert similarity(t, v) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        similarity(v, np.ones((1, 3)))


def test_similarity_matrix_matches_pairwise_scores(rng):
    images = rng.normal(size=(5, 3, 4))
    texts = rng.normal(size=(6, 2, 4))
    sim = similarity_matrix(images, texts, chunk=2)
    for a in range(5):
        for b in range(6):
            assert sim[a, b] == pytest.approx(similarity(images[a], texts[b]), rel=1e-12)
    both = similarity_matrix(images, texts, symmetric=True)
    assert both[1, 2] == pytest.approx(0.5 * (similarity(images[1], texts[2]) + similarity(texts[2], images[1])))


def test_evaluate_trained_model(tiny_train, tiny_test, tiny_config):
    checkpoint, _ = train(tiny_train, tiny_config)
    report = evaluate(checkpoint, tiny_test)
    assert report.n_queries == 12
    assert 0.0 <= report.rsum <= 600.0
    assert report.image_to_text[10] >= report.image_to_text[1]
    assert evaluate(checkpoint, tiny_test).to_dict() == report.to_dict()


def test_evaluation_ignores_item_order(tiny_train, tiny_test, tiny_config):
    checkpoint, _ = train(tiny_train, tiny_config.replace(epochs=1))
    order = np.random.default_rng(8).permutation(tiny_test.n_images)
    shuffled = tiny_test.subset(order.tolist())
    assert evaluate(checkpoint, shuffled).to_dict() == evaluate(checkpoint, tiny_test).to_dict()

    model = model_from(checkpoint)
    images, texts = semantic_components(model, checkpoint.config, tiny_test)
    shuffled_images, shuffled_texts = semantic_components(model, checkpoint.config, shuffled)
    np.testing.assert_allclose(shuffled_images, images[order], rtol=0, atol=1e-12)
    text_order = [t for i in order for t in tiny_test.texts_of(int(i))]
    np.testing.assert_allclose(shuffled_texts, texts[text_order], rtol=0, atol=1e-12)


def test_evaluate_needs_a_config_for_bare_models(tiny_test, tiny_config):
    with pytest.raises(ContractError):
        evaluate(AlignmentModel(tiny_config), tiny_test)


def test_projection_of_collinear_rows(rng):
    rows = np.outer(rng.normal(size=20), rng.normal(size=5))
    projection = project_2d(rows)
    assert projection.points.shape == (20, 2)
    assert projection.explained[0] == pytest.approx(1.0)
    assert projection.explained[1] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ContractError):
        project_2d(rows[:1])


def test_group_spread(rng):
    centers = rng.normal(scale=10.0, size=(4, 2))
    groups = np.repeat(np.arange(4), 5)
    tight = centers[groups] + 0.01 * rng.normal(size=(20, 2))
    assert group_spread(tight, groups) < 0.05
    assert group_spread(rng.normal(size=(20, 2)), groups) > 0.5
    with pytest.raises(DimensionError):
        group_spread(tight, groups[:-1])


def test_inspect_trained_model(tiny_train, tiny_test, tiny_config):
    checkpoint, _ = train(tiny_train, tiny_config.replace(epochs=1))
    inspection = inspect_model(checkpoint, tiny_test, checkpoint.config)
    state = inspection.correlation
    assert state.s.shape == (8, 8)
    assert np.all(state.image.mask.sum(axis=1) >= 1)
    np.testing.assert_allclose(state.text.weights.sum(axis=0), np.ones(8))
    assert inspection.groups.size == tiny_test.n_texts * tiny_test.n_t
    assert inspection.semantic_texts.points.shape == (inspection.groups.size, 2)
    assert set(inspection.spread()) == {"raw", "semantic"}
