import json

import numpy as np
import pytest

from cddsalign.core.errors import (
    ConfigError, ContractError, CorruptionError, DimensionError, FormatError,
)
from cddsalign.data.batch import EmbeddingBatch
from cddsalign.data.container import (
    read_container, read_tensor_archive, sidecar_path, write_container, write_tensor_archive,
)
from cddsalign.data.synthetic import generate_synthetic, split_synthetic


def test_synthetic_shapes_and_pairs():
    batch, truth = generate_synthetic(n_pairs=10, n_v=3, n_t=5, d=16, d_latent=4,
                                      texts_per_image=2, noise_std=0.01, seed=0)
    assert batch.images.shape == (10, 3, 16)
    assert batch.texts.shape == (20, 5, 16)
    assert batch.texts_of(4) == [8, 9]
    assert truth.latent_semantics.shape == (10, 4)
    batch.validate()


def test_synthetic_is_seed_deterministic():
    a, _ = generate_synthetic(8, 2, 3, 8, 2, 1, 0.05, seed=11)
    b, _ = generate_synthetic(8, 2, 3, 8, 2, 1, 0.05, seed=11)
    c, _ = generate_synthetic(8, 2, 3, 8, 2, 1, 0.05, seed=12)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.texts, b.texts)
    assert not np.array_equal(a.images, c.images)


def test_synthetic_modalities_differ_by_offset():
    batch, truth = generate_synthetic(500, 3, 4, 8, 2, 1, 0.05, seed=3, jitter_std=0.1)
    owner = np.array([image_id for image_id, _ in batch.pairs])
    cases = [
        (batch.images, truth.latent_semantics, truth.f_v, truth.modality_offset_image),
        (batch.texts, truth.latent_semantics[owner], truth.f_t, truth.modality_offset_text),
    ]
    for rows, latent, mixing, offset in cases:
        residual = (rows - (latent @ mixing)[:, None, :]).reshape(-1, 8)
        n = residual.shape[0]
        z = (residual.mean(axis=0) - offset) / (residual.std(axis=0) / np.sqrt(n))
        # column means sit within 3 standard errors of the planted offset (RMS over columns)
        assert np.sqrt(np.mean(z ** 2)) < 3.0
    assert np.linalg.norm(truth.modality_offset_image - truth.modality_offset_text) > 1.0


def test_synthetic_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        generate_synthetic(10, 2, 2, 4, 8, 1, 0.1, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic(0, 2, 2, 4, 2, 1, 0.1, seed=0)


def test_split_keeps_pairs_consistent(tiny_split):
    train, test = tiny_split
    assert train.n_images == 24 and test.n_images == 12
    assert test.pairs[0] == (0, 0)
    train.validate()
    test.validate()
    with pytest.raises(ConfigError):
        split_synthetic(train, 24)


def test_subset_reindexes_texts():
    batch, _ = generate_synthetic(5, 2, 2, 4, 2, 2, 0.1, seed=0)
    sub = batch.subset([3, 1])
    assert sorted(sub.pairs) == [(0, 0), (0, 1), (1, 2), (1, 3)]
    np.testing.assert_array_equal(sub.texts[0], batch.texts[6])
    np.testing.assert_array_equal(sub.images[1], batch.images[1])


def test_batch_structure_errors():
    with pytest.raises(DimensionError):
        EmbeddingBatch(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)), [(0, 0)])
    with pytest.raises(ContractError):
        EmbeddingBatch(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), [(0, 7)])
    unpaired = EmbeddingBatch(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), [(0, 0)])
    with pytest.raises(ContractError):
        unpaired.validate()


def test_container_preserves_single_precision_values(tmp_path, tiny_train):
    path = write_container(tiny_train, tmp_path / "train.cdds", {"seed": 7})
    loaded = read_container(path)
    np.testing.assert_array_equal(loaded.images, tiny_train.images.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(loaded.texts, tiny_train.texts.astype(np.float32).astype(np.float64))
    assert loaded.pairs == tiny_train.pairs
    sidecar = json.loads(sidecar_path(path).read_text())
    assert sidecar["d"] == 8
    assert sidecar["seed"] == 7
    assert sidecar["format"] == {"magic": "CDDS", "version": 1}


def test_container_rejects_bad_magic(tmp_path, tiny_train):
    path = write_container(tiny_train, tmp_path / "train.cdds")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_container(path)


def test_container_rejects_unknown_version(tmp_path, tiny_train):
    path = write_container(tiny_train, tmp_path / "train.cdds")
    raw = bytearray(path.read_bytes())
    raw[4:6] = (9).to_bytes(2, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_container(path)


def test_container_detects_truncation(tmp_path, tiny_train):
    path = write_container(tiny_train, tmp_path / "train.cdds")
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(CorruptionError):
        read_container(path)
    path.write_bytes(raw[:10])
    with pytest.raises(CorruptionError):
        read_container(path)


def test_container_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_container(tmp_path / "absent.cdds")


def test_empty_pair_list_is_readable(tmp_path, caplog):
    batch = EmbeddingBatch(np.ones((2, 2, 3)), np.ones((1, 2, 3)), [])
    path = write_container(batch, tmp_path / "empty.cdds")
    with caplog.at_level("WARNING"):
        loaded = read_container(path)
    assert loaded.pairs == []
    assert "empty pair list" in caplog.text


def test_tensor_archive_is_exact(tmp_path, rng):
    tensors = {"a/weight": rng.normal(size=(3, 4)), "scalar": np.array(0.1 + 0.2)}
    path = write_tensor_archive(tmp_path / "t.bin", tensors)
    loaded = read_tensor_archive(path)
    assert list(loaded) == ["a/weight", "scalar"]
    np.testing.assert_array_equal(loaded["a/weight"], tensors["a/weight"])
    assert loaded["scalar"].shape == ()
    assert float(loaded["scalar"]) == 0.1 + 0.2


def test_tensor_archive_detects_truncation(tmp_path, rng):
    path = write_tensor_archive(tmp_path / "t.bin", {"w": rng.normal(size=(4, 4))})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CorruptionError):
        read_tensor_archive(path)
