import json

import numpy as np
import pytest

from cddsalign.config.models import Ablation, DecouplerConfig, TrainConfig
from cddsalign.core.errors import ContractError, CorruptionError, DimensionError
from cddsalign.model.cdds import AlignmentModel
from cddsalign.model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from cddsalign.model.decoupler import Decoupler
from cddsalign.tensor import ops
from cddsalign.tensor.tape import Tape
from cddsalign.tensor.tensor import Tensor


def _decoupler(**changes) -> Decoupler:
    values = dict(d=6, n_layers=2, z=3, noise_std=0.1)
    values.update(changes)
    return Decoupler(DecouplerConfig(**values), np.random.default_rng(0))


def test_decouple_preserves_shape(rng):
    decoupler = _decoupler()
    for shape in [(5, 6), (2, 5, 6)]:
        out = decoupler.decouple(rng.normal(size=shape), np.random.default_rng(1))
        assert out.semantic.shape == shape
        assert out.modal.shape == shape
        assert not np.allclose(out.semantic.data, out.modal.data)


def test_decouple_rejects_wrong_feature_size(rng):
    with pytest.raises(DimensionError):
        _decoupler().decouple(rng.normal(size=(4, 5)), np.random.default_rng(1))
    with pytest.raises(DimensionError):
        _decoupler().decouple(rng.normal(size=(6,)), np.random.default_rng(1))


def test_decouple_is_deterministic_given_the_noise_seed(rng):
    decoupler = _decoupler()
    x = rng.normal(size=(2, 4, 6))
    first = decoupler.decouple(x, np.random.default_rng(5))
    second = decoupler.decouple(x, np.random.default_rng(5))
    third = decoupler.decouple(x, np.random.default_rng(6))
    np.testing.assert_array_equal(first.semantic.data, second.semantic.data)
    assert not np.array_equal(first.semantic.data, third.semantic.data)


def test_zero_noise_makes_draws_identical(rng):
    x = rng.normal(size=(2, 4, 6))
    many = _decoupler(z=4).decouple(x, np.random.default_rng(1), noise_std=0.0)
    one = _decoupler(z=1).decouple(x, np.random.default_rng(1), noise_std=0.0)
    np.testing.assert_allclose(many.semantic.data, one.semantic.data, atol=1e-12)
    np.testing.assert_allclose(many.modal.data, one.modal.data, atol=1e-12)


def test_noise_encoder_maps_zero_to_zero():
    decoupler = _decoupler()
    out = decoupler.noise_encoder(Tensor(np.zeros((3, 6))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 6)))
    names = [name for name, _ in decoupler.noise_encoder.named_parameters()]
    assert not any(name.endswith("bias") or name.endswith("shift") for name in names)
    assert not any(name.startswith("norm_") for name in names)


def test_perturbation_spread_grows_with_noise_std(rng):
    decoupler = _decoupler()
    h = Tensor(rng.normal(size=(4, 6)))
    spreads = []
    for noise_std in (0.01, 0.1, 1.0):
        draws = decoupler.perturb(h, 100, noise_std, np.random.default_rng(2))
        stacked = np.stack([d.data for d in draws])
        spreads.append(float(np.std(stacked[1:] - stacked[:-1])))
    assert spreads[0] < spreads[1] < spreads[2]
    assert spreads[0] < 0.2


def test_decode_averages_identical_draws_exactly(rng):
    decoupler = _decoupler()
    outputs = decoupler.encode(rng.normal(size=(2, 4, 6)))
    draw = decoupler.perturb(outputs[-1], 1, 0.3, np.random.default_rng(4))[0]
    for path in ("semantic", "modal"):
        single = decoupler.decode([draw], outputs, path)
        repeated = decoupler.decode([draw] * 4, outputs, path)
        np.testing.assert_allclose(repeated.data, single.data, atol=1e-12)


def test_perturb_and_decode_contracts(rng):
    decoupler = _decoupler()
    h = Tensor(rng.normal(size=(4, 6)))
    with pytest.raises(ContractError):
        decoupler.perturb(h, 0, 0.1, rng)
    with pytest.raises(ContractError):
        decoupler.perturb(h, 1, -0.1, rng)
    outputs = decoupler.encode(rng.normal(size=(4, 6)))
    assert len(outputs) == 2
    with pytest.raises(ContractError):
        decoupler.decode([], outputs, "semantic")
    with pytest.raises(ContractError):
        decoupler.decode([h], outputs[:1], "semantic")
    with pytest.raises(ContractError):
        decoupler.decode([h], outputs, "other")


def test_decouple_gradient_wrt_input(check_gradients, rng):
    decoupler = _decoupler(d=4, n_layers=1, z=2)

    def semantic_plus_modal(x):
        out = decoupler.decouple(x, np.random.default_rng(9))
        return ops.add(out.semantic, ops.scalar_mul(out.modal, 0.5))

    check_gradients(semantic_plus_modal, rng.normal(size=(3, 4)))


def test_every_decoupler_parameter_gets_a_gradient(rng):
    decoupler = _decoupler(d=4, n_layers=2, z=2)
    x = rng.normal(size=(2, 3, 4))
    with Tape() as tape:
        out = decoupler.decouple(x, np.random.default_rng(0))
        loss = ops.add(ops.sum(ops.square(out.semantic)), ops.sum(ops.square(out.modal)))
    tape.backward(loss)
    for name, p in decoupler.named_parameters():
        assert p.grad is not None, name
        assert np.any(p.grad != 0), name


def test_model_initialization_is_seeded():
    config = TrainConfig(decoupler=DecouplerConfig(d=4, n_layers=1, z=1))
    a, b = AlignmentModel(config), AlignmentModel(config)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data, err_msg=name)
    other = AlignmentModel(config.replace(seed=1))
    assert not np.array_equal(other.image.encoder[0].query.weight.data, a.image.encoder[0].query.weight.data)


def test_trainable_parameters_follow_ablations():
    config = TrainConfig(decoupler=DecouplerConfig(d=4, n_layers=1, z=1))
    model = AlignmentModel(config)
    everything = set(model.trainable_parameters(config))
    assert everything == {name for name, _ in model.named_parameters()}

    dec = set(model.trainable_parameters(config.with_ablation(Ablation.DEC)))
    assert dec == {"weights.w_m", "weights.w_s", "weights.w_x", "sparsity.alpha_v", "sparsity.alpha_t"}

    gau = set(model.trainable_parameters(config.with_ablation(Ablation.GAU)))
    assert not any(".noise_encoder." in name for name in gau)
    assert any(name.startswith("image.encoder.") for name in gau)

    sam_int = config.with_ablation(Ablation.SAM).with_ablation(Ablation.INT)
    names = set(model.trainable_parameters(sam_int))
    assert not any(name.startswith(("sparsity.", "weights.")) for name in names)


def _checkpoint(rng) -> Checkpoint:
    config = TrainConfig(decoupler=DecouplerConfig(d=4, n_layers=1, z=1))
    model = AlignmentModel(config)
    params = model.state_dict()
    return Checkpoint(
        config=config,
        step=7,
        params=params,
        first_moments={k: rng.normal(size=v.shape) for k, v in params.items()},
        second_moments={k: rng.uniform(size=v.shape) for k, v in params.items()},
        correlation=rng.uniform(size=(4, 4)),
        correlation_state={"mode": "each-batch", "calls": 7, "subset": None},
    )


def test_checkpoint_restores_exact_state(tmp_path, rng):
    checkpoint = _checkpoint(rng)
    save_checkpoint(tmp_path / "ckpt", checkpoint)
    loaded = load_checkpoint(tmp_path / "ckpt")
    assert loaded.step == 7
    assert loaded.config == checkpoint.config
    assert loaded.config_hash == checkpoint.config_hash
    assert loaded.correlation_state == checkpoint.correlation_state
    for name, values in checkpoint.params.items():
        np.testing.assert_array_equal(loaded.params[name], values)
        np.testing.assert_array_equal(loaded.first_moments[name], checkpoint.first_moments[name])
    np.testing.assert_array_equal(loaded.correlation, checkpoint.correlation)


def test_checkpoint_detects_edited_config(tmp_path, rng):
    directory = save_checkpoint(tmp_path / "ckpt", _checkpoint(rng))
    header_path = directory / "checkpoint.json"
    header = json.loads(header_path.read_text())
    header["config"]["epochs"] = 99
    header_path.write_text(json.dumps(header))
    with pytest.raises(CorruptionError):
        load_checkpoint(directory)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nothing")
