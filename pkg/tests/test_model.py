import numpy as np
import pytest

from madonet.model import (
    Architecture,
    LinearReducer,
    MultiAutoModel,
    OperatorData,
    TrainConfig,
    TrainHistory,
    TrainingDiverged,
    _penalty,
    encode,
    load_model,
    loss,
    predict,
    reconstruct,
    save_model,
    train,
    validation_set,
)
from madonet.stochastic import SensorGrid
from madonet.tensor import Tensor, grad_check


def tiny_arch(**kw):
    base = dict(
        input_shape=(5,),
        latent=2,
        p=3,
        conv_channels=(2,),
        filter_size=2,
        encoder_hidden=(4,),
        branch_widths=(4,),
        trunk_widths=(4,),
    )
    base.update(kw)
    return Architecture(**base)


def tiny_data(n=6, seed=0, sup_points=4):
    rng = np.random.default_rng(seed)
    unsup = SensorGrid.uniform(0, 1, 5)
    sup = SensorGrid.uniform(0, 2, sup_points)
    k = rng.normal(size=(n, 5))
    u = np.cumsum(k, axis=1)[:, :sup_points] * 0.3
    return OperatorData(k, u, unsup, sup)


def growth_like_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 12)
    c = rng.normal(size=(n, 2))
    k = c[:, :1] + c[:, 1:] * t
    u = np.exp(c[:, :1] * t + c[:, 1:] * t**2 / 2)
    g = SensorGrid.line(t)
    return OperatorData(k, u, g, g)


class SentinelBranch:
    """Stands in for the branch and records every basis it hands out."""

    def __init__(self, p):
        self.p = p
        self.calls = []

    def params(self):
        return {}

    def __call__(self, z):
        phi = Tensor(np.tile(np.arange(1.0, self.p + 1), (z.shape[0], 1)))
        self.calls.append(phi.data.copy())
        return phi


# -- encode / reconstruct / predict -----------------------------------------------


def test_encode_width_and_determinism():
    arch = Architecture(input_shape=(20, 20), latent=15)
    model = MultiAutoModel(arch, 0)
    x = np.random.default_rng(0).normal(size=(20, 20))
    z = encode(model, x)
    assert z.shape == (15,)
    np.testing.assert_array_equal(z, encode(model, x))
    assert encode(MultiAutoModel(Architecture(input_shape=(41,), latent=4), 0), np.zeros(41)).shape == (4,)


def test_encode_shape_mismatch():
    model = MultiAutoModel(tiny_arch(), 0)
    with pytest.raises(ValueError, match="does not match"):
        encode(model, np.zeros(7))


def test_reconstruct_with_one_hot_trunk_returns_phi1():
    model = MultiAutoModel(tiny_arch(), 0)
    last = model.trunk_unsup.layers[-1]
    last.weight.data[...] = 0.0
    last.bias.data[...] = [1.0, 0.0, 0.0]
    z = np.array([0.4, -0.2])
    phi = model.basis(z).data[0]
    assert reconstruct(model, z, [0.3]) == pytest.approx(phi[0], rel=1e-14)


def test_zero_branch_gives_zero_everywhere():
    model = MultiAutoModel(tiny_arch(), 0)
    last = model.branch.layers[-1]
    last.weight.data[...] = 0.0
    last.bias.data[...] = 0.0
    z = np.array([1.0, 2.0])
    assert reconstruct(model, z, [0.1]) == 0.0
    assert predict(model, z, [0.7]) == 0.0


def test_scalar_basis_case_is_a_plain_product():
    model = MultiAutoModel(tiny_arch(p=1), 0)
    z = np.array([0.3, 0.9])
    phi = model.basis(z).data[0, 0]
    a = model.coeff_unsup([[0.25]]).data[0, 0]
    b = model.coeff_sup([[0.5]]).data[0, 0]
    assert reconstruct(model, z, [0.25]) == pytest.approx(a * phi, rel=1e-14)
    assert predict(model, z, [0.5]) == pytest.approx(b * phi, rel=1e-14)


def test_both_heads_observe_the_same_branch_output():
    model = MultiAutoModel(tiny_arch(), 0)
    sentinel = SentinelBranch(3)
    model.branch = sentinel
    z = np.array([0.1, 0.2])
    r = reconstruct(model, z, [0.5])
    p = predict(model, z, [0.5])
    np.testing.assert_array_equal(sentinel.calls[0], sentinel.calls[1])
    a = model.coeff_unsup([[0.5]]).data[0]
    b = model.coeff_sup([[0.5]]).data[0]
    assert r == pytest.approx(a @ [1, 2, 3])
    assert p == pytest.approx(b @ [1, 2, 3])
    # a single forward pass evaluates the branch once for both heads
    sentinel.calls.clear()
    model.forward(np.zeros((2, 5)), [[0.0]], [[0.0]])
    assert len(sentinel.calls) == 1


def test_branch_trunk_rescaling_invariance():
    model = MultiAutoModel(tiny_arch(), 0)
    data = tiny_data()
    before = model.predict_fields(data.inputs, data.unsup.points, data.sup.points)
    c = 3.7
    for layer, f in ((model.branch.layers[-1], c), (model.trunk_unsup.layers[-1], 1 / c), (model.trunk_sup.layers[-1], 1 / c)):
        layer.weight.data *= f
        layer.bias.data *= f
    after = model.predict_fields(data.inputs, data.unsup.points, data.sup.points)
    for x, y in zip(before, after):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)


def test_trunks_accept_different_dimensions():
    arch = Architecture(input_shape=(41,), unsup_dim=1, sup_dim=2, latent=4, p=5)
    model = MultiAutoModel(arch, 0)
    k, u, *_ = model.forward(np.zeros((3, 41)), np.zeros((41, 1)), np.zeros((400, 2)))
    assert k.shape == (3, 41) and u.shape == (3, 400)


# -- loss -----------------------------------------------------------------------


def _zero_model():
    model = MultiAutoModel(tiny_arch(), 0)
    for part in (model.branch, model.trunk_unsup, model.trunk_sup):
        part.layers[-1].weight.data[...] = 0.0
        part.layers[-1].bias.data[...] = 0.0
    return model


def test_loss_zero_when_outputs_match_targets():
    model = MultiAutoModel(tiny_arch(), 0)
    data = tiny_data()
    k, u = model.predict_fields(data.inputs, data.unsup.points, data.sup.points)
    exact = OperatorData(data.inputs, u, data.unsup, data.sup, recon=k)
    terms = loss(model, exact, 0.0)
    assert terms.total.data == pytest.approx(0.0, abs=1e-28)


def test_loss_of_zero_model_on_unit_targets_is_two():
    model = _zero_model()
    data = tiny_data()
    ones = OperatorData(data.inputs, np.ones_like(data.targets), data.unsup, data.sup, recon=np.ones_like(data.recon))
    terms = loss(model, ones, 0.0)
    assert terms.mse_k == 1.0 and terms.mse_u == 1.0
    assert terms.total.data == 2.0


def test_loss_decomposition_is_exact():
    model = MultiAutoModel(tiny_arch(), 0)
    data = tiny_data()
    model.fit_scaling(data)
    w = 0.37
    with_w = loss(model, data, w)
    without = loss(model, data, 0.0)
    _, _, a, b, phi = model.forward(data.inputs, data.unsup.points, data.sup.points)
    pen = np.abs(a.data).sum() + np.abs(b.data).sum() + np.abs(phi.data).sum() / len(data)
    assert with_w.penalty == pytest.approx(pen, rel=1e-14)
    assert float(with_w.total.data) == pytest.approx(float(without.total.data) + w * pen, rel=1e-14)


def test_penalty_switch_selects_blocks():
    a, b, phi = Tensor(np.ones((2, 3))), Tensor(2 * np.ones((4, 3))), Tensor(np.ones((5, 3)))
    assert _penalty(a, b, phi, ("a",)).data == 6.0
    assert _penalty(a, b, phi, ("b", "phi")).data == 24.0 + 3.0


def test_non_finite_loss_names_the_term():
    model = MultiAutoModel(tiny_arch(), 0)
    data = tiny_data()
    data.targets[0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="prediction"):
        loss(model, data, 0.0)


def test_full_loss_grad_check_on_tiny_model():
    model = MultiAutoModel(tiny_arch(), 1)
    data = tiny_data(n=4)
    model.fit_scaling(data)
    err = grad_check(lambda p: loss(model, data, 1e-2).total, model.params())
    assert err < 1e-5


def test_empty_batch_rejected():
    model = MultiAutoModel(tiny_arch(), 0)
    with pytest.raises(ValueError):
        loss(model, tiny_data().subset(np.array([], dtype=int)), 0.0)


# -- train ---------------------------------------------------------------------


def test_zero_epochs_leaves_parameters():
    model = MultiAutoModel(tiny_arch(), 0)
    before = model.get_state()
    hist = train(model, tiny_data(n=20), TrainConfig(epochs=0, batch_size=4))
    assert hist.train_loss == [] and hist.val_loss == []
    for k, v in model.get_state().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_reduces_loss_and_is_deterministic():
    data = growth_like_data()
    arch = Architecture(input_shape=(12,), latent=3, p=10, conv_channels=(4,), filter_size=3,
                        encoder_hidden=(16,), branch_widths=(16,), trunk_widths=(16,))
    cfg = TrainConfig(epochs=30, batch_size=32, l1_weight=1e-4)
    hists = []
    for _ in range(2):
        model = MultiAutoModel(arch, 0)
        model.fit_scaling(data)
        hists.append(train(model, data, cfg))
    assert hists[0].train_loss[-1] < hists[0].train_loss[0]
    assert hists[0].train_loss == hists[1].train_loss
    assert hists[0].val_loss == hists[1].val_loss
    assert len(hists[0].train_loss) == len(hists[0].val_loss) == 30


def test_early_stopping_restores_best_parameters():
    data = growth_like_data(n=60)
    model = MultiAutoModel(tiny_arch(input_shape=(12,)), 0)
    model.fit_scaling(data)
    cfg = TrainConfig(epochs=40, batch_size=8, patience=3, learning_rate=5e-2)
    hist = train(model, data, cfg)
    val = loss(model, validation_set(data, cfg), cfg.l1_weight).total.data
    assert val == pytest.approx(hist.best_val_loss, rel=1e-12)
    assert len(hist.val_loss) <= hist.best_epoch + 1 + cfg.patience


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)
    with pytest.raises(ValueError, match="batch size"):
        train(MultiAutoModel(tiny_arch(), 0), tiny_data(n=6), TrainConfig(epochs=1, batch_size=64))


def test_divergence_reports_epoch():
    data = growth_like_data(n=40)
    data.targets[:] = 1e300
    model = MultiAutoModel(tiny_arch(input_shape=(12,)), 0)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(model, data, TrainConfig(epochs=2, batch_size=8))


def test_history_csv_round_trip(tmp_path):
    h = TrainHistory([1.0, 0.5, 0.25], [1.1, 0.4, 0.6])
    h.to_csv(tmp_path / "h.csv")
    back = TrainHistory.from_csv(tmp_path / "h.csv")
    assert back.train_loss == h.train_loss and back.val_loss == h.val_loss
    assert back.best_epoch == 1


# -- checkpoints -----------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = MultiAutoModel(tiny_arch(), 3)
    data = tiny_data()
    model.fit_scaling(data)
    save_model(model, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    assert back.arch == model.arch
    for k, v in model.get_state().items():
        np.testing.assert_array_equal(back.get_state()[k], v)
    np.testing.assert_array_equal(encode(back, data.inputs), encode(model, data.inputs))


def test_checkpoint_with_linear_reducer(tmp_path):
    red = LinearReducer(np.zeros(5), np.eye(2, 5), np.ones(2))
    model = MultiAutoModel(tiny_arch(reducer="pca"), 0, reducer=red)
    save_model(model, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    x = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal(encode(back, x), encode(model, x))


def test_validation_loss_reproduced_after_reload(tmp_path):
    data = growth_like_data(n=80)
    model = MultiAutoModel(tiny_arch(input_shape=(12,)), 0)
    model.fit_scaling(data)
    cfg = TrainConfig(epochs=5, batch_size=16)
    hist = train(model, data, cfg)
    save_model(model, tmp_path / "m.ckpt")
    val = loss(load_model(tmp_path / "m.ckpt"), validation_set(data, cfg), cfg.l1_weight).total.data
    assert abs(val - hist.best_val_loss) <= 1e-12 * max(1.0, hist.best_val_loss)


def test_corrupted_checkpoints_rejected(tmp_path):
    model = MultiAutoModel(tiny_arch(), 0)
    save_model(model, tmp_path / "m.ckpt")
    raw = bytearray((tmp_path / "m.ckpt").read_bytes())
    bad = bytearray(raw)
    bad[20] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(bad))
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(ValueError, match="not a model checkpoint"):
        load_model(tmp_path / "magic.ckpt")
    ver = bytearray(raw)
    ver[8] = 99
    (tmp_path / "ver.ckpt").write_bytes(bytes(ver))
    with pytest.raises(ValueError, match="version"):
        load_model(tmp_path / "ver.ckpt")


def test_set_state_shape_mismatch():
    model = MultiAutoModel(tiny_arch(), 0)
    state = model.get_state()
    key = next(iter(state))
    state[key] = np.zeros((1, 1, 1, 1))
    with pytest.raises(ValueError, match="shape mismatch"):
        model.set_state(state)


def test_architecture_validation():
    with pytest.raises(ValueError, match="PCE"):
        Architecture(input_shape=(5,), latent=3, p=19, branch="pce")
    with pytest.raises(ValueError):
        Architecture(input_shape=(5,), reducer="svd")
    with pytest.raises(ValueError):
        MultiAutoModel(Architecture(input_shape=(5,), reducer="pca"), 0)
    with pytest.raises(ValueError, match="too small"):
        MultiAutoModel(Architecture(input_shape=(6,)), 0)


# -- normalisation ------------------------------------------------------------------


def test_field_centring_is_exact_on_grid_and_linear_between():
    data = tiny_data(n=10)
    model = MultiAutoModel(tiny_arch(), 0)
    model.fit_scaling(data)
    s = model.scaling
    mean = data.targets.mean(axis=0)
    np.testing.assert_array_equal(s.out_centre(data.sup.points), mean)
    mid = 0.5 * (data.sup.points[1] + data.sup.points[2])
    assert s.out_centre(mid[None, :])[0] == pytest.approx(0.5 * (mean[1] + mean[2]), rel=1e-12)
    resid = data.targets - mean
    assert s.out_scale == pytest.approx(resid.std(), rel=1e-14)


def test_field_centring_on_tensor_grid_is_bilinear():
    ax, ay = np.linspace(0, 1, 4), np.linspace(-1, 1, 3)
    grid = SensorGrid.tensor(ax, ay)
    field = grid.points[:, 0] + 2 * grid.points[:, 1] + grid.points[:, 0] * grid.points[:, 1]
    from madonet.model import Scaling

    s = Scaling(out_mean=field.tolist(), sup_points=grid.points.tolist())
    q = np.array([[0.3, 0.1], [0.77, -0.6]])
    np.testing.assert_allclose(s.out_centre(q), q[:, 0] + 2 * q[:, 1] + q[:, 0] * q[:, 1], rtol=1e-12)


def test_scalar_centring_option():
    data = tiny_data(n=10)
    model = MultiAutoModel(tiny_arch(), 0)
    model.fit_scaling(data, centring="scalar")
    assert model.scaling.out_mean is None
    assert model.scaling.out_centre(data.sup.points) == pytest.approx(data.targets.mean())
    with pytest.raises(ValueError):
        model.fit_scaling(data, centring="median")


def test_heads_agree_with_batch_prediction_after_centring():
    data = tiny_data(n=6)
    model = MultiAutoModel(tiny_arch(), 2)
    model.fit_scaling(data)
    k, u = model.predict_fields(data.inputs, data.unsup.points, data.sup.points)
    z = encode(model, data.inputs[3])
    assert predict(model, z, data.sup.points[1]) == pytest.approx(u[3, 1], rel=1e-12)
    assert reconstruct(model, z, data.unsup.points[4]) == pytest.approx(k[3, 4], rel=1e-12)
