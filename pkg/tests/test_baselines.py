from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madonet.baselines import (
    DeepONet,
    KLDeepONet,
    KLOperatorData,
    PCEBasis,
    deeponet_forward,
    deeponet_loss,
    gaussian_to_unit,
    legendre_eval,
    pca_fit,
    pce_basis_eval,
)
from madonet.model import Architecture, LinearReducer, MultiAutoModel
from madonet.tensor import grad_check

# -- PCA -------------------------------------------------------------------------


def test_pca_exact_on_rank_r_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2)) @ rng.normal(size=(2, 8)) + 3.0
    proj = pca_fit(x, 2)
    np.testing.assert_allclose(proj.inverse_transform(proj.transform(x)), x, atol=1e-10)


def test_pca_components_orthonormal():
    x = np.random.default_rng(1).normal(size=(40, 12))
    proj = pca_fit(x, 6)
    np.testing.assert_allclose(proj.components @ proj.components.T, np.eye(6), atol=1e-10)
    for row in proj.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_error_nonincreasing_in_r():
    x = np.random.default_rng(2).normal(size=(30, 10))
    errs = []
    for r in range(1, 11):
        proj = pca_fit(x, r)
        errs.append(np.linalg.norm(x - proj.inverse_transform(proj.transform(x))))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_pca_first_axis_of_anisotropic_cloud():
    x = np.random.default_rng(3).normal(size=(20_000, 2)) * [2.0, 1.0]
    c = pca_fit(x, 1).components[0]
    assert abs(c[0]) > 0.999


def test_pca_residual_equals_discarded_eigenvalues():
    x = np.random.default_rng(4).normal(size=(60, 9)) * np.arange(1, 10)
    proj = pca_fit(x, 4)
    resid = x - proj.inverse_transform(proj.transform(x))
    per_sample = np.sum(resid**2) / (x.shape[0] - 1)
    assert per_sample == pytest.approx(proj.discarded, rel=1e-8)


def test_pca_rejects_large_r():
    with pytest.raises(ValueError):
        pca_fit(np.zeros((5, 3)), 4)


def test_pca_and_multiauto_share_shapes():
    x = np.random.default_rng(5).normal(size=(30, 25))
    proj = pca_fit(x, 4)
    red = LinearReducer(proj.mean, proj.components, np.sqrt(proj.variances))
    learned = MultiAutoModel(Architecture(input_shape=(25,), latent=4, p=7), 0)
    reduced = MultiAutoModel(Architecture(input_shape=(25,), latent=4, p=7, reducer="pca"), 0, reducer=red)
    ys = np.linspace(0, 1, 25)[:, None]
    outs_a = learned.forward(x, ys, ys)
    outs_b = reduced.forward(x, ys, ys)
    assert [o.shape for o in outs_a] == [o.shape for o in outs_b]
    # branch and trunk code paths are the same classes
    assert type(learned.branch) is type(reduced.branch)
    assert type(learned.trunk_sup) is type(reduced.trunk_sup)


# -- DeepONet ----------------------------------------------------------------------


def _zero_last(stack):
    stack.layers[-1].weight.data[...] = 0.0
    stack.layers[-1].bias.data[...] = 0.0


def test_deeponet_zero_branch():
    net = DeepONet(3, 2, 4, widths=(5,), seed=0)
    _zero_last(net.branch)
    assert deeponet_forward([0.1, 0.2, 0.3], [0.5, -0.5], net) == 0.0


def test_deeponet_one_hot_branch_selects_trunk_output():
    net = DeepONet(3, 2, 4, widths=(5,), seed=0)
    _zero_last(net.branch)
    net.branch.layers[-1].bias.data[2] = 1.0
    y = np.array([0.5, -0.5])
    trunk = net.trunk.layers
    h = np.tanh(y @ trunk[0].weight.data.T + trunk[0].bias.data)
    expected = (h @ trunk[1].weight.data.T + trunk[1].bias.data)[2]
    assert deeponet_forward([1.0, 2.0, 3.0], y, net) == pytest.approx(expected, rel=1e-14)


def test_deeponet_hand_composition():
    net = DeepONet(2, 1, 3, widths=(4,), seed=7)

    def mlp(stack, v):
        h = np.tanh(v @ stack.layers[0].weight.data.T + stack.layers[0].bias.data)
        return h @ stack.layers[1].weight.data.T + stack.layers[1].bias.data

    u, y = np.array([0.3, -1.2]), np.array([0.4])
    assert deeponet_forward(u, y, net) == pytest.approx(mlp(net.branch, u) @ mlp(net.trunk, y), rel=1e-14)


def test_kl_deeponet_shapes_and_gradients():
    rng = np.random.default_rng(0)
    data = KLOperatorData(rng.normal(size=(4, 6)), rng.normal(size=(4, 2)), rng.normal(size=(4, 3)), np.linspace(0, 1, 3))
    net = KLDeepONet(6, 2, 5, widths=(4,), seed=0)
    net.fit_scaling(data)
    assert net.predict(data).shape == (4, 3)
    assert grad_check(lambda p: deeponet_loss(net, data).total, net.params()) < 1e-5


# -- Legendre / PCE ----------------------------------------------------------------


def test_legendre_low_orders_and_hand_value():
    x = np.linspace(-1, 1, 7)
    np.testing.assert_array_equal(legendre_eval(0, x), np.ones(7))
    np.testing.assert_array_equal(legendre_eval(1, x), x)
    assert legendre_eval(2, 0.5) == pytest.approx(-0.125, abs=1e-15)
    assert legendre_eval(5, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_legendre_orthogonality_by_gauss_quadrature():
    nodes, weights = np.polynomial.legendre.leggauss(20)
    for m in range(6):
        for n in range(6):
            val = np.sum(weights * legendre_eval(m, nodes) * legendre_eval(n, nodes))
            if m == n:
                assert val == pytest.approx(2.0 / (2 * n + 1), rel=1e-12)
            else:
                assert abs(val) < 1e-12


def test_legendre_domain_and_degree_errors():
    with pytest.raises(ValueError):
        legendre_eval(2, 1.5)
    with pytest.raises(ValueError):
        legendre_eval(-1, 0.0)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 5), q=st.integers(0, 4))
def test_pce_index_count(d, q):
    basis = PCEBasis(d, q)
    assert basis.size == comb(d + q, q)
    assert np.all(basis.indices.sum(axis=1) <= q)
    assert len({tuple(r) for r in basis.indices}) == basis.size


def test_pce_twenty_values_and_origin_pattern():
    basis = PCEBasis(3, 3)
    vals = pce_basis_eval(basis, np.zeros(3))
    assert vals.shape == (20,)
    for alpha, v in zip(basis.indices, vals):
        if not alpha.any():
            assert v == 1.0
        elif np.any(alpha % 2 == 1):
            assert v == 0.0


def test_pce_mixed_index_matches_direct_product():
    basis = PCEBasis(3, 3)
    xi = np.array([0.3, -0.6, 0.8])
    j = [i for i, a in enumerate(basis.indices) if tuple(a) == (1, 2, 0)][0]
    assert pce_basis_eval(basis, xi)[j] == pytest.approx(0.3 * (3 * 0.36 - 1) / 2, rel=1e-14)


def test_pce_dimension_mismatch():
    with pytest.raises(ValueError):
        pce_basis_eval(PCEBasis(3, 3), np.zeros(2))


def test_pce_monte_carlo_gram_is_diagonal():
    basis = PCEBasis(3, 3)
    xi = np.random.default_rng(0).uniform(-1, 1, size=(100_000, 3))
    v = pce_basis_eval(basis, xi)
    gram = v.T @ v / xi.shape[0]
    expected = np.prod(1.0 / (2 * basis.indices + 1), axis=1)
    d = np.sqrt(np.diag(gram))
    corr = gram / np.outer(d, d)
    np.testing.assert_allclose(np.diag(gram), expected, rtol=0.03)
    assert np.max(np.abs(corr - np.eye(20))) < 0.03


def test_gaussian_to_unit_maps_into_interval():
    z = np.array([-8.0, -1.0, 0.0, 1.0, 8.0])
    u = gaussian_to_unit(z)
    assert np.all(np.abs(u) <= 1.0) and u[2] == 0.0
    assert np.all(np.diff(u) >= 0)
