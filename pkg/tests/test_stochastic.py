import numpy as np
import pytest

from madonet.stochastic import (
    FunctionEnsemble,
    KernelSpec,
    SensorGrid,
    export_csv,
    gp_sample,
    gram_matrix,
    kl_field_sample,
    kl_modes,
    load_ensemble,
    save_ensemble,
    stream,
)

SE = KernelSpec("squared-exponential", 1.0, 1.5)


def frob_rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- gram_matrix ------------------------------------------------------------


def test_gram_zero_sigma():
    assert not gram_matrix(KernelSpec(sigma=0.0), SensorGrid.uniform(0, 1, 4)).any()


def test_gram_diagonal_is_sigma_squared():
    k = gram_matrix(KernelSpec(sigma=1.7, length=0.3), SensorGrid.uniform(0, 1, 6))
    np.testing.assert_allclose(np.diag(k), 1.7**2)


def test_gram_hand_value_and_symmetry():
    k = gram_matrix(KernelSpec(sigma=1.0, length=1.0), SensorGrid.line([0.0, 1.0, 2.0]))
    assert k[0, 1] == pytest.approx(np.exp(-0.5), rel=1e-15)
    assert np.array_equal(k, k.T)


def test_exponential_kernel_decays():
    k = KernelSpec("exponential", 0.1, 0.25)
    assert k([[0.0]], [[0.25]])[0, 0] == pytest.approx(0.01 * np.exp(-1.0))


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(sigma=-1.0)
    with pytest.raises(ValueError):
        KernelSpec(length=0.0)
    with pytest.raises(ValueError):
        KernelSpec("matern")


# -- gp_sample --------------------------------------------------------------


def test_gp_zero_sigma_gives_mean():
    grid = SensorGrid.uniform(0, 1, 7)
    ens = gp_sample(lambda p: np.sin(p[:, 0]), KernelSpec(sigma=0.0), grid, 5, 0)
    np.testing.assert_array_equal(ens.values, np.tile(np.sin(grid.points[:, 0]), (5, 1)))


def test_gp_empirical_covariance_5_points():
    grid = SensorGrid.uniform(0, 1, 5)
    ens = gp_sample(0.0, SE, grid, 200_000, 0)
    cov = np.cov(ens.values, rowvar=False)
    assert frob_rel(cov, gram_matrix(SE, grid)) < 0.03


def test_gp_mean_within_monte_carlo_band():
    grid = SensorGrid.uniform(-1, 1, 6)
    mu = lambda p: 2.0 * p[:, 0]  # noqa: E731
    ens = gp_sample(mu, SE, grid, 100_000, 1)
    err = np.abs(ens.values.mean(axis=0) - mu(grid.points))
    assert np.all(err < 3.0 * SE.sigma / np.sqrt(100_000))


def test_gp_deterministic_per_seed_and_tag():
    grid = SensorGrid.uniform(0, 1, 9)
    a = gp_sample(0.0, SE, grid, 3, 11).values
    np.testing.assert_array_equal(a, gp_sample(0.0, SE, grid, 3, 11).values)
    assert not np.array_equal(a, gp_sample(0.0, SE, grid, 3, 11, tag="other").values)


def test_gp_fine_grid_needs_jitter_but_succeeds():
    ens = gp_sample(0.0, SE, SensorGrid.uniform(0, 1, 241), 4, 0)
    assert np.all(np.isfinite(ens.values))


def test_gp_kronecker_path_matches_dense_covariance():
    ax = np.linspace(-1, 1, 4)
    grid = SensorGrid.tensor(ax, ax)
    kern = KernelSpec(sigma=0.5, length=1.5)
    ens = gp_sample(0.0, kern, grid, 200_000, 3)
    assert frob_rel(np.cov(ens.values, rowvar=False), gram_matrix(kern, grid)) < 0.03


def test_gp_rejects_zero_samples():
    with pytest.raises(ValueError):
        gp_sample(0.0, SE, SensorGrid.uniform(0, 1, 3), 0, 0)


def test_stream_is_reproducible():
    assert stream(5, "x").random() == stream(5, "x").random()
    assert stream(5, "x").random() != stream(5, "y").random()


# -- KL modes -------------------------------------------------------------------


def test_kl_full_reconstruction_and_trace():
    grid = SensorGrid.uniform(-1, 1, 31)
    basis = kl_modes(SE, grid, grid.size)
    k = gram_matrix(SE, grid)
    assert frob_rel(basis.truncated_covariance(), k) < 1e-8
    trace = float(np.sum(basis.weights * np.diag(k)))
    assert basis.eigenvalues.sum() == pytest.approx(trace, rel=1e-8)


def test_kl_eigenvalues_descending_nonnegative_and_orthonormal():
    grid = SensorGrid.uniform(-1, 1, 41)
    basis = kl_modes(SE, grid, 10)
    lam = basis.eigenvalues
    assert np.all(lam >= 0) and np.all(np.diff(lam) <= 0)
    e = basis.eigenfunctions
    np.testing.assert_allclose(e.T @ (basis.weights[:, None] * e), np.eye(10), atol=1e-8)


def test_kl_sign_convention():
    basis = kl_modes(SE, SensorGrid.uniform(0, 1, 21), 5)
    for col in basis.eigenfunctions.T:
        assert col[np.flatnonzero(np.abs(col) > 1e-12)[0]] > 0


def test_kl_top5_capture_against_dense_oracle():
    grid = SensorGrid.uniform(-1, 1, 101)
    basis = kl_modes(SE, grid, 5)
    w = grid.quadrature_weights()
    k = gram_matrix(SE, grid)
    oracle = np.sort(np.linalg.eigvals(k * w[None, :]).real)[::-1]  # K W, not symmetrised
    np.testing.assert_allclose(basis.eigenvalues, oracle[:5], rtol=1e-8)
    assert basis.eigenvalues.sum() / np.sum(w * np.diag(k)) >= 0.99


def test_kl_retain_too_many():
    with pytest.raises(ValueError):
        kl_modes(SE, SensorGrid.uniform(0, 1, 4), 5)


def test_kl_projection_inverts_field_sample():
    grid = SensorGrid.uniform(0, 1, 41)
    basis = kl_modes(KernelSpec("exponential", 1.0, 0.25), grid, 3)
    ens = kl_field_sample(basis, 1.0, 10, 0)
    np.testing.assert_allclose(basis.project(ens.values), ens.latent, atol=1e-10)


# -- KL field samples ---------------------------------------------------------------


def test_kl_field_zero_sigma():
    basis = kl_modes(SE, SensorGrid.uniform(0, 1, 11), 3)
    assert not kl_field_sample(basis, 0.0, 4, 0).values.any()


def test_kl_field_single_mode_forced_omega():
    basis = kl_modes(SE, SensorGrid.uniform(0, 1, 11), 1)
    ens = kl_field_sample(basis, 0.1, 1, 0, omega=np.ones((1, 1)))
    np.testing.assert_allclose(ens.values[0], 0.1 * np.sqrt(basis.eigenvalues[0]) * basis.eigenfunctions[:, 0])


def test_kl_field_covariance_is_truncated_kernel():
    grid = SensorGrid.uniform(0, 0.1, 41)
    kern = KernelSpec("exponential", 1.0, 0.25)
    basis = kl_modes(kern, grid, 3)
    ens = kl_field_sample(basis, 0.1, 200_000, 0)
    cov = np.cov(ens.values, rowvar=False)
    truncated = 0.01 * basis.truncated_covariance()
    assert frob_rel(cov, truncated) < 0.03
    assert ens.latent.shape == (200_000, 3)


# -- serialisation ----------------------------------------------------------------


def test_ensemble_round_trip(tmp_path):
    grid = SensorGrid.tensor(np.linspace(0, 1, 3), np.linspace(-1, 1, 4))
    ens = FunctionEnsemble(grid, np.random.default_rng(0).normal(size=(5, 12)), np.arange(10.0).reshape(5, 2))
    save_ensemble(tmp_path / "e.fens", ens)
    back = load_ensemble(tmp_path / "e.fens")
    np.testing.assert_array_equal(back.values, ens.values)
    np.testing.assert_array_equal(back.latent, ens.latent)
    np.testing.assert_array_equal(back.grid.points, grid.points)
    assert back.grid.shape == (3, 4)


def test_ensemble_rejects_bad_magic_and_truncation(tmp_path):
    ens = FunctionEnsemble(SensorGrid.uniform(0, 1, 3), np.ones((2, 3)))
    save_ensemble(tmp_path / "e.fens", ens)
    raw = (tmp_path / "e.fens").read_bytes()
    (tmp_path / "bad.fens").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_ensemble(tmp_path / "bad.fens")
    (tmp_path / "short.fens").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="size"):
        load_ensemble(tmp_path / "short.fens")


def test_csv_export(tmp_path):
    ens = FunctionEnsemble(SensorGrid.uniform(0, 1, 3), np.arange(6.0).reshape(2, 3), np.ones((2, 1)))
    export_csv(tmp_path / "e.csv", ens)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "sample,(0),(0.5),(1),xi1"
    assert len(lines) == 3
