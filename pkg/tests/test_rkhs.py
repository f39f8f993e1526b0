import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.kernel_ridge import KernelRidge

from kpc import Dataset, KernelSpec, LowRank, RkhsConfig, VariableRoles
from kpc.errors import DegenerateDenominator, NegativeDiagonal
from kpc.kernels import gram_matrix
from kpc.oracle import classical_partial_correlation
from kpc.rkhs import (center_gram, eps_schedule, incomplete_cholesky, kpc_rkhs, kpc_rkhs_lowrank,
                      kpc_rkhs_uncentered, regularized_hat, regularized_resolvent)
from kpc.simulate import SimModel, simulate

LIN = KernelSpec("linear")


def _gaussian_data(seed, n=50, dx=2):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dx))
    z = x @ rng.standard_normal(dx) + rng.standard_normal(n)
    y = x @ rng.standard_normal(dx) + 0.7 * z + rng.standard_normal(n)
    cols = {f"x{i}": x[:, i] for i in range(dx)}
    cols.update(z=z, y=y)
    return Dataset.from_arrays(cols), [f"x{i}" for i in range(dx)], x, y, z


def test_center_gram_examples():
    np.testing.assert_array_equal(center_gram(np.array([[3.0]])), [[0.0]])
    np.testing.assert_allclose(center_gram(np.eye(2)), [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)


@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 40))
def test_center_gram_row_sums(seed, n):
    a = np.random.default_rng(seed).standard_normal((n, n)) * 10
    k = a @ a.T
    c = center_gram(k)
    bound = 1e-9 * n * max(np.abs(k).max(), 1.0)
    assert np.all(np.abs(c.sum(axis=0)) <= bound) and np.all(np.abs(c.sum(axis=1)) <= bound)
    np.testing.assert_array_equal(c, c.T)
    h = np.eye(n) - np.ones((n, n)) / n
    np.testing.assert_allclose(c, h @ k @ h, atol=1e-9 * max(np.abs(k).max(), 1.0))


@pytest.mark.parametrize("seed", range(50))
def test_linear_kernels_reduce_to_partial_correlation(seed):
    ds, xcols, x, y, z = _gaussian_data(seed, dx=1 + seed % 3)
    est = kpc_rkhs(ds, VariableRoles.of(ds, "y", "z", xcols), RkhsConfig(eps=1e-10, kernel_y=LIN, kernel_x=LIN, kernel_xz=LIN))
    assert abs(est.value - classical_partial_correlation(y, z, x) ** 2) <= 1e-6


def _uncentered_oracle(xm, xzm, y, gamma_x, gamma_xz, lam):
    fit_x = KernelRidge(alpha=lam, kernel="rbf", gamma=gamma_x).fit(xm, y).predict(xm)
    fit_xz = KernelRidge(alpha=lam, kernel="rbf", gamma=gamma_xz).fit(xzm, y).predict(xzm)
    return np.sum((fit_x - fit_xz) ** 2) / np.sum((fit_x - y) ** 2)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("eps", [1e-3, 1e-2])
def test_uncentered_equals_kernel_ridge_ratio(seed, eps):
    rng = np.random.default_rng(seed)
    n = 40
    x, z = rng.standard_normal((2, n))
    y = np.cos(x) + z ** 2 + 0.3 * rng.standard_normal(n)
    ds = Dataset.from_arrays({"x": x, "z": z, "y": y})
    cfg = RkhsConfig(eps=eps, kernel_y=LIN, kernel_x=KernelSpec.gaussian_coef(1.0),
                     kernel_xz=KernelSpec.gaussian_coef(0.5))
    est = kpc_rkhs_uncentered(ds, VariableRoles.of(ds, "y", "z", "x"), cfg)
    ref = _uncentered_oracle(x[:, None], np.c_[x, z], y, 1.0, 0.5, n * eps)
    assert est.value == pytest.approx(ref, abs=1e-8)


def _random_psd(rng, n, rank=None):
    a = rng.standard_normal((n, rank or n))
    return center_gram(a @ a.T / (rank or n))


@pytest.mark.parametrize("seed", range(20))
def test_m_and_n_identities(seed):
    rng = np.random.default_rng(seed)
    n, lam = 60, 60 * 10 ** rng.uniform(-4, -1)
    kx, kxz = _random_psd(rng, n, 5), _random_psd(rng, n, 12)
    inv = np.linalg.inv
    m = regularized_hat(kx, lam) - regularized_hat(kxz, lam)
    np.testing.assert_allclose(m, lam * (inv(kxz + lam * np.eye(n)) - inv(kx + lam * np.eye(n))), atol=1e-9)
    np.testing.assert_allclose(np.eye(n) - regularized_hat(kx, lam), lam * inv(kx + lam * np.eye(n)), atol=1e-9)
    np.testing.assert_allclose(regularized_resolvent(kx, lam), lam * inv(kx + lam * np.eye(n)), atol=1e-9)


def test_icd_rank_one_example():
    ds = Dataset.from_arrays({"v": np.array([1.0, 1.0])})
    f = incomplete_cholesky(LIN, ds, ["v"])
    assert f.rank == 1 and f.residual == 0.0
    np.testing.assert_allclose(np.abs(f.L[:, 0]), [1.0, 1.0])


@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 60))
def test_icd_full_rank_exact(seed, n):
    rng = np.random.default_rng(seed)
    ds = Dataset.from_arrays({"a": rng.standard_normal(n), "b": rng.standard_normal(n)})
    k = KernelSpec.gaussian(1.0)
    kk = gram_matrix(k, ds, ["a", "b"])
    f = incomplete_cholesky(k, ds, ["a", "b"], tol=None, max_rank=n)
    approx = f.L @ f.L.T
    assert np.abs(kk - approx).max() <= 1e-8
    assert np.all(np.diag(approx) <= np.diag(kk) + 1e-9)
    partial = incomplete_cholesky(k, ds, ["a", "b"], tol=None, max_rank=max(1, n // 3))
    assert np.all(np.diag(partial.L @ partial.L.T) <= np.diag(kk) + 1e-9)
    # greedy pivoting: the first pivot attains the largest diagonal (all ones here, lowest index)
    assert partial.pivots[0] == 0


def test_icd_tolerance_and_pivots(rng):
    x = rng.standard_normal(200)
    ds = Dataset.from_arrays({"x": x})
    k = KernelSpec.gaussian(2.0)
    f = incomplete_cholesky(k, ds, ["x"], tol=1e-6)
    assert f.residual <= 1e-6 * 200 and f.rank < 40
    assert len(set(f.pivots)) == f.rank


def test_icd_rejects_non_psd_kernel():
    from kpc.simulate import rot_z
    from scipy.spatial.transform import Rotation
    ds = Dataset.from_arrays({"r": Rotation.random(40, random_state=1).as_matrix()})
    with pytest.raises(NegativeDiagonal):
        incomplete_cholesky(KernelSpec("so3"), ds, ["r"], tol=None)
    assert rot_z is not None


@given(seed=st.integers(0, 10 ** 6))
def test_lowrank_full_rank_matches_dense(seed):
    rng = np.random.default_rng(seed)
    n = 40
    x, z = rng.standard_normal((2, n))
    ds = Dataset.from_arrays({"x": x, "z": z, "y": np.sin(2 * x) * z + 0.2 * rng.standard_normal(n)})
    roles = VariableRoles.of(ds, "y", "z", "x")
    base = dict(eps=1e-2, kernel_y=KernelSpec.gaussian(1.0), kernel_x=KernelSpec.gaussian(1.0),
                kernel_xz=KernelSpec.gaussian(1.0))
    dense = kpc_rkhs(ds, roles, RkhsConfig(**base))
    low = kpc_rkhs_lowrank(ds, roles, RkhsConfig(**base, lowrank=LowRank(tol=None, max_rank=n)))
    assert low.value == pytest.approx(dense.value, abs=1e-8)
    unc_d = kpc_rkhs_uncentered(ds, roles, RkhsConfig(**base))
    unc_l = kpc_rkhs_uncentered(ds, roles, RkhsConfig(**base, lowrank=LowRank(tol=None, max_rank=n)))
    assert unc_l.value == pytest.approx(unc_d.value, abs=1e-8)


def test_lowrank_on_duplicated_rows(rng):
    base_x = rng.integers(0, 6, 10).astype(float)
    x = np.repeat(base_x, 5)
    z = np.repeat(rng.integers(0, 3, 10).astype(float), 5)
    y = x + z + rng.standard_normal(50)
    ds = Dataset.from_arrays({"x": x, "z": z, "y": y})
    roles = VariableRoles.of(ds, "y", "z", "x")
    base = dict(eps=1e-3, kernel_y=KernelSpec.gaussian(1.0), kernel_x=KernelSpec.gaussian(1.0),
                kernel_xz=KernelSpec.gaussian(1.0))
    dense = kpc_rkhs(ds, roles, RkhsConfig(**base))
    low = kpc_rkhs_lowrank(ds, roles, RkhsConfig(**base, lowrank=LowRank(tol=1e-12)))
    assert low.diagnostics["rank_x"] <= 10
    assert low.value == pytest.approx(dense.value, abs=1e-6)


def test_ignoring_z_gives_zero(rng):
    n = 30
    x, z = rng.standard_normal((2, n))
    ds = Dataset.from_arrays({"x": x, "z": z, "y": x + z})
    kx = KernelSpec.gaussian(1.0)
    same = lambda d, xc, zc: gram_matrix(kx, d, xc)  # noqa: E731
    for fn in (kpc_rkhs, kpc_rkhs_uncentered):
        est = fn(ds, VariableRoles.of(ds, "y", "z", "x"), RkhsConfig(kernel_x=kx, kernel_xz=same))
        assert est.value == 0.0


def test_empty_x_with_constant_z_is_zero(rng):
    ds = Dataset.from_arrays({"z": np.full(25, 3.0), "y": rng.standard_normal(25)})
    est = kpc_rkhs(ds, VariableRoles.of(ds, "y", "z"), RkhsConfig(kernel_xz=KernelSpec.gaussian(1.0)))
    assert est.value == 0.0 and est.numerator == 0.0


def test_empty_x_is_dependence_measure(rng):
    z = rng.standard_normal(150)
    ds = Dataset.from_arrays({"z": z, "y": z ** 2, "w": rng.standard_normal(150)})
    strong = kpc_rkhs(ds, VariableRoles.of(ds, "y", "z")).value
    weak = kpc_rkhs(ds, VariableRoles.of(ds, "y", "w")).value
    assert strong > 0.5 > weak >= 0


def test_degenerate_denominator():
    ds = Dataset.from_arrays({"x": np.arange(8.0), "z": np.arange(8.0) % 3, "y": np.ones(8)})
    with pytest.raises(DegenerateDenominator):
        kpc_rkhs(ds, VariableRoles.of(ds, "y", "z", "x"), RkhsConfig(kernel_y=KernelSpec.gaussian(1.0)))


@given(seed=st.integers(0, 10 ** 6))
def test_nonnegative_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 35
    x, z = rng.standard_normal((2, n))
    ds = Dataset.from_arrays({"x": x, "z": z, "y": rng.standard_normal(n) + x})
    roles = VariableRoles.of(ds, "y", "z", "x")
    a = kpc_rkhs(ds, roles)
    assert a.value >= 0
    b = kpc_rkhs(ds.take(rng.permutation(n)), roles)
    assert b.value == pytest.approx(a.value, abs=1e-10)


def test_eps_continuity(rng):
    ds, xcols, *_ = _gaussian_data(7, n=60)
    roles = VariableRoles.of(ds, "y", "z", xcols)
    for eps in (1e-4, 1e-3, 1e-2):
        a = kpc_rkhs(ds, roles, RkhsConfig(eps=eps)).value
        b = kpc_rkhs(ds, roles, RkhsConfig(eps=eps * (1 + 1e-7))).value
        assert abs(a - b) <= 1e-3


def test_separate_eps_and_schedule():
    assert eps_schedule(1) == 1e-3
    assert eps_schedule(2000) == pytest.approx(1e-3 * 2000 ** -0.4)
    ds, xcols, *_ = _gaussian_data(3)
    roles = VariableRoles.of(ds, "y", "z", xcols)
    est = kpc_rkhs(ds, roles, RkhsConfig(eps=eps_schedule, eps_xz=2e-3))
    assert est.diagnostics["eps"] == eps_schedule(50) and est.diagnostics["eps_xz"] == 2e-3


def _model_i_means(fn, reps=200, n=2000):
    vals = []
    for r in range(reps):
        ds = simulate(SimModel("model_I", n, seed=r))
        cfg = RkhsConfig(eps=eps_schedule, kernel_y=LIN, kernel_x=LIN, kernel_xz=LIN, lowrank=LowRank(tol=1e-12))
        vals.append(fn(ds, VariableRoles.of(ds, "y", "z", "x"), cfg).value)
    return float(np.mean(vals))


@pytest.mark.slow
def test_model_i_linear_kernels_schedule():
    # linear Gram matrices have rank <= 2, so the factor path is exact here
    assert _model_i_means(kpc_rkhs) == pytest.approx(0.5, abs=0.05)


@pytest.mark.slow
def test_model_i_uncentered_is_biased():
    assert abs(_model_i_means(kpc_rkhs_uncentered, reps=50) - 0.5) > 0.05


@pytest.mark.slow
def test_lowrank_speedup():
    rng = np.random.default_rng(0)
    n = 4000
    x, z = rng.standard_normal((2, n))
    ds = Dataset.from_arrays({"x": x, "z": z, "y": x + z + rng.standard_normal(n)})
    roles = VariableRoles.of(ds, "y", "z", "x")
    base = dict(kernel_y=KernelSpec.gaussian(1.0), kernel_x=KernelSpec.gaussian(1.0), kernel_xz=KernelSpec.gaussian(1.0))
    t = time.perf_counter()
    kpc_rkhs(ds, roles, RkhsConfig(**base))
    dense = time.perf_counter() - t
    t = time.perf_counter()
    kpc_rkhs_lowrank(ds, roles, RkhsConfig(**base, lowrank=LowRank(tol=None, max_rank=50)))
    low = time.perf_counter() - t
    assert dense >= 10 * low
