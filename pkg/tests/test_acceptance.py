"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in an "acceptance criteria" section at the end of the session.
"""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from sklearn.kernel_ridge import KernelRidge

from kpc import Dataset, GraphSpec, KernelSpec, LowRank, RkhsConfig, VariableRoles, kpc_graph
from kpc.graph_estimator import GraphConfig
from kpc.inference import KnockoffInput, knockoff_select, knockoff_threshold, knockoff_w
from kpc.kernels import FAMILIES, gram_matrix
from kpc.oracle import (DiscreteJoint, azadkia_chatterjee_t, classical_partial_correlation, monotonicity_probe,
                        population_rho2)
from kpc.rkhs import (center_gram, kpc_rkhs, kpc_rkhs_lowrank, kpc_rkhs_uncentered, regularized_hat,
                      regularized_resolvent)
from kpc.rng import stream
from kpc.simulate import ExperimentPlan, SimModel, run_experiment, simulate

MODEL_II_TRUTH = (2 * math.sqrt(6) + 2 * math.sqrt(3) - 3 * math.sqrt(2) - 3) / 3
LIN = KernelSpec("linear")
DISCRETE = KernelSpec("discrete")


def _graph_means(model, n, reps, k, kernel, seed=0):
    vals = []
    for r in range(reps):
        ds = simulate(SimModel(model, n, seed=seed * 100_000 + r))
        vals.append(kpc_graph(ds, VariableRoles.of(ds, "y", "z", "x"), kernel, GraphSpec(k=k, seed=r)).value)
    return float(np.mean(vals))


def test_criterion_01_model_i(verdict):
    mean = _graph_means("model_I", 500, 200, 2, LIN)
    assert verdict(1, abs(mean - 0.5) <= 0.05, f"model I, 2-NN linear kernel, n=500, R=200: mean {mean:.4f} (target 0.5 +/- 0.05)")


def test_criterion_02_model_ii(verdict):
    mean = _graph_means("model_II", 1000, 200, 2, DISCRETE)
    ok = abs(mean - 0.37) <= 0.05
    assert verdict(2, ok, f"model II, 2-NN discrete kernel, n=1000, R=200: mean {mean:.4f} "
                          f"(target 0.37 +/- 0.05; exact value {MODEL_II_TRUTH:.5f})")


def test_criterion_03_model_iii(verdict):
    kernel = KernelSpec.gaussian_coef(5.0)
    m1 = _graph_means("model_III", 1000, 100, 1, kernel)
    m2 = _graph_means("model_III", 1000, 100, 2, kernel)
    ok = m1 >= 0.9 and m2 >= 0.9
    assert verdict(3, ok, f"model III, Gaussian exp(-5 d^2), n=1000, R=100: 1-NN {m1:.4f}, 2-NN {m2:.4f} (need >= 0.90)")


def test_criterion_04_rotation_models(verdict):
    so3 = KernelSpec("so3")
    m4 = _graph_means("model_IV_so3", 1000, 100, 1, so3)
    m5 = _graph_means("model_V_so3", 1000, 100, 1, so3)
    ok = m4 >= 0.9 and m5 <= 0.1
    assert verdict(4, ok, f"SO(3) models, 1-NN so3 kernel, n=1000, R=100: model IV {m4:.4f} (need >= 0.90), "
                          f"model V {m5:.4f} (need <= 0.10)")


def test_criterion_05_linear_kernel_identity(verdict):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        dx = 1 + seed % 3
        x = rng.standard_normal((50, dx))
        z = x @ rng.standard_normal(dx) + rng.standard_normal(50)
        y = x @ rng.standard_normal(dx) + rng.normal() * z + rng.standard_normal(50)
        cols = {f"x{i}": x[:, i] for i in range(dx)}
        ds = Dataset.from_arrays({**cols, "z": z, "y": y})
        est = kpc_rkhs(ds, VariableRoles.of(ds, "y", "z", list(cols)),
                       RkhsConfig(eps=1e-10, kernel_y=LIN, kernel_x=LIN, kernel_xz=LIN))
        worst = max(worst, abs(est.value - classical_partial_correlation(y, z, x) ** 2))
    assert verdict(5, worst <= 1e-6, f"RKHS with linear kernels vs squared partial correlation, 50 datasets: "
                                     f"max error {worst:.2e} (need <= 1e-6)")


def test_criterion_06_uncentered_ridge_identity(verdict):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, eps = 40, 10 ** rng.uniform(-3, -1)
        x, z = rng.standard_normal((2, n))
        y = np.cos(2 * x) * z + 0.3 * rng.standard_normal(n)
        ds = Dataset.from_arrays({"x": x, "z": z, "y": y})
        gx, gxz = rng.uniform(0.2, 2.0, 2)
        cfg = RkhsConfig(eps=eps, kernel_y=LIN, kernel_x=KernelSpec.gaussian_coef(gx),
                         kernel_xz=KernelSpec.gaussian_coef(gxz))
        est = kpc_rkhs_uncentered(ds, VariableRoles.of(ds, "y", "z", "x"), cfg).value
        fx = KernelRidge(alpha=n * eps, kernel="rbf", gamma=gx).fit(x[:, None], y).predict(x[:, None])
        xz = np.c_[x, z]
        fxz = KernelRidge(alpha=n * eps, kernel="rbf", gamma=gxz).fit(xz, y).predict(xz)
        ref = np.sum((fx - fxz) ** 2) / np.sum((fx - y) ** 2)
        worst = max(worst, abs(est - ref))
    assert verdict(6, worst <= 1e-8, f"uncentered estimator vs kernel ridge residual ratio, 20 datasets n=40: "
                                     f"max error {worst:.2e} (need <= 1e-8)")


def test_criterion_07_oracle_equivalence(verdict):
    errors = []
    for i in range(10):
        dj = DiscreteJoint.random(stream(11, "dj", i))
        truth = population_rho2(dj, DISCRETE)
        errs = []
        for r in range(20):
            ds = dj.sample(20000, stream(11, "sample", i, r))
            errs.append(abs(kpc_graph(ds, dj.roles(ds), DISCRETE, GraphSpec(seed=r)).value - truth))
        errors.append(float(np.median(errs)))
    worst = max(errors)
    assert verdict(7, worst <= 0.03, f"graph estimator vs exact population value, 10 laws, n=20000, R=20: "
                                     f"worst median error {worst:.4f} (need <= 0.03)")


def test_criterion_08_cdf_kernel_equivalence(verdict):
    worst = 0.0
    for i in range(10):
        dj = DiscreteJoint.random(stream(11, "dj", i))
        worst = max(worst, abs(population_rho2(dj, KernelSpec("foci_cdf")) - azadkia_chatterjee_t(dj)))
    assert verdict(8, worst <= 1e-12, f"CDF-kernel population value vs direct functional, 10 laws: "
                                      f"max error {worst:.2e} (need <= 1e-12)")


def test_criterion_09_matrix_identities(verdict):
    inv = np.linalg.inv
    worst_mn = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, lam = 60, 60 * 10 ** rng.uniform(-4, -1)
        a, b = rng.standard_normal((n, 6)), rng.standard_normal((n, 15))
        kx, kxz = center_gram(a @ a.T), center_gram(b @ b.T)
        rx, rxz = inv(kx + lam * np.eye(n)), inv(kxz + lam * np.eye(n))
        m = regularized_hat(kx, lam) - regularized_hat(kxz, lam)
        worst_mn = max(worst_mn, np.abs(m - lam * (rxz - rx)).max(),
                       np.abs(regularized_resolvent(kx, lam) - lam * rx).max())
    worst_lr = 0.0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        n = 50
        x, z = rng.standard_normal((2, n))
        ds = Dataset.from_arrays({"x": x, "z": z, "y": np.sin(x) * z + 0.2 * rng.standard_normal(n)})
        roles = VariableRoles.of(ds, "y", "z", "x")
        base = dict(eps=1e-3, kernel_y=KernelSpec.gaussian(1.0), kernel_x=KernelSpec.gaussian(1.0),
                    kernel_xz=KernelSpec.gaussian(1.0))
        dense = kpc_rkhs(ds, roles, RkhsConfig(**base)).value
        low = kpc_rkhs_lowrank(ds, roles, RkhsConfig(**base, lowrank=LowRank(tol=None, max_rank=n))).value
        worst_lr = max(worst_lr, abs(dense - low))
    ok = worst_mn <= 1e-9 and worst_lr <= 1e-8
    assert verdict(9, ok, f"M/N identities on 20 Gram pairs: max error {worst_mn:.2e} (need <= 1e-9); "
                          f"full-rank factor path vs dense: {worst_lr:.2e} (need <= 1e-8)")


def _recovery(model, reps):
    plan = ExperimentPlan(SimModel(model, 200, p=10), "select", "kfoci", {"k": 10}, replications=reps, seed=2024)
    return run_experiment(plan).summary["exact_recovery"]


def test_criterion_10_kfoci_recovery(verdict):
    nonlin1 = _recovery("Nonlin1", 50)
    lm = _recovery("LM", 50)
    ok = nonlin1 >= 0.9 and abs(lm - 0.81) <= 0.15
    assert verdict(10, ok, f"KFOCI 10-NN, n=200, p=10, R=50: Nonlin1 exact recovery {nonlin1:.2f} (need >= 0.90), "
                           f"LM {lm:.2f} (need 0.81 +/- 0.15)")


def _rejection(gamma, reps):
    plan = ExperimentPlan(SimModel("crt_additive", 200, gamma=gamma), "test", "rkhs", {"b": 100, "alpha": 0.05},
                          replications=reps, seed=77)
    return run_experiment(plan).summary["rejection_rate"]


def test_criterion_11_crt_size_and_power(verdict):
    size = _rejection(0.0, 200)
    power = _rejection(1.0, 200)
    ok = 0.02 <= size <= 0.09 and power >= 0.9
    assert verdict(11, ok, f"randomization test, additive model, B=100, R=200, alpha 0.05: size {size:.3f} "
                           f"(need [0.02, 0.09]), power at gamma=1 {power:.3f} (need >= 0.90)")


def test_criterion_12_knockoffs(verdict):
    w = (3.0, -1.0, 2.0, -2.0, 1.0)
    examples = (knockoff_threshold(w, 0.5) == 2.0 and knockoff_select(w, 0.5) == [0, 2]
                and knockoff_select(w, 0.5, plus=True) == [] and knockoff_select([-1.0, -3.0], 0.5) == [])
    rng = np.random.default_rng(9)
    n, p = 80, 5
    x, xk = rng.standard_normal((2, n, p))
    y = x[:, 0] - np.cos(x[:, 1]) + 0.3 * rng.standard_normal(n)
    exact = True
    for stat in (GraphConfig(spec_x=GraphSpec(k=2), spec_xz=GraphSpec(k=2)),
                 RkhsConfig(kernel_x=KernelSpec.gaussian_coef(0.2), kernel_xz=KernelSpec.gaussian_coef(0.2))):
        base = knockoff_w(KnockoffInput(x, xk, y), stat, seed=1)
        for _ in range(20):
            swap = rng.random(p) < 0.5
            xs, xks = x.copy(), xk.copy()
            xs[:, swap], xks[:, swap] = xk[:, swap], x[:, swap]
            w2 = knockoff_w(KnockoffInput(xs, xks, y), stat, seed=1)
            exact &= w2.tobytes() == np.where(swap, -base, base).tobytes()
    assert verdict(12, examples and exact, f"threshold worked examples {'reproduce' if examples else 'differ'}; "
                                           f"flip-sign on 20 swap patterns x 2 statistics "
                                           f"{'bit-exact' if exact else 'NOT exact'}")


def _psd_failures():
    bad = []
    for family in FAMILIES:
        for seed in range(3):
            rng = np.random.default_rng(seed)
            n = 40
            if family == "so3":
                ds, cols = Dataset.from_arrays({"r": Rotation.random(n, random_state=seed).as_matrix()}), ["r"]
            elif family in ("hist_inv", "hist_expsqrt"):
                ds = Dataset.from_arrays({f"h{i}": rng.poisson(3, n).astype(float) for i in range(3)})
                cols = ["h0", "h1", "h2"]
            elif family == "discrete":
                ds, cols = Dataset.from_arrays({"c": rng.integers(0, 4, n).astype(float)}), ["c"]
            elif family == "foci_cdf":
                ds, cols = Dataset.from_arrays({"y": rng.standard_normal(n)}), ["y"]
            else:
                ds, cols = Dataset.from_arrays({"a": rng.standard_normal(n), "b": rng.standard_normal(n)}), ["a", "b"]
            ev = np.linalg.eigvalsh(gram_matrix(KernelSpec(family), ds, cols))
            if ev.min() < -1e-9 * max(ev.max(), 1.0):
                bad.append(f"{family}(min eig {ev.min():.3g})")
                break
    return bad


def _property_failures():
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        k = rng.standard_normal((30, 30))
        c = center_gram(k @ k.T)
        if np.abs(c.sum(axis=1)).max() > 1e-9 * np.abs(k @ k.T).max():
            failures.append("centering row sums")
            break
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n = 60
        x, z = rng.standard_normal((2, n))
        y = np.c_[x * z, x + z, rng.standard_normal(n)]
        ds = Dataset.from_arrays({"x": x, "z": z, **{f"y{i}": y[:, i] for i in range(3)}})
        roles = VariableRoles.of(ds, ["y0", "y1", "y2"], "z", "x")
        a = kpc_graph(ds, roles, spec_x=GraphSpec(k=2)).value
        perm = rng.permutation(n)
        if abs(kpc_graph(ds.take(perm), roles, spec_x=GraphSpec(k=2)).value - a) > 1e-12:
            failures.append("graph permutation invariance")
            break
        if abs(kpc_rkhs(ds.take(perm), roles).value - kpc_rkhs(ds, roles).value) > 1e-10:
            failures.append("RKHS permutation invariance")
            break
        q = Rotation.random(random_state=seed).as_matrix()
        y2 = y @ q.T + 3.0
        ds2 = ds.replace({f"y{i}": y2[:, i] for i in range(3)})
        if abs(kpc_graph(ds2, roles, spec_x=GraphSpec(k=2)).value - a) > 1e-12:
            failures.append("isometry invariance")
            break
    parcor = monotonicity_probe("gaussian_parcor", [0.0, 0.3, 0.6, 0.9], reps=4)
    if not all(b.estimate - a.estimate > 2 * math.hypot(a.se, b.se) for a, b in zip(parcor, parcor[1:])):
        failures.append("partial-correlation monotonicity")
    mix = monotonicity_probe("lambda_mixture", [0.0, 0.5, 1.0], reps=4)
    if not all(b.estimate >= a.estimate - 2 * math.hypot(a.se, b.se) for a, b in zip(mix, mix[1:])):
        failures.append("mixture monotonicity")
    return failures


def test_criterion_13_property_suites(verdict):
    psd = _psd_failures()
    other = _property_failures()
    detail = "kernel PSD, centering, permutation and isometry invariance, monotonicity probes: "
    if psd:
        detail += "PSD fails for " + ", ".join(psd) + "; "
    detail += ("other properties hold" if not other else "failing: " + ", ".join(other))
    assert verdict(13, not psd and not other, detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-rN"]))
