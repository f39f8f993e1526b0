"""Reference values: exact population coefficients and classical partial correlation.

For a finite joint law of (X, Y, Z) the population coefficient

    rho^2 = (E E[k(Y2, Y2') | X, Z] - E E[k(Y1, Y1') | X])
            / (E k(Y, Y) - E E[k(Y1, Y1') | X])

is a finite sum: ``E E[k(Y1, Y1') | X]`` pairs two independent draws of Y
from the same conditional law given X. Sums use :func:`math.fsum`.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, VariableRoles
from .errors import ConfigError, DegenerateY, RankDeficient, TypeMismatch
from .graph_estimator import kpc_graph
from .graphs import GraphSpec
from .kernels import KernelSpec, gram
from .rng import stream

PROB_TOL = 1e-12
DEGENERATE_TOL = 1e-14
RESIDUAL_RTOL = 1e-10


def _atom(v) -> tuple:
    return tuple(float(t) for t in np.atleast_1d(np.asarray(v, dtype=float)).ravel())


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Finitely supported law of (X, Y, Z).

    Parameters
    ----------
    support : sequence of (x, y, z)
        Atoms; each component is a number or a tuple of numbers.
    probs : sequence of float
        Positive probabilities summing to one.
    """

    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        atoms = tuple((_atom(x), _atom(y), _atom(z)) for x, y, z in self.support)
        probs = np.asarray(self.probs, dtype=float)
        if len(atoms) != len(probs) or not atoms:
            raise ConfigError("support and probs must be non-empty and of equal length")
        if np.any(probs <= 0):
            raise ConfigError("probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ConfigError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        if len(set(atoms)) != len(atoms):
            raise ConfigError("atoms must be distinct")
        object.__setattr__(self, "support", atoms)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def random(cls, rng: np.random.Generator, n_x: int = 2, n_y: int = 3, n_z: int = 2,
               concentration: float = 1.0) -> "DiscreteJoint":
        """Full grid of ``n_x * n_y * n_z`` atoms with Dirichlet probabilities."""
        grid = [(x, y, z) for x in range(n_x) for y in range(n_y) for z in range(n_z)]
        p = rng.dirichlet(np.full(len(grid), concentration))
        p = np.maximum(p, 1e-3)
        p /= p.sum()
        # absorb rounding in the last atom so the float sum is 1
        p[-1] = 1.0 - math.fsum(p[:-1])
        return cls(tuple(grid), p)

    def marginal_y(self) -> tuple[np.ndarray, np.ndarray]:
        acc: dict = defaultdict(list)
        for (_, y, _), p in zip(self.support, self.probs):
            acc[y].append(p)
        ys = sorted(acc)
        return np.array(ys), np.array([math.fsum(acc[y]) for y in ys])

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """``n`` i.i.d. draws as a dataset with columns x*, y*, z*."""
        idx = rng.choice(len(self.probs), size=n, p=self.probs / self.probs.sum())
        data = {}
        for pos, label in enumerate("xyz"):
            comp = np.array([self.support[i][pos] for i in idx])
            if comp.shape[1] == 1:
                data[label] = comp[:, 0]
            else:
                for j in range(comp.shape[1]):
                    data[f"{label}{j}"] = comp[:, j]
        return Dataset.from_arrays(data, kinds={k: "numeric" for k in data})

    def roles(self, ds: Dataset) -> VariableRoles:
        def cols(label):
            return [nm for nm in ds.names if nm == label or (nm[0] == label and nm[1:].isdigit())]

        return VariableRoles.of(ds, cols("y"), cols("z"), cols("x"))


def _kernel_table(dj: DiscreteJoint, kernel: KernelSpec) -> tuple[dict, np.ndarray]:
    ys = sorted({a[1] for a in dj.support})
    index = {y: i for i, y in enumerate(ys)}
    pts = np.array(ys)
    if kernel.family == "foci_cdf":
        if kernel.reference is None:
            ref, w = dj.marginal_y()
            kernel = KernelSpec("foci_cdf", reference=ref[:, 0], weights=w)
        pts = pts[:, 0]
    elif kernel.family in ("discrete",):
        pts = np.arange(len(ys))
    elif kernel.family == "so3":
        raise TypeMismatch("discrete joints carry numeric atoms; so3 is not supported")
    elif not kernel.resolved:
        raise TypeMismatch("population values need a kernel with a fixed bandwidth")
    return index, gram(kernel, pts)


def _conditional_pair_mean(dj: DiscreteJoint, key: Callable, index: dict, table: np.ndarray) -> float:
    """``E E[k(Y, Y') | key(atom)]`` with Y, Y' independent given the key."""
    groups: dict = defaultdict(list)
    for atom, p in zip(dj.support, dj.probs):
        groups[key(atom)].append((index[atom[1]], p))
    terms = []
    for members in groups.values():
        mass = math.fsum(p for _, p in members)
        inner = math.fsum(pa * pb * table[a, b] for a, pa in members for b, pb in members)
        terms.append(inner / mass)
    return math.fsum(terms)


def population_terms(dj: DiscreteJoint, kernel: KernelSpec) -> dict:
    """The three expectations entering the population coefficient."""
    index, table = _kernel_table(dj, kernel)
    diag = math.fsum(p * table[index[a[1]], index[a[1]]] for a, p in zip(dj.support, dj.probs))
    given_x = _conditional_pair_mean(dj, lambda a: a[0], index, table)
    given_xz = _conditional_pair_mean(dj, lambda a: (a[0], a[2]), index, table)
    return {"diag": diag, "given_x": given_x, "given_xz": given_xz}


def population_rho2(dj: DiscreteJoint, kernel: KernelSpec) -> float:
    """Exact population coefficient of a finite joint law.

    A ``foci_cdf`` kernel without a reference sample uses the marginal law
    of Y as its reference measure.

    Raises
    ------
    DegenerateY
        Y is a function of X, so the denominator vanishes.
    """
    t = population_terms(dj, kernel)
    den = t["diag"] - t["given_x"]
    if den <= DEGENERATE_TOL:
        raise DegenerateY("Y is a deterministic function of X under this law")
    return (t["given_xz"] - t["given_x"]) / den


def azadkia_chatterjee_t(dj: DiscreteJoint) -> float:
    """Conditional dependence functional of Azadkia and Chatterjee for scalar Y.

    ``T = int E[Var(P(Y >= t | X, Z) | X)] dP_Y(t) / int E[Var(1{Y >= t} | X)] dP_Y(t)``,
    enumerated over the support.
    """
    if any(len(a[1]) != 1 for a in dj.support):
        raise TypeMismatch("the functional needs scalar Y")
    ts, wt = dj.marginal_y()
    ts = ts[:, 0]
    px: dict = defaultdict(float)
    pxz: dict = defaultdict(float)
    for (x, _, z), p in zip(dj.support, dj.probs):
        px[x] += p
        pxz[(x, z)] += p
    num_terms, den_terms = [], []
    for t, w in zip(ts, wt):
        # P(Y >= t | x, z) and P(Y >= t | x)
        up_xz: dict = defaultdict(float)
        up_x: dict = defaultdict(float)
        for (x, y, z), p in zip(dj.support, dj.probs):
            if y[0] >= t:
                up_xz[(x, z)] += p
                up_x[x] += p
        for x, mx in px.items():
            g_x = up_x[x] / mx
            # Var of P(Y >= t | X, Z) given X = x
            second = math.fsum((up_xz[k] / m) ** 2 * (m / mx) for k, m in pxz.items() if k[0] == x)
            num_terms.append(w * mx * (second - g_x ** 2))
            den_terms.append(w * mx * g_x * (1.0 - g_x))
    den = math.fsum(den_terms)
    if den <= DEGENERATE_TOL:
        raise DegenerateY("Y is a deterministic function of X under this law")
    return math.fsum(num_terms) / den


def classical_partial_correlation(y, z, x=None) -> float:
    """Correlation of the OLS residuals of Y and Z after regressing on [1, X].

    Raises
    ------
    RankDeficient
        The design ``[1, X]`` or a residual vector is degenerate.
    """
    y = np.asarray(y, float).ravel()
    z = np.asarray(z, float).ravel()
    n = len(y)
    x = np.empty((n, 0)) if x is None else np.asarray(x, float).reshape(n, -1)
    design = np.column_stack([np.ones(n), x])
    if np.linalg.matrix_rank(design) < design.shape[1] or n <= design.shape[1]:
        raise RankDeficient("design matrix [1, X] is rank deficient")
    q, _ = np.linalg.qr(design)
    ry = y - q @ (q.T @ y)
    rz = z - q @ (q.T @ z)
    ny, nz = np.linalg.norm(ry), np.linalg.norm(rz)
    # residuals at rounding level mean an exact linear fit
    if ny <= RESIDUAL_RTOL * max(np.linalg.norm(y), 1.0) or nz <= RESIDUAL_RTOL * max(np.linalg.norm(z), 1.0):
        raise RankDeficient("a response is an exact linear function of X")
    return float(ry @ rz / (ny * nz))


def gaussian_partial_correlation(r_yz: float, r_yx: float, r_zx: float) -> float:
    """Partial correlation of Y and Z given scalar X from pairwise correlations."""
    return (r_yz - r_yx * r_zx) / math.sqrt((1 - r_yx ** 2) * (1 - r_zx ** 2))


# ------------------------------------------------------------------ Monte Carlo probes


@dataclass
class ProbePoint:
    param: float
    estimate: float
    se: float
    draws: list = field(default_factory=list)


def _gaussian_parcor(param: float, n: int, rng) -> Dataset:
    """Var(Y | X) = 1 for every param; partial correlation of (Y, Z) given X equals param."""
    x = rng.standard_normal(n)
    ez = rng.standard_normal(n)
    z = 0.5 * x + ez
    y = 0.5 * x + param * ez + math.sqrt(max(1.0 - param ** 2, 0.0)) * rng.standard_normal(n)
    return Dataset.from_arrays({"x": x, "z": z, "y": y})


def _lambda_mixture(param: float, n: int, rng, noise_sd: float) -> Dataset:
    """Y = (1 - lam) g(X) + lam f(X, Z) + noise with g(x) = sin(x), f(x, z) = x + 2 z."""
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    y = (1 - param) * np.sin(x) + param * (x + 2 * z) + noise_sd * rng.standard_normal(n)
    return Dataset.from_arrays({"x": x, "z": z, "y": y})


def monotonicity_probe(family: str, grid: Sequence[float], kernel: KernelSpec | None = None,
                       n: int = 100_000, reps: int = 4, seed: int = 0, k: int = 1,
                       noise_sd: float = 1.0) -> list[ProbePoint]:
    """Large-sample graph estimates of the population coefficient along a curve.

    Parameters
    ----------
    family : {"gaussian_parcor", "lambda_mixture"}
        ``gaussian_parcor`` varies the partial correlation of a Gaussian
        triple with fixed conditional variance; ``lambda_mixture`` moves Y
        from a function of X alone (``lam = 0``) towards a function of
        (X, Z) (``lam = 1``).
    grid : sorted sequence of float
    kernel : KernelSpec, optional
        Y kernel, Gaussian with unit bandwidth by default.
    reps : int
        Replications per grid point; ``se`` is their standard error.
    noise_sd : float
        Noise level of ``lambda_mixture``.
    """
    grid = list(grid)
    if grid != sorted(grid):
        raise ConfigError("grid must be sorted")
    if family not in ("gaussian_parcor", "lambda_mixture"):
        raise ConfigError(f"unknown probe family {family!r}")
    kernel = kernel or KernelSpec.gaussian(1.0)
    out = []
    for gi, param in enumerate(grid):
        draws = []
        for r in range(reps):
            rng = stream(seed, "probe", family, gi, r)
            if family == "gaussian_parcor":
                ds = _gaussian_parcor(param, n, rng)
            else:
                ds = _lambda_mixture(param, n, rng, noise_sd)
            roles = VariableRoles.of(ds, "y", "z", "x")
            spec = GraphSpec(k=k, seed=r)
            draws.append(kpc_graph(ds, roles, kernel, spec).value)
        se = float(np.std(draws, ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
        out.append(ProbePoint(float(param), float(np.mean(draws)), se, draws))
    return out
