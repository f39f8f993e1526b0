"""Conditional randomization tests and knockoff selection with KPC statistics.

The randomization test compares a statistic on the observed data with the
same statistic on copies where Z is redrawn from its known conditional law
given X:

    p = (1 + #{j : T_j >= T}) / (1 + B).

Knockoff selection scores feature ``j`` by

    W_j = rho2(Y, X_j | X_-j, Xk) - rho2(Y, Xk_j | X, Xk_-j)

and keeps the features with ``W_j`` above a data-dependent threshold. The
statistic is arranged so that swapping ``X_j`` with its knockoff negates
``W_j`` exactly, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .data import NUMERIC, ROTATION, Column, Dataset, VariableRoles
from .errors import AsymmetricConfig, ConfigError, NotPositiveDefinite, SizeMismatch
from .graph_estimator import GraphConfig, GraphStatistic
from .graphs import GraphSpec
from .kernels import KernelSpec, kernel_points
from .rkhs import RkhsConfig, RkhsStatistic, kpc_rkhs
from .rng import child_seed, stream


# ------------------------------------------------------------------ samplers


class ConditionalSampler(Protocol):
    """Draws Z given X, one independent draw per row of ``x``."""

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


@dataclass(frozen=True)
class GaussianLinearSampler:
    """``Z = intercept + x @ coef + sd * N(0, 1)``."""

    coef: tuple = (1.0,)
    intercept: float = 0.0
    sd: float = 1.0

    def sample(self, x, rng):
        x = np.asarray(x, float).reshape(len(x), -1)
        mean = self.intercept + x @ np.asarray(self.coef, float)
        return mean + self.sd * rng.standard_normal(len(x))

    @classmethod
    def fit(cls, x: np.ndarray, z: np.ndarray) -> "GaussianLinearSampler":
        """Least-squares plug-in estimate (useful when the law is only approximately known)."""
        x = np.asarray(x, float).reshape(len(z), -1)
        design = np.column_stack([np.ones(len(z)), x])
        beta, *_ = np.linalg.lstsq(design, z, rcond=None)
        resid = z - design @ beta
        sd = float(np.sqrt(resid @ resid / max(len(z) - design.shape[1], 1)))
        return cls(tuple(float(b) for b in beta[1:]), float(beta[0]), sd)


@dataclass(frozen=True)
class UniformShiftSampler:
    """``Z = slope * x + U(-halfwidth, halfwidth)`` for scalar x."""

    halfwidth: float = 1.0
    slope: float = 1.0

    def sample(self, x, rng):
        x = np.asarray(x, float).reshape(len(x), -1)[:, 0]
        return self.slope * x + rng.uniform(-self.halfwidth, self.halfwidth, len(x))


@dataclass(frozen=True)
class NormalScaleSampler:
    """``Z = x * N(0, 1)`` for scalar x."""

    def sample(self, x, rng):
        x = np.asarray(x, float).reshape(len(x), -1)[:, 0]
        return x * rng.standard_normal(len(x))


@dataclass(frozen=True)
class FunctionSampler:
    """Wrap a function ``(x, rng) -> z``."""

    fn: Callable[[np.ndarray, np.random.Generator], np.ndarray]

    def sample(self, x, rng):
        return np.asarray(self.fn(x, rng))


# ------------------------------------------------------------------ CRT


def default_crt_config() -> RkhsConfig:
    """RKHS statistic with ``exp(-d^2)`` kernels on Y and X, ``exp(-d^2 / 2)`` on (X, Z), eps 1e-3."""
    return RkhsConfig(
        eps=1e-3,
        kernel_y=KernelSpec.gaussian_coef(1.0),
        kernel_x=KernelSpec.gaussian_coef(1.0),
        kernel_xz=KernelSpec.gaussian_coef(0.5),
    )


def make_statistic(ds: Dataset, roles: VariableRoles, stat=None):
    """Build a reusable statistic object exposing ``estimate(ds)``."""
    if stat is None or stat == "rkhs":
        return RkhsStatistic(ds, roles, default_crt_config())
    if stat == "graph":
        stat = GraphConfig()
    if isinstance(stat, RkhsConfig):
        if stat.lowrank is not None:
            raise ConfigError("the randomization test uses the dense RKHS path")
        return RkhsStatistic(ds, roles, stat)
    if isinstance(stat, GraphConfig):
        return GraphStatistic(ds, roles, stat.kernel, stat.spec_x, stat.spec_xz, stat.metric, stat.clamp)
    raise ConfigError(f"unknown statistic {stat!r}")


@dataclass
class CrtResult:
    pvalue: float
    statistic: float
    null_statistics: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    @property
    def b(self) -> int:
        return len(self.null_statistics)

    def to_dict(self) -> dict:
        return {"pvalue": self.pvalue, "statistic": self.statistic, "b": self.b}


def crt_pvalue_from(observed: float, null_stats: Sequence[float]) -> float:
    """``(1 + #{T_j >= T}) / (1 + B)``."""
    null_stats = np.asarray(null_stats, dtype=float)
    return float((1 + np.count_nonzero(null_stats >= observed)) / (1 + len(null_stats)))


def crt(ds: Dataset, roles: VariableRoles, sampler: ConditionalSampler, b: int = 100,
        stat=None, seed: int = 0) -> CrtResult:
    """Conditional randomization test of ``Y independent of Z given X``.

    Parameters
    ----------
    sampler : ConditionalSampler
        Exact law of Z given X; receives the X block as an ``(n, d)`` matrix.
    b : int
        Number of resamples; ``b = 0`` gives ``p = 1``.
    stat : {"rkhs", "graph"} or RkhsConfig or GraphConfig, optional
        Statistic; RKHS with fixed Gaussian kernels by default.
    seed : int
        Resample ``j`` draws from the stream ``(seed, j)``.
    """
    if b < 0:
        raise ConfigError("the number of resamples must be nonnegative")
    if len(roles.z_cols) != 1 or ds.columns[roles.z_cols[0]].kind != NUMERIC:
        raise ConfigError("the randomization test resamples a single numeric Z column")
    statistic = make_statistic(ds, roles, stat)
    observed = statistic.estimate(ds).value
    x = ds.numeric_block(roles.x_cols)
    zcol = roles.z_cols[0]
    nulls = np.empty(b)
    for j in range(b):
        z = np.asarray(sampler.sample(x, stream(seed, "crt", j)), dtype=float).ravel()
        if len(z) != ds.n:
            raise SizeMismatch(f"sampler returned {len(z)} draws for {ds.n} rows")
        nulls[j] = statistic.estimate(ds.replace({zcol: z})).value
    return CrtResult(crt_pvalue_from(observed, nulls), float(observed), nulls)


def crt_pvalue(ds: Dataset, roles: VariableRoles, stat, sampler: ConditionalSampler, b: int, seed: int = 0) -> float:
    """p-value of :func:`crt`."""
    return crt(ds, roles, sampler, b, stat, seed).pvalue


# ------------------------------------------------------------------ knockoffs


@dataclass(frozen=True, eq=False)
class KnockoffInput:
    """Original features, their knockoffs, the response and the target FDR level.

    ``y`` is an ``(n,)`` or ``(n, d)`` numeric array or an ``(n, 3, 3)``
    array of rotations.
    """

    x: np.ndarray
    x_knock: np.ndarray
    y: np.ndarray
    q: float = 0.1

    def __post_init__(self):
        x = np.asarray(self.x, float)
        xk = np.asarray(self.x_knock, float)
        if x.ndim != 2 or x.shape != xk.shape:
            raise SizeMismatch(f"features {x.shape} and knockoffs {xk.shape} must be equal-shape matrices")
        if len(np.asarray(self.y)) != len(x):
            raise SizeMismatch("response length differs from the feature rows")
        if not 0 < self.q < 1:
            raise ConfigError("q must lie in (0, 1)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_knock", xk)


def _response_columns(y: np.ndarray) -> list[Column]:
    y = np.asarray(y)
    if y.ndim == 3:
        return [Column("y", ROTATION, y)]
    y = np.asarray(y, float)
    if y.ndim == 1:
        return [Column("y", NUMERIC, y)]
    return [Column(f"y{i}", NUMERIC, y[:, i]) for i in range(y.shape[1])]


def _ordered_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order two columns by content so a swap produces the same layout."""
    return (a, b) if a.tobytes() <= b.tobytes() else (b, a)


def _term_dataset(x: np.ndarray, xk: np.ndarray, j: int, keep: np.ndarray, target: np.ndarray,
                  y_cols: list[Column]) -> Dataset:
    cols = []
    for k in range(x.shape[1]):
        if k == j:
            cols.append(keep)
        else:
            cols.extend(_ordered_pair(x[:, k], xk[:, k]))
    columns = [Column(f"c{i}", NUMERIC, c) for i, c in enumerate(cols)]
    columns.append(Column("target", NUMERIC, target))
    return Dataset(tuple(columns + y_cols))


def _check_symmetric(stat) -> None:
    if isinstance(stat, RkhsConfig):
        for name in ("kernel_x", "kernel_xz"):
            k = getattr(stat, name)
            if not isinstance(k, KernelSpec) or not k.resolved:
                raise AsymmetricConfig(
                    f"{name} needs an explicit kernel with a fixed bandwidth; a data-driven rule "
                    "would differ between the two conditioning sets"
                )
    elif isinstance(stat, GraphConfig):
        m = stat.metric
        if m is not None and (m.family not in ("product", "euclidean") or
                              (m.weights is not None and len(set(m.weights)) > 1)):
            raise AsymmetricConfig("knockoff graphs need a metric that weights all columns equally")
    else:
        raise ConfigError(f"unknown statistic {stat!r}")


def knockoff_w(ki: KnockoffInput, stat: GraphConfig | RkhsConfig | None = None, seed: int = 0) -> np.ndarray:
    """Feature statistics ``W_j`` with the flip-sign property.

    Both terms of ``W_j`` are evaluated on identically laid out data
    (each feature/knockoff pair ordered by content), share the Y kernel
    resolved once on Y, and use graph seeds that depend only on ``j``.

    Parameters
    ----------
    stat : GraphConfig or RkhsConfig, optional
        Graph estimator with a Gaussian median-bandwidth Y kernel and
        directed 1-NN graphs by default. RKHS configurations must fix the
        X-side bandwidths explicitly.

    Raises
    ------
    AsymmetricConfig
        The configuration would treat a feature and its knockoff differently.
    """
    stat = GraphConfig() if stat is None else stat
    _check_symmetric(stat)
    x, xk = ki.x, ki.x_knock
    y_cols = _response_columns(ki.y)
    probe = Dataset(tuple(y_cols))
    y_idx = tuple(range(len(y_cols)))
    p = x.shape[1]
    w = np.empty(p)
    for j in range(p):
        sj = child_seed(seed, "knockoff", j)
        terms = []
        for target, keep in ((x[:, j], xk[:, j]), (xk[:, j], x[:, j])):
            ds = _term_dataset(x, xk, j, keep, target, y_cols)
            m = 2 * p - 1
            roles = VariableRoles(tuple(m + 1 + i for i in y_idx), (m,), tuple(range(m)))
            if isinstance(stat, GraphConfig):
                ky = stat.kernel or KernelSpec.gaussian()
                ky = ky.resolve(kernel_points(ky, probe, y_idx))
                spec_x = replace(stat.spec_x or GraphSpec(), seed=sj)
                spec_xz = replace(stat.spec_xz or stat.spec_x or GraphSpec(), seed=sj)
                est = GraphStatistic(ds, roles, ky, spec_x, spec_xz, stat.metric).estimate(ds)
            else:
                ky = stat.kernel_y or KernelSpec.gaussian()
                ky = ky.resolve(kernel_points(ky, probe, y_idx))
                est = kpc_rkhs(ds, roles, replace(stat, kernel_y=ky, clamp=False))
            terms.append(est.value)
        w[j] = terms[0] - terms[1]
    return w


def knockoff_threshold(w: Sequence[float], q: float, plus: bool = False) -> float:
    """Smallest ``t`` among ``{|W_j| : W_j != 0}`` with estimated FDP at most ``q``.

    The estimate is ``#{W <= -t} / #{W >= t}``, with one added to the
    numerator when ``plus`` is set. Returns ``inf`` when no ``t`` qualifies.
    """
    if not 0 < q < 1:
        raise ConfigError("q must lie in (0, 1)")
    w = np.asarray(w, dtype=float)
    for t in np.unique(np.abs(w[w != 0])):
        pos = np.count_nonzero(w >= t)
        if pos == 0:
            continue
        neg = np.count_nonzero(w <= -t)
        if (neg + (1 if plus else 0)) / pos <= q:
            return float(t)
    return float("inf")


def knockoff_select(w: Sequence[float], q: float, plus: bool = False) -> list[int]:
    """Indices ``j`` (0-based) with ``W_j`` at or above :func:`knockoff_threshold`."""
    tau = knockoff_threshold(w, q, plus)
    if not np.isfinite(tau):
        return []
    return [int(j) for j in np.flatnonzero(np.asarray(w, float) >= tau)]


def gaussian_knockoffs(x: np.ndarray, mean: np.ndarray, cov: np.ndarray, seed: int = 0) -> np.ndarray:
    """Equicorrelated Gaussian knockoffs for rows of ``x`` drawn from ``N(mean, cov)``.

    With ``s_j = min(2 lambda_min(C), 1) * sigma_j^2`` (``C`` the correlation
    matrix), each knockoff row is drawn from
    ``N(x - diag(s) cov^-1 (x - mean), 2 diag(s) - diag(s) cov^-1 diag(s))``.

    Raises
    ------
    NotPositiveDefinite
        ``cov`` is not positive definite.
    """
    x = np.asarray(x, float)
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    p = cov.shape[0]
    if cov.shape != (p, p) or x.shape[1] != p or mean.shape != (p,):
        raise SizeMismatch("shapes of x, mean and cov disagree")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("covariance is not positive definite") from None
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    s = min(2.0 * float(np.linalg.eigvalsh(corr).min()), 1.0) * sd ** 2
    # cov^-1 diag(s) via the Cholesky factor
    inv_s = np.linalg.solve(chol.T, np.linalg.solve(chol, np.diag(s)))
    cond_mean = x - (x - mean) @ inv_s
    cond_cov = 2.0 * np.diag(s) - np.diag(s) @ inv_s
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    vals, vecs = np.linalg.eigh(cond_cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    rng = stream(seed, "knockoffs")
    return cond_mean + rng.standard_normal(x.shape) @ root.T
