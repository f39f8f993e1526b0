"""RKHS estimator of the kernel partial correlation coefficient.

With centered Gram matrices ``Kc = H K H`` (``H = I - 11^T/n``) and
regularization ``lam = n * eps``,

    A_X  = Kc_X  (Kc_X  + lam I)^-1
    A_XZ = Kc_XZ (Kc_XZ + lam I)^-1
    M = A_X - A_XZ,   N = I - A_X
    rho2_tilde = tr(M Kc_Y M) / tr(N Kc_Y N).

With an empty X, ``M = A_Z`` and ``N = I``. The uncentered variant uses the
raw Gram matrices throughout. Every inverse is applied through a Cholesky
factorization of ``Kc + lam I``.

The low-rank path replaces each Gram matrix by an incomplete Cholesky factor
``K ~ L L^T`` and applies the Woodbury identity, so that
``Kc (Kc + lam I)^-1 = Lc (lam I_d + Lc^T Lc)^-1 Lc^T`` costs ``O(n d^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import Dataset, VariableRoles
from .errors import ConfigError, DegenerateDenominator, NegativeDiagonal, NonPsdGram
from .graph_estimator import KpcEstimate, finish_estimate
from .kernels import KernelSpec, diag_values, gram, kernel_points

DENOMINATOR_TOL = 1e-12
DEFAULT_EPS = 1e-3
ICD_REL_TOL = 1e-6
# allowed excess of the factor's diagonal over the kernel diagonal, relative to max diag
ICD_SLACK = 1e-9

GramFunction = Callable[[Dataset, tuple, tuple], np.ndarray]
KernelLike = Union[KernelSpec, GramFunction]


def eps_schedule(n: int) -> float:
    """Sample-size dependent regularization ``1e-3 * n ** -0.4``."""
    return 1e-3 * n ** -0.4


@dataclass(frozen=True)
class LowRank:
    """Stopping rule for incomplete Cholesky factors.

    ``tol`` is a trace residual relative to ``trace(K)``; ``max_rank`` caps the
    number of columns. Either or both may be set.
    """

    tol: float | None = ICD_REL_TOL
    max_rank: int | None = None

    def __post_init__(self):
        if self.max_rank is not None and self.max_rank < 1:
            raise ConfigError("low-rank max_rank must be at least 1")
        if self.tol is not None and self.tol < 0:
            raise ConfigError("low-rank tolerance must be nonnegative")


@dataclass(frozen=True, eq=False)
class RkhsConfig:
    """Settings of the RKHS estimator.

    Parameters
    ----------
    eps : float or callable
        Regularization for the X side; a callable receives ``n``.
    eps_xz : float or callable, optional
        Regularization for the (X, Z) side; defaults to ``eps``.
    kernel_y, kernel_x, kernel_xz : KernelSpec, optional
        Gaussian with median bandwidth when omitted. ``kernel_xz`` may also be
        a function ``(ds, x_cols, z_cols) -> Gram matrix`` (dense path only).
    centered : bool
        Use centered Gram matrices.
    lowrank : LowRank, optional
        Use incomplete Cholesky factors instead of dense Gram matrices.
    clamp : bool
        Clip the reported value at 1.
    """

    eps: float | Callable[[int], float] = DEFAULT_EPS
    eps_xz: float | Callable[[int], float] | None = None
    kernel_y: KernelSpec | None = None
    kernel_x: KernelSpec | None = None
    kernel_xz: KernelLike | None = None
    centered: bool = True
    lowrank: LowRank | None = None
    clamp: bool = False

    def eps_values(self, n: int) -> tuple[float, float]:
        def get(e):
            return float(e(n) if callable(e) else e)

        e1 = get(self.eps)
        e2 = get(self.eps if self.eps_xz is None else self.eps_xz)
        if not (e1 > 0 and e2 > 0):
            raise ConfigError("regularization eps must be positive")
        return e1, e2


def center_gram(k: np.ndarray) -> np.ndarray:
    """``H K H`` computed by subtracting row, column and grand means."""
    k = np.asarray(k, dtype=float)
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    out = k - row - col + k.mean()
    return 0.5 * (out + out.T)


def _spd_factor(k: np.ndarray, lam: float):
    a = k + lam * np.eye(len(k))
    try:
        return cho_factor(a, lower=True, check_finite=False)
    except LinAlgError:
        raise NonPsdGram("Gram matrix plus regularization is not positive definite") from None


def regularized_hat(k: np.ndarray, lam: float) -> np.ndarray:
    """``K (K + lam I)^-1`` through a Cholesky solve (symmetric since K and the inverse commute)."""
    h = cho_solve(_spd_factor(k, lam), k, check_finite=False)
    return 0.5 * (h + h.T)


def regularized_resolvent(k: np.ndarray, lam: float) -> np.ndarray:
    """``lam (K + lam I)^-1`` through a Cholesky solve."""
    h = cho_solve(_spd_factor(k, lam), lam * np.eye(len(k)), check_finite=False)
    return 0.5 * (h + h.T)


def _quad_trace(m: np.ndarray, ky: np.ndarray) -> float:
    """``tr(M^T Ky M)`` for symmetric ``M``."""
    return float(np.sum((ky @ m) * m))


def _default(k: KernelLike | None) -> KernelLike:
    return KernelSpec.gaussian() if k is None else k


def _points_gram(k: KernelSpec, ds: Dataset, cols: Sequence) -> tuple[np.ndarray, KernelSpec]:
    pts = kernel_points(k, ds, cols)
    res = k.resolve(pts)
    return gram(res, pts), res


class RkhsStatistic:
    """Dense RKHS estimator with the Y and X sides fixed.

    Only the (X, Z) Gram matrix is rebuilt by :meth:`estimate`, which makes
    repeated evaluation with resampled Z cheap.
    """

    def __init__(self, ds: Dataset, roles: VariableRoles, cfg: RkhsConfig | None = None, centered: bool | None = None):
        self.cfg = cfg or RkhsConfig()
        self.roles = roles
        self.centered = self.cfg.centered if centered is None else centered
        self.n = ds.n
        self.eps_x, self.eps_xz = self.cfg.eps_values(self.n)
        ky, self.kernel_y = _points_gram(_default(self.cfg.kernel_y), ds, roles.y_cols)
        self.ky = center_gram(ky) if self.centered else ky
        self.hat_x = None
        if roles.x_cols:
            kx, self.kernel_x = _points_gram(_default(self.cfg.kernel_x), ds, roles.x_cols)
            kx = center_gram(kx) if self.centered else kx
            self.hat_x = regularized_hat(kx, self.n * self.eps_x)
            resid = np.eye(self.n) - self.hat_x
            self.den = _quad_trace(resid, self.ky)
        else:
            self.den = float(np.trace(self.ky))
        scale = max(1.0, abs(float(np.trace(ky))))
        if self.den < DENOMINATOR_TOL * scale:
            raise DegenerateDenominator(f"denominator trace {self.den:.3g} is numerically zero")
        self._kernel_xz_resolved = None

    def _gram_xz(self, ds: Dataset, z_cols: tuple | None) -> np.ndarray:
        kxz = _default(self.cfg.kernel_xz)
        x_cols = self.roles.x_cols
        z_cols = self.roles.z_cols if z_cols is None else tuple(z_cols)
        if callable(kxz) and not isinstance(kxz, KernelSpec):
            return np.asarray(kxz(ds, x_cols, z_cols), dtype=float)
        pts = kernel_points(kxz, ds, x_cols + z_cols)
        if z_cols != self.roles.z_cols:
            return gram(kxz.resolve(pts), pts)
        # the first evaluation freezes the (X, Z) bandwidth for later resamples
        if self._kernel_xz_resolved is None:
            self._kernel_xz_resolved = kxz.resolve(pts)
        return gram(self._kernel_xz_resolved, pts)

    def estimate(self, ds: Dataset, z_cols: Sequence | None = None) -> KpcEstimate:
        """Estimate on ``ds`` (same Y and X as at construction).

        ``z_cols`` swaps in a different Z column set.
        """
        k = self._gram_xz(ds, None if z_cols is None else tuple(z_cols))
        k = center_gram(k) if self.centered else k
        m = regularized_hat(k, self.n * self.eps_xz)
        if self.hat_x is not None:
            m = self.hat_x - m
        num = _quad_trace(m, self.ky)
        diag = {"eps": self.eps_x, "eps_xz": self.eps_xz, "centered": float(self.centered)}
        return finish_estimate(num, self.den, self.cfg.clamp, diag)


# ------------------------------------------------------------------ public API


def kpc_rkhs(ds: Dataset, roles: VariableRoles, cfg: RkhsConfig | None = None) -> KpcEstimate:
    """RKHS estimate of rho^2(Y, Z | X) from centered Gram matrices.

    An empty ``roles.x_cols`` gives the unconditional coefficient. When
    ``cfg.lowrank`` is set the computation goes through
    :func:`kpc_rkhs_lowrank`.

    Raises
    ------
    DegenerateDenominator
        ``tr(N Kc_Y N)`` is numerically zero (constant Y, or a huge eps).
    NonPsdGram
        A regularized Gram matrix failed its Cholesky factorization.
    """
    cfg = cfg or RkhsConfig()
    if cfg.lowrank is not None:
        return kpc_rkhs_lowrank(ds, roles, cfg)
    return RkhsStatistic(ds, roles, cfg, centered=True).estimate(ds)


def kpc_rkhs_uncentered(ds: Dataset, roles: VariableRoles, cfg: RkhsConfig | None = None) -> KpcEstimate:
    """Variant of :func:`kpc_rkhs` built on uncentered Gram matrices."""
    cfg = cfg or RkhsConfig()
    if cfg.lowrank is not None:
        return _lowrank_estimate(ds, roles, cfg, centered=False)
    return RkhsStatistic(ds, roles, cfg, centered=False).estimate(ds)


# ------------------------------------------------------------------ low rank


@dataclass
class CholFactor:
    """Pivoted incomplete Cholesky factor ``K ~ L L^T``."""

    L: np.ndarray
    pivots: list = field(default_factory=list)
    residual: float = 0.0

    @property
    def rank(self) -> int:
        return self.L.shape[1]


def icd_points(k: KernelSpec, points: np.ndarray, tol: float | None = ICD_REL_TOL,
               max_rank: int | None = None) -> CholFactor:
    """Incomplete Cholesky on a resolved kernel and its point array.

    Columns are added greedily at the largest residual diagonal entry until
    the residual trace drops to ``tol * trace(K)`` or ``max_rank`` columns
    exist. Only the pivot columns of K are ever evaluated.
    """
    n = len(points)
    diag = diag_values(k, points).astype(float)
    total = float(diag.sum())
    cap = n if max_rank is None else min(int(max_rank), n)
    stop = 0.0 if tol is None else tol * total
    slack = ICD_SLACK * max(float(diag.max()), 1.0)
    resid = diag.copy()
    cols = np.zeros((n, cap))
    pivots: list[int] = []
    for j in range(cap):
        if resid.sum() <= stop:
            break
        i = int(np.argmax(resid))
        if resid[i] <= slack * 1e-3:
            break
        kcol = gram(k, points, points[i:i + 1])[:, 0]
        col = (kcol - cols[:, :j] @ cols[i, :j]) / math.sqrt(resid[i])
        cols[:, j] = col
        resid -= col ** 2
        resid[i] = 0.0
        pivots.append(i)
        if resid.min() < -slack:
            raise NegativeDiagonal(
                f"residual diagonal {resid.min():.3g} is negative beyond slack; the kernel is not PSD"
            )
        np.maximum(resid, 0.0, out=resid)
    return CholFactor(cols[:, :len(pivots)].copy(), pivots, float(resid.sum()))


def incomplete_cholesky(k: KernelSpec, ds: Dataset, cols: Sequence, tol: float | None = ICD_REL_TOL,
                        max_rank: int | None = None) -> CholFactor:
    """Pivoted incomplete Cholesky factor of the Gram matrix of ``cols``.

    Parameters
    ----------
    tol : float or None
        Stop once ``trace(K - L L^T) <= tol * trace(K)``. ``None`` runs until
        the residual vanishes or ``max_rank`` is reached.
    max_rank : int, optional
        Maximum number of columns.

    Raises
    ------
    NegativeDiagonal
        The residual diagonal turned negative beyond round-off slack.
    """
    pts = kernel_points(k, ds, cols)
    return icd_points(k.resolve(pts), pts, tol, max_rank)


def _factor(k: KernelLike | None, ds: Dataset, cols: Sequence, lr: LowRank, centered: bool) -> np.ndarray:
    k = _default(k)
    if not isinstance(k, KernelSpec):
        raise ConfigError("the low-rank path needs KernelSpec kernels, not Gram functions")
    f = incomplete_cholesky(k, ds, cols, lr.tol, lr.max_rank).L
    return f - f.mean(axis=0) if centered else f


def _project_coef(ly: np.ndarray, lt: np.ndarray, lam: float) -> np.ndarray:
    """``Ly^T Lt (lam I + Lt^T Lt)^-1``, so that ``Ly^T R = coef @ Lt^T``."""
    s = lam * np.eye(lt.shape[1]) + lt.T @ lt
    c = cho_factor(s, lower=True, check_finite=False)
    return cho_solve(c, lt.T @ ly, check_finite=False).T


def _lowrank_estimate(ds: Dataset, roles: VariableRoles, cfg: RkhsConfig, centered: bool) -> KpcEstimate:
    lr = cfg.lowrank or LowRank()
    n = ds.n
    eps_x, eps_xz = cfg.eps_values(n)
    ly = _factor(cfg.kernel_y, ds, roles.y_cols, lr, centered)
    lxz = _factor(cfg.kernel_xz, ds, roles.xz_cols, lr, centered)
    proj_xz = _project_coef(ly, lxz, n * eps_xz) @ lxz.T
    ranks = {"rank_y": ly.shape[1], "rank_xz": lxz.shape[1]}
    if roles.x_cols:
        lx = _factor(cfg.kernel_x, ds, roles.x_cols, lr, centered)
        proj_x = _project_coef(ly, lx, n * eps_x) @ lx.T
        num = float(np.sum((proj_x - proj_xz) ** 2))
        den = float(np.sum((ly.T - proj_x) ** 2))
        ranks["rank_x"] = lx.shape[1]
    else:
        num = float(np.sum(proj_xz ** 2))
        den = float(np.sum(ly ** 2))
    scale = max(1.0, float(np.sum(ly ** 2)))
    if den < DENOMINATOR_TOL * scale:
        raise DegenerateDenominator(f"denominator {den:.3g} is numerically zero")
    diag = {"eps": eps_x, "eps_xz": eps_xz, "centered": float(centered), **ranks}
    return finish_estimate(num, den, cfg.clamp, diag)


def kpc_rkhs_lowrank(ds: Dataset, roles: VariableRoles, cfg: RkhsConfig | None = None) -> KpcEstimate:
    """Centered RKHS estimate through incomplete Cholesky factors.

    Uses ``cfg.lowrank`` (default: relative trace tolerance 1e-6, no rank
    cap). With full-rank factors it agrees with :func:`kpc_rkhs` up to
    round-off.
    """
    return _lowrank_estimate(ds, roles, cfg or RkhsConfig(lowrank=LowRank()), centered=True)
