"""Kernel families, Gram matrices and bandwidth selection.

Conventions
-----------
gaussian      exp(-||u - v||^2 / (2 s^2))
laplace       exp(-||u - v||_1 / s)
linear        <u, v>
distance      (||u||^a + ||v||^a - ||u - v||^a) / 2, a in (0, 2)
discrete      1{u == v}
so3           pi t (pi - t) / (8 sin t), t the rotation angle of B^T A
hist_inv      prod_i 1 / (u_i + v_i + 1)
hist_expsqrt  exp(-sum_i sqrt(u_i + v_i))
foci_cdf      sum_t w_t 1{u >= t} 1{v >= t} over a weighted reference sample

A :class:`KernelSpec` with ``bandwidth="median"`` (or a ``foci_cdf`` spec
without a reference sample) is *unresolved*. Estimators resolve it once on the
relevant point set with :meth:`KernelSpec.resolve` and then reuse the frozen
spec for every evaluation.

The so3 formula, taken with ``t`` the full rotation angle, is symmetric
under ``t -> pi - t`` and is not positive semidefinite on SO(3): its Gram
matrices can have clearly negative eigenvalues. The graph estimator does
not need positive definiteness; RKHS traces built on it may go negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import NUMERIC, ROTATION, Dataset, MetricSpec
from .errors import DegenerateBandwidth, TypeMismatch

FAMILIES = (
    "gaussian",
    "laplace",
    "linear",
    "distance",
    "discrete",
    "so3",
    "hist_inv",
    "hist_expsqrt",
    "foci_cdf",
)
_BANDWIDTH_FAMILIES = ("gaussian", "laplace")
_VECTOR_FAMILIES = ("gaussian", "laplace", "linear", "distance")
SO3_LIMIT = math.pi ** 2 / 8
_SO3_EPS = 1e-7
# pairwise-distance medians above this many rows use a fixed subsample
MEDIAN_MAX_ROWS = 3000


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Declarative description of a positive semidefinite kernel.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    bandwidth : float or "median", optional
        Scale ``s`` of the gaussian and laplace families. ``"median"``
        (the default for those families) applies the median heuristic.
    alpha : float
        Exponent of the distance kernel, in (0, 2).
    reference : array_like, optional
        Reference sample of the ``foci_cdf`` kernel. When omitted the kernel
        is resolved against the sample it is evaluated on.
    weights : array_like, optional
        Probability weights for ``reference`` (default uniform).
    """

    family: str
    bandwidth: float | str | None = None
    alpha: float = 1.0
    reference: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise TypeMismatch(f"unknown kernel family {self.family!r}")
        if self.family in _BANDWIDTH_FAMILIES:
            bw = "median" if self.bandwidth is None else self.bandwidth
            if bw != "median":
                bw = float(bw)
                if not (bw > 0 and math.isfinite(bw)):
                    raise TypeMismatch(f"bandwidth must be positive, got {bw}")
            object.__setattr__(self, "bandwidth", bw)
        if self.family == "distance" and not 0 < self.alpha < 2:
            raise TypeMismatch(f"distance kernel exponent must lie in (0, 2), got {self.alpha}")
        if self.family == "foci_cdf" and self.reference is not None:
            ref = np.asarray(self.reference, dtype=float).ravel()
            if ref.size == 0:
                raise TypeMismatch("foci_cdf reference sample is empty")
            w = np.full(ref.size, 1.0 / ref.size) if self.weights is None else np.asarray(self.weights, float).ravel()
            if w.shape != ref.shape or np.any(w < 0):
                raise TypeMismatch("foci_cdf weights must be nonnegative and match the reference")
            order = np.argsort(ref, kind="stable")
            object.__setattr__(self, "reference", ref[order])
            object.__setattr__(self, "weights", w[order])

    # ----------------------------------------------------------- constructors

    @classmethod
    def gaussian(cls, bandwidth: float | str = "median") -> "KernelSpec":
        return cls("gaussian", bandwidth=bandwidth)

    @classmethod
    def gaussian_coef(cls, coef: float) -> "KernelSpec":
        """Gaussian kernel written as ``exp(-coef * ||u - v||^2)``."""
        return cls("gaussian", bandwidth=math.sqrt(1.0 / (2.0 * coef)))

    @property
    def resolved(self) -> bool:
        if self.family in _BANDWIDTH_FAMILIES:
            return self.bandwidth != "median"
        if self.family == "foci_cdf":
            return self.reference is not None
        return True

    def resolve(self, points: np.ndarray) -> "KernelSpec":
        """Freeze data-dependent parameters using ``points``.

        ``points`` is the array produced by :func:`kernel_points`.
        """
        if self.resolved:
            return self
        if self.family == "foci_cdf":
            return replace(self, reference=np.asarray(points, float).ravel(), weights=None)
        return replace(self, bandwidth=_median_of_points(points))

    def resolve_on(self, ds: Dataset, cols: Sequence) -> "KernelSpec":
        return self.resolve(kernel_points(self, ds, cols))

    def describe(self) -> dict:
        out: dict = {"family": self.family}
        if self.family in _BANDWIDTH_FAMILIES:
            out["bandwidth"] = self.bandwidth
        if self.family == "distance":
            out["alpha"] = self.alpha
        return out


def parse_kernel(text: str) -> KernelSpec:
    """Parse ``family[:param]``, e.g. ``gaussian:median``, ``laplace:0.5``, ``distance:1``."""
    family, _, param = text.strip().partition(":")
    family = family.strip()
    if family not in FAMILIES:
        raise TypeMismatch(f"unknown kernel family {family!r}")
    if family in _BANDWIDTH_FAMILIES:
        return KernelSpec(family, bandwidth=param.strip() or "median")
    if family == "distance":
        return KernelSpec(family, alpha=float(param) if param else 1.0)
    if param:
        raise TypeMismatch(f"kernel {family!r} takes no parameter")
    return KernelSpec(family)


# ------------------------------------------------------------------ point sets


def kernel_points(k: KernelSpec, ds: Dataset, cols: Sequence) -> np.ndarray:
    """Extract the array representation the kernel family operates on.

    Vector families get an ``(n, d)`` float matrix (categorical and rotation
    columns enter through the product-metric embedding), ``so3`` gets
    ``(n, 3, 3)``, ``discrete`` gets ``(n,)`` integer row labels and
    ``foci_cdf`` gets an ``(n,)`` float vector.
    """
    cols = ds.resolve(cols)
    kinds = ds.kinds(cols)
    if not cols:
        raise TypeMismatch("kernel needs at least one column")
    fam = k.family
    if fam == "so3":
        if len(cols) != 1 or kinds[0] != ROTATION:
            raise TypeMismatch("so3 kernel needs exactly one rotation column")
        return ds.columns[cols[0]].values
    if fam == "discrete":
        blocks = []
        for c, kind in zip(cols, kinds):
            v = ds.columns[c].values
            blocks.append(v.reshape(len(v), -1).astype(float))
        _, codes = np.unique(np.hstack(blocks), axis=0, return_inverse=True)
        return codes.ravel()
    if fam == "foci_cdf":
        if len(cols) != 1 or kinds[0] != NUMERIC:
            raise TypeMismatch("foci_cdf kernel needs exactly one numeric column")
        return ds.columns[cols[0]].values
    if fam in ("hist_inv", "hist_expsqrt"):
        pts = ds.numeric_block(cols)
        if np.any(pts < 0):
            raise TypeMismatch(f"{fam} kernel needs nonnegative vectors")
        return pts
    if all(kind == NUMERIC for kind in kinds):
        return ds.numeric_block(cols)
    if fam in _VECTOR_FAMILIES:
        return MetricSpec().embed(ds, cols)
    raise TypeMismatch(f"kernel {fam!r} cannot act on column kinds {kinds}")


def _as_matrix(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[:, None] if p.ndim == 1 else p


def _median_of_points(points: np.ndarray) -> float:
    pts = _as_matrix(points)
    if pts.ndim == 3:
        pts = pts.reshape(len(pts), -1)
    if len(pts) < 2:
        raise DegenerateBandwidth("median heuristic needs at least two points")
    if len(pts) > MEDIAN_MAX_ROWS:
        rows = np.random.default_rng(0).choice(len(pts), MEDIAN_MAX_ROWS, replace=False)
        pts = pts[np.sort(rows)]
    med = float(np.median(pdist(pts)))
    if not med > 0:
        raise DegenerateBandwidth("median pairwise distance is zero")
    return med


def median_bandwidth(ds: Dataset, cols: Sequence, metric: MetricSpec | None = None) -> float:
    """Median of the ``n(n-1)/2`` pairwise distances of the rows of ``cols``.

    Above :data:`MEDIAN_MAX_ROWS` rows the median is taken over a fixed
    (seed 0) subsample of rows.

    Raises
    ------
    DegenerateBandwidth
        Fewer than two rows, or a zero median.
    """
    metric = metric or MetricSpec()
    emb = metric.embed(ds, cols)
    if emb is not None:
        return _median_of_points(emb)
    if ds.n < 2:
        raise DegenerateBandwidth("median heuristic needs at least two points")
    sub = ds
    if ds.n > MEDIAN_MAX_ROWS:
        rows = np.sort(np.random.default_rng(0).choice(ds.n, MEDIAN_MAX_ROWS, replace=False))
        sub = ds.take(rows)
    d = metric.pairwise(sub, cols)
    med = float(np.median(d[np.triu_indices(sub.n, 1)]))
    if not med > 0:
        raise DegenerateBandwidth("median pairwise distance is zero")
    return med


# ------------------------------------------------------------------ evaluation


def _require_resolved(k: KernelSpec) -> None:
    if not k.resolved:
        raise TypeMismatch(f"kernel {k.family!r} must be resolved before evaluation")


def _so3_from_cos(c: np.ndarray) -> np.ndarray:
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    near = (theta < _SO3_EPS) | (math.pi - theta < _SO3_EPS)
    safe = np.where(near, 1.0, np.sin(theta))
    val = math.pi * theta * (math.pi - theta) / (8.0 * safe)
    return np.where(near, SO3_LIMIT, val)


def _cdf(k: KernelSpec, s: np.ndarray) -> np.ndarray:
    # cap running sums at the exactly rounded total so rounding never exceeds it
    cum = np.concatenate([[0.0], np.minimum(np.cumsum(k.weights), math.fsum(k.weights))])
    return cum[np.searchsorted(k.reference, s, side="right")]


def pair_values(k: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel values ``k(a[t], b[t])`` for row-aligned point arrays."""
    _require_resolved(k)
    fam = k.family
    if fam == "discrete":
        return (np.asarray(a) == np.asarray(b)).astype(float)
    if fam == "foci_cdf":
        return _cdf(k, np.minimum(np.asarray(a, float), np.asarray(b, float)))
    if fam == "so3":
        tr = np.einsum("nij,nij->n", np.asarray(a, float), np.asarray(b, float))
        return _so3_from_cos((tr - 1.0) / 2.0)
    a, b = _as_matrix(a), _as_matrix(b)
    if fam == "gaussian":
        return np.exp(-((a - b) ** 2).sum(axis=1) / (2.0 * k.bandwidth ** 2))
    if fam == "laplace":
        return np.exp(-np.abs(a - b).sum(axis=1) / k.bandwidth)
    if fam == "linear":
        return (a * b).sum(axis=1)
    if fam == "distance":
        al = k.alpha
        na = np.sqrt((a ** 2).sum(axis=1)) ** al
        nb = np.sqrt((b ** 2).sum(axis=1)) ** al
        nd = np.sqrt(((a - b) ** 2).sum(axis=1)) ** al
        return 0.5 * (na + nb - nd)
    if fam == "hist_inv":
        return np.prod(1.0 / (a + b + 1.0), axis=1)
    return np.exp(-np.sqrt(a + b).sum(axis=1))  # hist_expsqrt


def eval_kernel(k: KernelSpec, a, b) -> float:
    """Evaluate the kernel on a single pair of points."""
    fam = k.family
    if fam == "so3":
        a, b = np.asarray(a, float)[None], np.asarray(b, float)[None]
    elif fam in ("discrete", "foci_cdf"):
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        if fam == "discrete":
            return float(np.array_equal(a, b))
    else:
        a, b = np.atleast_1d(np.asarray(a, float))[None], np.atleast_1d(np.asarray(b, float))[None]
    return float(pair_values(k, a, b)[0])


def gram(k: KernelSpec, p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    """Kernel matrix between point arrays ``p`` and ``q`` (``q`` defaults to ``p``)."""
    _require_resolved(k)
    sym = q is None
    q = p if sym else q
    fam = k.family
    if fam == "discrete":
        out = (np.asarray(p)[:, None] == np.asarray(q)[None, :]).astype(float)
    elif fam == "foci_cdf":
        out = _cdf(k, np.minimum(np.asarray(p, float)[:, None], np.asarray(q, float)[None, :]))
    elif fam == "so3":
        fp = np.asarray(p, float).reshape(len(p), 9)
        fq = np.asarray(q, float).reshape(len(q), 9)
        out = _so3_from_cos((fp @ fq.T - 1.0) / 2.0)
    else:
        a, b = _as_matrix(p), _as_matrix(q)
        if fam == "gaussian":
            out = np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * k.bandwidth ** 2))
        elif fam == "laplace":
            out = np.exp(-cdist(a, b, "cityblock") / k.bandwidth)
        elif fam == "linear":
            out = a @ b.T
        elif fam == "distance":
            al = k.alpha
            na = np.sqrt((a ** 2).sum(axis=1)) ** al
            nb = np.sqrt((b ** 2).sum(axis=1)) ** al
            out = 0.5 * (na[:, None] + nb[None, :] - cdist(a, b) ** al)
        elif fam == "hist_inv":
            out = np.ones((len(a), len(b)))
            for j in range(a.shape[1]):
                out /= a[:, j, None] + b[None, :, j] + 1.0
        else:
            acc = np.zeros((len(a), len(b)))
            for j in range(a.shape[1]):
                acc += np.sqrt(a[:, j, None] + b[None, :, j])
            out = np.exp(-acc)
    if sym:
        out = 0.5 * (out + out.T)
    return out


def diag_values(k: KernelSpec, p: np.ndarray) -> np.ndarray:
    """``k(p[i], p[i])`` for every row."""
    return pair_values(k, p, p)


def gram_matrix(k: KernelSpec, ds: Dataset, cols: Sequence) -> np.ndarray:
    """Gram matrix of ``cols``; an unresolved spec is resolved on the same rows."""
    pts = kernel_points(k, ds, cols)
    return gram(k.resolve(pts), pts)
