"""Graph-based estimator of the kernel partial correlation coefficient.

For a geometric graph G on the conditioning points, the statistic

    T_n(G) = (1/n) sum_i (1/d_i) sum_{j in out(i)} k(Y_i, Y_j)

averages kernel similarities of responses over graph neighbors. With one
graph built on X and one built on (X, Z),

    rho2_hat = (T_n(G_XZ) - T_n(G_X)) / (mean_i k(Y_i, Y_i) - T_n(G_X)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, MetricSpec, VariableRoles
from .errors import ConfigError, DegenerateDenominator, SizeMismatch
from .graphs import GeometricGraph, GraphSpec, build_graph
from .kernels import KernelSpec, diag_values, kernel_points, pair_values

DENOMINATOR_TOL = 1e-12


@dataclass
class KpcEstimate:
    """Estimate of rho^2(Y, Z | X) with its ingredients.

    ``value`` is ``numerator / denominator``, clipped to [0, 1] when clamping
    was requested; ``diagnostics["raw_value"]`` always holds the unclipped
    ratio.
    """

    value: float
    numerator: float
    denominator: float
    clamped: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "clamped": self.clamped,
            "diagnostics": dict(self.diagnostics),
        }


def finish_estimate(numerator: float, denominator: float, clamp: bool, diagnostics: dict) -> KpcEstimate:
    raw = numerator / denominator
    value = min(max(raw, 0.0), 1.0) if clamp else raw
    diagnostics = dict(diagnostics, raw_value=raw)
    return KpcEstimate(float(value), float(numerator), float(denominator), bool(clamp and value != raw), diagnostics)


def t_n_points(kernel: KernelSpec, points: np.ndarray, graph: GeometricGraph) -> float:
    """T_n for response points already extracted with :func:`kernel_points`."""
    if graph.n != len(points):
        raise SizeMismatch(f"graph has {graph.n} nodes but the sample has {len(points)} rows")
    src, dst = graph.edge_arrays()
    vals = pair_values(kernel, points[src], points[dst])
    per_node = np.bincount(src, weights=vals, minlength=graph.n) / graph.degrees
    return float(np.mean(per_node))


def t_n(ds: Dataset, y_cols: Sequence, kernel: KernelSpec, graph: GeometricGraph) -> float:
    """Average kernel similarity of Y over the out-neighbors of each node.

    An unresolved kernel (median bandwidth) is resolved on the Y sample.

    Raises
    ------
    SizeMismatch
        The graph was built on a different number of rows.
    """
    pts = kernel_points(kernel, ds, y_cols)
    return t_n_points(kernel.resolve(pts), pts, graph)


@dataclass(frozen=True, eq=False)
class GraphConfig:
    """Settings of the graph estimator bundled for reuse (tests, selection, CLI)."""

    kernel: KernelSpec | None = None
    spec_x: GraphSpec | None = None
    spec_xz: GraphSpec | None = None
    metric: MetricSpec | None = None
    clamp: bool = False


class GraphStatistic:
    """Graph estimator with the response side and X graph fixed.

    Useful when only Z changes between evaluations (randomization tests):
    the Y kernel, diagonal term and X-graph statistic are computed once.
    """

    def __init__(self, ds: Dataset, roles: VariableRoles, kernel: KernelSpec | None = None,
                 spec_x: GraphSpec | None = None, spec_xz: GraphSpec | None = None,
                 metric: MetricSpec | None = None, clamp: bool = False):
        if not roles.x_cols:
            raise ConfigError("the graph estimator needs a non-empty X; use the RKHS estimator for the unconditional case")
        self.roles = roles
        self.spec_x = spec_x or GraphSpec()
        self.spec_xz = spec_xz or self.spec_x
        self.metric = metric or MetricSpec()
        self.clamp = clamp
        pts = kernel_points(kernel or KernelSpec.gaussian(), ds, roles.y_cols)
        self.kernel = (kernel or KernelSpec.gaussian()).resolve(pts)
        self.points = pts
        self.diag_mean = float(np.mean(diag_values(self.kernel, pts)))
        self.graph_x = build_graph(self.spec_x, ds, roles.x_cols, self.metric, stream_key="x")
        self.t_x = t_n_points(self.kernel, pts, self.graph_x)

    def estimate(self, ds: Dataset) -> KpcEstimate:
        """Estimate on ``ds``, which must share Y and X with the fitted data."""
        graph_xz = build_graph(self.spec_xz, ds, self.roles.xz_cols, self.metric, stream_key="xz")
        t_xz = t_n_points(self.kernel, self.points, graph_xz)
        num = t_xz - self.t_x
        den = self.diag_mean - self.t_x
        if abs(den) <= DENOMINATOR_TOL * abs(self.diag_mean):
            raise DegenerateDenominator(
                f"denominator {den:.3g} is numerically zero: Y is (in-sample) a function of X"
            )
        diag = {
            "t_x": self.t_x,
            "t_xz": t_xz,
            "diag_mean": self.diag_mean,
            "ties_x": self.graph_x.ties,
            "ties_xz": graph_xz.ties,
            "graph_x": self.spec_x.describe(),
            "graph_xz": self.spec_xz.describe(),
        }
        if self.kernel.family in ("gaussian", "laplace"):
            diag["bandwidth_y"] = float(self.kernel.bandwidth)
        return finish_estimate(num, den, self.clamp, diag)


def kpc_graph(ds: Dataset, roles: VariableRoles, kernel: KernelSpec | None = None,
              spec_x: GraphSpec | None = None, spec_xz: GraphSpec | None = None,
              metric: MetricSpec | None = None, clamp: bool = False) -> KpcEstimate:
    """Graph-based estimate of rho^2(Y, Z | X).

    Parameters
    ----------
    ds : Dataset
    roles : VariableRoles
        ``x_cols`` must be non-empty.
    kernel : KernelSpec, optional
        Kernel on Y; Gaussian with median bandwidth by default. The bandwidth
        is resolved once on the Y sample and shared by all three sums.
    spec_x, spec_xz : GraphSpec, optional
        Graphs on X and on (X, Z). Default directed 1-NN; ``spec_xz`` defaults
        to ``spec_x``. The two graphs use independent tie-breaking streams.
    metric : MetricSpec, optional
        Metric for both graphs (product metric by default).
    clamp : bool
        Clip the reported value to [0, 1].

    Raises
    ------
    DegenerateDenominator
        ``mean k(Y_i, Y_i) - T_n(G_X)`` vanishes.

    Examples
    --------
    >>> import numpy as np
    >>> from kpc import Dataset, VariableRoles, KernelSpec, GraphSpec
    >>> ds = Dataset.from_arrays({"x": np.array([0, 1, 2.1, 3.3]),
    ...                           "z": np.array([0, 10, 0, 10.0]),
    ...                           "y": np.array([0, 1, 0, 1.0])})
    >>> roles = VariableRoles.of(ds, y="y", z="z", x="x")
    >>> kpc_graph(ds, roles, KernelSpec("discrete")).value
    1.0
    """
    stat = GraphStatistic(ds, roles, kernel, spec_x, spec_xz, metric, clamp)
    return stat.estimate(ds)
