"""Forward stepwise variable selection.

:func:`kfoci` grows a predictor set by maximizing the graph statistic
``T_n(Y, graph on X_S)`` and stops by itself as soon as the best addition
lowers it. :func:`rkhs_forward_select` adds exactly ``p0`` predictors, each
maximizing the RKHS estimate of ``rho^2(Y, X_j | X_S)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import NUMERIC, Dataset, MetricSpec, VariableRoles
from .errors import ConfigError
from .graph_estimator import t_n_points
from .graphs import GraphSpec, build_graph
from .kernels import KernelSpec, kernel_points
from .rkhs import RkhsConfig, RkhsStatistic

CRITERION = "criterion"
BUDGET = "budget"
EXHAUSTED = "exhausted"


@dataclass
class SelectionTrace:
    """Selected columns in order, with the objective after each step.

    ``order`` holds dataset column indices; ``names`` the matching labels.
    """

    order: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    stopped_by: str = EXHAUSTED
    names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"order": list(self.order), "names": list(self.names),
                "objective": list(self.objective), "stopped_by": self.stopped_by}


def _standardized(ds: Dataset, cols: Sequence[int]) -> Dataset:
    """Standardize the numeric, non-constant columns among ``cols`` (others untouched)."""
    updates = {}
    for c in cols:
        col = ds.columns[c]
        if col.kind != NUMERIC or len(col) < 2:
            continue
        sd = np.std(col.values, ddof=1)
        if sd > 0:
            updates[c] = (col.values - col.values.mean()) / sd
    return ds.replace(updates) if updates else ds


def _check_candidates(ds: Dataset, y_cols, candidate_cols) -> tuple[tuple, tuple]:
    y = ds.resolve(y_cols)
    cand = ds.resolve(candidate_cols)
    if not cand:
        raise ConfigError("no candidate columns")
    if len(set(cand)) != len(cand):
        raise ConfigError("duplicate candidate columns")
    if set(cand) & set(y):
        raise ConfigError("candidate columns overlap the response")
    return y, cand


class SubsetObjective:
    """``T_n(Y, graph on X_S)`` for arbitrary subsets S of the columns.

    The graph for a subset uses tie-breaking streams keyed by the sorted
    subset, so the value of a subset does not depend on the search path.
    ``column_weights`` maps dataset column index to product-metric weight.
    """

    def __init__(self, ds: Dataset, y_cols, kernel_y: KernelSpec | None = None,
                 graph: GraphSpec | None = None, column_weights: dict | None = None):
        self.ds = ds
        self.graph = graph or GraphSpec()
        self.column_weights = column_weights
        kernel_y = kernel_y or KernelSpec.gaussian()
        self.points = kernel_points(kernel_y, ds, y_cols)
        self.kernel = kernel_y.resolve(self.points)

    def graph_for(self, subset: Sequence[int]):
        cols = tuple(sorted(subset))
        weights = None if self.column_weights is None else tuple(self.column_weights[c] for c in cols)
        metric = MetricSpec("product", weights)
        return build_graph(self.graph, self.ds, cols, metric, stream_key=("subset", *cols))

    def __call__(self, subset: Sequence[int]) -> float:
        return t_n_points(self.kernel, self.points, self.graph_for(subset))


def kfoci(ds: Dataset, y_cols, candidate_cols, kernel_y: KernelSpec | None = None,
          graph: GraphSpec | None = None, metric: MetricSpec | None = None,
          max_vars: int | None = None, standardize: bool = True) -> SelectionTrace:
    """Forward selection with automatic stopping on the graph statistic.

    Starting from the empty set (objective minus infinity), each step scans
    the remaining candidates in ascending order and picks the one with the
    largest ``T_n`` (lowest index on ties). The pick is accepted when its
    ``T_n`` is at least the current one; otherwise the search stops.

    Parameters
    ----------
    ds : Dataset
    y_cols : column keys
        Response columns.
    candidate_cols : column keys
        Predictors to choose from.
    kernel_y : KernelSpec, optional
        Kernel on Y; Gaussian with median bandwidth by default.
    graph : GraphSpec, optional
        Graph built on each candidate set; directed 1-NN by default.
    metric : MetricSpec, optional
        Product metric for the graphs. Its weights, if any, are aligned with
        ``candidate_cols``; unit weights by default.
    max_vars : int, optional
        Cap on the number of selected columns; ``min(p, n - 1)`` by default.
    standardize : bool
        Rescale numeric candidates to mean 0 and variance 1 before building graphs.

    Returns
    -------
    SelectionTrace
        ``stopped_by`` is ``"criterion"`` when the best addition lowered
        ``T_n``, ``"budget"`` when ``max_vars`` was reached and
        ``"exhausted"`` when every candidate was selected.
    """
    y, cand = _check_candidates(ds, y_cols, candidate_cols)
    work = _standardized(ds, cand) if standardize else ds
    cap = min(len(cand), ds.n - 1) if max_vars is None else min(int(max_vars), len(cand))
    if cap < 1:
        raise ConfigError("max_vars must allow at least one variable")
    weights = None
    if metric is not None:
        if metric.family != "product":
            raise ConfigError("kfoci graphs use the product metric")
        if metric.weights is not None:
            if len(metric.weights) != len(cand):
                raise ConfigError("metric weights must align with the candidate columns")
            weights = dict(zip(cand, metric.weights))
    objective = SubsetObjective(work, y, kernel_y, graph, weights)

    trace = SelectionTrace()
    current = -np.inf
    selected: list[int] = []
    while True:
        if len(selected) >= cap:
            trace.stopped_by = EXHAUSTED if len(selected) == len(cand) else BUDGET
            break
        remaining = [c for c in cand if c not in selected]
        values = [objective(selected + [c]) for c in remaining]
        best = int(np.argmax(values))
        if values[best] < current:
            trace.stopped_by = CRITERION
            break
        selected.append(remaining[best])
        current = values[best]
        trace.objective.append(float(current))
    trace.order = selected
    trace.names = [ds.columns[c].name for c in selected]
    return trace


def gaussian_subset_kernel(size: int) -> KernelSpec:
    """Default kernel on a subset of ``size`` standardized predictors: ``exp(-||u - v||^2 / size)``."""
    return KernelSpec.gaussian_coef(1.0 / size)


def rkhs_forward_select(ds: Dataset, y_cols, candidate_cols, p0: int, cfg: RkhsConfig | None = None,
                        subset_kernel: Callable[[int], KernelSpec] = gaussian_subset_kernel,
                        standardize: bool = True) -> SelectionTrace:
    """Greedy selection of exactly ``p0`` predictors by the RKHS estimator.

    Step ``k`` adds the candidate maximizing ``rho2_tilde(Y, X_j | X_S)``
    with the subset kernels ``subset_kernel(|S|)`` on X_S and
    ``subset_kernel(|S| + 1)`` on X_S plus the candidate. ``cfg`` supplies
    eps and the Y kernel (its X kernels are ignored).
    """
    y, cand = _check_candidates(ds, y_cols, candidate_cols)
    if not 1 <= int(p0) <= len(cand):
        raise ConfigError(f"p0 must lie in [1, {len(cand)}], got {p0}")
    work = _standardized(ds, cand) if standardize else ds
    base = cfg or RkhsConfig()
    # resolve the Y kernel once so every step uses the same response Gram matrix
    ky = base.kernel_y or KernelSpec.gaussian()
    base = replace(base, kernel_y=ky.resolve(kernel_points(ky, work, y)), lowrank=None)

    trace = SelectionTrace(stopped_by=BUDGET)
    selected: list[int] = []
    for _ in range(int(p0)):
        remaining = [c for c in cand if c not in selected]
        step_cfg = replace(base, kernel_x=subset_kernel(max(len(selected), 1)),
                           kernel_xz=subset_kernel(len(selected) + 1))
        roles = VariableRoles(y, (remaining[0],), tuple(selected))
        stat = RkhsStatistic(work, roles, step_cfg)
        values = [stat.estimate(work, (c,)).value for c in remaining]
        best = int(np.argmax(values))
        selected.append(remaining[best])
        trace.objective.append(float(values[best]))
    if len(selected) == len(cand):
        trace.stopped_by = EXHAUSTED
    trace.order = selected
    trace.names = [ds.columns[c].name for c in selected]
    return trace
