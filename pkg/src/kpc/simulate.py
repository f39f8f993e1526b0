"""Simulation models and a seeded experiment runner.

Models
------
model_I        X, Z ~ N(0, 1);  Y = X + Z + N(1, 1)
model_II       X, Z ~ N(0, 1);  Y ~ Bernoulli(exp(-Z^2 / 2))
model_III      X, Z ~ U[0, 1];  Y = (X + Z) mod 1
model_IV_so3   X, Z ~ N(0, 1);  Y = R1(X) R3(Z)
model_V_so3    X, Z, e ~ N(0, 1);  Y = R1(X) R3(e)
LM             Y = 3 X1 + 2 X2 - X3 + N(0, 1)
GAM            Y = sin X1 + 2 cos X2 + exp(X3) + N(0, 1)
Nonlin1        Y = X1 X2 + sin(X1 X3)
Nonlin2        Y = 2 log(X1^2 + X2^4) / (cos X1 + sin X3) + t, t a ratio of two N(0, 1)
Nonlin3        Y = |X1 + U|^sin(X2 - X3), U ~ U[0, 1]
SO3_select     Y = R1(X1) R3(X2 X3)
crt_additive   X ~ N(0, 1), Z = X + U[-1, 1],
               Y = g sin(Z X) + (1 - g) (exp(X) / X^2 + N(0, 1))
crt_multiplicative
               X ~ N(0, 1), Z = X N(0, 1),
               Y = |tanh X + N(0, 1)|^(1 - g) cosh(Z X)^g

The selection models draw X1..Xp ~ N(0, I_p). R1 rotates about the first
axis and R3 about the third.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .data import Dataset, VariableRoles
from .errors import ConfigError
from .graph_estimator import kpc_graph
from .graphs import GraphSpec
from .inference import UniformShiftSampler, NormalScaleSampler, crt, default_crt_config
from .kernels import KernelSpec, parse_kernel
from .rkhs import LowRank, RkhsConfig, eps_schedule, kpc_rkhs, kpc_rkhs_uncentered
from .rng import child_seed, stream
from .selection import kfoci, rkhs_forward_select

MODELS = (
    "model_I", "model_II", "model_III", "model_IV_so3", "model_V_so3",
    "LM", "GAM", "Nonlin1", "Nonlin2", "Nonlin3", "SO3_select",
    "crt_additive", "crt_multiplicative",
)
SELECTION_MODELS = ("LM", "GAM", "Nonlin1", "Nonlin2", "Nonlin3", "SO3_select")
# variables that carry the signal in every selection model
SELECTION_TRUTH = ("x1", "x2", "x3")
THREADS_ENV = "KPC_NUM_THREADS"


@dataclass(frozen=True)
class SimModel:
    """A simulation model with its sample size and seed."""

    name: str
    n: int
    p: int = 10
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.name not in MODELS:
            raise ConfigError(f"unknown model {self.name!r}; choose from {', '.join(MODELS)}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.name in SELECTION_MODELS and self.p < 3:
            raise ConfigError("selection models need p >= 3")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")


def rot_x(a: np.ndarray) -> np.ndarray:
    """Rotations by angles ``a`` about the first axis, shape ``(n, 3, 3)``."""
    c, s = np.cos(a), np.sin(a)
    out = np.zeros((len(a), 3, 3))
    out[:, 0, 0] = 1.0
    out[:, 1, 1], out[:, 1, 2] = c, -s
    out[:, 2, 1], out[:, 2, 2] = s, c
    return out


def rot_z(a: np.ndarray) -> np.ndarray:
    """Rotations by angles ``a`` about the third axis, shape ``(n, 3, 3)``."""
    c, s = np.cos(a), np.sin(a)
    out = np.zeros((len(a), 3, 3))
    out[:, 0, 0], out[:, 0, 1] = c, -s
    out[:, 1, 0], out[:, 1, 1] = s, c
    out[:, 2, 2] = 1.0
    return out


def _selection_x(m: SimModel, rng) -> dict:
    x = rng.standard_normal((m.n, m.p))
    return {f"x{j + 1}": x[:, j] for j in range(m.p)}


def simulate(model: SimModel) -> Dataset:
    """Draw one dataset from ``model`` using the stream ``(model.seed, "simulate", name)``."""
    rng = stream(model.seed, "simulate", model.name)
    n, name = model.n, model.name
    if name in ("model_I", "model_II", "model_IV_so3", "model_V_so3"):
        x = rng.standard_normal(n)
        z = rng.standard_normal(n)
        if name == "model_I":
            y = x + z + rng.normal(1.0, 1.0, n)
        elif name == "model_II":
            y = (rng.random(n) < np.exp(-z ** 2 / 2)).astype(float)
        elif name == "model_IV_so3":
            y = rot_x(x) @ rot_z(z)
        else:
            y = rot_x(x) @ rot_z(rng.standard_normal(n))
        return Dataset.from_arrays({"x": x, "z": z, "y": y})
    if name == "model_III":
        x = rng.random(n)
        z = rng.random(n)
        return Dataset.from_arrays({"x": x, "z": z, "y": np.mod(x + z, 1.0)})
    if name in SELECTION_MODELS:
        cols = _selection_x(model, rng)
        x1, x2, x3 = cols["x1"], cols["x2"], cols["x3"]
        if name == "LM":
            y = 3 * x1 + 2 * x2 - x3 + rng.standard_normal(n)
        elif name == "GAM":
            y = np.sin(x1) + 2 * np.cos(x2) + np.exp(x3) + rng.standard_normal(n)
        elif name == "Nonlin1":
            y = x1 * x2 + np.sin(x1 * x3)
        elif name == "Nonlin2":
            t1 = rng.standard_normal(n) / rng.standard_normal(n)
            y = 2 * np.log(x1 ** 2 + x2 ** 4) / (np.cos(x1) + np.sin(x3)) + t1
        elif name == "Nonlin3":
            y = np.abs(x1 + rng.random(n)) ** np.sin(x2 - x3)
        else:
            y = rot_x(x1) @ rot_z(x2 * x3)
        cols["y"] = y
        return Dataset.from_arrays(cols)
    g = model.gamma
    x = rng.standard_normal(n)
    if name == "crt_additive":
        z = x + rng.uniform(-1.0, 1.0, n)
        y = g * np.sin(z * x) + (1 - g) * (np.exp(x) / x ** 2 + rng.standard_normal(n))
    else:
        z = x * rng.standard_normal(n)
        y = np.abs(np.tanh(x) + rng.standard_normal(n)) ** (1 - g) * np.cosh(z * x) ** g
    return Dataset.from_arrays({"x": x, "z": z, "y": y})


def exact_sampler(model_name: str):
    """The exact law of Z given X for the randomization-test models."""
    if model_name == "crt_additive":
        return UniformShiftSampler(1.0, 1.0)
    if model_name == "crt_multiplicative":
        return NormalScaleSampler()
    raise ConfigError(f"model {model_name!r} has no randomization-test sampler")


# ------------------------------------------------------------------ experiments


@dataclass(frozen=True)
class ExperimentPlan:
    """Model, task and replication settings of an experiment.

    Parameters
    ----------
    model : SimModel
        Template model; replication ``r`` reseeds it with ``(seed, r)``.
    task : {"estimate", "select", "test"}
    method : str
        ``graph``/``rkhs``/``rkhs_uncentered`` for estimation,
        ``kfoci``/``rkhs`` for selection, ``rkhs``/``graph`` statistics for tests.
    options : dict
        Method options (``k``, ``kernel``, ``eps``, ``b``, ``alpha``, ``p0``, ...).
    replications : int
    seed : int
    """

    model: SimModel
    task: str = "estimate"
    method: str = "graph"
    options: dict = field(default_factory=dict)
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("estimate", "select", "test"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.replications < 0:
            raise ConfigError("replications must be nonnegative")

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "task": self.task, "method": self.method,
                "options": dict(self.options), "replications": self.replications, "seed": self.seed}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class ExperimentReport:
    """Per-replication records, their summary and provenance."""

    records: list
    summary: dict
    provenance: dict

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def to_dict(self) -> dict:
        return {"summary": self.summary, "provenance": self.provenance}


def _kernel_option(opts: dict, key: str, default: KernelSpec | None) -> KernelSpec | None:
    val = opts.get(key)
    if val is None:
        return default
    if isinstance(val, (int, float)):
        return KernelSpec.gaussian_coef(float(val))
    return parse_kernel(str(val))


def _graph_spec(opts: dict, seed: int) -> GraphSpec:
    if opts.get("mst"):
        return GraphSpec(kind="mst", seed=seed)
    return GraphSpec(k=int(opts.get("k", 1)), directed=not opts.get("undirected", False), seed=seed)


def _rkhs_config(opts: dict, n: int) -> RkhsConfig:
    eps = opts.get("eps", 1e-3)
    eps = eps_schedule if eps == "schedule" else float(eps)
    rank = opts.get("rank")
    return RkhsConfig(
        eps=eps,
        kernel_y=_kernel_option(opts, "kernel_y", _kernel_option(opts, "kernel", None)),
        kernel_x=_kernel_option(opts, "kernel_x", None),
        kernel_xz=_kernel_option(opts, "kernel_xz", None),
        lowrank=LowRank(tol=None, max_rank=int(rank)) if rank else None,
    )


def _response_roles(ds: Dataset) -> VariableRoles:
    return VariableRoles.of(ds, "y", "z", "x")


def run_replication(plan: ExperimentPlan, r: int) -> dict:
    """Run replication ``r`` of ``plan``; a pure function of its arguments."""
    rep_seed = child_seed(plan.seed, "replication", r)
    model = SimModel(plan.model.name, plan.model.n, plan.model.p, plan.model.gamma, rep_seed)
    ds = simulate(model)
    opts = plan.options
    record: dict[str, Any] = {"rep": r, "seed": rep_seed}
    if plan.task == "estimate":
        roles = _response_roles(ds)
        if plan.method == "graph":
            spec = _graph_spec(opts, rep_seed)
            est = kpc_graph(ds, roles, _kernel_option(opts, "kernel", None), spec, spec)
        elif plan.method in ("rkhs", "rkhs_uncentered"):
            cfg = _rkhs_config(opts, ds.n)
            est = (kpc_rkhs if plan.method == "rkhs" else kpc_rkhs_uncentered)(ds, roles, cfg)
        else:
            raise ConfigError(f"unknown estimation method {plan.method!r}")
        record.update(value=est.value, numerator=est.numerator, denominator=est.denominator)
    elif plan.task == "select":
        cands = [f"x{j + 1}" for j in range(model.p)]
        ky = _kernel_option(opts, "kernel", None)
        if plan.method == "kfoci":
            trace = kfoci(ds, "y", cands, ky, _graph_spec(opts, rep_seed), max_vars=opts.get("max_vars"))
        elif plan.method == "rkhs":
            cfg = RkhsConfig(eps=float(opts.get("eps", 1e-3)), kernel_y=ky)
            trace = rkhs_forward_select(ds, "y", cands, int(opts.get("p0", 3)), cfg)
        else:
            raise ConfigError(f"unknown selection method {plan.method!r}")
        chosen = set(trace.names)
        record.update(selected=trace.names, objective=trace.objective, stopped_by=trace.stopped_by,
                      exact=chosen == set(SELECTION_TRUTH), superset=chosen >= set(SELECTION_TRUTH),
                      size=len(chosen))
    else:
        roles = _response_roles(ds)
        stat = default_crt_config() if plan.method == "rkhs" else "graph"
        res = crt(ds, roles, exact_sampler(model.name), int(opts.get("b", 100)), stat, rep_seed)
        alpha = float(opts.get("alpha", 0.05))
        record.update(pvalue=res.pvalue, statistic=res.statistic, reject=res.pvalue <= alpha)
    return record


def summarize(task: str, records: list) -> dict:
    """Summary statistics recomputed from records alone."""
    out: dict[str, Any] = {"replications": len(records)}
    if not records:
        return out
    if task == "estimate" or "value" in records[0]:
        v = np.array([r["value"] for r in records], dtype=float)
        q = np.quantile(v, [0.025, 0.25, 0.5, 0.75, 0.975])
        out.update(mean=float(v.mean()), sd=float(v.std(ddof=1)) if len(v) > 1 else 0.0,
                   quantiles={k: float(x) for k, x in zip(("2.5", "25", "50", "75", "97.5"), q)})
    elif task == "select" or "exact" in records[0]:
        out.update(exact_recovery=float(np.mean([r["exact"] for r in records])),
                   superset_recovery=float(np.mean([r["superset"] for r in records])),
                   mean_size=float(np.mean([r["size"] for r in records])))
    else:
        out.update(rejection_rate=float(np.mean([r["reject"] for r in records])),
                   mean_pvalue=float(np.mean([r["pvalue"] for r in records])))
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_experiment(plan: ExperimentPlan, workers: int | None = None) -> ExperimentReport:
    """Run every replication of ``plan`` and summarize.

    Replications are independent; with ``workers > 1`` they run in a process
    pool and are merged back in replication order, so the report does not
    depend on the worker count.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    reps = range(plan.replications)
    if workers > 1 and plan.replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_replication, [plan] * len(reps), reps))
    else:
        records = [run_replication(plan, r) for r in reps]
    provenance = {"config_hash": plan.config_hash(), "seed": plan.seed, "plan": plan.to_dict(),
                  "replication_seeds": [r["seed"] for r in records]}
    return ExperimentReport(records, summarize(plan.task, records), provenance)
