"""Command line interface: ``kpc {estimate,select,test,simulate,report}``.

Every subcommand prints one JSON document (or writes it to ``--output``).
Options may also come from a ``--config`` file of ``key = value`` lines whose
keys mirror the long flag names; flags given on the command line win.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data
errors (unreadable or malformed input, degenerate samples).
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import re
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import Dataset, MetricSpec, VariableRoles, load_csv, write_csv, write_schema
from .errors import ConfigError, DataError, KpcError
from .graph_estimator import GraphConfig, kpc_graph
from .graphs import GraphSpec
from .inference import (GaussianLinearSampler, KnockoffInput, NormalScaleSampler, UniformShiftSampler,
                        crt, gaussian_knockoffs, knockoff_select, knockoff_threshold, knockoff_w)
from .kernels import KernelSpec, parse_kernel
from .rkhs import LowRank, RkhsConfig, eps_schedule, kpc_rkhs, kpc_rkhs_lowrank, kpc_rkhs_uncentered
from .selection import kfoci, rkhs_forward_select
from .simulate import MODELS, ExperimentPlan, SimModel, run_experiment, simulate, summarize

SCHEMA_SUFFIX = ".schema"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def split_columns(text: str | None) -> list[str]:
    """Comma separated column names; ``x1..x10`` expands to ``x1, x2, ..., x10``."""
    if not text:
        return []
    out = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        m = re.fullmatch(r"([A-Za-z_]\w*?)(\d+)\.\.\1?(\d+)", item)
        if m:
            prefix, lo, hi = m.group(1), int(m.group(2)), int(m.group(3))
            if hi < lo:
                raise UsageError(f"empty column range {item!r}")
            out.extend(f"{prefix}{i}" for i in range(lo, hi + 1))
        else:
            out.append(item)
    return out


def _load(args) -> Dataset:
    schema = args.schema
    if schema is None:
        sidecar = Path(str(args.data) + SCHEMA_SUFFIX)
        schema = sidecar if sidecar.exists() else None
    return load_csv(args.data, schema)


def _kernel(text: str | None) -> KernelSpec | None:
    return None if text is None else parse_kernel(text)


def _graph_spec(args) -> GraphSpec:
    if args.mst:
        return GraphSpec(kind="mst", seed=args.seed)
    return GraphSpec(k=args.k, directed=not args.undirected, seed=args.seed)


def _eps(text: str):
    return eps_schedule if text == "schedule" else float(text)


def _rkhs_config(args) -> RkhsConfig:
    return RkhsConfig(
        eps=_eps(args.eps),
        kernel_y=_kernel(args.kernel),
        kernel_x=_kernel(args.kernel_x),
        kernel_xz=_kernel(args.kernel_xz),
        lowrank=LowRank(tol=args.tol, max_rank=args.rank) if (args.rank or args.method == "rkhs_lowrank") else None,
        clamp=args.clamp,
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def _emit(payload: dict, args) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    if getattr(args, "output", None):
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ subcommands


def cmd_estimate(args) -> dict:
    ds = _load(args)
    roles = VariableRoles.of(ds, split_columns(args.y), split_columns(args.z), split_columns(args.x))
    if args.method == "graph":
        spec = _graph_spec(args)
        metric = MetricSpec(args.metric)
        est = kpc_graph(ds, roles, _kernel(args.kernel), spec, spec, metric, args.clamp)
    else:
        cfg = _rkhs_config(args)
        fn = {"rkhs": kpc_rkhs, "rkhs_uncentered": kpc_rkhs_uncentered, "rkhs_lowrank": kpc_rkhs_lowrank}[args.method]
        est = fn(ds, roles, cfg)
    return dict(est.to_dict(), method=args.method)


def cmd_select(args) -> dict:
    ds = _load(args)
    y = split_columns(args.y)
    cands = split_columns(args.candidates)
    if not cands:
        raise UsageError("select: --candidates is required")
    if args.knockoff:
        return _knockoff_select(args, ds, y, cands)
    if args.method == "kfoci":
        trace = kfoci(ds, y, cands, _kernel(args.kernel), _graph_spec(args), MetricSpec(args.metric),
                      args.max_vars, standardize=args.standardize)
    else:
        if args.p0 is None:
            raise UsageError("select: --p0 is required with --method rkhs")
        cfg = RkhsConfig(eps=_eps(args.eps), kernel_y=_kernel(args.kernel))
        trace = rkhs_forward_select(ds, y, cands, args.p0, cfg, standardize=args.standardize)
    return dict(trace.to_dict(), method=args.method)


def _knockoff_select(args, ds: Dataset, y: list, cands: list) -> dict:
    x = ds.numeric_block(cands)
    if args.knockoffs:
        knock_cols = split_columns(args.knockoffs)
        if len(knock_cols) != len(cands):
            raise UsageError("select: --knockoffs must list one column per candidate")
        xk = ds.numeric_block(knock_cols)
        source = "columns"
    else:
        xk = gaussian_knockoffs(x, x.mean(axis=0), np.cov(x, rowvar=False).reshape(len(cands), len(cands)),
                                seed=args.seed)
        source = "gaussian"
    ycol = ds.column(y[0]) if len(y) == 1 else None
    yarr = ycol.values if ycol is not None else ds.numeric_block(y)
    ki = KnockoffInput(x, xk, yarr, args.q)
    if args.method == "rkhs":
        p = len(cands)
        stat = RkhsConfig(eps=_eps(args.eps), kernel_y=_kernel(args.kernel),
                          kernel_x=KernelSpec.gaussian_coef(1.0 / (2 * p - 1)),
                          kernel_xz=KernelSpec.gaussian_coef(1.0 / (2 * p)))
    else:
        spec = _graph_spec(args)
        stat = GraphConfig(kernel=_kernel(args.kernel), spec_x=spec, spec_xz=spec)
    w = knockoff_w(ki, stat, seed=args.seed)
    chosen = knockoff_select(w, args.q, args.plus)
    return {"method": f"knockoff-{args.method}", "knockoffs": source, "q": args.q, "plus": args.plus,
            "W": w, "threshold": knockoff_threshold(w, args.q, args.plus),
            "selected": chosen, "names": [cands[j] for j in chosen]}


def cmd_test(args) -> dict:
    ds = _load(args)
    roles = VariableRoles.of(ds, split_columns(args.y), split_columns(args.z), split_columns(args.x))
    if not roles.x_cols:
        raise UsageError("test: --x is required")
    if args.sampler == "gaussian-linear":
        z = ds.numeric_block(roles.z_cols).ravel()
        sampler = GaussianLinearSampler.fit(ds.numeric_block(roles.x_cols), z)
    elif args.sampler == "uniform-shift":
        sampler = UniformShiftSampler(args.halfwidth, 1.0)
    else:
        sampler = NormalScaleSampler()
    if args.stat == "graph":
        spec = _graph_spec(args)
        stat = GraphConfig(kernel=_kernel(args.kernel), spec_x=spec, spec_xz=spec)
    else:
        stat = "rkhs"
    res = crt(ds, roles, sampler, args.b, stat, args.seed)
    return dict(res.to_dict(), test="crt", stat=args.stat, sampler=args.sampler,
                reject=res.pvalue <= args.alpha, alpha=args.alpha)


def cmd_simulate(args) -> dict:
    ds = simulate(SimModel(args.model, args.n, args.p, args.gamma, args.seed))
    schema = write_csv(ds, args.out)
    write_schema(schema, str(args.out) + SCHEMA_SUFFIX)
    return {"model": args.model, "n": ds.n, "seed": args.seed, "out": str(args.out),
            "schema": str(args.out) + SCHEMA_SUFFIX, "columns": ds.names}


def _plan_options(args) -> dict:
    opts = {"k": args.k, "b": args.b, "alpha": args.alpha, "p0": args.p0, "eps": args.eps,
            "kernel": args.kernel, "max_vars": args.max_vars, "mst": args.mst, "rank": args.rank}
    return {k: v for k, v in opts.items() if v not in (None, False)}


def cmd_report(args) -> dict:
    if args.from_records:
        lines = Path(args.from_records).read_text(encoding="utf-8").splitlines()
        try:
            records = [json.loads(line) for line in lines if line.strip()]
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.from_records}: not JSON lines ({exc})") from None
        return {"summary": summarize(args.task, records)}
    if args.model is None or args.n is None:
        raise UsageError("report: --model and --n are required unless --from is given")
    plan = ExperimentPlan(SimModel(args.model, args.n, args.p, args.gamma, 0), args.task, args.method,
                          _plan_options(args), args.replications, args.seed)
    rep = run_experiment(plan, args.workers)
    if args.records:
        Path(args.records).write_text(rep.records_jsonl(), encoding="utf-8")
    return rep.to_dict()


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="key = value file whose keys mirror the long flags")
    p.add_argument("--output", "-o", help="write JSON here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    if data:
        p.add_argument("data", help="CSV file with a header row")
        p.add_argument("--schema", help="column kinds file (default: DATA.schema if present)")


def _graph_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=1, help="neighbors per node of the K-NN graph")
    p.add_argument("--mst", action="store_true", help="use the minimum spanning tree instead of K-NN")
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--metric", default="product", choices=("product", "euclidean", "hamming01", "frobenius"))
    p.add_argument("--kernel", help="kernel on Y, e.g. gaussian:median, gaussian:0.5, discrete, linear, so3")


def _role_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--y", required=True, help="response columns (comma separated)")
    p.add_argument("--z", required=True, help="columns whose added information is measured")
    p.add_argument("--x", default="", help="conditioning columns; empty means unconditional")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kpc", description="Kernel partial correlation estimation, selection and testing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate rho^2(Y, Z | X)")
    _common(p)
    _role_flags(p)
    _graph_flags(p)
    p.add_argument("--method", default="graph", choices=("graph", "rkhs", "rkhs_uncentered", "rkhs_lowrank"))
    p.add_argument("--eps", default="1e-3", help="ridge parameter or 'schedule'")
    p.add_argument("--kernel-x", dest="kernel_x")
    p.add_argument("--kernel-xz", dest="kernel_xz")
    p.add_argument("--rank", type=int, help="maximum rank of the low-rank path")
    p.add_argument("--tol", type=float, default=1e-6, help="relative trace tolerance of the low-rank path")
    p.add_argument("--no-clamp", dest="clamp", action="store_false", help="report the raw ratio")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select", help="choose predictors of Y")
    _common(p)
    _graph_flags(p)
    p.add_argument("--y", required=True)
    p.add_argument("--candidates", help="predictor columns, e.g. x1..x10")
    p.add_argument("--method", default="kfoci", choices=("kfoci", "rkhs"))
    p.add_argument("--max-vars", dest="max_vars", type=int)
    p.add_argument("--p0", "--budget", dest="p0", type=int, help="number of predictors for --method rkhs")
    p.add_argument("--eps", default="1e-3")
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    p.add_argument("--knockoff", action="store_true", help="knockoff filter instead of forward selection")
    p.add_argument("--knockoffs", help="knockoff columns aligned with --candidates (default: Gaussian knockoffs)")
    p.add_argument("--q", type=float, default=0.1, help="target false discovery rate")
    p.add_argument("--plus", action="store_true", help="use the conservative threshold")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("test", help="conditional randomization test of Y independent of Z given X")
    _common(p)
    _role_flags(p)
    _graph_flags(p)
    p.add_argument("--crt", action="store_true", default=True, help="randomization test (the only test offered)")
    p.add_argument("--b", type=int, default=100, help="number of resamples")
    p.add_argument("--stat", default="rkhs", choices=("rkhs", "graph"))
    p.add_argument("--sampler", default="gaussian-linear", choices=("gaussian-linear", "uniform-shift", "normal-scale"))
    p.add_argument("--halfwidth", type=float, default=1.0, help="half width of the uniform-shift sampler")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="draw a dataset from a simulation model")
    _common(p, data=False)
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--out", required=True, help="CSV destination; the schema goes to OUT.schema")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="run a replicated experiment or summarize saved records")
    _common(p, data=False)
    p.add_argument("--from", dest="from_records", help="summarize this JSON-lines record file")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--task", default="estimate", choices=("estimate", "select", "test"))
    p.add_argument("--method", default="graph")
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--workers", type=int, help="process count (default: KPC_NUM_THREADS or 1)")
    p.add_argument("--records", help="write per-replication JSON lines here")
    p.add_argument("--k", type=int)
    p.add_argument("--mst", action="store_true")
    p.add_argument("--kernel")
    p.add_argument("--eps")
    p.add_argument("--rank", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--p0", type=int)
    p.add_argument("--max-vars", dest="max_vars", type=int)
    p.set_defaults(func=cmd_report)
    return parser


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    """Install defaults from a ``key = value`` file onto subcommand ``sub``."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + Path(path).read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    actions = {}
    for act in sub._actions:
        for opt in act.option_strings:
            if opt.startswith("--"):
                actions[opt[2:]] = act
    defaults = {}
    for key, raw in cp["config"].items():
        act = actions.get(key) or actions.get(key.replace("_", "-"))
        if act is None or act.dest in ("config", "help"):
            raise UsageError(f"config {path}: unknown key {key!r}")
        value = raw.strip()
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise UsageError(f"config {path}: {key} expects true or false")
            flag_on = low in _TRUE
            defaults[act.dest] = flag_on if isinstance(act, argparse._StoreTrueAction) else not flag_on
        else:
            if act.choices is not None and value not in act.choices:
                raise UsageError(f"config {path}: {key} must be one of {', '.join(map(str, act.choices))}")
            try:
                defaults[act.dest] = act.type(value) if act.type else value
            except ValueError:
                raise UsageError(f"config {path}: bad value for {key}: {value!r}") from None
        act.required = False
    sub.set_defaults(**defaults)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if "--config" in argv or any(a.startswith("--config=") for a in argv):
            pre = _Parser(add_help=False)
            pre.add_argument("command", nargs="?")
            pre.add_argument("--config")
            known, _ = pre.parse_known_args(argv)
            subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
            if known.command not in subs.choices:
                raise UsageError("kpc: --config must follow a subcommand")
            apply_config(subs.choices[known.command], known.config)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        _emit(args.func(args), args)
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"kpc: configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, KpcError) as exc:
        print(f"kpc: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"kpc: cannot access {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"kpc: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
