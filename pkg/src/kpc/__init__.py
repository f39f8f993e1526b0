"""Kernel partial correlation: estimators, variable selection and inference."""

__version__ = "0.1.0"

from .data import Column, Dataset, MetricSpec, VariableRoles, distance, load_csv, standardize, write_csv
from .graph_estimator import GraphConfig, KpcEstimate, kpc_graph, t_n
from .graphs import GeometricGraph, GraphSpec, build_graph, build_knn, build_mst
from .inference import (
    CrtResult,
    GaussianLinearSampler,
    KnockoffInput,
    NormalScaleSampler,
    UniformShiftSampler,
    crt,
    crt_pvalue,
    gaussian_knockoffs,
    knockoff_select,
    knockoff_threshold,
    knockoff_w,
)
from .kernels import KernelSpec, eval_kernel, gram_matrix, median_bandwidth, parse_kernel
from .oracle import (
    DiscreteJoint,
    classical_partial_correlation,
    monotonicity_probe,
    population_rho2,
)
from .rkhs import (
    CholFactor,
    LowRank,
    RkhsConfig,
    center_gram,
    eps_schedule,
    incomplete_cholesky,
    kpc_rkhs,
    kpc_rkhs_lowrank,
    kpc_rkhs_uncentered,
)
from .selection import SelectionTrace, kfoci, rkhs_forward_select
from .simulate import ExperimentPlan, ExperimentReport, SimModel, run_experiment, simulate

__all__ = [
    "CholFactor",
    "Column",
    "CrtResult",
    "Dataset",
    "DiscreteJoint",
    "ExperimentPlan",
    "ExperimentReport",
    "GaussianLinearSampler",
    "GeometricGraph",
    "GraphConfig",
    "GraphSpec",
    "KernelSpec",
    "KnockoffInput",
    "KpcEstimate",
    "LowRank",
    "MetricSpec",
    "NormalScaleSampler",
    "RkhsConfig",
    "SelectionTrace",
    "SimModel",
    "UniformShiftSampler",
    "VariableRoles",
    "build_graph",
    "build_knn",
    "build_mst",
    "center_gram",
    "classical_partial_correlation",
    "crt",
    "crt_pvalue",
    "distance",
    "eps_schedule",
    "eval_kernel",
    "gaussian_knockoffs",
    "gram_matrix",
    "incomplete_cholesky",
    "kfoci",
    "knockoff_select",
    "knockoff_threshold",
    "knockoff_w",
    "kpc_graph",
    "kpc_rkhs",
    "kpc_rkhs_lowrank",
    "kpc_rkhs_uncentered",
    "load_csv",
    "median_bandwidth",
    "monotonicity_probe",
    "parse_kernel",
    "population_rho2",
    "rkhs_forward_select",
    "run_experiment",
    "simulate",
    "standardize",
    "t_n",
    "write_csv",
]
