"""Partition function estimates and bounds from randomly perturbed MAP inference."""
from .kernels import BACKEND
from .model import PairwiseModel, SpinGlassConfig, build_model, gen_spin_glass, load_model, save_model, score
from .oracle import exact_log_partition, exact_map, exact_marginals
from .perturb import EstimateReport, estimate_logZ_full, estimate_logZ_sequential, gibbs_via_argmax
from .mapsolve import MapResult, solve_map
from .bounds import (
    InflationConfig, LowerBoundConfig, PerturbationScheme,
    approx_logZ_inflation, lower_bound_logZ, upper_bound_logZ,
)
from .baselines import bp_log_partition, trbp_log_partition, uniform_spanning_edge_probs

__version__ = "0.1.0"
