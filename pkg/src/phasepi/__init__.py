"""Estimate the proportion of nonzero Normal means when the test statistics
have an arbitrary, known correlation matrix.

The estimator removes the dominant common factors with a principal factor
approximation, fits the factor coefficients by concave partially penalized
least squares, and reads the proportion off a Fourier-transform phase
function of the weakly dependent residual.
"""

from .cppls import CpplsFit, McpConfig, fit_cppls, mcp_penalty, mcp_threshold
from .errors import NumericalError, ValidationError
from .ftm import PhaseConfig, empirical_phase, fejer, kappa_sigma, oracle_phase
from .pipeline import EstimateResult, benjamini_pi, benjamini_pi0, estimate_pi, z_to_pvalues
from .simgen import DependenceKind, SimScenario, SimSummary, gen_dependence, gen_mu, run_scenario
from .spectral import PfaDecomposition, SymmetricSpectrum, build_pfa, choose_k, eigh_sym

__version__ = "0.1.0"

__all__ = [
    "CpplsFit",
    "DependenceKind",
    "EstimateResult",
    "McpConfig",
    "NumericalError",
    "PfaDecomposition",
    "PhaseConfig",
    "SimScenario",
    "SimSummary",
    "SymmetricSpectrum",
    "ValidationError",
    "benjamini_pi",
    "benjamini_pi0",
    "build_pfa",
    "choose_k",
    "eigh_sym",
    "empirical_phase",
    "estimate_pi",
    "fejer",
    "fit_cppls",
    "gen_dependence",
    "gen_mu",
    "kappa_sigma",
    "mcp_penalty",
    "mcp_threshold",
    "oracle_phase",
    "run_scenario",
    "z_to_pvalues",
]
