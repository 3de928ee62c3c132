"""Bayesian inversion of a 1D linear parabolic PDE: joint inference of
decay rate, diffusion rate and a positive source field from noisy point
observations, via MAP estimation and function-space MCMC."""

from .diagnostics import SummaryReport, acf, summarize, thin
from .forward import (
    PdeCoefficients,
    SpaceTimeGrid,
    assemble_operators,
    build_grid,
    observation_matrix,
    observe,
    solve_adjoint,
    solve_forward,
    solve_tangent,
)
from .map_estimate import EPS_D, OptimResult, minimize_om, multi_start
from .posterior import (
    Dataset,
    NoiseEstimate,
    PosteriorModel,
    PotentialReport,
    estimate_noise,
)
from .prior import (
    KLBasis,
    ParameterVector,
    PriorConfig,
    ReferenceMeasure,
    basis_for,
    field_from_coeffs,
    kl_basis,
    log_prior_over_ref,
    positive_source,
    reference_measure,
    sample_prior,
)
from .sampler import (
    Chain,
    ChainState,
    KernelConfig,
    WhitenedPosterior,
    acceptance_log_ratio,
    make_state,
    propose_mmala,
    propose_pcn,
    proposal_log_density,
    resume_chain,
    run_chain,
)

__version__ = "0.1.0"
