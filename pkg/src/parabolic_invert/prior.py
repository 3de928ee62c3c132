"""Prior measure: uniform rates, Gaussian latent source via a truncated
Karhunen-Loeve expansion, exponential push-forward to a positive source,
and the Gaussian reference measure dominating the prior."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from .forward import SpaceTimeGrid


@dataclass
class ParameterVector:
    """The inferred unknown u = (lambda, D, xi).

    xi holds the KL coefficients of the latent log-source; total
    dimension is len(xi) + 2.
    """

    lam: float
    diffusion: float
    xi: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)

    @property
    def dim(self) -> int:
        return self.xi.size + 2

    def as_array(self) -> np.ndarray:
        return np.concatenate(([self.lam, self.diffusion], self.xi))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ParameterVector":
        arr = np.asarray(arr, dtype=float)
        return cls(float(arr[0]), float(arr[1]), arr[2:].copy())


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the product prior U(0, lm) x U(0, Dm) x N(0, C)."""

    lambda_max: float = 0.5
    D_max: float = 0.5
    N: int = 10
    alpha: float = 2.0
    eigenvalue_convention: str = "paper"   # or "dirichlet"
    normalization: str = "orthonormal"     # or "paper"

    def __post_init__(self):
        if self.lambda_max <= 0 or self.D_max <= 0:
            raise ValueError("lambda_max and D_max must be positive")


@dataclass(frozen=True)
class ReferenceMeasure:
    """Gaussian reference N(u_ref, C_ref); rates moment-matched to the
    uniform priors, KL coordinates standard normal."""

    lambda_ref: float
    sigma_lambda2: float
    D_ref: float
    sigma_D2: float


def reference_measure(config: PriorConfig) -> ReferenceMeasure:
    return ReferenceMeasure(
        lambda_ref=config.lambda_max / 2,
        sigma_lambda2=config.lambda_max**2 / 12,
        D_ref=config.D_max / 2,
        sigma_D2=config.D_max**2 / 12,
    )


@dataclass(frozen=True)
class KLBasis:
    """Tensor sine eigenbasis of the prior covariance on [0,T] x [0,L].

    eigenvalues[i1-1, i2-1] pairs with the mode
    phi(x, t) = norm_const * sin(i1 pi x / L) * sin(i2 pi t / T).
    Coefficient vectors are flattened row-major over (i1, i2).
    """

    N: int
    alpha: float
    L: float
    T: float
    eigenvalues: np.ndarray = field(repr=False)
    norm_const: float

    @property
    def dim(self) -> int:
        return self.N * self.N

    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    def design_matrices(self, grid: SpaceTimeGrid) -> tuple[np.ndarray, np.ndarray]:
        """(St, Sx) with St[n, i2-1] = sin(i2 pi t_n / T) and
        Sx[j, i1-1] = norm_const * sin(i1 pi x_j / L)."""
        i = np.arange(1, self.N + 1)
        St = np.sin(np.outer(grid.time_nodes(), i * np.pi / self.T))
        Sx = self.norm_const * np.sin(np.outer(grid.space_nodes(), i * np.pi / self.L))
        return St, Sx

    def eigenfunction(self, i1: int, i2: int, x, t) -> np.ndarray:
        return self.norm_const * np.sin(i1 * np.pi * np.asarray(x) / self.L) * np.sin(
            i2 * np.pi * np.asarray(t) / self.T
        )


def kl_basis(
    N: int,
    alpha: float,
    L: float,
    T: float,
    *,
    eigenvalue_convention: str = "paper",
    normalization: str = "orthonormal",
) -> KLBasis:
    """Closed-form eigenpairs of the prior covariance.

    eigenvalue_convention "paper" uses ((i1/(pi L))^2 + (i2/(pi T))^2)^-alpha;
    "dirichlet" uses the conventional Laplacian spectrum
    ((i1 pi / L)^2 + (i2 pi / T)^2)^-alpha. normalization "orthonormal"
    scales modes by 2/sqrt(LT) so they are orthonormal in L2; "paper"
    keeps 1/sqrt(LT).
    """
    if N < 1:
        raise ValueError("need at least one KL mode per axis")
    if alpha <= 0:
        raise ValueError("alpha must be positive for continuous samples")
    if L <= 0 or T <= 0:
        raise ValueError("domain extents must be positive")
    i1 = np.arange(1, N + 1)[:, None]
    i2 = np.arange(1, N + 1)[None, :]
    if eigenvalue_convention == "paper":
        ev = ((i1 / (np.pi * L)) ** 2 + (i2 / (np.pi * T)) ** 2) ** (-alpha)
    elif eigenvalue_convention == "dirichlet":
        ev = ((i1 * np.pi / L) ** 2 + (i2 * np.pi / T) ** 2) ** (-alpha)
    else:
        raise ValueError(f"unknown eigenvalue convention {eigenvalue_convention!r}")
    if normalization == "orthonormal":
        c = 2.0 / np.sqrt(L * T)
    elif normalization == "paper":
        c = 1.0 / np.sqrt(L * T)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return KLBasis(N=N, alpha=float(alpha), L=float(L), T=float(T),
                   eigenvalues=ev, norm_const=c)


def basis_for(config: PriorConfig, grid: SpaceTimeGrid) -> KLBasis:
    return kl_basis(
        config.N,
        config.alpha,
        grid.L,
        grid.T,
        eigenvalue_convention=config.eigenvalue_convention,
        normalization=config.normalization,
    )


def field_from_coeffs(basis: KLBasis, xi: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Latent field sum_k sqrt(lambda_k) xi_k phi_k on the lattice."""
    xi = np.asarray(xi, dtype=float)
    if xi.size != basis.dim:
        raise ValueError(f"xi has length {xi.size}, expected {basis.dim}")
    A = basis.sqrt_eigenvalues() * xi.reshape(basis.N, basis.N)
    St, Sx = basis.design_matrices(grid)
    return St @ A.T @ Sx.T


_EXP_OVERFLOW = 700.0  # log of the largest double, give or take


def positive_source(latent: np.ndarray) -> np.ndarray:
    """Exponential push-forward f* = exp(f); all values strictly positive."""
    latent = np.asarray(latent, dtype=float)
    if not np.all(np.isfinite(latent)):
        raise ValueError("latent field contains non-finite values")
    m = latent.max()
    if m > _EXP_OVERFLOW:
        raise ValueError(
            f"latent field maximum {m:.3g} would overflow exp; "
            "check the KL coefficients"
        )
    return np.exp(latent)


def sample_prior(config: PriorConfig, rng: Generator) -> ParameterVector:
    """Independent draw: lambda, D uniform on their boxes, xi standard normal."""
    return ParameterVector(
        lam=rng.uniform(0.0, config.lambda_max),
        diffusion=rng.uniform(0.0, config.D_max),
        xi=rng.standard_normal(config.N * config.N),
    )


def log_prior_over_ref(u: ParameterVector, config: PriorConfig) -> float:
    """ln d(mu_0)/d(mu_ref) at u; -inf outside the (lambda, D) box.

    The Gaussian factor for xi is shared by prior and reference and
    contributes nothing.
    """
    if not (0.0 <= u.lam <= config.lambda_max) or not (0.0 <= u.diffusion <= config.D_max):
        return -np.inf
    ref = reference_measure(config)
    sl, sd = np.sqrt(ref.sigma_lambda2), np.sqrt(ref.sigma_D2)
    return (
        np.log(2 * np.pi * sl * sd / (config.lambda_max * config.D_max))
        + (u.lam - ref.lambda_ref) ** 2 / (2 * ref.sigma_lambda2)
        + (u.diffusion - ref.D_ref) ** 2 / (2 * ref.sigma_D2)
    )
