"""Negative log-likelihood potential, Onsager-Machlup functional, and
their derivatives through the discrete adjoint and tangent solvers."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numpy.random import Generator

from .forward import (
    PdeCoefficients,
    SpaceTimeGrid,
    observation_matrix,
    solve_adjoint,
    solve_forward,
    solve_tangent,
)
from .prior import KLBasis, ParameterVector, PriorConfig, positive_source

_EPS_D = 1e-8  # lower bound realizing the open constraint D > 0


def thread_count() -> int:
    """Internal parallelism cap, from PARABOLIC_INVERT_THREADS (default 1)."""
    return max(1, int(os.environ.get("PARABOLIC_INVERT_THREADS", "1")))


@dataclass(frozen=True)
class Dataset:
    """Point observations (t_i, x_i, z_i) with noise variance sigma_eta^2."""

    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if not (self.t.shape == self.x.shape == self.z.shape) or self.t.ndim != 1:
            raise ValueError("t, x, z must be 1-d arrays of equal length")
        if self.n < 1:
            raise ValueError("dataset must contain at least one observation")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")

    @property
    def n(self) -> int:
        return self.t.size

    def points(self) -> np.ndarray:
        return np.column_stack([self.t, self.x])


@dataclass(frozen=True)
class PotentialReport:
    """Potential evaluation: phi = ||residual||^2 / (2 sigma^2)."""

    phi: float
    om: float
    residual: np.ndarray
    misfit_norm: float


class PosteriorModel:
    """Bundles grid, KL basis, prior box and data; evaluates the potential
    and its derivatives in ParameterVector coordinates (lambda, D, xi).

    All evaluations are pure; the instance only holds immutable
    precomputed operators and may be shared across threads.

    positivity="identity" replaces exp by the identity map (test hook for
    linear-Gaussian checks).
    """

    def __init__(
        self,
        grid: SpaceTimeGrid,
        basis: KLBasis,
        prior: PriorConfig,
        data: Dataset,
        *,
        positivity: str = "exp",
        lumped: bool = True,
    ):
        if positivity not in ("exp", "identity"):
            raise ValueError(f"unknown positivity map {positivity!r}")
        self.grid = grid
        self.basis = basis
        self.prior = prior
        self.data = data
        self.positivity = positivity
        self.lumped = lumped
        self.obs = observation_matrix(data.points(), grid)
        self.St, self.Sx = basis.design_matrices(grid)
        self.sqrt_ev = basis.sqrt_eigenvalues()
        self.dim = basis.dim + 2

    def with_noise_variance(self, sigma2: float) -> "PosteriorModel":
        return PosteriorModel(
            self.grid,
            self.basis,
            self.prior,
            replace(self.data, noise_variance=float(sigma2)),
            positivity=self.positivity,
            lumped=self.lumped,
        )

    # -- forward pipeline ------------------------------------------------

    def latent_field(self, u: ParameterVector) -> np.ndarray:
        A = self.sqrt_ev * u.xi.reshape(self.basis.N, self.basis.N)
        return self.St @ A.T @ self.Sx.T

    def source(self, u: ParameterVector) -> np.ndarray:
        f = self.latent_field(u)
        return positive_source(f) if self.positivity == "exp" else f

    def forward(self, u: ParameterVector) -> np.ndarray:
        return solve_forward(
            PdeCoefficients(u.lam, u.diffusion), self.source(u), self.grid,
            lumped=self.lumped,
        )

    def predict(self, u: ParameterVector) -> np.ndarray:
        return self.obs @ self.forward(u).ravel()

    # -- potential and derivatives ----------------------------------------

    def potential(self, u: ParameterVector) -> PotentialReport:
        residual = self.data.z - self.predict(u)
        misfit = float(residual @ residual)
        phi = misfit / (2 * self.data.noise_variance)
        return PotentialReport(
            phi=phi,
            om=self._om_from_phi(phi, u),
            residual=residual,
            misfit_norm=np.sqrt(misfit),
        )

    def _om_from_phi(self, phi: float, u: ParameterVector) -> float:
        in_box = (0.0 <= u.lam <= self.prior.lambda_max) and (
            0.0 < u.diffusion <= self.prior.D_max
        )
        if not in_box:
            return np.inf
        return phi + 0.5 * float(u.xi @ u.xi)

    def onsager_machlup(self, u: ParameterVector) -> float:
        """Phi + 0.5 ||xi||^2 inside the rate box, +inf outside."""
        if not (0.0 <= u.lam <= self.prior.lambda_max) or not (
            0.0 < u.diffusion <= self.prior.D_max
        ):
            return np.inf
        return self.potential(u).phi + 0.5 * float(u.xi @ u.xi)

    def grad_potential(self, u: ParameterVector) -> np.ndarray:
        """Exact gradient of phi via one forward and one adjoint solve."""
        residual = self.predict(u) - self.data.z
        return self.vjp(u, residual / self.data.noise_variance)

    def jacobian(self, u: ParameterVector) -> np.ndarray:
        """Observation Jacobian dG/du, one tangent solve per column."""
        coeffs = PdeCoefficients(u.lam, u.diffusion)
        fstar = self.source(u)
        y = solve_forward(coeffs, fstar, self.grid, lumped=self.lumped)
        chain = fstar if self.positivity == "exp" else 1.0
        St, Sx, sq = self.St, self.Sx, self.sqrt_ev
        N = self.basis.N

        def column(k: int) -> np.ndarray:
            if k == 0:
                direction = (1.0, 0.0, None)
            elif k == 1:
                direction = (0.0, 1.0, None)
            else:
                i1, i2 = divmod(k - 2, N)
                mode = np.outer(St[:, i2], Sx[:, i1]) * sq[i1, i2]
                direction = (0.0, 0.0, chain * mode)
            h = solve_tangent(coeffs, y, direction, self.grid, lumped=self.lumped)
            return self.obs @ h.ravel()

        J = np.empty((self.data.n, self.dim))
        workers = thread_count()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                for k, col in enumerate(ex.map(column, range(self.dim))):
                    J[:, k] = col
        else:
            for k in range(self.dim):
                J[:, k] = column(k)
        return J

    def jvp(self, u: ParameterVector, h: np.ndarray) -> np.ndarray:
        """Directional derivative of G (single tangent solve)."""
        h = np.asarray(h, dtype=float)
        coeffs = PdeCoefficients(u.lam, u.diffusion)
        fstar = self.source(u)
        y = solve_forward(coeffs, fstar, self.grid, lumped=self.lumped)
        chain = fstar if self.positivity == "exp" else 1.0
        A = self.sqrt_ev * h[2:].reshape(self.basis.N, self.basis.N)
        dsrc = chain * (self.St @ A.T @ self.Sx.T)
        hy = solve_tangent(coeffs, y, (h[0], h[1], dsrc), self.grid, lumped=self.lumped)
        return self.obs @ hy.ravel()

    def vjp(self, u: ParameterVector, r: np.ndarray) -> np.ndarray:
        """Transpose Jacobian action J^T r (one forward + one adjoint solve).

        The lambda/D/xi blocks are the explicit partials of the discrete
        Lagrangian: sum_t dt <y, p>_M, sum_t dt <y, p>_K and
        -sum_t dt <M p, chain * sqrt(ev_k) phi_k>.
        """
        if not self.lumped:
            raise NotImplementedError("derivatives are implemented for the lumped scheme")
        coeffs = PdeCoefficients(u.lam, u.diffusion)
        fstar = self.source(u)
        y = solve_forward(coeffs, fstar, self.grid, lumped=self.lumped)
        load = (self.obs.T @ np.asarray(r, dtype=float)).reshape(self.grid.shape)
        p = solve_adjoint(coeffs, load, self.grid, lumped=self.lumped)
        dt, dx = self.grid.dt, self.grid.dx
        yi, pi = y[:, 1:-1], p[:, 1:-1]
        Mp = dx * pi
        g_lam = dt * float(np.sum(yi * Mp))
        Ky = (2 * yi - np.pad(yi[:, 1:], ((0, 0), (0, 1))) - np.pad(yi[:, :-1], ((0, 0), (1, 0)))) / dx
        g_D = dt * float(np.sum(Ky * pi))
        grad_fstar = np.zeros(self.grid.shape)
        grad_fstar[:, 1:-1] = -dt * Mp
        if self.positivity == "exp":
            grad_fstar = grad_fstar * fstar  # chain rule through f* = exp(f)
        G = self.Sx.T @ grad_fstar.T @ self.St  # (N, N) indexed [i1, i2]
        return np.concatenate(([g_lam, g_D], (self.sqrt_ev * G).ravel()))

    def gauss_newton_hessian(self, u: ParameterVector) -> np.ndarray:
        """J^T J / sigma^2, symmetrized; positive semi-definite."""
        J = self.jacobian(u)
        H = J.T @ J / self.data.noise_variance
        return 0.5 * (H + H.T)


@dataclass(frozen=True)
class NoiseEstimate:
    sigma2: float
    u_map: ParameterVector
    history: np.ndarray  # sigma^2 per iteration
    degenerate: bool


def estimate_noise(
    grid: SpaceTimeGrid,
    basis: KLBasis,
    prior: PriorConfig,
    t: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    rng: Generator,
    *,
    iters: int = 10,
    starts: int = 3,
    sigma2_init: float = 1.0,
    variance_factor: str = "paper",
    floor: float = 1e-12,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> NoiseEstimate:
    """Alternate MAP fits and noise-variance updates.

    variance_factor "paper" uses sigma^2 = 2/(n-1) ||z - G(u_MAP)||^2;
    "unbiased" drops the factor 2. A zero residual floors sigma^2 at
    `floor` and flags the fit as degenerate.
    """
    from .map_estimate import multi_start  # deferred: avoids import cycle

    z = np.asarray(z, dtype=float)
    n = z.size
    if n < 2:
        raise ValueError("noise estimation needs at least 2 observations")
    factor = {"paper": 2.0 / (n - 1), "unbiased": 1.0 / (n - 1)}[variance_factor]
    sigma2 = float(sigma2_init)
    history = []
    degenerate = False
    u_map = None
    for _ in range(iters):
        model = PosteriorModel(grid, basis, prior, Dataset(t, x, z, sigma2))
        result = multi_start(starts, model, rng, tol=tol, max_iter=max_iter)
        u_map = result.u_map
        misfit = float(np.sum((z - model.predict(u_map)) ** 2))
        sigma2 = factor * misfit
        if sigma2 < floor:
            sigma2 = floor
            degenerate = True
        history.append(sigma2)
    return NoiseEstimate(sigma2=sigma2, u_map=u_map, history=np.array(history),
                         degenerate=degenerate)
