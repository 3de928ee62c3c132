"""1D parabolic forward problem on a space-time lattice.

P1 finite elements in space (lumped mass by default), implicit Euler in
time (Crank-Nicolson available for the forward solve only). The adjoint
and tangent solvers are exact discrete transposes/linearizations of the
implicit Euler scheme, so gradients assembled from them match finite
differences of any functional of the trajectory to solver precision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform lattice on [0, L] x [0, T].

    Interior spatial nodes are 1..nx; nodes 0 and nx+1 are the Dirichlet
    boundary and always carry the value 0. Time levels are 0..nt.
    """

    L: float
    T: float
    nx: int
    nt: int

    @property
    def dx(self) -> float:
        return self.L / (self.nx + 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def shape(self) -> tuple[int, int]:
        """Lattice shape (nt+1, nx+2), time-major."""
        return (self.nt + 1, self.nx + 2)

    def space_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.nx + 2)

    def time_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


@dataclass(frozen=True)
class PdeCoefficients:
    """Constant decay and diffusion rates. Diffusion must be positive."""

    lam: float
    diffusion: float

    def __post_init__(self):
        if not np.isfinite(self.lam) or not np.isfinite(self.diffusion):
            raise ValueError("coefficients must be finite")


def build_grid(L: float, T: float, nx: int, nt: int) -> SpaceTimeGrid:
    """Validate and build a uniform space-time grid."""
    if L <= 0 or T <= 0:
        raise ValueError(f"domain extents must be positive, got L={L}, T={T}")
    if nx < 2:
        raise ValueError(f"need at least 2 interior spatial nodes, got nx={nx}")
    if nt < 1:
        raise ValueError(f"need at least 1 time step, got nt={nt}")
    return SpaceTimeGrid(float(L), float(T), int(nx), int(nt))


def assemble_operators(grid: SpaceTimeGrid, lumped: bool = True):
    """Mass and stiffness matrices over interior nodes (CSR, symmetric).

    Lumped mass is dx*I (row-sum lumping of the P1 mass matrix); the
    consistent P1 mass matrix is available with lumped=False. The
    stiffness stencil is (-1, 2, -1)/dx.
    """
    nx, dx = grid.nx, grid.dx
    if lumped:
        M = sparse.identity(nx, format="csr") * dx
    else:
        M = sparse.diags_array(
            [np.full(nx - 1, dx / 6), np.full(nx, 2 * dx / 3), np.full(nx - 1, dx / 6)],
            offsets=[-1, 0, 1],
        ).tocsr()
    K = sparse.diags_array(
        [np.full(nx - 1, -1 / dx), np.full(nx, 2 / dx), np.full(nx - 1, -1 / dx)],
        offsets=[-1, 0, 1],
    ).tocsr()
    return M, K


def _banded(mat: sparse.spmatrix, nx: int) -> np.ndarray:
    """Tridiagonal CSR -> (3, nx) banded storage for scipy.linalg.solve_banded."""
    d = mat.todia()
    ab = np.zeros((3, nx))
    for off, data in zip(d.offsets, d.data):
        ab[1 - off, :] = data
    return ab


def _mul_tridiag(ab: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Multiply a vector by a tridiagonal matrix in banded storage."""
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


class _Scheme:
    """Banded operators for one (lambda, D) pair, shared by all solves."""

    def __init__(self, coeffs: PdeCoefficients, grid: SpaceTimeGrid, lumped: bool = True):
        if coeffs.diffusion <= 0:
            raise ValueError(
                f"diffusion must be positive, got {coeffs.diffusion}"
            )
        M, K = assemble_operators(grid, lumped=lumped)
        self.grid = grid
        self.Mb = _banded(M, grid.nx)
        self.Kb = _banded(K, grid.nx)
        dt = grid.dt
        # implicit Euler step matrix M + dt*(lam*M + D*K)
        self.Ab = self.Mb * (1 + dt * coeffs.lam) + dt * coeffs.diffusion * self.Kb
        # Crank-Nicolson: (M + dt/2 B) y+ = (M - dt/2 B) y + dt M (f+f+)/2
        self.Bb = coeffs.lam * self.Mb + coeffs.diffusion * self.Kb

    def solve_step(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.Ab, rhs)

    def solve_step_cn(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.Mb + 0.5 * self.grid.dt * self.Bb, rhs)

    def mass(self, v: np.ndarray) -> np.ndarray:
        return _mul_tridiag(self.Mb, v)

    def stiffness(self, v: np.ndarray) -> np.ndarray:
        return _mul_tridiag(self.Kb, v)


def solve_forward(
    coeffs: PdeCoefficients,
    source: np.ndarray,
    grid: SpaceTimeGrid,
    *,
    scheme: str = "implicit_euler",
    lumped: bool = True,
) -> np.ndarray:
    """Solve the parabolic equation for a nodal source field.

    Args:
        coeffs: decay and diffusion rates (diffusion > 0).
        source: source values on the (nt+1, nx+2) lattice.
        grid: space-time grid.
        scheme: "implicit_euler" (default) or "crank_nicolson".
        lumped: lumped P1 mass (guarantees the discrete maximum principle).

    Returns:
        Nodal trajectory on the (nt+1, nx+2) lattice, zero at t=0 and on
        the boundary.
    """
    source = np.asarray(source, dtype=float)
    if source.shape != grid.shape:
        raise ValueError(f"source shape {source.shape} != lattice {grid.shape}")
    op = _Scheme(coeffs, grid, lumped=lumped)
    dt = grid.dt
    y = np.zeros(grid.shape)
    yi = np.zeros(grid.nx)
    if scheme == "implicit_euler":
        for n in range(grid.nt):
            rhs = op.mass(yi) + dt * op.mass(source[n + 1, 1:-1])
            yi = op.solve_step(rhs)
            y[n + 1, 1:-1] = yi
    elif scheme == "crank_nicolson":
        for n in range(grid.nt):
            favg = 0.5 * (source[n, 1:-1] + source[n + 1, 1:-1])
            rhs = op.mass(yi) - 0.5 * dt * _mul_tridiag(op.Bb, yi) + dt * op.mass(favg)
            yi = op.solve_step_cn(rhs)
            y[n + 1, 1:-1] = yi
    else:
        raise ValueError(f"unknown time scheme {scheme!r}")
    return y


def observation_matrix(points: np.ndarray, grid: SpaceTimeGrid) -> sparse.csr_matrix:
    """Sparse interpolation operator from the flattened lattice to points.

    Each row interpolates one (t, x) point: P1 in space, linear in time.
    Points must lie inside the closed space-time rectangle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError("observation points must be (t, x) pairs")
    t, x = pts[:, 0], pts[:, 1]
    if np.any(t < 0) or np.any(t > grid.T) or np.any(x < 0) or np.any(x > grid.L):
        raise ValueError("observation point outside the space-time rectangle")
    nt, nx = grid.nt, grid.nx
    it = np.minimum((t / grid.dt).astype(int), nt - 1)
    wt = t / grid.dt - it
    jx = np.minimum((x / grid.dx).astype(int), nx)
    wx = x / grid.dx - jx
    ncol = (nt + 1) * (nx + 2)
    rows = np.repeat(np.arange(len(pts)), 4)
    cols = np.stack(
        [it * (nx + 2) + jx, it * (nx + 2) + jx + 1,
         (it + 1) * (nx + 2) + jx, (it + 1) * (nx + 2) + jx + 1],
        axis=1,
    ).ravel()
    vals = np.stack(
        [(1 - wt) * (1 - wx), (1 - wt) * wx, wt * (1 - wx), wt * wx], axis=1
    ).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(pts), ncol))


def observe(solution: np.ndarray, points: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Interpolate a lattice trajectory at (t, x) observation points."""
    return observation_matrix(points, grid) @ np.asarray(solution, dtype=float).ravel()


def solve_adjoint(
    coeffs: PdeCoefficients,
    load: np.ndarray,
    grid: SpaceTimeGrid,
    *,
    lumped: bool = True,
) -> np.ndarray:
    """Backward-in-time adjoint of the implicit Euler scheme.

    `load` is dPhi/dy on the (nt+1, nx+2) lattice (observation residuals
    distributed by the transpose of the interpolation). The returned
    trajectory p satisfies A p^n = M p^{n+1} - load^n with p^{nt+1} = 0,
    the exact transpose of the forward recursion.
    """
    load = np.asarray(load, dtype=float)
    if load.shape != grid.shape:
        raise ValueError(f"load shape {load.shape} != lattice {grid.shape}")
    op = _Scheme(coeffs, grid, lumped=lumped)
    p = np.zeros(grid.shape)
    pi = np.zeros(grid.nx)
    for n in range(grid.nt, 0, -1):
        rhs = op.mass(pi) - load[n, 1:-1]
        pi = op.solve_step(rhs)
        p[n, 1:-1] = pi
    return p


def solve_tangent(
    coeffs: PdeCoefficients,
    base_solution: np.ndarray,
    direction: tuple[float, float, np.ndarray | None],
    grid: SpaceTimeGrid,
    *,
    lumped: bool = True,
) -> np.ndarray:
    """Linearization of the implicit Euler scheme around a base trajectory.

    direction = (dlam, dD, dsource) with dsource a lattice field or None.
    Solves A h^{n+1} = M h^n + dt*M dsource^{n+1}
                       - dt*(dlam*M + dD*K) y^{n+1}.
    """
    dlam, dD, dsrc = direction
    y = np.asarray(base_solution, dtype=float)
    if y.shape != grid.shape:
        raise ValueError(f"base solution shape {y.shape} != lattice {grid.shape}")
    op = _Scheme(coeffs, grid, lumped=lumped)
    dt = grid.dt
    h = np.zeros(grid.shape)
    hi = np.zeros(grid.nx)
    for n in range(grid.nt):
        rhs = op.mass(hi)
        if dsrc is not None:
            rhs += dt * op.mass(dsrc[n + 1, 1:-1])
        if dlam != 0.0:
            rhs -= dt * dlam * op.mass(y[n + 1, 1:-1])
        if dD != 0.0:
            rhs -= dt * dD * op.stiffness(y[n + 1, 1:-1])
        hi = op.solve_step(rhs)
        h[n + 1, 1:-1] = hi
    return h
