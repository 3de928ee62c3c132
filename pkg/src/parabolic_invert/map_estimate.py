"""MAP estimation: bound-constrained quasi-Newton minimization of the
Onsager-Machlup functional, with multi-start restarts."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator
from scipy.optimize import minimize

from .posterior import PosteriorModel, thread_count
from .prior import ParameterVector, sample_prior

EPS_D = 1e-8  # positive floor realizing the open constraint D > 0


@dataclass(frozen=True)
class OptimResult:
    u_map: ParameterVector
    objective: float
    iterations: int
    converged: bool
    grad_norm: float
    message: str = ""


def _objective(model: PosteriorModel):
    def fun(x: np.ndarray):
        u = ParameterVector.from_array(x)
        phi = model.potential(u).phi
        val = phi + 0.5 * float(u.xi @ u.xi)
        grad = model.grad_potential(u)
        grad[2:] += u.xi
        return val, grad

    return fun


def minimize_om(
    model: PosteriorModel,
    start: ParameterVector,
    *,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> OptimResult:
    """L-BFGS-B minimization of I(u) = Phi(u) + 0.5 ||xi||^2.

    Bounds: lambda in [0, lambda_max], D in [EPS_D, D_max], xi free.
    tol is the projected-gradient tolerance.
    """
    x0 = start.as_array()
    bounds = [(0.0, model.prior.lambda_max), (EPS_D, model.prior.D_max)] + [
        (None, None)
    ] * model.basis.dim
    if not (bounds[0][0] <= x0[0] <= bounds[0][1]) or not (
        bounds[1][0] <= x0[1] <= bounds[1][1]
    ):
        raise ValueError("start point outside the (lambda, D) bounds")
    fun = _objective(model)
    f0, _ = fun(x0)
    if not np.isfinite(f0):
        raise ValueError("objective not finite at the start point")
    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-14},
    )
    return OptimResult(
        u_map=ParameterVector.from_array(res.x),
        objective=float(res.fun),
        iterations=int(res.nit),
        converged=bool(res.success),
        grad_norm=float(np.max(np.abs(res.jac))),
        message=str(res.message),
    )


def multi_start(
    k: int,
    model: PosteriorModel,
    rng: Generator,
    *,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> OptimResult:
    """Best of k starts; deterministic given the RNG state.

    The first start is the prior center (lambda_max/2, D_max/2, xi = 0);
    the remaining k - 1 are sampled from the prior. Ties and selection
    order are by (objective, start index). Start points with huge latent
    fields (exp overflow) are skipped; if every start fails, the errors
    are aggregated.
    """
    if k < 1:
        raise ValueError("need at least one start")
    starts = [
        ParameterVector(model.prior.lambda_max / 2, model.prior.D_max / 2,
                        np.zeros(model.basis.dim))
    ]
    for _ in range(k - 1):
        u = sample_prior(model.prior, rng)
        u.diffusion = max(u.diffusion, EPS_D)
        starts.append(u)

    def run(u: ParameterVector):
        try:
            return minimize_om(model, u, tol=tol, max_iter=max_iter)
        except (ValueError, FloatingPointError) as exc:
            return exc

    workers = min(thread_count(), k)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(run, starts))
    else:
        outcomes = [run(u) for u in starts]
    results = [(r.objective, i, r) for i, r in enumerate(outcomes) if isinstance(r, OptimResult)]
    if not results:
        raise ValueError(
            "all restarts failed: " + "; ".join(str(r) for r in outcomes)
        )
    return min(results, key=lambda t: (t[0], t[1]))[2]
