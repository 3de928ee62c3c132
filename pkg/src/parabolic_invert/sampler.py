"""Function-space Metropolis-Hastings in whitened coordinates.

Kernels: pCN (reference-preserving autoregressive proposal) and the
semi-implicit Langevin kernel with preconditioner K(u) = (I + H(u))^-1,
either position-dependent ("inf_mmala") or frozen at the initial state
("h_mala"). All algebra is done in coordinates where the Gaussian
reference has zero mean and identity covariance, which is exactly
equivalent by linearity and keeps the formulas simple.

A target object must provide:
    dim                  -- state dimension
    phi(v)               -- negative log-likelihood at whitened v
    log_prior_ref(v)     -- ln d(mu_0)/d(mu_ref) at v (-inf outside support)
    grad_phi(v)          -- gradient of phi in whitened coordinates
    gn_hessian(v)        -- Gauss-Newton Hessian in whitened coordinates
and optionally to_raw_array(v) for recording states in model coordinates.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Generator
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .posterior import PosteriorModel
from .prior import ParameterVector, log_prior_over_ref, reference_measure

_GEOMETRIC = ("inf_mmala", "h_mala")


@dataclass(frozen=True)
class KernelConfig:
    """Proposal kernel settings.

    kind: "pcn", "inf_mmala" (position-dependent preconditioner) or
    "h_mala" (preconditioner frozen at the chain's initial state).
    step_size h > 0 enters through rho = (1-h/4)/(1+h/4); when adapt is set,
    h is tuned by dual averaging during burn-in and frozen afterwards.
    """

    kind: str = "pcn"
    step_size: float = 0.1
    adapt: bool = True
    target_accept: float = 0.5
    jitter_retries: int = 3

    def __post_init__(self):
        if self.kind not in ("pcn",) + _GEOMETRIC:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")


def rho_of(h: float) -> float:
    """AR(1) coefficient paired with the sqrt(h)/2 drift.

    rho = (1 - h/4)/(1 + h/4) makes the drift coefficient
    sqrt(1 - rho^2) * sqrt(h)/2 equal 1 - rho, so the geometric kernel is
    exact (acceptance 1) on Gaussian targets whose Hessian matches the
    preconditioner. h = 4 gives rho = 0, an independence proposal.
    """
    return (1.0 - 0.25 * h) / (1.0 + 0.25 * h)


class WhitenedPosterior:
    """Adapter exposing a PosteriorModel in whitened coordinates.

    v = ((lambda - lambda_ref)/sigma_lambda, (D - D_ref)/sigma_D, xi);
    the reference measure is N(0, I) in these coordinates.

    zero_potential=True replaces phi by 0 (prior-target test mode).
    """

    def __init__(self, model: PosteriorModel, *, zero_potential: bool = False):
        self.model = model
        self.prior = model.prior
        ref = reference_measure(model.prior)
        self.scale = np.ones(model.dim)
        self.scale[0] = np.sqrt(ref.sigma_lambda2)
        self.scale[1] = np.sqrt(ref.sigma_D2)
        self.shift = np.zeros(model.dim)
        self.shift[0] = ref.lambda_ref
        self.shift[1] = ref.D_ref
        self.dim = model.dim
        self.zero_potential = zero_potential

    def to_raw_array(self, v: np.ndarray) -> np.ndarray:
        return self.shift + self.scale * v

    def to_raw(self, v: np.ndarray) -> ParameterVector:
        return ParameterVector.from_array(self.to_raw_array(v))

    def from_raw(self, u: ParameterVector) -> np.ndarray:
        return (u.as_array() - self.shift) / self.scale

    def log_prior_ref(self, v: np.ndarray) -> float:
        return log_prior_over_ref(self.to_raw(v), self.prior)

    def phi(self, v: np.ndarray) -> float:
        if self.zero_potential:
            return 0.0
        return self.model.potential(self.to_raw(v)).phi

    def grad_phi(self, v: np.ndarray) -> np.ndarray:
        if self.zero_potential:
            return np.zeros(self.dim)
        return self.scale * self.model.grad_potential(self.to_raw(v))

    def gn_hessian(self, v: np.ndarray) -> np.ndarray:
        if self.zero_potential:
            return np.zeros((self.dim, self.dim))
        H = self.model.gauss_newton_hessian(self.to_raw(v))
        return H * np.outer(self.scale, self.scale)


@dataclass
class ChainState:
    """Current state with cached potential value and kernel geometry."""

    v: np.ndarray
    phi: float
    lpr: float
    # geometric-kernel caches (None for pCN)
    g: np.ndarray | None = None
    chol: np.ndarray | None = None  # upper Cholesky factor of K^-1 = I + H
    hess: np.ndarray | None = None
    logdet_kinv: float = 0.0


def _factor_kinv(hess: np.ndarray, retries: int) -> np.ndarray:
    """Upper Cholesky of I + H with jitter retries on indefiniteness."""
    dim = hess.shape[0]
    kinv = np.eye(dim) + hess
    delta = 1e-10 * np.trace(kinv) / dim
    for attempt in range(retries + 1):
        try:
            return cholesky(kinv, lower=False)
        except np.linalg.LinAlgError:
            kinv = kinv + delta * np.eye(dim)
            delta *= 10
    raise np.linalg.LinAlgError("preconditioner factorization failed after jitter retries")


def _geometric_cache(target, v, phi, lpr, hess, retries) -> ChainState:
    chol = _factor_kinv(hess, retries)
    grad = target.grad_phi(v)
    # g = -K (grad_phi - H v) with K = (I + H)^-1
    g = -cho_solve((chol, False), grad - hess @ v)
    logdet_kinv = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return ChainState(v=v, phi=phi, lpr=lpr, g=g, chol=chol, hess=hess,
                      logdet_kinv=logdet_kinv)


def make_state(target, v: np.ndarray, config: KernelConfig,
               frozen_hess: np.ndarray | None = None) -> ChainState:
    """Evaluate potential, prior ratio, and kernel caches at v."""
    v = np.asarray(v, dtype=float)
    lpr = target.log_prior_ref(v)
    if lpr == -np.inf:
        raise ValueError("state outside the prior support")
    phi = target.phi(v)
    if config.kind == "pcn":
        return ChainState(v=v, phi=phi, lpr=lpr)
    hess = frozen_hess if frozen_hess is not None else target.gn_hessian(v)
    return _geometric_cache(target, v, phi, lpr, hess, config.jitter_retries)


def propose_pcn(state: ChainState, h: float, rng: Generator) -> np.ndarray:
    """v' = rho v + sqrt(1 - rho^2) w, w ~ N(0, I)."""
    rho = rho_of(h)
    return rho * state.v + np.sqrt(1 - rho**2) * rng.standard_normal(state.v.size)


def propose_mmala(state: ChainState, h: float, rng: Generator) -> np.ndarray:
    """Draw from N(rho v + sqrt(1-rho^2) (sqrt(h)/2) g, (1-rho^2) K)."""
    rho = rho_of(h)
    z = rng.standard_normal(state.v.size)
    # K^(1/2) z with K^-1 = R^T R (upper R): solve R x = z gives cov K
    noise = solve_triangular(state.chol, z, lower=False)
    w = 0.5 * np.sqrt(h) * state.g + noise
    return rho * state.v + np.sqrt(1 - rho**2) * w


def proposal_log_density(state_from: ChainState, v_to: np.ndarray, h: float) -> float:
    """ln dQ(u, .)/d(mu_ref) at v_to, for the geometric kernels.

    Vanishes identically when the Hessian and drift are zero (the pCN
    limit, which preserves the reference measure).
    """
    rho = rho_of(h)
    s = np.sqrt(1 - rho**2)
    if s == 0.0:
        raise ValueError("degenerate proposal: step size 0")
    w = (v_to - rho * state_from.v) / s
    g, R, H = state_from.g, state_from.chol, state_from.hess
    Rg = R @ g  # |K^{-1/2} g|^2 = g^T (I+H) g
    Rw = R @ w
    return (
        -h / 8.0 * float(Rg @ Rg)
        + 0.5 * np.sqrt(h) * float(Rg @ Rw)
        - 0.5 * float(w @ (H @ w))
        + 0.5 * state_from.logdet_kinv
    )


def acceptance_log_ratio(state_u: ChainState, state_v: ChainState, config: KernelConfig,
                         h: float) -> float:
    """log of the MH ratio, with the posterior density taken w.r.t. the
    Gaussian reference: exp(-phi) * d(mu_0)/d(mu_ref)."""
    if state_v.lpr == -np.inf:
        return -np.inf
    target_term = (state_u.phi - state_v.phi) + (state_v.lpr - state_u.lpr)
    if config.kind == "pcn":
        return target_term
    logq_uv = proposal_log_density(state_u, state_v.v, h)
    logq_vu = proposal_log_density(state_v, state_u.v, h)
    return target_term + logq_vu - logq_uv


@dataclass
class _DualAveraging:
    """Nesterov dual averaging on log h, targeting a mean acceptance rate."""

    mu: float
    target: float
    t0: float = 10.0
    gamma: float = 0.05
    kappa: float = 0.75
    count: int = 0
    h_bar: float = 0.0
    log_step_bar: float = 0.0

    def update(self, accept_prob: float) -> float:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_prob)
        log_step = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        # h = 4 (rho = 0) is already an independence proposal; larger h
        # only shrinks the move again with rho < 0, so cap at 4
        log_step = float(np.clip(log_step, np.log(1e-8), np.log(4.0)))
        w = m ** (-self.kappa)
        self.log_step_bar = w * log_step + (1 - w) * self.log_step_bar
        return float(np.exp(log_step))

    def final(self) -> float:
        return float(np.exp(self.log_step_bar))


@dataclass
class Chain:
    """Retained MCMC states plus the per-iteration trace.

    states holds post-burn-in, thinned states in model (raw) coordinates.
    trace has one row per iteration: (iteration, phi, first 5 state
    coordinates) -- for the full posterior these are lambda, D, xi_0,
    xi_1, xi_2.
    """

    states: np.ndarray
    phis: np.ndarray
    trace: np.ndarray
    accepted: np.ndarray
    acceptance_rate: float
    n_iters: int
    burn_in: int
    thin: int
    seed_info: str
    step_size_final: float
    kind: str

    @property
    def n_retained(self) -> int:
        return self.states.shape[0]


_TRACE_COORDS = 5  # lambda, D, xi_0, xi_1, xi_2


def _trace_row(i, phi, raw):
    row = np.zeros(1 + 1 + _TRACE_COORDS)
    row[0] = i
    row[1] = phi
    k = min(_TRACE_COORDS, raw.size)
    row[2:2 + k] = raw[:k]
    return row


def config_hash(payload) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()


class _Loop:
    """Resumable MH loop state (everything a checkpoint must carry)."""

    def __init__(self, target, init_v, config, n_iters, burn_in, thin, rng):
        if n_iters <= burn_in:
            raise ValueError("n_iters must exceed burn_in")
        if thin < 1:
            raise ValueError("thin must be >= 1")
        self.target = target
        self.config = config
        self.n_iters = n_iters
        self.burn_in = burn_in
        self.thin = thin
        self.rng = rng
        self.frozen_hess = None
        if config.kind == "h_mala":
            self.frozen_hess = target.gn_hessian(np.asarray(init_v, dtype=float))
        self.state = make_state(target, init_v, config, self.frozen_hess)
        self.h = config.step_size
        self.adapter = None
        if config.adapt:
            self.adapter = _DualAveraging(mu=np.log(10 * config.step_size),
                                          target=config.target_accept)
        self.iteration = 0
        self.accept_count = 0
        self.kept: list[np.ndarray] = []
        self.kept_phis: list[float] = []
        self.trace: list[np.ndarray] = []

    def _raw(self, v):
        if hasattr(self.target, "to_raw_array"):
            return self.target.to_raw_array(v)
        return np.asarray(v, dtype=float)

    def step(self):
        cfg, target = self.config, self.target
        self.iteration += 1
        i = self.iteration
        if cfg.kind == "pcn":
            v_new = propose_pcn(self.state, self.h, self.rng)
        else:
            v_new = propose_mmala(self.state, self.h, self.rng)
        lpr_new = target.log_prior_ref(v_new)
        log_u = np.log(self.rng.uniform())
        if lpr_new == -np.inf:
            log_ratio = -np.inf
        else:
            phi_new = target.phi(v_new)
            if cfg.kind == "pcn":
                proposal = ChainState(v=v_new, phi=phi_new, lpr=lpr_new)
            else:
                hess = self.frozen_hess if self.frozen_hess is not None else target.gn_hessian(v_new)
                proposal = _geometric_cache(target, v_new, phi_new, lpr_new, hess,
                                            cfg.jitter_retries)
            log_ratio = acceptance_log_ratio(self.state, proposal, cfg, self.h)
        if log_u < log_ratio:
            self.state = proposal
            self.accept_count += 1
            accepted = True
        else:
            accepted = False
        if self.adapter is not None and i <= self.burn_in:
            alpha = float(np.exp(min(0.0, log_ratio)))
            self.h = self.adapter.update(alpha)
            if i == self.burn_in:
                self.h = self.adapter.final()
        raw = self._raw(self.state.v)
        self.trace.append(np.append(_trace_row(i, self.state.phi, raw), float(accepted)))
        if i > self.burn_in and (i - self.burn_in) % self.thin == 0:
            self.kept.append(raw)
            self.kept_phis.append(self.state.phi)

    def run(self, checkpoint_path=None, checkpoint_every=None, seed_info="") -> Chain:
        while self.iteration < self.n_iters:
            self.step()
            if (
                checkpoint_path is not None
                and checkpoint_every
                and self.iteration % checkpoint_every == 0
            ):
                save_checkpoint(self, checkpoint_path, seed_info)
        if checkpoint_path is not None:
            save_checkpoint(self, checkpoint_path, seed_info)
        trace = np.array(self.trace)
        return Chain(
            states=np.array(self.kept),
            phis=np.array(self.kept_phis),
            trace=trace[:, :-1],
            accepted=trace[:, -1].astype(bool),
            acceptance_rate=self.accept_count / self.n_iters,
            n_iters=self.n_iters,
            burn_in=self.burn_in,
            thin=self.thin,
            seed_info=seed_info,
            step_size_final=self.h,
            kind=self.config.kind,
        )


def run_chain(
    target,
    init_v: np.ndarray,
    config: KernelConfig,
    n_iters: int,
    burn_in: int,
    thin: int,
    rng: Generator,
    *,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int | None = None,
    seed_info: str = "",
) -> Chain:
    """Metropolis-Hastings loop; returns retained states and diagnostics.

    init_v is in the target's (whitened) coordinates. Retained states are
    iterations burn_in + thin, burn_in + 2 thin, ..., n_iters.
    """
    loop = _Loop(target, np.asarray(init_v, dtype=float), config, n_iters, burn_in,
                 thin, rng)
    return loop.run(checkpoint_path, checkpoint_every, seed_info)


# -- checkpointing -----------------------------------------------------------


def save_checkpoint(loop: _Loop, path: str | Path, seed_info: str = "") -> None:
    payload = {
        "version": 1,
        "config": asdict(loop.config),
        "config_hash": config_hash(asdict(loop.config)),
        "protocol": {"n_iters": loop.n_iters, "burn_in": loop.burn_in, "thin": loop.thin},
        "iteration": loop.iteration,
        "state": loop.state.v.tolist(),
        "rng_state": loop.rng.bit_generator.state,
        "step_size": loop.h,
        "adapter": asdict(loop.adapter) if loop.adapter is not None else None,
        "accept_count": loop.accept_count,
        "kept": [k.tolist() for k in loop.kept],
        "kept_phis": loop.kept_phis,
        "trace": [t.tolist() for t in loop.trace],
        "seed_info": seed_info,
        "frozen_hess": loop.frozen_hess.tolist() if loop.frozen_hess is not None else None,
    }
    Path(path).write_text(json.dumps(payload))


def resume_chain(target, path: str | Path, *, checkpoint_every: int | None = None) -> Chain:
    """Continue an interrupted run; the continuation is identical to an
    uninterrupted run with the same seed."""
    payload = json.loads(Path(path).read_text())
    config = KernelConfig(**payload["config"])
    proto = payload["protocol"]
    bitgen_state = payload["rng_state"]
    bg = getattr(np.random, bitgen_state["bit_generator"])()
    bg.state = bitgen_state
    rng = np.random.Generator(bg)
    loop = _Loop.__new__(_Loop)
    loop.target = target
    loop.config = config
    loop.n_iters = proto["n_iters"]
    loop.burn_in = proto["burn_in"]
    loop.thin = proto["thin"]
    loop.rng = rng
    loop.frozen_hess = (
        np.array(payload["frozen_hess"]) if payload.get("frozen_hess") is not None else None
    )
    v = np.array(payload["state"], dtype=float)
    loop.state = make_state(target, v, config, loop.frozen_hess)
    loop.h = payload["step_size"]
    loop.adapter = (
        _DualAveraging(**payload["adapter"]) if payload["adapter"] is not None else None
    )
    loop.iteration = payload["iteration"]
    loop.accept_count = payload["accept_count"]
    loop.kept = [np.array(k) for k in payload["kept"]]
    loop.kept_phis = list(payload["kept_phis"])
    loop.trace = [np.array(t) for t in payload["trace"]]
    return loop.run(path, checkpoint_every, payload.get("seed_info", ""))
