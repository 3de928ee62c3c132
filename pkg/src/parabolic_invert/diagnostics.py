"""Chain post-processing: autocorrelation, thinning, posterior summaries
and figure data (CSV) emission. Plots are left to external tools; every
diagnostic is emitted as tidy CSV or JSON."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .posterior import PosteriorModel
from .prior import ParameterVector, log_prior_over_ref
from .sampler import Chain

_FLOAT_FMT = "%.17g"

TRACE_COLUMNS = ("iteration", "phi", "lambda", "D", "xi_0", "xi_1", "xi_2")


def acf(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation estimator; acf[0] == 1."""
    x = np.asarray(series, dtype=float)
    if max_lag < 1 or x.size <= max_lag:
        raise ValueError("need series length > max_lag >= 1")
    x = x - x.mean()
    c0 = float(x @ x)
    if c0 == 0.0:
        raise ValueError("constant series has no autocorrelation")
    full = np.correlate(x, x, mode="full")[x.size - 1:]
    return full[: max_lag + 1] / c0


def thin(chain: Chain, stride: int) -> Chain:
    """Keep every stride-th retained state (order preserved).

    A stride larger than the chain length keeps only the first state.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return dataclasses.replace(
        chain,
        states=chain.states[::stride],
        phis=chain.phis[::stride],
        thin=chain.thin * stride,
    )


@dataclass
class SummaryReport:
    conditional_mean: ParameterVector
    sample_map: ParameterVector
    sample_map_log_density: float
    acceptance_rate: float
    n_retained: int
    histograms: dict
    source_mean: np.ndarray
    source_var: np.ndarray
    solution_mean: np.ndarray
    solution_var: np.ndarray


def _posterior_log_density(model: PosteriorModel, u: ParameterVector) -> float:
    """Constant-free posterior log-density w.r.t. the reference measure."""
    lpr = log_prior_over_ref(u, model.prior)
    if lpr == -np.inf or u.diffusion <= 0:
        return -np.inf
    return -model.potential(u).phi + lpr - 0.5 * float(u.xi @ u.xi)


def summarize(chain: Chain, model: PosteriorModel, *, histogram_bins: int = 30) -> SummaryReport:
    """Posterior summaries from retained states.

    conditional_mean is the coordinate-wise mean; sample_map the retained
    state of highest posterior log-density. Pointwise mean and variance
    lattices of the source f* and the solution y are computed by
    re-solving the forward model for every retained state (fixed
    summation order, deterministic).
    """
    if chain.n_retained == 0:
        raise ValueError("cannot summarize an empty chain")
    states = chain.states
    mean_u = ParameterVector.from_array(states.mean(axis=0))
    log_dens = np.array(
        [_posterior_log_density(model, ParameterVector.from_array(s)) for s in states]
    )
    best = int(np.argmax(log_dens))
    src_sum = np.zeros(model.grid.shape)
    src_sq = np.zeros(model.grid.shape)
    sol_sum = np.zeros(model.grid.shape)
    sol_sq = np.zeros(model.grid.shape)
    for s in states:
        u = ParameterVector.from_array(s)
        fstar = model.source(u)
        y = model.forward(u)
        src_sum += fstar
        src_sq += fstar**2
        sol_sum += y
        sol_sq += y**2
    n = chain.n_retained
    src_mean = src_sum / n
    sol_mean = sol_sum / n
    src_var = np.maximum(src_sq / n - src_mean**2, 0.0)
    sol_var = np.maximum(sol_sq / n - sol_mean**2, 0.0)
    histograms = {}
    scalars = {"lambda": states[:, 0], "D": states[:, 1]}
    for k in range(min(3, states.shape[1] - 2)):
        scalars[f"xi_{k}"] = states[:, 2 + k]
    for name, vals in scalars.items():
        counts, edges = np.histogram(vals, bins=histogram_bins)
        histograms[name] = {"counts": counts.tolist(), "edges": edges.tolist()}
    return SummaryReport(
        conditional_mean=mean_u,
        sample_map=ParameterVector.from_array(states[best]),
        sample_map_log_density=float(log_dens[best]),
        acceptance_rate=chain.acceptance_rate,
        n_retained=n,
        histograms=histograms,
        source_mean=src_mean,
        source_var=src_var,
        solution_mean=sol_mean,
        solution_var=sol_var,
    )


# -- CSV / JSON emission ------------------------------------------------------


def _write_csv(path, header: str, rows: np.ndarray) -> None:
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt=_FLOAT_FMT)


def write_trace_csv(chain: Chain, path) -> None:
    """Per-iteration trace of phi, lambda, D, xi_0, xi_1, xi_2."""
    _write_csv(path, ",".join(TRACE_COLUMNS), chain.trace)


def write_acf_csv(chain: Chain, path, max_lag: int = 50) -> None:
    """Autocorrelations of the six trace series over post-burn-in iterations."""
    post = chain.trace[chain.trace[:, 0] > chain.burn_in]
    max_lag = min(max_lag, post.shape[0] - 1)
    cols = [np.arange(max_lag + 1)]
    for j in range(1, chain.trace.shape[1]):
        series = post[:, j]
        if np.ptp(series) == 0.0:
            cols.append(np.full(max_lag + 1, np.nan))
        else:
            cols.append(acf(series, max_lag))
    header = "lag," + ",".join(TRACE_COLUMNS[1:])
    _write_csv(path, header, np.column_stack(cols))


def write_field_csv(model: PosteriorModel, source_lattice, solution_lattice, path) -> None:
    """Lattice-indexed CSV with t, x, source and solution values."""
    grid = model.grid
    tt, xx = np.meshgrid(grid.time_nodes(), grid.space_nodes(), indexing="ij")
    rows = np.column_stack(
        [tt.ravel(), xx.ravel(), np.asarray(source_lattice).ravel(),
         np.asarray(solution_lattice).ravel()]
    )
    _write_csv(path, "t,x,source,solution", rows)


def summary_dict(report: SummaryReport) -> dict:
    return {
        "conditional_mean": {
            "lambda": report.conditional_mean.lam,
            "D": report.conditional_mean.diffusion,
            "xi": report.conditional_mean.xi.tolist(),
        },
        "sample_map": {
            "lambda": report.sample_map.lam,
            "D": report.sample_map.diffusion,
            "xi": report.sample_map.xi.tolist(),
        },
        "sample_map_log_density": report.sample_map_log_density,
        "acceptance_rate": report.acceptance_rate,
        "n_retained": report.n_retained,
        "histograms": report.histograms,
    }


def write_summary_json(report: SummaryReport, path) -> None:
    Path(path).write_text(json.dumps(summary_dict(report), indent=2, sort_keys=True))
