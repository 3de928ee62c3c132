"""Command-line pipeline: simulate, estimate-noise, map, sample, diagnose.

Every command reads a JSON run configuration (validated against the
shipped schema) and writes its artifacts into the output directory. With
fixed seeds the whole pipeline is deterministic: artifacts are
byte-identical across runs on the same platform.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics
from .forward import build_grid
from .map_estimate import minimize_om, multi_start
from .posterior import Dataset, PosteriorModel, estimate_noise
from .prior import ParameterVector, PriorConfig, basis_for
from .sampler import KernelConfig, WhitenedPosterior, resume_chain, run_chain

_FLOAT_FMT = "%.17g"


def _schema(name: str) -> dict:
    text = resources.files("parabolic_invert.schemas").joinpath(name).read_text()
    return json.loads(text)


def load_config(path) -> dict:
    """Read and validate a run configuration, filling in defaults."""
    cfg = json.loads(Path(path).read_text())
    jsonschema.validate(cfg, _schema("config.schema.json"))
    prior = cfg.setdefault("prior", {})
    prior.setdefault("lambda_max", 0.5)
    prior.setdefault("D_max", 0.5)
    prior.setdefault("N", 10)
    prior.setdefault("alpha", 2.0)
    prior.setdefault("eigenvalue_convention", "paper")
    prior.setdefault("normalization", "orthonormal")
    kern = cfg.setdefault("kernel", {})
    kern.setdefault("kind", "pcn")
    kern.setdefault("step_size", 0.1)
    kern.setdefault("adapt", True)
    kern.setdefault("target_accept", 0.5)
    cfg["protocol"].setdefault("seed", 0)
    cfg.setdefault("map", {})
    cfg["map"].setdefault("starts", 3)
    cfg["map"].setdefault("tol", 1e-6)
    cfg["map"].setdefault("max_iter", 500)
    cfg.setdefault("diagnostics", {}).setdefault("max_lag", 50)
    cfg.setdefault("force_zero_potential", False)
    return cfg


def validate_summary(payload: dict) -> None:
    jsonschema.validate(payload, _schema("summary.schema.json"))


class RunContext:
    """Grid, basis and paths shared by the pipeline commands."""

    def __init__(self, cfg: dict, out: Path, seed_override=None):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        g = cfg["grid"]
        self.grid = build_grid(g["L"], g["T"], g["nx"], g["nt"])
        p = cfg["prior"]
        self.prior = PriorConfig(
            lambda_max=p["lambda_max"],
            D_max=p["D_max"],
            N=p["N"],
            alpha=p["alpha"],
            eigenvalue_convention=p["eigenvalue_convention"],
            normalization=p["normalization"],
        )
        self.basis = basis_for(self.prior, self.grid)
        self.seed = int(seed_override) if seed_override is not None else int(
            cfg["protocol"]["seed"]
        )
        ds = cfg.get("paths", {}).get("dataset")
        self.dataset_path = Path(ds) if ds else self.out / "dataset.csv"

    def read_dataset(self, sigma2: float) -> Dataset:
        rows = np.loadtxt(self.dataset_path, delimiter=",", skiprows=1, ndmin=2)
        return Dataset(rows[:, 0], rows[:, 1], rows[:, 2], sigma2)

    def noise_variance(self) -> float:
        noise_file = self.out / "noise.json"
        if noise_file.exists():
            return json.loads(noise_file.read_text())["sigma2"]
        var = self.cfg["noise"].get("variance")
        if var is None:
            raise SystemExit(
                "no noise variance: set noise.variance or run estimate-noise first"
            )
        return float(var)

    def model(self, sigma2: float) -> PosteriorModel:
        return PosteriorModel(self.grid, self.basis, self.prior,
                              self.read_dataset(sigma2))


def _rng_for(ctx: RunContext, purpose: str) -> np.random.Generator:
    # stable per-purpose streams derived from the one seed
    streams = {"simulate": 1, "noise": 2, "map": 3, "sample": 4}
    return np.random.default_rng([ctx.seed, streams[purpose]])


def _write_vector_json(path: Path, u: ParameterVector, extra: dict) -> None:
    payload = {"lambda": u.lam, "D": u.diffusion, "xi": u.xi.tolist(), **extra}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _read_vector_json(path: Path) -> tuple[ParameterVector, dict]:
    payload = json.loads(Path(path).read_text())
    u = ParameterVector(payload["lambda"], payload["D"], np.array(payload["xi"]))
    return u, payload


def cmd_simulate(ctx: RunContext) -> None:
    sim = ctx.cfg.get("simulate")
    if sim is None:
        raise SystemExit("config has no 'simulate' section")
    truth = ParameterVector(sim["truth"]["lambda"], sim["truth"]["D"],
                            np.array(sim["truth"]["xi"], dtype=float))
    if truth.xi.size != ctx.basis.dim:
        raise SystemExit(f"truth.xi must have length {ctx.basis.dim}")
    if not (0 <= truth.lam <= ctx.prior.lambda_max and
            0 < truth.diffusion <= ctx.prior.D_max):
        raise SystemExit("truth (lambda, D) outside the prior box")
    obs = sim["observations"]
    rng = _rng_for(ctx, "simulate")
    if "layout_file" in obs:
        layout = np.loadtxt(obs["layout_file"], delimiter=",", skiprows=1, ndmin=2)
        t, x = layout[:, 0], layout[:, 1]
    else:
        n = obs["n"]
        t = rng.uniform(0.0, ctx.grid.T, n)
        x = rng.uniform(0.0, ctx.grid.L, n)
    sigma2 = float(obs.get("sigma2", 0.0))
    model = PosteriorModel(ctx.grid, ctx.basis, ctx.prior,
                           Dataset(t, x, np.zeros_like(t), max(sigma2, 1.0)))
    z = model.predict(truth)
    if sigma2 > 0:
        z = z + np.sqrt(sigma2) * rng.standard_normal(z.size)
    rows = np.column_stack([t, x, z])
    np.savetxt(ctx.dataset_path, rows, delimiter=",", header="t,x,z", comments="",
               fmt=_FLOAT_FMT)
    _write_vector_json(ctx.out / "truth.json", truth, {"sigma2": sigma2})
    print(f"wrote {rows.shape[0]} observations to {ctx.dataset_path}")


def cmd_estimate_noise(ctx: RunContext) -> None:
    est = ctx.cfg["noise"].get("estimate", {})
    rows = np.loadtxt(ctx.dataset_path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[0] < 2:
        raise SystemExit("noise estimation needs at least 2 observations")
    result = estimate_noise(
        ctx.grid,
        ctx.basis,
        ctx.prior,
        rows[:, 0],
        rows[:, 1],
        rows[:, 2],
        _rng_for(ctx, "noise"),
        iters=est.get("iters", 10),
        starts=est.get("starts", 3),
        sigma2_init=est.get("sigma2_init", 1.0),
        variance_factor=est.get("variance_factor", "paper"),
        tol=ctx.cfg["map"]["tol"],
        max_iter=ctx.cfg["map"]["max_iter"],
    )
    payload = {
        "sigma2": result.sigma2,
        "history": result.history.tolist(),
        "degenerate": result.degenerate,
        "u_map": {"lambda": result.u_map.lam, "D": result.u_map.diffusion,
                  "xi": result.u_map.xi.tolist()},
    }
    (ctx.out / "noise.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"estimated sigma2 = {result.sigma2:.6g}")


def cmd_map(ctx: RunContext) -> None:
    sigma2 = ctx.noise_variance()
    model = ctx.model(sigma2)
    rng = _rng_for(ctx, "map")
    mcfg = ctx.cfg["map"]
    result = multi_start(mcfg["starts"], model, rng, tol=mcfg["tol"],
                         max_iter=mcfg["max_iter"])
    noise_file = ctx.out / "noise.json"
    if noise_file.exists():
        # refine from the noise-routine MAP as well; keep the better one
        um = json.loads(noise_file.read_text())["u_map"]
        warm_start = ParameterVector(um["lambda"], um["D"], np.array(um["xi"]))
        warm = minimize_om(model, warm_start, tol=mcfg["tol"],
                           max_iter=mcfg["max_iter"])
        if warm.objective < result.objective:
            result = warm
    report = model.potential(result.u_map)
    _write_vector_json(
        ctx.out / "map.json",
        result.u_map,
        {
            "objective": result.objective,
            "phi": report.phi,
            "onsager_machlup": model.onsager_machlup(result.u_map),
            "converged": result.converged,
            "iterations": result.iterations,
            "sigma2": sigma2,
        },
    )
    diagnostics.write_field_csv(model, model.source(result.u_map),
                                model.forward(result.u_map), ctx.out / "map_fields.csv")
    print(f"MAP objective I = {result.objective:.6g}, phi = {report.phi:.6g}")


def cmd_sample(ctx: RunContext, resume: Path | None = None) -> None:
    sigma2 = ctx.noise_variance()
    model = ctx.model(sigma2)
    target = WhitenedPosterior(model,
                               zero_potential=ctx.cfg["force_zero_potential"])
    checkpoint = ctx.out / "checkpoint.json"
    if resume is not None:
        chain = resume_chain(target, resume, checkpoint_every=1000)
    else:
        u_map, _ = _read_vector_json(ctx.out / "map.json")
        kc = ctx.cfg["kernel"]
        config = KernelConfig(kind=kc["kind"], step_size=kc["step_size"],
                              adapt=kc["adapt"], target_accept=kc["target_accept"])
        proto = ctx.cfg["protocol"]
        chain = run_chain(
            target,
            target.from_raw(u_map),
            config,
            proto["n_iters"],
            proto["burn_in"],
            proto["thin"],
            _rng_for(ctx, "sample"),
            checkpoint_path=checkpoint,
            checkpoint_every=1000,
            seed_info=str(ctx.seed),
        )
    diagnostics.write_trace_csv(chain, ctx.out / "trace.csv")
    np.savetxt(ctx.out / "samples.csv", chain.states, delimiter=",",
               header=",".join(["lambda", "D"] + [f"xi_{k}" for k in range(ctx.basis.dim)]),
               comments="", fmt=_FLOAT_FMT)
    meta = {
        "acceptance_rate": chain.acceptance_rate,
        "n_retained": chain.n_retained,
        "step_size_final": chain.step_size_final,
        "kind": chain.kind,
    }
    (ctx.out / "chain_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    print(f"retained {chain.n_retained} samples, acceptance {chain.acceptance_rate:.3f}")


def cmd_diagnose(ctx: RunContext) -> None:
    sigma2 = ctx.noise_variance()
    model = ctx.model(sigma2)
    states = np.loadtxt(ctx.out / "samples.csv", delimiter=",", skiprows=1, ndmin=2)
    trace = np.loadtxt(ctx.out / "trace.csv", delimiter=",", skiprows=1, ndmin=2)
    if states.size == 0:
        raise SystemExit("empty chain: nothing to diagnose")
    meta = json.loads((ctx.out / "chain_meta.json").read_text())
    proto = ctx.cfg["protocol"]
    from .sampler import Chain

    chain = Chain(
        states=states,
        phis=np.zeros(states.shape[0]),
        trace=trace,
        accepted=np.zeros(trace.shape[0], dtype=bool),
        acceptance_rate=meta["acceptance_rate"],
        n_iters=proto["n_iters"],
        burn_in=proto["burn_in"],
        thin=proto["thin"],
        seed_info=str(ctx.seed),
        step_size_final=meta["step_size_final"],
        kind=meta["kind"],
    )
    report = diagnostics.summarize(chain, model)
    diagnostics.write_acf_csv(chain, ctx.out / "acf.csv",
                              max_lag=ctx.cfg["diagnostics"]["max_lag"])
    payload = diagnostics.summary_dict(report)
    validate_summary(payload)
    (ctx.out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    diagnostics.write_field_csv(model, report.source_mean, report.solution_mean,
                                ctx.out / "field_mean.csv")
    diagnostics.write_field_csv(model, report.source_var, report.solution_var,
                                ctx.out / "field_var.csv")
    print(
        "summary: lambda = "
        f"{report.conditional_mean.lam:.4g}, D = {report.conditional_mean.diffusion:.4g}"
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parabolic-invert",
        description="Bayesian inversion of a linear parabolic PDE",
    )
    parser.add_argument("command",
                        choices=["simulate", "estimate-noise", "map", "sample", "diagnose"])
    parser.add_argument("--config", required=True, help="run configuration JSON")
    parser.add_argument("--seed", type=int, default=None, help="override protocol.seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--resume", default=None,
                        help="chain checkpoint to resume (sample only)")
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    ctx = RunContext(cfg, Path(args.out), seed_override=args.seed)
    if args.command == "simulate":
        cmd_simulate(ctx)
    elif args.command == "estimate-noise":
        cmd_estimate_noise(ctx)
    elif args.command == "map":
        cmd_map(ctx)
    elif args.command == "sample":
        cmd_sample(ctx, resume=Path(args.resume) if args.resume else None)
    elif args.command == "diagnose":
        cmd_diagnose(ctx)
    return 0


if __name__ == "__main__":
    sys.exit(main())
