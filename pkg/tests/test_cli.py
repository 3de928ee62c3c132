"""End-to-end CLI pipeline: determinism, schemas and error handling."""
import json
from pathlib import Path

import numpy as np
import pytest

from parabolic_invert.cli import load_config, main, validate_summary


def write_config(path, **overrides):
    cfg = {
        "grid": {"L": 1.0, "T": 1.0, "nx": 25, "nt": 12},
        "prior": {"lambda_max": 0.5, "D_max": 0.5, "N": 2, "alpha": 2.0,
                  "eigenvalue_convention": "dirichlet",
                  "normalization": "orthonormal"},
        "kernel": {"kind": "h_mala", "step_size": 0.5, "adapt": True,
                   "target_accept": 0.5},
        "protocol": {"n_iters": 220, "burn_in": 20, "thin": 10, "seed": 3},
        "noise": {"estimate": {"iters": 3, "starts": 1}},
        "map": {"starts": 1, "tol": 1e-6, "max_iter": 100},
        "simulate": {
            "truth": {"lambda": 0.25, "D": 0.15, "xi": [0.8, -0.4, 0.3, 0.1]},
            "observations": {"n": 25, "sigma2": 1e-4},
        },
    }
    cfg.update(overrides)
    Path(path).write_text(json.dumps(cfg))
    return cfg


def run_pipeline(cfgfile, out):
    for cmd in ["simulate", "estimate-noise", "map", "sample", "diagnose"]:
        assert main([cmd, "--config", str(cfgfile), "--out", str(out)]) == 0


class TestConfig:
    def test_defaults_filled(self, tmp_path):
        p = tmp_path / "c.json"
        minimal = {
            "grid": {"L": 1.0, "T": 1.0, "nx": 10, "nt": 5},
            "protocol": {"n_iters": 100, "burn_in": 10, "thin": 5},
            "noise": {"variance": 0.1},
        }
        p.write_text(json.dumps(minimal))
        cfg = load_config(p)
        assert cfg["prior"]["N"] == 10
        assert cfg["kernel"]["kind"] == "pcn"
        assert cfg["protocol"]["seed"] == 0

    def test_invalid_config_rejected(self, tmp_path):
        import jsonschema

        p = tmp_path / "c.json"
        p.write_text(json.dumps({"grid": {"L": -1, "T": 1, "nx": 10, "nt": 5},
                                 "protocol": {"n_iters": 10, "burn_in": 1, "thin": 1},
                                 "noise": {}}))
        with pytest.raises(jsonschema.ValidationError):
            load_config(p)

    def test_missing_sections_rejected(self, tmp_path):
        import jsonschema

        p = tmp_path / "c.json"
        p.write_text(json.dumps({"grid": {"L": 1, "T": 1, "nx": 10, "nt": 5}}))
        with pytest.raises(jsonschema.ValidationError):
            load_config(p)


class TestPipeline:
    def test_full_pipeline_artifacts(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile)
        out = tmp_path / "out"
        run_pipeline(cfgfile, out)
        for name in ["dataset.csv", "truth.json", "noise.json", "map.json",
                     "trace.csv", "samples.csv", "chain_meta.json",
                     "summary.json", "acf.csv", "field_mean.csv", "field_var.csv"]:
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        validate_summary(summary)
        samples = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
        assert samples.shape == (20, 6)  # (220 - 20) / 10 retained
        trace = np.loadtxt(out / "trace.csv", delimiter=",", skiprows=1)
        assert trace.shape == (220, 7)

    def test_byte_identical_reruns(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_pipeline(cfgfile, out1)
        run_pipeline(cfgfile, out2)
        for name in ["dataset.csv", "map.json", "trace.csv", "samples.csv",
                     "summary.json"]:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_seed_override_changes_data(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(cfgfile), "--out", str(out1)]) == 0
        assert main(["simulate", "--config", str(cfgfile), "--out", str(out2),
                     "--seed", "99"]) == 0
        assert (out1 / "dataset.csv").read_bytes() != (out2 / "dataset.csv").read_bytes()

    def test_layout_file_observations(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        layout = tmp_path / "layout.csv"
        np.savetxt(layout, np.array([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]]),
                   delimiter=",", header="t,x", comments="")
        write_config(cfgfile, simulate={
            "truth": {"lambda": 0.25, "D": 0.15, "xi": [0.8, -0.4, 0.3, 0.1]},
            "observations": {"layout_file": str(layout), "sigma2": 0.0},
        })
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfgfile), "--out", str(out)]) == 0
        rows = np.loadtxt(out / "dataset.csv", delimiter=",", skiprows=1)
        assert rows.shape == (3, 3)
        assert np.allclose(rows[:, :2], [[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]])

    def test_resume_matches_straight_run(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile)
        out = tmp_path / "out"
        for cmd in ["simulate", "estimate-noise", "map"]:
            assert main([cmd, "--config", str(cfgfile), "--out", str(out)]) == 0
        assert main(["sample", "--config", str(cfgfile), "--out", str(out)]) == 0
        straight = (out / "samples.csv").read_bytes()
        # rewind the checkpoint to iteration 100 and resume
        ckpt = json.loads((out / "checkpoint.json").read_text())
        assert ckpt["iteration"] == 220
        # rerun interrupted: emulate by sampling again from a mid checkpoint;
        # run_chain checkpoints every 1000, so craft a mid-run one directly
        from parabolic_invert import sampler as S
        from parabolic_invert.cli import RunContext, load_config, _rng_for
        from parabolic_invert.posterior import PosteriorModel

        cfg = load_config(cfgfile)
        ctx = RunContext(cfg, out)
        model = ctx.model(ctx.noise_variance())
        target = S.WhitenedPosterior(model)
        from parabolic_invert.cli import _read_vector_json

        u_map, _ = _read_vector_json(out / "map.json")
        kc = cfg["kernel"]
        kcfg = S.KernelConfig(kind=kc["kind"], step_size=kc["step_size"],
                              adapt=kc["adapt"], target_accept=kc["target_accept"])
        loop = S._Loop(target, target.from_raw(u_map), kcfg, 220, 20, 10,
                       _rng_for(ctx, "sample"))
        while loop.iteration < 100:
            loop.step()
        mid = tmp_path / "mid.json"
        S.save_checkpoint(loop, mid, seed_info=str(ctx.seed))
        assert main(["sample", "--config", str(cfgfile), "--out", str(out),
                     "--resume", str(mid)]) == 0
        assert (out / "samples.csv").read_bytes() == straight

    def test_missing_noise_variance_fails(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfgfile), "--out", str(out)]) == 0
        with pytest.raises(SystemExit):
            main(["map", "--config", str(cfgfile), "--out", str(out)])

    def test_simulate_requires_section(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        cfg = write_config(cfgfile)
        del cfg["simulate"]
        cfgfile.write_text(json.dumps(cfg))
        with pytest.raises(SystemExit):
            main(["simulate", "--config", str(cfgfile), "--out", str(tmp_path / "o")])

    def test_truth_outside_box_rejected(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile, simulate={
            "truth": {"lambda": 0.9, "D": 0.15, "xi": [0.0, 0.0, 0.0, 0.0]},
            "observations": {"n": 5, "sigma2": 0.0},
        })
        with pytest.raises(SystemExit):
            main(["simulate", "--config", str(cfgfile), "--out", str(tmp_path / "o")])

    def test_explicit_noise_variance_skips_estimation(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        write_config(cfgfile, noise={"variance": 1e-4})
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfgfile), "--out", str(out)]) == 0
        assert main(["map", "--config", str(cfgfile), "--out", str(out)]) == 0
        payload = json.loads((out / "map.json").read_text())
        assert payload["sigma2"] == 1e-4
