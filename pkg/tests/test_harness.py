import json

import numpy as np
import pytest

from gpcal import io
from gpcal.harness import pipeline
from gpcal.harness.cli import main
from gpcal.harness.config import OUT_DIR_ENV, SCHEMA, ConfigError, hash_of, load_config, resolve
from gpcal.random_field import HyperPrior, expand_over_hyper, SquaredExponential

FAST = {
    "schema": SCHEMA,
    "flow": {"dx": 0.02, "dt": 0.005},
    "kl": {"n_modes": 2, "n_hyper": 12},
    "order": 1,
    "responses": ["v", "P"],
    "mcmc": {"n_samples": 300, "n_burn": 100},
    "surrogate": {"order": 8},
    "mc_samples": 4,
}


@pytest.fixture()
def fast_config(tmp_path):
    p = tmp_path / "fast.json"
    p.write_text(json.dumps(FAST))
    return p


def test_resolve_defaults_and_overrides():
    cfg = resolve()
    assert cfg["schema"] == SCHEMA and cfg["mcmc"]["n_samples"] == 10000
    cfg = resolve({"mcmc": {"n_samples": 5}}, seed=3)
    assert cfg["mcmc"]["n_samples"] == 5 and cfg["mcmc"]["n_burn"] == 1000 and cfg["seed"] == 3
    assert resolve(full_scale=True)["mc_samples"] == 10000


@pytest.mark.parametrize("bad", [
    {"nonsense": 1},
    {"order": 0},
    {"flow": {"dt": 1.0}},
    {"observations": {"locations": [2.0]}},
    {"responses": ["mach"]},
    {"area_priors": {"variance": {"family": "beta", "shape": 1}}},
    {"seed": -1},
])
def test_resolve_rejects(bad):
    with pytest.raises(ConfigError):
        resolve(bad)


def test_env_overrides_out_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    cfg = resolve()
    assert cfg["out_dir"] == str(tmp_path)
    assert hash_of(cfg) == hash_of({**cfg, "out_dir": "elsewhere"})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "noschema.json"
    p.write_text("{}")
    with pytest.raises(ConfigError):
        load_config(p)


def test_testbed(default_cfg):
    clean = pipeline.generate_testbed(pipeline.polynomial(default_cfg["true_area"]), default_cfg, 0.0)
    noisy = pipeline.generate_testbed(pipeline.polynomial(default_cfg["true_area"]), default_cfg)
    again = pipeline.generate_testbed(pipeline.polynomial(default_cfg["true_area"]), default_cfg)
    assert clean.n_obs == 5
    for k in default_cfg["responses"]:
        np.testing.assert_allclose(noisy.sigma[k], 0.01 * np.abs(clean.values[k]))
        np.testing.assert_array_equal(noisy.values[k], again.values[k])


def test_mc_single_sample_has_zero_variance():
    cfg = resolve(FAST)
    mc = pipeline.mc_propagate(cfg, 1)
    for k in cfg["responses"]:
        np.testing.assert_array_equal(mc.variance[k], 0.0)


def test_degenerate_prior_propagation_matches_deterministic():
    cfg = resolve({
        **FAST,
        "area_priors": {"variance": {"family": "fixed", "shape": 0.0}, "corr": {"family": "fixed", "shape": 1.0}},
    })
    prop = pipeline.propagate(cfg)
    det = pipeline.deterministic_solve(pipeline.polynomial(cfg["prior_mean_area"]), pipeline.flow_config(cfg))
    for k in cfg["responses"]:
        np.testing.assert_allclose(prop.responses[k][:, 0], det.responses[k], atol=1e-8)
        np.testing.assert_allclose(prop.responses[k][:, 1:], 0.0, atol=1e-10)


def test_convergence_table_shape():
    cfg = resolve(FAST)
    mc = pipeline.mc_propagate(cfg, 3)
    rows = pipeline.run_convergence_study(cfg, [1, 2], [1], mc=mc)
    assert len(rows) == 2 and all(len(r) == 5 for r in rows)
    rows = pipeline.run_convergence_study(cfg, [1], [1], mc=mc)
    assert len(rows) == 1


def test_io_round_trips(tmp_path):
    priors = (HyperPrior("invgamma", 9.0, 0.5), HyperPrior("gamma", 5.0, 0.2))
    m = expand_over_hyper(SquaredExponential(), priors, 2, n_hyper=6)
    d = io.klmodes_to_dict(m)
    io.write_json(tmp_path / "m.json", d, "h1")
    back = io.klmodes_from_dict(io.read_json(tmp_path / "m.json"))
    np.testing.assert_array_equal(back.l, m.l)
    np.testing.assert_array_equal(back.c, m.c)
    assert back.priors == m.priors
    io.write_csv(tmp_path / "t.csv", ["a", "b"], [[0.1, 1e-17], [2.0, 3.5]], "h2")
    header, rows, h = io.read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"] and h == "h2"
    np.testing.assert_array_equal(rows, [[0.1, 1e-17], [2.0, 3.5]])
    with pytest.raises(ValueError):
        io.klmodes_from_dict({"format": "other"})


def test_cli_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["propagate", "--config", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_cli_bad_arguments():
    assert main(["calibrate", "unknown-scenario"]) == 1
    assert main([]) == 1


def test_cli_convergence_rows(fast_config, tmp_path):
    out = tmp_path / "out"
    assert main(["convergence", "--config", str(fast_config), "--out-dir", str(out),
                 "--modes", "1", "2", "--orders", "1", "2", "--samples", "3"]) == 0
    header, rows, h = io.read_csv(out / "convergence.csv")
    assert rows.shape == (4, 5) and h == hash_of(load_config(fast_config))


def test_cli_calibrate_deterministic(fast_config, tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["calibrate", "baseline", "--config", str(fast_config), "--seed", "7", "--out-dir", str(out)]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].glob("*.csv"))
    assert files
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        assert (outs[0] / name).read_text().startswith("# config_hash=")
    rep = io.read_json(outs[0] / "report_baseline.json")
    t = rep["runs"][0]["timing"]
    assert t["projection_time"] + t["sampling_time"] <= t["total_time"]
    assert main(["report", "--out-dir", str(outs[0])]) == 0


def test_cli_propagate_and_mc(fast_config, tmp_path):
    out = tmp_path / "p"
    assert main(["propagate", "--config", str(fast_config), "--out-dir", str(out)]) == 0
    assert main(["mc-baseline", "--config", str(fast_config), "--out-dir", str(out), "--samples", "2"]) == 0
    for name in ("propagate_moments.csv", "propagate_responses.csv", "mc_moments.csv"):
        assert (out / name).read_text().startswith("# config_hash=")
    field = io.field_from_dict(io.read_json(out / "area_field.json"))
    assert field.coeffs.shape[0] == field.basis.size


def test_scenario_variants():
    cfg = resolve()
    base = pipeline._variants(cfg, "baseline")
    model = pipeline._variants(cfg, "model-error")
    assert len(base) == 1 and len(model) == 2
    assert {v[3] for v in model} == {1.5} and {v[1] for v in model} == {True, False}
    assert len(pipeline._variants(cfg, "prior-sensitivity")) == 2
