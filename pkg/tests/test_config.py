import copy

import pytest

from vgibbs.config import ConfigError, ExperimentConfig, from_dict, load, replace_run

BASE = {
    "model": {"d": 1, "delta": 1.0, "R": 1.0, "alpha_mark": 1.0, "beta_mark": 2.0},
    "run": {"box_lo": [-1], "box_hi": [1]},
}


def with_(path, value):
    data = copy.deepcopy(BASE)
    *head, last = path.split(".")
    node = data
    for h in head:
        node = node.setdefault(h, {})
    node[last] = value
    return data


def test_minimal_config_resolves_defaults():
    cfg = from_dict(copy.deepcopy(BASE))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.model.potential == "hard_range" and cfg.run.box_lo == (-1,) and cfg.run.mcmc.thin == 10
    assert cfg.to_dict()["run"]["event"]["kind"] == "tv"


def test_shipped_config_loads():
    cfg = load("configs/quick.toml")
    assert cfg.run.dlr_rings == (1, 2) and cfg.output.dir == "out/quick"


@pytest.mark.parametrize("data, msg", [
    ({**BASE, "extra": {}}, "unknown table"),
    ({"run": {}}, "missing [model]"),
    (with_("model.colour", 1), "unknown key(s) in [model]: colour"),
    (with_("run.mcmc.speed", 1), "unknown key(s) in [run.mcmc]: speed"),
    ({"model": {"d": 1, "delta": 1.0, "R": 1.0}}, "missing required key(s) in [model]: alpha_mark, beta_mark"),
])
def test_schema_errors(data, msg):
    with pytest.raises(ConfigError) as e:
        from_dict(data)
    assert msg in str(e.value)


@pytest.mark.parametrize("path, value, msg", [
    ("model.d", 4, "model.d must be an integer in 1..3"),
    ("model.d", True, "model.d must be an integer in 1..3"),
    ("model.delta", 0.0, "model.delta must be > 0"),
    ("model.R", -1.0, "model.R must be > 0"),
    ("model.alpha_mark", 2.0, "model.alpha_mark must lie in [d, d+1)"),
    ("model.beta_mark", 0.0, "model.beta_mark must be > 0"),
    ("model.eps_trunc", 0.0, "model.eps_trunc must be > 0"),
    ("model.potential", "lennard_jones", "model.potential must be one of"),
    ("model.c", 0.0, "model.c must be > 0"),
    ("model.cutoff", 0.5, None),
    ("model.direction", [0.0], "model.direction must be a nonzero vector of length d"),
    ("run.suite", "everything", "run.suite must be one of"),
    ("run.box_hi", [-2], "run.box_lo/box_hi must be integer d-vectors with lo <= hi"),
    ("run.cubes", [[0]], "give either run.cubes or run.box_lo/box_hi, not both"),
    ("run.xi", "file", "run.xi = 'file' needs run.xi_file"),
    ("run.xi", "random", "run.xi must be empty, file or sampled"),
    ("run.n_samples", -1, "run.n_samples must be an integer >= 0"),
    ("run.seed", 1.5, "run.seed must be an integer >= 0"),
    ("run.sampler", "gibbs", "run.sampler must be rejection or mcmc"),
    ("run.alpha_temp", 0, "run.alpha_temp must be > 0"),
    ("run.lyapunov_betas", [1.5], "run.lyapunov_betas are fractions of A in [0, 1]"),
    ("run.dlr_rings", [2, 1], "run.dlr_rings must be increasing integers >= 1"),
    ("run.mcmc.p_mark", 0.5, "run.mcmc proposal weights must be >= 0 and sum to 1"),
    ("run.mcmc.thin", 0, "run.mcmc.thin must be an integer >= 1"),
    ("run.event.op", "==", "run.event.op must be one of"),
    ("output.formats", ["xml"], "output.formats must be a subset of"),
])
def test_validation_messages(path, value, msg):
    data = with_(path, value)
    if path == "model.cutoff":
        data["model"]["potential"] = "bump"
        msg = "model.cutoff applies to hard_range only"
    with pytest.raises(ConfigError) as e:
        from_dict(data)
    assert msg in str(e.value)


def test_region_required():
    data = copy.deepcopy(BASE)
    del data["run"]
    with pytest.raises(ConfigError, match="run.cubes or run.box_lo"):
        from_dict(data)


def test_replace_run_revalidates():
    cfg = from_dict(copy.deepcopy(BASE))
    assert replace_run(cfg, seed=5).run.seed == 5
    with pytest.raises(ConfigError):
        replace_run(cfg, seed=-5)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\nd = 1")
    with pytest.raises(ConfigError, match="not valid TOML"):
        load(bad)
