"""Experiment configuration: TOML file -> validated, fully resolved ExperimentConfig.

Schema (every key optional unless marked required; unknown keys are errors):

[model]   d*, delta*, R*, potential = zero | hard_range | bump, c, cutoff,
          alpha_mark*, beta_mark*, eps_trunc, positive, direction
[run]     suite, cubes | box_lo + box_hi, xi = empty | file | sampled, xi_file, xi_rings,
          n_samples, seed, sampler = rejection | mcmc, budget, alpha_temp, lyapunov_betas,
          dlr_rings, exclude_diagonal, hamiltonian_instances, moment_runs, dump_count
[run.mcmc]   p_birth, p_death, p_move, p_mark, burn_in, thin, chains, move_scale
[run.event]  kind, cubes, op, threshold
[output]  dir, formats (subset of json, csv, samples)
"""
from __future__ import annotations

import sys
from dataclasses import MISSING, asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SUITES = ("laplace", "moments", "hamiltonian", "partition", "consistency", "dlr", "lyapunov", "tempered", "all")
POTENTIALS = ("zero", "hard_range", "bump")
FORMATS = ("json", "csv", "samples")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int
    delta: float
    R: float
    alpha_mark: float
    beta_mark: float
    potential: str = "hard_range"
    c: float = 0.05
    cutoff: float | None = None
    eps_trunc: float = 1e-3
    positive: bool = True
    direction: tuple | None = None


@dataclass(frozen=True)
class MCMCConfig:
    p_birth: float = 0.3
    p_death: float = 0.3
    p_move: float = 0.3
    p_mark: float = 0.1
    burn_in: int = 10_000
    thin: int = 10
    chains: int = 1000
    move_scale: float | None = None


@dataclass(frozen=True)
class EventConfig:
    kind: str = "tv"
    cubes: tuple | None = None       # default: the first cube of the region
    op: str = "<="
    threshold: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    suite: str = "all"
    cubes: tuple | None = None
    box_lo: tuple | None = None
    box_hi: tuple | None = None
    xi: str = "empty"
    xi_file: str | None = None
    xi_rings: int = 4
    n_samples: int = 10_000
    seed: int = 0
    sampler: str = "rejection"
    budget: int = 1_000_000
    alpha_temp: float = 0.1
    lyapunov_betas: tuple = (0.0, 0.5, 1.0)   # fractions of A
    dlr_rings: tuple = (1, 2, 3)
    exclude_diagonal: bool = False
    hamiltonian_instances: int = 1000
    moment_runs: int = 100
    dump_count: int = 3
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    event: EventConfig = field(default_factory=EventConfig)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    formats: tuple = FORMATS


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name: f for f in cls.__dataclass_fields__.values()}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for key, val in data.items():
        if key in ("mcmc", "event") and cls is RunConfig:
            kwargs[key] = _build(MCMCConfig if key == "mcmc" else EventConfig, val, f"{where}.{key}")
        else:
            kwargs[key] = _tuplify(val)
    missing = [n for n, f in names.items() if n not in kwargs
               and f.default is MISSING and f.default_factory is MISSING]
    if missing:
        raise ConfigError(f"missing required key(s) in [{where}]: {', '.join(missing)}")
    return cls(**kwargs)


def _need(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (isinstance(x, (int, float))) and not isinstance(x, bool)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    m, r, o = cfg.model, cfg.run, cfg.output
    _need(_is_int(m.d) and 1 <= m.d <= 3, "model.d must be an integer in 1..3")
    for name in ("delta", "R", "alpha_mark", "beta_mark", "c", "eps_trunc"):
        _need(_is_num(getattr(m, name)), f"model.{name} must be a number")
    _need(m.delta > 0, "model.delta must be > 0")
    _need(m.R > 0, "model.R must be > 0")
    _need(m.d <= m.alpha_mark < m.d + 1, "model.alpha_mark must lie in [d, d+1)")
    _need(m.beta_mark > 0, "model.beta_mark must be > 0")
    _need(m.eps_trunc > 0, "model.eps_trunc must be > 0")
    _need(m.potential in POTENTIALS, f"model.potential must be one of {POTENTIALS}")
    _need(m.potential == "zero" or m.c > 0, "model.c must be > 0")
    _need(m.cutoff is None or (_is_num(m.cutoff) and m.cutoff > 0), "model.cutoff must be > 0")
    _need(m.cutoff is None or m.potential == "hard_range", "model.cutoff applies to hard_range only")
    _need(isinstance(m.positive, bool), "model.positive must be true or false")
    if m.direction is not None:
        _need(len(m.direction) == m.d and all(_is_num(v) for v in m.direction)
              and any(v != 0 for v in m.direction), "model.direction must be a nonzero vector of length d")

    _need(r.suite in SUITES, f"run.suite must be one of {SUITES}")
    if r.cubes is not None:
        _need(len(r.cubes) > 0 and all(len(k) == m.d and all(_is_int(c) for c in k) for k in r.cubes),
              "run.cubes must be a nonempty list of integer d-vectors")
        _need(r.box_lo is None and r.box_hi is None, "give either run.cubes or run.box_lo/box_hi, not both")
    else:
        _need(r.box_lo is not None and r.box_hi is not None, "run.cubes or run.box_lo + run.box_hi is required")
        _need(len(r.box_lo) == m.d and len(r.box_hi) == m.d
              and all(_is_int(a) and _is_int(b) and a <= b for a, b in zip(r.box_lo, r.box_hi)),
              "run.box_lo/box_hi must be integer d-vectors with lo <= hi")
    _need(r.xi in ("empty", "file", "sampled"), "run.xi must be empty, file or sampled")
    _need(r.xi != "file" or isinstance(r.xi_file, str), "run.xi = 'file' needs run.xi_file")
    _need(_is_int(r.xi_rings) and r.xi_rings >= 1, "run.xi_rings must be an integer >= 1")
    _need(_is_int(r.n_samples) and r.n_samples >= 0, "run.n_samples must be an integer >= 0")
    _need(_is_int(r.seed) and r.seed >= 0, "run.seed must be an integer >= 0")
    _need(r.sampler in ("rejection", "mcmc"), "run.sampler must be rejection or mcmc")
    _need(_is_int(r.budget) and r.budget >= 1, "run.budget must be an integer >= 1")
    _need(_is_num(r.alpha_temp) and r.alpha_temp > 0, "run.alpha_temp must be > 0")
    _need(all(_is_num(b) and 0 <= b <= 1 for b in r.lyapunov_betas), "run.lyapunov_betas are fractions of A in [0, 1]")
    _need(len(r.dlr_rings) >= 1 and all(_is_int(n) and n >= 1 for n in r.dlr_rings)
          and list(r.dlr_rings) == sorted(r.dlr_rings), "run.dlr_rings must be increasing integers >= 1")
    for name in ("hamiltonian_instances", "moment_runs", "dump_count"):
        _need(_is_int(getattr(r, name)) and getattr(r, name) >= 0, f"run.{name} must be an integer >= 0")
    mc = r.mcmc
    ps = (mc.p_birth, mc.p_death, mc.p_move, mc.p_mark)
    _need(all(_is_num(p) and p >= 0 for p in ps) and abs(sum(ps) - 1) <= 1e-9,
          "run.mcmc proposal weights must be >= 0 and sum to 1")
    _need((mc.p_birth > 0) == (mc.p_death > 0), "run.mcmc.p_birth and p_death must be both zero or both positive")
    _need(_is_int(mc.burn_in) and mc.burn_in >= 0, "run.mcmc.burn_in must be an integer >= 0")
    _need(_is_int(mc.thin) and mc.thin >= 1, "run.mcmc.thin must be an integer >= 1")
    _need(_is_int(mc.chains) and mc.chains >= 1, "run.mcmc.chains must be an integer >= 1")
    _need(mc.move_scale is None or (_is_num(mc.move_scale) and mc.move_scale > 0), "run.mcmc.move_scale must be > 0")
    ev = r.event
    _need(ev.kind in ("true", "false", "count", "tv", "vector_norm"), "run.event.kind is not a known event kind")
    _need(ev.op in ("<=", "<", ">=", ">"), "run.event.op must be one of <=, <, >=, >")
    _need(_is_num(ev.threshold), "run.event.threshold must be a number")
    _need(ev.cubes is None or all(len(k) == m.d for k in ev.cubes), "run.event.cubes must be integer d-vectors")
    _need(isinstance(o.dir, str) and o.dir, "output.dir must be a nonempty string")
    _need(all(f in FORMATS for f in o.formats), f"output.formats must be a subset of {FORMATS}")
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - {"model", "run", "output"})
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(unknown)}")
    if "model" not in data:
        raise ConfigError("missing [model] table")
    try:
        cfg = ExperimentConfig(_build(ModelConfig, data["model"], "model"),
                               _build(RunConfig, data.get("run", {}), "run"),
                               _build(OutputConfig, data.get("output", {}), "output"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return validate(cfg)


def load(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    return from_dict(data)


def replace_run(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    from dataclasses import replace
    return validate(replace(cfg, run=replace(cfg.run, **changes)))


def replace_output(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    from dataclasses import replace
    return validate(replace(cfg, output=replace(cfg.output, **changes)))
