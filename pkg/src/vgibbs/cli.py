"""Command-line experiment runner.

    vgibbs run --config cfg.toml [--seed N] [--out DIR] [--suite NAME] [--jobs N]
    vgibbs dump --config cfg.toml [--seed N] [--out DIR]
    vgibbs validate --config cfg.toml

Exit status: 0 all checks pass, 1 some check fails, 2 configuration or
potential-assumption error, 3 sampler or divergence error (embedded in the report).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import config as cfgmod
from .configuration import Configuration, dumps, load as load_configuration, restrict
from .estimates import exp_moment_check, temperedness_exp_check
from .geometry import GeometryError, PartitionSpec, Region, halo
from .interaction import (AssumptionViolation, bump, finiteness_bound, hamiltonian, hamiltonian_bruteforce,
                          hard_range, lower_bound_rhs, verify_assumptions, zero_potential)
from .marks import DivergentLaplaceExponent, MarkMeasure
from .reference import (PoissonSpec, compare_laplace, independence_check, moment_bound_check,
                        sample_poisson_batch)
from .configuration import CubeFunction
from .rng import stream
from .specification import (Event, LowAcceptanceError, MCMCKnobs, Model, NegativeEnergyError,
                            consistency_residual, dlr_sweep, partition_function_mc,
                            sample_gibbs_mcmc_batch, sample_gibbs_rejection_batch, truncation_energy_bound)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SAMPLER = 0, 1, 2, 3
SAMPLER_ERRORS = (LowAcceptanceError, NegativeEnergyError, DivergentLaplaceExponent)
ORDER = ("laplace", "moments", "hamiltonian", "partition", "consistency", "dlr", "lyapunov", "tempered")


@dataclass
class Setup:
    cfg: cfgmod.ExperimentConfig
    model: Model
    region: Region
    center: tuple
    xi: Configuration | None
    event: Event


def build_potential(m: cfgmod.ModelConfig):
    if m.potential == "zero":
        return zero_potential(m.R)
    if m.potential == "hard_range":
        return hard_range(m.c, m.R, m.cutoff)
    return bump(m.c, m.R)


def central_cube(region: Region) -> tuple:
    ks = region.index_array()
    centre = ks.mean(axis=0)
    dist = ((ks - centre) ** 2).sum(axis=1)
    return tuple(int(c) for c in ks[int(np.argmin(dist))])


def build(cfg: cfgmod.ExperimentConfig, verify: bool = True) -> Setup:
    """Model, region, boundary condition and event; raises ConfigError / AssumptionViolation."""
    m, r = cfg.model, cfg.run
    try:
        spec = PartitionSpec(m.d, float(m.delta), float(m.R))
        direction = tuple(float(v) for v in m.direction) if m.direction is not None else None
        if m.positive:
            mm = MarkMeasure.positive(m.d, float(m.alpha_mark), float(m.beta_mark), float(m.eps_trunc), direction)
        else:
            if direction is not None:
                raise cfgmod.ConfigError("model.direction needs model.positive = true")
            mm = MarkMeasure(m.d, float(m.alpha_mark), float(m.beta_mark), float(m.eps_trunc))
        phi = build_potential(m)
        region = (Region.of(spec, r.cubes) if r.cubes is not None else Region.box(spec, r.box_lo, r.box_hi))
    except (GeometryError, ValueError) as exc:
        if isinstance(exc, cfgmod.ConfigError):
            raise
        raise cfgmod.ConfigError(str(exc)) from None
    if verify:
        verify_assumptions(phi, spec, stream(r.seed, "verify"), require_repulsion=not phi.is_zero)
    model = Model(spec, mm, phi)
    center = central_cube(region)
    xi = None
    if r.xi == "file":
        try:
            xi = load_configuration(r.xi_file)
        except OSError as exc:
            raise cfgmod.ConfigError(f"cannot read boundary file {r.xi_file}: {exc.strerror}") from None
        if xi.spec != spec:
            raise cfgmod.ConfigError("boundary file uses a different partition")
    elif r.xi == "sampled":
        band = region.expand(r.xi_rings) - region
        xi = sample_poisson_batch(PoissonSpec(mm, band), 1, stream(r.seed, "xi")).configurations()[0]
    ev = r.event
    cubes = frozenset(tuple(k) for k in ev.cubes) if ev.cubes is not None else frozenset({center})
    event = Event(ev.kind, cubes, ev.op, float(ev.threshold))
    return Setup(cfg, model, region, center, xi, event)


def knobs_of(cfg: cfgmod.ExperimentConfig) -> MCMCKnobs:
    mc = cfg.run.mcmc
    return MCMCKnobs(mc.p_birth, mc.p_death, mc.p_move, mc.p_mark, mc.burn_in, mc.thin, mc.move_scale)


def _cell(suite: str, name: str, passed: bool, **data) -> dict:
    return {"suite": suite, "cell": name, "pass": bool(passed), **data}


# -- suites ------------------------------------------------------------------------

def laplace_fixtures(d: int, region: Region) -> list[tuple[str, np.ndarray, CubeFunction]]:
    e1 = np.eye(d)[0]
    last = np.eye(d)[-1]
    cubes = region.sorted()
    ones = CubeFunction(region.spec, {k: 1.0 for k in cubes})
    alt = CubeFunction(region.spec, {k: (1.0 if sum(k) % 2 == 0 else 0.5) for k in cubes})
    first = CubeFunction(region.spec, {cubes[0]: 1.0})
    return [("h0", np.zeros(d), ones),
            ("pos_e1", 0.5 * e1, ones),
            ("neg_e1", -0.8 * e1, ones),
            ("diag_alt", 0.3 * np.ones(d) / math.sqrt(d), alt),
            ("last_first_cube", 1.0 * last, first)]


def suite_laplace(s: Setup, rng) -> list[dict]:
    ps = PoissonSpec(s.model.mm, s.region)
    n = max(2, s.cfg.run.n_samples)
    batch = sample_poisson_batch(ps, n, rng)
    return [_cell("laplace", name, c.passed, **c.to_dict())
            for name, h, psi in laplace_fixtures(s.model.spec.d, s.region)
            for c in [compare_laplace(ps, h, psi, batch)]]


def suite_moments(s: Setup, rng) -> list[dict]:
    spec, mm = s.model.spec, s.model.mm
    d = spec.d
    k0 = np.array(s.center)
    e1 = np.eye(d, dtype=int)[0]
    parts = [Region.of(spec, [tuple(k0 + 2 * j * e1)]) for j in range(3)]
    union = parts[0] | parts[1] | parts[2]
    n = max(2, s.cfg.run.n_samples)
    batch = sample_poisson_batch(PoissonSpec(mm, union), n, rng)
    f = lambda m: np.exp(-np.linalg.norm(m, axis=1))  # noqa: E731
    ind = independence_check(batch, parts, [f, f, f])
    cells = [_cell("moments", "independence_3_regions", ind.passed, **ind.to_dict())]
    ps = PoissonSpec(mm, s.region)
    h = 0.5 * np.eye(d)[0]
    psi = CubeFunction(spec, {k: 1.0 for k in s.region.sorted()})
    runs = s.cfg.run.moment_runs
    per_run = max(100, n // 100)
    viol = {1: 0, 2: 0, 4: 0}
    worst = {}
    for r in range(runs):
        b = sample_poisson_batch(ps, per_run, rng)
        for order in viol:
            rep = moment_bound_check(ps, h, psi, order, b)
            viol[order] += int(rep.violation)
            worst[order] = max(worst.get(order, 0.0), rep.empirical / rep.bound)
    for order in viol:
        cells.append(_cell("moments", f"moment_bound_n{order}", viol[order] == 0, runs=runs,
                           samples_per_run=per_run, violations=viol[order], max_ratio=worst.get(order, 0.0)))
    return cells


def suite_hamiltonian(s: Setup, rng) -> list[dict]:
    model, region = s.model, s.region
    hal = halo(region)
    n_inst = s.cfg.run.hamiltonian_instances
    ex = s.cfg.run.exclude_diagonal
    mism, lb_viol, fin_viol, worst = 0, 0, 0, 0.0
    etas = sample_poisson_batch(model.poisson(region), n_inst, rng).configurations() if n_inst else []
    xis = sample_poisson_batch(model.poisson(hal), n_inst, rng).configurations() if n_inst else []
    for eta, xi in zip(etas, xis):
        a = hamiltonian(eta, xi, region, model.phi, ex)
        b = hamiltonian_bruteforce(eta, xi, region, model.phi, ex)
        rel = abs(a.total - b.total) / max(1.0, abs(b.total))
        worst = max(worst, rel)
        mism += rel > 1e-12
        if not ex:
            lb_viol += a.total < lower_bound_rhs(eta, region, model.A)
        fin_viol += abs(a.total) > finiteness_bound(eta, xi, region, model.phi) * (1 + 1e-12)
    asserted = model.positive and not ex
    return [
        _cell("hamiltonian", "cell_list_vs_bruteforce", mism == 0, instances=n_inst, mismatches=int(mism),
              max_rel_diff=worst),
        _cell("hamiltonian", "lower_bound", (lb_viol == 0) if asserted else True, instances=n_inst,
              violations=int(lb_viol), report_only=not asserted),
        _cell("hamiltonian", "finiteness_bound", fin_viol == 0, instances=n_inst, violations=int(fin_viol)),
    ]


def suite_partition(s: Setup, rng) -> list[dict]:
    model, region = s.model, s.region
    n = max(100, s.cfg.run.n_samples)
    z = partition_function_mc(model, region, s.xi, n, rng, seed=s.cfg.run.seed)
    asserted = model.positive or model.phi.is_zero
    upper = z.value - 3 * z.stderr <= 1.0
    jensen = z.value + 3 * z.stderr >= z.jensen_lower - 3 * z.jensen_stderr
    cells = [_cell("partition", "z_positive", z.value > 0, **z.to_dict()),
             _cell("partition", "z_at_most_one", upper if asserted else True, report_only=not asserted, **z.to_dict()),
             _cell("partition", "jensen_lower_bound", jensen, **z.to_dict())]
    if asserted:
        rb = sample_gibbs_rejection_batch(model, region, s.xi, n, rng, s.cfg.run.budget)
        t = rb.trials.astype(float)
        rate = rb.acceptance_rate
        se = rate * rate * t.std(ddof=1) / math.sqrt(len(t))
        ok = abs(rate - z.value) <= 3 * math.hypot(se, z.stderr)
        cells.append(_cell("partition", "acceptance_rate_matches_z", ok, acceptance_rate=rate,
                           acceptance_stderr=se, z=z.value, z_stderr=z.stderr))
    return cells


def consistency_cases(s: Setup) -> list[tuple[str, Region, Event]]:
    spec = s.model.spec
    centre = Region.of(spec, [s.center])
    count_ev = Event("count", s.event.cubes, "<=", 10.0)
    return [("centre_in_region", centre, s.event),
            ("region_in_region", s.region, s.event),
            ("centre_in_region_count", centre, count_ev)]


def suite_consistency(s: Setup, rng) -> list[dict]:
    n = max(2, s.cfg.run.n_samples)
    cells = []
    for name, inner, ev in consistency_cases(s):
        rep = consistency_residual(s.model, inner, s.region, s.xi, ev, n, rng, s.cfg.run.budget, s.cfg.run.seed)
        cells.append(_cell("consistency", name, rep.passed, event=ev.to_dict(), inner=[list(k) for k in inner.sorted()],
                           **rep.to_dict()))
    return cells


def suite_dlr(s: Setup, rng) -> list[dict]:
    centre = Region.of(s.model.spec, [s.center])
    sw = dlr_sweep(s.model, centre, s.xi, s.event, max(2, s.cfg.run.n_samples), rng, tuple(s.cfg.run.dlr_rings),
                   s.cfg.run.budget, s.cfg.run.seed)
    return [_cell("dlr", f"rings_{N}", r.passed, **r.to_dict()) for N, r in zip(sw.rings, sw.reports)] + \
        [_cell("dlr", "trend", sw.trend_ok, rings=list(sw.rings), residuals=[r.diff for r in sw.reports])]


def _sampler_args(s: Setup) -> dict:
    report_only = not s.model.positive
    sampler = "mcmc" if report_only else s.cfg.run.sampler
    return {"sampler": sampler, "knobs": knobs_of(s.cfg), "report_only": report_only, "budget": s.cfg.run.budget}


def suite_lyapunov(s: Setup, rng) -> list[dict]:
    one = Region.of(s.model.spec, [s.center])
    cells = []
    for frac in s.cfg.run.lyapunov_betas:
        beta = frac * s.model.A
        rep = exp_moment_check(s.model, s.center, one, s.xi, beta, max(2, s.cfg.run.n_samples), rng,
                               seed=s.cfg.run.seed, **_sampler_args(s))
        cells.append(_cell("lyapunov", f"beta_{frac:g}A", rep.passed, **rep.to_dict()))
    return cells


def suite_tempered(s: Setup, rng) -> list[dict]:
    rep = temperedness_exp_check(s.model, s.region, s.xi, s.cfg.run.alpha_temp, max(2, s.cfg.run.n_samples), rng,
                                 seed=s.cfg.run.seed, **_sampler_args(s))
    return [_cell("tempered", f"alpha_{s.cfg.run.alpha_temp:g}", rep.passed, **rep.to_dict())]


SUITE_FUNCS = {"laplace": suite_laplace, "moments": suite_moments, "hamiltonian": suite_hamiltonian,
               "partition": suite_partition, "consistency": suite_consistency, "dlr": suite_dlr,
               "lyapunov": suite_lyapunov, "tempered": suite_tempered}


def run_one_suite(cfg: cfgmod.ExperimentConfig, name: str) -> tuple[list[dict], dict | None]:
    s = build(cfg, verify=False)
    try:
        return SUITE_FUNCS[name](s, stream(cfg.run.seed, "suite", name)), None
    except SAMPLER_ERRORS as exc:
        return [], {"suite": name, **exc.to_dict(), "message": str(exc)}


# -- reports --------------------------------------------------------------------------

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def to_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _summary_csv(cells: list[dict], errors: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["suite", "cell", "pass", "value", "bound"])
    for c in cells:
        value = c.get("estimate", c.get("diff", c.get("value", c.get("violations", ""))))
        if isinstance(c.get("lhs"), dict):
            value = c["lhs"]["value"]
        bound = c.get("closed_form", c.get("rhs_bound", c.get("bound", "")))
        w.writerow([c["suite"], c["cell"], int(c["pass"]), _clean(value), _clean(bound)])
    for e in errors:
        w.writerow([e["suite"], e["error"], 0, "", ""])
    return buf.getvalue()


def _write(path: str, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def draw_gibbs(s: Setup, n: int, rng):
    """n Gibbs samples on the region with the configured sampler, plus statistics."""
    if s.cfg.run.sampler == "mcmc" or not (s.model.positive or s.model.phi.is_zero):
        batch, info = sample_gibbs_mcmc_batch(s.model, s.region, s.xi, n, rng, knobs_of(s.cfg), s.cfg.run.mcmc.chains)
        return batch, {"sampler": "mcmc", **info}
    rb = sample_gibbs_rejection_batch(s.model, s.region, s.xi, n, rng, s.cfg.run.budget)
    return rb.batch, {"sampler": "rejection", "acceptance_rate": rb.acceptance_rate,
                      "trials": int(rb.trials.sum()), "accepted": len(rb.trials)}


def write_samples(s: Setup, outdir: str, n: int, rng) -> dict:
    sdir = os.path.join(outdir, "samples")
    os.makedirs(sdir, exist_ok=True)
    bnd = s.model.boundary(s.region, s.xi)
    manifest = {"seed": s.cfg.run.seed, "n": n, "region": [list(k) for k in s.region.sorted()],
                "truncation": {"eps_trunc": s.model.mm.eps_trunc,
                               "energy_bound": truncation_energy_bound(s.model, s.region, bnd),
                               "discarded_intensity_per_volume": "inf (lambda has infinite mass below eps)",
                               "first_moment_below_eps": s.model.mm.moment_below(1)},
                "files": []}
    if n > 0:
        batch, stats = draw_gibbs(s, n, rng)
        manifest["statistics"] = stats
        width = max(5, len(str(n - 1)))
        for i, c in enumerate(batch.configurations()):
            name = f"sample_{i:0{width}d}.txt"
            _write(os.path.join(sdir, name), dumps(c))
            manifest["files"].append(name)
    _write(os.path.join(sdir, "manifest.json"), to_json(manifest))
    return manifest


def run_suites(cfg: cfgmod.ExperimentConfig, jobs: int = 1) -> tuple[int, dict]:
    names = list(ORDER) if cfg.run.suite == "all" else [cfg.run.suite]
    if jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one_suite, [cfg] * len(names), names))
    else:
        results = [run_one_suite(cfg, nm) for nm in names]
    cells, errors = [], []
    suites = {}
    for nm, (cs, err) in zip(names, results):
        suites[nm] = cs
        cells.extend(cs)
        if err is not None:
            errors.append(err)
    passed = all(c["pass"] for c in cells) and not errors
    status = EXIT_SAMPLER if errors else (EXIT_PASS if passed else EXIT_FAIL)
    report = {"config": cfg.to_dict(), "suites": suites, "errors": errors, "pass": passed, "status": status}
    return status, report


def cmd_run(cfg: cfgmod.ExperimentConfig, jobs: int) -> int:
    s = build(cfg)
    status, report = run_suites(cfg, jobs)
    out = cfg.output.dir
    os.makedirs(out, exist_ok=True)
    if "json" in cfg.output.formats:
        _write(os.path.join(out, "report.json"), to_json(report))
    if "csv" in cfg.output.formats:
        cells = [c for nm in report["suites"] for c in report["suites"][nm]]
        _write(os.path.join(out, "summary.csv"), _summary_csv(cells, report["errors"]))
    if "samples" in cfg.output.formats and status != EXIT_SAMPLER:
        try:
            write_samples(s, out, cfg.run.dump_count, stream(cfg.run.seed, "samples"))
        except SAMPLER_ERRORS as exc:
            report["errors"].append({"suite": "samples", **exc.to_dict(), "message": str(exc)})
            status = EXIT_SAMPLER
    n_pass = sum(c["pass"] for nm in report["suites"] for c in report["suites"][nm])
    n_all = sum(len(v) for v in report["suites"].values())
    print(f"{n_pass}/{n_all} checks passed, {len(report['errors'])} errors; reports in {out}")
    for e in report["errors"]:
        print(f"error in suite {e['suite']}: {e['message']}", file=sys.stderr)
    return status


def cmd_dump(cfg: cfgmod.ExperimentConfig) -> int:
    s = build(cfg)
    os.makedirs(cfg.output.dir, exist_ok=True)
    try:
        m = write_samples(s, cfg.output.dir, cfg.run.n_samples, stream(cfg.run.seed, "dump"))
    except SAMPLER_ERRORS as exc:
        _write(os.path.join(cfg.output.dir, "error.json"), to_json(exc.to_dict()))
        print(str(exc), file=sys.stderr)
        return EXIT_SAMPLER
    print(f"wrote {len(m['files'])} configurations to {os.path.join(cfg.output.dir, 'samples')}")
    return EXIT_PASS


def cmd_validate(cfg: cfgmod.ExperimentConfig) -> int:
    s = build(cfg)
    print(to_json({"config": cfg.to_dict(), "A": s.model.A, "truncated_intensity": s.model.mm.truncated_intensity,
                   "region_cubes": len(s.region)}), end="")
    return EXIT_PASS


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vgibbs", description="Gibbs specification experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "dump", "validate"):
        q = sub.add_parser(name)
        q.add_argument("--config", required=True, help="TOML experiment config")
        q.add_argument("--seed", type=int, help="override run.seed")
        q.add_argument("--out", help="override output.dir")
        if name == "run":
            q.add_argument("--suite", choices=cfgmod.SUITES, help="override run.suite")
            q.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if getattr(args, "suite", None):
            changes["suite"] = args.suite
        if changes:
            cfg = cfgmod.replace_run(cfg, **changes)
        if args.out:
            cfg = cfgmod.replace_output(cfg, dir=args.out)
        if args.command == "run":
            return cmd_run(cfg, max(1, args.jobs))
        if args.command == "dump":
            return cmd_dump(cfg)
        return cmd_validate(cfg)
    except (cfgmod.ConfigError, AssumptionViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
