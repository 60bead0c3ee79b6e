"""Quantitative moment bounds for local Gibbs states, checked by Monte Carlo.

All checks compare a sample mean (minus 3 standard errors) with an analytic
right-hand side built from the quadratic Laplace exponent of the mark measure,

    log Psi(c) = int (exp(c |v|^2) - 1) lambda(dv),

which is finite iff beta_mark > 2, or beta_mark = 2 and c < 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .configuration import Configuration, cube_masses, restrict
from .geometry import Region, cube_indices, cube_keys, halo, interaction_parameter, neighbor_cubes
from .marks import MarkMeasure
from .reference import Batch, poisson_tv_moment
from .specification import (DEFAULT_BUDGET, KernelEstimate, MCMCKnobs, Model, _mean_se,
                            sample_gibbs_mcmc_batch, sample_gibbs_rejection_batch)

HOLDER_DELTA = 0.5


@dataclass(frozen=True)
class BoundReport:
    lhs_estimate: KernelEstimate
    rhs_bound: float
    parameters: dict = field(default_factory=dict)
    passed: bool = False
    report_only: bool = False

    @property
    def violation(self) -> bool:
        return not (self.lhs_estimate.value - 3 * self.lhs_estimate.stderr <= self.rhs_bound)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs_estimate.to_dict(), "rhs_bound": self.rhs_bound,
                "parameters": dict(sorted(self.parameters.items())), "pass": self.passed,
                "report_only": self.report_only}


def _report(lhs: KernelEstimate, rhs: float, params: dict, report_only: bool) -> BoundReport:
    ok = lhs.value - 3 * lhs.stderr <= rhs
    return BoundReport(lhs, rhs, params, True if report_only else ok, report_only)


def default_eps(model: Model, beta: float, holder_delta: float = HOLDER_DELTA) -> float:
    """eps with eps |phi| = holder_delta * beta (beta = 0 falls back to beta = A)."""
    b = beta if beta > 0 else model.A
    if not (b > 0 and model.phi.sup_norm > 0):
        raise ValueError("eps needs beta > 0 or A > 0, and a nonzero potential")
    return holder_delta * b / model.phi.sup_norm


def nu_alpha(beta: float, cubes, alpha_temp: float) -> float:
    """beta / sum_k exp(-alpha |k|) over the given finite cube set."""
    s = math.fsum(math.exp(-alpha_temp * math.sqrt(sum(c * c for c in k))) for k in cubes)
    return beta / s if s > 0 else 0.0


def _check_regime(model: Model, xi: Configuration | None, report_only: bool):
    if report_only:
        return
    if not model.positive:
        raise ValueError("bound checks assert only in the positive-mark regime (pass report_only=True otherwise)")
    if xi is not None and len(xi):
        e = np.asarray(model.mm.direction)
        proj = xi.marks @ e
        if np.any(proj < 0) or not np.allclose(xi.marks, np.outer(proj, e)):
            raise ValueError("boundary marks are not positive multiples of the regime direction")


def _draw(model: Model, region: Region, xi, n: int, rng, sampler: str, knobs: MCMCKnobs | None,
          budget: int) -> Batch:
    if sampler == "rejection":
        return sample_gibbs_rejection_batch(model, region, xi, n, rng, budget).batch
    if sampler == "mcmc":
        return sample_gibbs_mcmc_batch(model, region, xi, n, rng, knobs or MCMCKnobs())[0]
    raise ValueError(f"sampler must be 'rejection' or 'mcmc', got {sampler!r}")


def cube_tv_table(batch: Batch) -> tuple[list, np.ndarray]:
    """Window cubes (sorted) and the (n_samples, n_cubes) table of cube velocity masses."""
    cubes = batch.window.sorted()
    n = len(batch)
    if len(batch.positions) == 0 or not cubes:
        return cubes, np.zeros((n, len(cubes)))
    ref = cube_keys(np.array(cubes, dtype=np.int64).reshape(len(cubes), -1))
    order = np.argsort(ref)
    local = order[np.searchsorted(ref[order], cube_keys(cube_indices(batch.positions, batch.window.spec)))]
    tv = np.bincount(batch.owner * len(cubes) + local, weights=np.linalg.norm(batch.marks, axis=1),
                     minlength=n * len(cubes))
    return cubes, tv.reshape(n, len(cubes))


def _xi_square_sum(xi: Configuration | None, cubes) -> float:
    if xi is None or len(xi) == 0:
        return 0.0
    masses = cube_masses(restrict(xi, Region(xi.spec, frozenset(cubes))), "tv")
    return math.fsum(m * m for m in masses.values())


def exp_moment_rhs(model: Model, k, region: Region, xi: Configuration | None, eps: float) -> tuple[float, dict]:
    """Log of the exponential-moment bound and its ingredients.

    One-cube region {k}: c = |phi| (1 + m / eps), boundary term eps |phi| sum_{j ~ k} xi(Q_j)^2.
    Larger regions:      c = |phi| (1 + (eps + 1) m / eps), boundary term m eps |phi| sum_halo xi(Q_l)^2.
    In both cases the Psi term is volume(region) * log Psi(c).
    """
    m = interaction_parameter(model.spec)
    s = model.phi.sup_norm
    single = region.cubes == frozenset({tuple(k)})
    if single:
        c = s * (1 + m / eps)
        xi_term = eps * s * _xi_square_sum(xi, neighbor_cubes(tuple(k), model.spec))
    else:
        c = s * (1 + (eps + 1) * m / eps)
        xi_term = m * eps * s * _xi_square_sum(xi, halo(region).cubes)
    psi_term = region.volume * model.mm.log_laplace_quadratic(c)
    return psi_term + xi_term, {"c": c, "m_phi": m, "psi_term": psi_term, "xi_term": xi_term,
                                "form": "one-cube" if single else "region"}


def exp_moment_check(model: Model, k, region: Region, xi: Configuration | None, beta: float, n: int,
                     rng: np.random.Generator, eps: float | None = None, sampler: str = "rejection",
                     knobs: MCMCKnobs | None = None, report_only: bool = False,
                     budget: int = DEFAULT_BUDGET, seed: int | None = None) -> BoundReport:
    """E exp(beta V(Q_k)^2) under pi_region(.|xi) against the exponential-moment bound."""
    k = tuple(k)
    A = model.A
    if not 0 <= beta <= A * (1 + 1e-12):
        raise ValueError(f"beta must lie in [0, A] = [0, {A}], got {beta}")
    if k not in region:
        raise ValueError(f"cube {k} is not in the region")
    _check_regime(model, xi, report_only)
    eps = default_eps(model, beta) if eps is None else eps
    log_rhs, parts = exp_moment_rhs(model, k, region, xi, eps)
    batch = _draw(model, region, xi, n, rng, sampler, knobs, budget)
    cubes, tv = cube_tv_table(batch)
    mass = tv[:, cubes.index(k)]
    val, se = _mean_se(np.exp(beta * mass * mass))
    params = {"beta": beta, "eps": eps, "A": A, "sup_norm": model.phi.sup_norm, "k": list(k), **parts}
    return _report(KernelEstimate(val, se, n, seed), math.exp(log_rhs), params, report_only)


def temperedness_exp_check(model: Model, region: Region, xi: Configuration | None, alpha_temp: float, n: int,
                           rng: np.random.Generator, beta: float | None = None, eps: float | None = None,
                           holder_delta: float = HOLDER_DELTA, sampler: str = "rejection",
                           knobs: MCMCKnobs | None = None, report_only: bool = False,
                           budget: int = DEFAULT_BUDGET, seed: int | None = None) -> BoundReport:
    """E exp(nu_alpha M_alpha(eta)^2) under pi_region(.|xi) against C_alpha.

    nu_alpha = beta / sum_{k in region} exp(-alpha |k|);
    log C_alpha = [g^d log Psi(c) + B_eps e^{alpha theta} M_alpha(xi outside)^2] / (1 - delta e^{alpha theta}),
    theta = R/g + sqrt(d), B_eps = eps |phi|, c as in the one-cube bound. The bound is
    vacuous (infinite) when delta e^{alpha theta} >= 1.
    """
    if not alpha_temp > 0:
        raise ValueError("alpha_temp must be > 0")
    _check_regime(model, xi, report_only)
    spec = model.spec
    beta = model.A if beta is None else beta
    if not 0 <= beta <= model.A * (1 + 1e-12):
        raise ValueError(f"beta must lie in [0, A] = [0, {model.A}], got {beta}")
    eps = default_eps(model, beta, holder_delta) if eps is None else eps
    nu = nu_alpha(beta, region.cubes, alpha_temp)
    theta = spec.R / spec.g + math.sqrt(spec.d)
    growth = holder_delta * math.exp(alpha_temp * theta)
    m = interaction_parameter(spec)
    c = model.phi.sup_norm * (1 + m / eps)
    b_eps = eps * model.phi.sup_norm
    xi_out = 0.0
    if xi is not None and len(xi):
        out = xi.subset(~xi.mask_in(region), xi.window - region)
        xi_out = math.fsum(mass * mass * math.exp(-alpha_temp * math.sqrt(sum(q * q for q in k)))
                           for k, mass in cube_masses(out, "tv").items())
    params = {"alpha_temp": alpha_temp, "beta": beta, "eps": eps, "nu_alpha": nu, "theta": theta,
              "holder_delta": holder_delta, "c": c, "m_phi": m, "sup_norm": model.phi.sup_norm,
              "xi_weighted_mass2": xi_out}
    if growth >= 1:
        rhs = math.inf
        params["vacuous"] = True
    else:
        log_c = (spec.cube_volume * model.mm.log_laplace_quadratic(c) + b_eps * math.exp(alpha_temp * theta) * xi_out)
        rhs = math.exp(log_c / (1 - growth))
        params["vacuous"] = False
    if len(region) == 0:
        return _report(KernelEstimate(1.0, 0.0, n, seed), rhs, params, report_only)
    batch = _draw(model, region, xi, n, rng, sampler, knobs, budget)
    cubes, tv = cube_tv_table(batch)
    w = np.array([math.exp(-alpha_temp * math.sqrt(sum(q * q for q in k))) for k in cubes])
    M2 = (tv * tv) @ w
    val, se = _mean_se(np.exp(nu * M2))
    return _report(KernelEstimate(val, se, n, seed), rhs, params, report_only)


@dataclass(frozen=True)
class TrendReport:
    volumes: tuple
    estimates: tuple
    stderrs: tuple
    maximum: float
    slope: float
    slope_stderr: float
    passed: bool
    oracle: float | None = None

    def to_dict(self) -> dict:
        return {"volumes": list(self.volumes), "estimates": list(self.estimates), "stderrs": list(self.stderrs),
                "max": self.maximum, "slope": self.slope, "slope_stderr": self.slope_stderr,
                "oracle": self.oracle, "pass": self.passed}


def _weighted_slope(x: np.ndarray, y: np.ndarray, se: np.ndarray) -> tuple[float, float]:
    """Weighted least-squares slope of y on x and its standard error."""
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, 0.0
    if np.all(se == 0):
        return float(np.polyfit(x, y, 1)[0]), 0.0
    w = 1.0 / np.maximum(se, se[se > 0].min()) ** 2
    xm = np.sum(w * x) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * y) / sxx)
    return slope, float(math.sqrt(1.0 / sxx))


def uniform_moment_check(model: Model, region: Region, N: int, growing: Sequence[Region], xi: Configuration | None,
                         n: int, rng: np.random.Generator, sampler: str = "rejection",
                         knobs: MCMCKnobs | None = None, budget: int = DEFAULT_BUDGET,
                         k_sigma: float = 3.0) -> TrendReport:
    """E V(region)^N under pi_{L}(.|xi) along an increasing sequence L of regions.

    Pass: the weighted slope against volume, fitted on the members that contain
    region and its halo, is within k_sigma standard errors of <= 0.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    seq = list(growing)
    for a, b in zip(seq, seq[1:]):
        if not a.issubset(b):
            raise ValueError("growing must be an increasing sequence")
    if not region.issubset(seq[0]):
        raise ValueError("the sequence must contain the region")
    est, ses = [], []
    for big in seq:
        batch = _draw(model, big, xi, n, rng, sampler, knobs, budget)
        cubes, tv = cube_tv_table(batch)
        cols = [i for i, k in enumerate(cubes) if k in region.cubes]
        val, se = _mean_se(tv[:, cols].sum(axis=1) ** N)
        est.append(val)
        ses.append(se)
    vols = np.array([b.volume for b in seq])
    full = region | halo(region)
    sat = np.array([full.issubset(b) for b in seq])
    x, y, s = vols[sat], np.array(est)[sat], np.array(ses)[sat]
    slope, sse = _weighted_slope(x, y, s)
    oracle = poisson_tv_moment(model.mm, region.volume, N) if model.phi.is_zero else None
    return TrendReport(tuple(vols.tolist()), tuple(est), tuple(ses), max(est), slope, sse,
                       slope - k_sigma * sse <= 0, oracle)


# -- tails ----------------------------------------------------------------------

def compound_tail_bracket(mm: MarkMeasure, volume: float, thresholds, step: float | None = None,
                          tail_sd: float = 12.0) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds on P(V > T) for V = sum |v_x| under the truncated Poisson measure.

    Jumps are rounded down (up) to a grid of width ``step``; the compound
    Poisson law of the rounded sum is computed exactly by FFT, giving
    P(V_floor > T) <= P(V > T) <= P(V_ceil > T).
    """
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    rate = mm.truncated_intensity * volume
    mean = volume * mm.moment_above(1)
    sd = math.sqrt(volume * mm.moment_above(2))
    top = max(float(thresholds.max()), mean) + tail_sd * sd + 2.0
    step = step if step is not None else top / 65536
    # jump law on bins [j h, (j+1) h), radial density integrated by 8-point Gauss-Legendre per bin
    r_max = min(top, (40.0 + mm.eps_trunc ** mm.beta_mark) ** (1 / mm.beta_mark))
    lo = np.maximum(np.arange(0.0, r_max, step), mm.eps_trunc)
    hi = np.maximum(lo, np.minimum(np.arange(1, len(lo) + 1) * step, r_max))
    x, w = np.polynomial.legendre.leggauss(8)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    nodes = mid[:, None] + half[:, None] * x[None, :]
    dens = nodes ** mm.radial_power * np.exp(-nodes ** mm.beta_mark)
    p = mm.sphere_area * (dens * w).sum(axis=1) * half / mm.truncated_intensity
    p[-1] += max(0.0, 1.0 - p.sum())
    size = 1 << int(math.ceil(math.log2(2 * top / step + len(p) + 8)))
    out = []
    for shift in (0, 1):
        jumps = np.zeros(size)
        jumps[shift:shift + len(p)] = p
        f = np.fft.rfft(jumps)
        pmf = np.fft.irfft(np.exp(rate * (f - 1.0)), n=size)
        pmf = np.clip(pmf, 0.0, None)
        cum = np.cumsum(pmf)
        # P(grid value > T) = 1 - P(index <= floor(T / step))
        idx = np.floor(thresholds / step + 1e-12).astype(int)
        out.append(np.clip(1.0 - cum[np.minimum(idx, size - 1)], 0.0, 1.0))
    return out[0], out[1]


@dataclass(frozen=True)
class DecayReport:
    thresholds: tuple
    regions: tuple
    table: tuple          # table[i][j]: estimate for threshold i on region j
    stderr: tuple
    sup: tuple
    final_threshold: float
    monotone: bool
    passed: bool
    oracle: tuple | None = None

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds), "region_sizes": list(self.regions),
                "table": [list(r) for r in self.table], "stderr": [list(r) for r in self.stderr],
                "sup": list(self.sup), "final_threshold": self.final_threshold,
                "monotone": self.monotone, "oracle": None if self.oracle is None else [list(o) for o in self.oracle],
                "pass": self.passed}


def event_decay_probe(model: Model, regions: Sequence[Region], target: Region, xi: Configuration | None,
                      thresholds: Sequence[float], n: int, rng: np.random.Generator, final_threshold: float = 0.01,
                      sampler: str = "rejection", knobs: MCMCKnobs | None = None, budget: int = DEFAULT_BUDGET,
                      k_sigma: float = 3.0) -> DecayReport:
    """sup over regions of pi_L(V(target) > T | xi) as T grows.

    target must lie inside every region. Monotone: each sup is at most the
    previous one plus k_sigma standard errors. Pass: monotone and the final
    sup is below final_threshold (plus k_sigma standard errors).
    """
    T = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(T) < 0):
        raise ValueError("thresholds must be nondecreasing")
    table = np.zeros((len(T), len(regions)))
    ses = np.zeros_like(table)
    for j, reg in enumerate(regions):
        if not target.issubset(reg):
            raise ValueError("the target cubes must lie inside every region")
        batch = _draw(model, reg, xi, n, rng, sampler, knobs, budget)
        cubes, tv = cube_tv_table(batch)
        cols = [i for i, k in enumerate(cubes) if k in target.cubes]
        mass = tv[:, cols].sum(axis=1)
        for i, t in enumerate(T):
            table[i, j], ses[i, j] = _mean_se((mass > t).astype(float))
    best = table.argmax(axis=1)
    sup = table[np.arange(len(T)), best]
    sup_se = ses[np.arange(len(T)), best]
    mono = bool(np.all(sup[1:] <= sup[:-1] + k_sigma * np.hypot(sup_se[1:], sup_se[:-1])))
    final_ok = bool(sup[-1] - k_sigma * sup_se[-1] <= final_threshold)
    oracle = None
    if model.phi.is_zero:
        lo, hi = compound_tail_bracket(model.mm, target.volume, T)
        oracle = (tuple(lo.tolist()), tuple(hi.tolist()))
    return DecayReport(tuple(T.tolist()), tuple(len(r) for r in regions), tuple(map(tuple, table.tolist())),
                       tuple(map(tuple, ses.tolist())), tuple(sup.tolist()), final_threshold, mono,
                       mono and final_ok, oracle)


@dataclass(frozen=True)
class ChebyshevReport:
    threshold: float
    probability: float
    prob_stderr: float
    mean_mass: float
    bound: float
    passed: bool

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "probability": self.probability, "prob_stderr": self.prob_stderr,
                "mean_mass": self.mean_mass, "bound": self.bound, "pass": self.passed}


def chebyshev_check(mass: np.ndarray, threshold: float, k_sigma: float = 3.0) -> ChebyshevReport:
    """P(mass > T) <= E[mass] / T, both sides from the same samples."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    mass = np.asarray(mass, dtype=float)
    p, pse = _mean_se((mass > threshold).astype(float))
    mm_, mse = _mean_se(mass)
    bound = mm_ / threshold
    ok = p - k_sigma * math.hypot(pse, mse / threshold) <= bound
    return ChebyshevReport(threshold, p, pse, mm_, bound, ok)
