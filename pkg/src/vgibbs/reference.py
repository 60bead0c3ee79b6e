"""Marked Poisson reference measure mu_lambda^Lambda on K(Lambda).

Samples are exact for the truncation of lambda to {|v| > eps_trunc}. Every
comparison against the untruncated closed forms carries an analytic
certificate for the discarded small marks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .configuration import Configuration, CubeFunction, pairing
from .geometry import Region, cube_indices, in_cubes
from .marks import MarkMeasure


@dataclass(frozen=True)
class PoissonSpec:
    mm: MarkMeasure
    region: Region

    def __post_init__(self):
        if self.mm.d != self.region.spec.d:
            raise ValueError("mark measure and region have different dimensions")

    @property
    def spec(self):
        return self.region.spec

    @property
    def volume(self) -> float:
        return self.region.volume

    @property
    def intensity(self) -> float:
        """Expected number of samplable atoms: tail_mass(eps_trunc) * volume."""
        return self.mm.truncated_intensity * self.volume


@dataclass
class Batch:
    """Flat storage for many configurations on one window: atoms of sample i
    are rows offsets[i]:offsets[i+1]."""

    counts: np.ndarray
    positions: np.ndarray
    marks: np.ndarray
    window: Region

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    @property
    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.counts)), self.counts)

    def __len__(self) -> int:
        return len(self.counts)

    def configurations(self) -> list[Configuration]:
        off = self.offsets
        return [Configuration(self.positions[a:b], self.marks[a:b], self.window, validate=False)
                for a, b in zip(off[:-1], off[1:])]

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        cnt = self.counts[idx]
        starts = self.offsets[idx]
        rows = np.repeat(starts - (np.cumsum(cnt) - cnt), cnt) + np.arange(int(cnt.sum()))
        return Batch(cnt, self.positions[rows], self.marks[rows], self.window)

    def row_mask(self, region: Region) -> np.ndarray:
        if len(self.positions) == 0:
            return np.zeros(0, dtype=bool)
        return in_cubes(cube_indices(self.positions, self.window.spec), region.cubes)

    def select_rows(self, mask, window: Region) -> "Batch":
        """Keep the rows in ``mask`` (per-sample counts follow)."""
        counts = np.bincount(self.owner[mask], minlength=len(self)).astype(np.int64)
        return Batch(counts, self.positions[mask], self.marks[mask], window)

    @classmethod
    def concat_rows(cls, parts: Sequence["Batch"], window: Region) -> "Batch":
        """Per-sample union of several batches of equal length (rows of part 0 first)."""
        n = len(parts[0])
        counts = sum(p.counts for p in parts)
        owner = np.concatenate([p.owner for p in parts])
        order = np.argsort(owner, kind="stable")
        pos = np.concatenate([p.positions for p in parts])[order]
        mk = np.concatenate([p.marks for p in parts])[order]
        return cls(np.asarray(counts, dtype=np.int64).reshape(n), pos, mk, window)

    @classmethod
    def repeat(cls, cfg: Configuration, n: int) -> "Batch":
        counts = np.full(n, len(cfg), dtype=np.int64)
        return cls(counts, np.tile(cfg.positions, (n, 1)), np.tile(cfg.marks, (n, 1)), cfg.window)

    @classmethod
    def from_configurations(cls, configs: Sequence[Configuration], window: Region | None = None) -> "Batch":
        window = window if window is not None else configs[0].window
        d = window.spec.d
        counts = np.array([len(c) for c in configs], dtype=np.int64)
        pos = np.concatenate([c.positions for c in configs]) if configs else np.empty((0, d))
        mk = np.concatenate([c.marks for c in configs]) if configs else np.empty((0, d))
        return cls(counts, pos.reshape(-1, d), mk.reshape(-1, d), window)


def _dedupe_positions(owner: np.ndarray, pos: np.ndarray, region: Region, rng) -> np.ndarray:
    """Redraw any atom whose position coincides with another atom of the same sample."""
    while len(pos) > 1:
        first = np.sort(pos[:, 0])
        if not np.any(first[1:] == first[:-1]):
            break
        keys = [pos[:, j] for j in range(pos.shape[1] - 1, -1, -1)] + [owner]
        order = np.lexsort(keys)
        a, b = order[:-1], order[1:]
        same = (owner[a] == owner[b]) & np.all(pos[a] == pos[b], axis=1)
        if not np.any(same):
            break
        bad = b[same]
        pos[bad] = region.uniform_points(len(bad), rng)
    return pos


def sample_poisson_batch(ps: PoissonSpec, n: int, rng: np.random.Generator) -> Batch:
    """n independent draws of the truncated marked Poisson process on ps.region."""
    counts = rng.poisson(ps.intensity, size=n).astype(np.int64)
    total = int(counts.sum())
    pos = ps.region.uniform_points(total, rng)
    marks = ps.mm.sample_marks(total, rng)
    owner = np.repeat(np.arange(n), counts)
    pos = _dedupe_positions(owner, pos, ps.region, rng)
    return Batch(counts, pos, marks, ps.region)


def sample_poisson(ps: PoissonSpec, rng: np.random.Generator) -> Configuration:
    return sample_poisson_batch(ps, 1, rng).configurations()[0]


# -- Laplace functionals ------------------------------------------------------

def _cube_values(ps: PoissonSpec, psi, subdiv: int) -> list[tuple[float, float]]:
    """(volume, psi value) cells covering ps.region.

    CubeFunction gives one exact cell per cube; a general psi is handled by
    per-cube midpoint quadrature on subdiv^d sub-cells.
    """
    spec = ps.spec
    if isinstance(psi, CubeFunction):
        return [(spec.cube_volume, psi.values.get(k, 0.0)) for k in ps.region.sorted()]
    d, g = spec.d, spec.g
    u = (np.arange(subdiv) + 0.5) / subdiv
    grid = np.stack(np.meshgrid(*([u] * d), indexing="ij"), axis=-1).reshape(-1, d)
    cells = []
    vol = spec.cube_volume / len(grid)
    for k in ps.region.sorted():
        pts = g * (np.asarray(k) - 0.5 + grid)
        cells.extend((vol, float(v)) for v in np.asarray(psi(pts)).reshape(-1))
    return cells


def laplace_log_exponent(ps: PoissonSpec, h, psi, subdiv: int = 8) -> float:
    """int_Lambda log Psi^h(psi(x)) m(dx)."""
    cache: dict[float, float] = {}
    acc = []
    for vol, r in _cube_values(ps, psi, subdiv):
        if r not in cache:
            cache[r] = ps.mm.log_psi(h, r)
        acc.append(vol * cache[r])
    return math.fsum(acc)


def laplace_closed_form(ps: PoissonSpec, h, psi, subdiv: int = 8) -> float:
    """E exp(<h (x) psi, eta>) under the untruncated reference measure."""
    return math.exp(laplace_log_exponent(ps, h, psi, subdiv))


def truncation_exponent_bound(ps: PoissonSpec, h, sup_psi: float) -> float:
    """Bound on |log-Laplace(untruncated) - log-Laplace(truncated)|.

    |e^x - 1| <= |x| e^|x| with |x| <= |h| |psi|_inf eps on the discarded marks.
    """
    a = float(np.linalg.norm(h)) * sup_psi
    return a * math.exp(a * ps.mm.eps_trunc) * ps.mm.moment_below(1) * ps.volume


def _sup_psi(ps: PoissonSpec, psi, subdiv: int = 8) -> float:
    return max((abs(r) for _, r in _cube_values(ps, psi, subdiv)), default=0.0)


@dataclass(frozen=True)
class LaplaceComparison:
    h: tuple
    psi_spec: dict | str
    closed_form: float
    estimate: float
    stderr: float
    trunc_bound: float
    n: int
    passed: bool

    def to_dict(self) -> dict:
        return {"h": list(self.h), "psi_spec": self.psi_spec, "closed_form": self.closed_form,
                "estimate": self.estimate, "stderr": self.stderr, "trunc_bound": self.trunc_bound,
                "n": self.n, "pass": self.passed}


def _pairings(samples, h, psi) -> np.ndarray:
    if isinstance(samples, Batch):
        if len(samples.marks) == 0:
            return np.zeros(len(samples))
        w = np.asarray(psi(samples.positions), dtype=float).reshape(-1)
        contrib = w * (samples.marks @ np.asarray(h, dtype=float))
        return np.bincount(samples.owner, weights=contrib, minlength=len(samples))
    return np.array([pairing(c, h, psi) for c in samples])


def empirical_laplace(samples, h, psi) -> tuple[float, float]:
    """Sample mean and standard error of exp(<h (x) psi, eta>)."""
    n = len(samples)
    if n < 2:
        raise ValueError("empirical_laplace needs at least 2 samples")
    vals = np.exp(_pairings(samples, h, psi))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def compare_laplace(ps: PoissonSpec, h, psi, samples, k_sigma: float = 3.0) -> LaplaceComparison:
    closed = laplace_closed_form(ps, h, psi)
    est, se = empirical_laplace(samples, h, psi)
    b = truncation_exponent_bound(ps, h, _sup_psi(ps, psi))
    trunc = closed * math.expm1(b)
    psi_spec = psi.to_dict() if isinstance(psi, CubeFunction) else getattr(psi, "__name__", "callable")
    return LaplaceComparison(tuple(float(x) for x in np.ravel(h)), psi_spec, closed, est, se, trunc,
                             len(samples), abs(est - closed) <= k_sigma * se + trunc)


# -- moments and independence -----------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    n: int
    empirical: float
    stderr: float
    bound: float
    violation: bool

    def to_dict(self) -> dict:
        return {"n": self.n, "empirical": self.empirical, "stderr": self.stderr,
                "bound": self.bound, "violation": self.violation}


def moment_bound(ps: PoissonSpec, h, psi, n: int) -> float:
    """n! * sup_x Psi^h(psi(x))^n * max(1, m(Lambda))^n."""
    values = {r for _, r in _cube_values(ps, psi, 8)} | {0.0}
    sup_psi = max(ps.mm.psi(h, r) for r in values)
    return math.factorial(n) * sup_psi ** n * max(1.0, ps.volume) ** n


def moment_bound_check(ps: PoissonSpec, h, psi, n: int, samples, k_sigma: float = 3.0) -> MomentReport:
    """Empirical E|<h (x) psi, eta>|^n against the polynomial-moment bound."""
    if n < 1:
        raise ValueError("moment order must be >= 1")
    vals = np.abs(_pairings(samples, h, psi)) ** n
    emp = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    bound = moment_bound(ps, h, psi, n)
    return MomentReport(n, emp, se, bound, emp - k_sigma * se > bound)


@dataclass(frozen=True)
class IndependenceReport:
    mean_of_product: float
    product_of_means: float
    diff: float
    stderr: float
    passed: bool

    def to_dict(self) -> dict:
        return {"mean_of_product": self.mean_of_product, "product_of_means": self.product_of_means,
                "diff": self.diff, "stderr": self.stderr, "pass": self.passed}


def independence_check(samples: Batch, regions: Sequence[Region],
                       functionals: Sequence[Callable[[np.ndarray], np.ndarray]],
                       k_sigma: float = 3.0) -> IndependenceReport:
    """E[prod_i f_i(eta(Lambda_i))] against prod_i E[f_i(eta(Lambda_i))] for disjoint regions.

    Each f_i maps the (n, d) array of vector masses eta(Lambda_i) to n bounded values.
    The standard error of the difference uses the delta method.
    """
    for i, a in enumerate(regions):
        for b in regions[i + 1:]:
            if not a.isdisjoint(b):
                raise ValueError("regions must be pairwise disjoint")
    owner = samples.owner
    cubes = cube_indices(samples.positions, samples.window.spec) if len(samples.positions) else None
    n = len(samples)
    d = samples.window.spec.d
    cols = []
    for reg, f in zip(regions, functionals):
        if cubes is None:
            masses = np.zeros((n, d))
        else:
            inside = in_cubes(cubes, reg.cubes)
            masses = np.stack([np.bincount(owner[inside], weights=samples.marks[inside, j], minlength=n)
                               for j in range(d)], axis=1)
        cols.append(np.asarray(f(masses), dtype=float))
    F = np.stack(cols, axis=1)
    means = F.mean(axis=0)
    prod = np.prod(F, axis=1)
    pom = float(np.prod(means))
    infl = prod - prod.mean()
    for i in range(F.shape[1]):
        others = np.prod(np.delete(means, i))
        infl = infl - (F[:, i] - means[i]) * others
    se = float(infl.std(ddof=1) / math.sqrt(n))
    diff = float(prod.mean()) - pom
    return IndependenceReport(float(prod.mean()), pom, diff, se, abs(diff) <= k_sigma * se)


def poisson_tv_moment(mm: MarkMeasure, volume: float, order: int, truncated: bool = True) -> float:
    """E[V^order] for V = sum |v_x| under the (truncated) Poisson measure.

    Compound-Poisson moments from cumulants kappa_j = volume * int |v|^j lambda(dv).
    """
    if order == 0:
        return 1.0
    kappa = [0.0] + [volume * (mm.moment_above(j) if truncated else mm.moment(j)) for j in range(1, order + 1)]
    m = [1.0]
    for n in range(1, order + 1):
        m.append(math.fsum(math.comb(n - 1, k) * kappa[k + 1] * m[n - 1 - k] for k in range(n)))
    return m[order]


def stack(batches: Sequence[Batch], window: Region) -> Batch:
    """Concatenate the samples of several batches (sample order preserved)."""
    d = window.spec.d
    if not batches:
        return Batch(np.zeros(0, dtype=np.int64), np.empty((0, d)), np.empty((0, d)), window)
    return Batch(np.concatenate([b.counts for b in batches]).astype(np.int64),
                 np.concatenate([b.positions for b in batches]).reshape(-1, d),
                 np.concatenate([b.marks for b in batches]).reshape(-1, d), window)
