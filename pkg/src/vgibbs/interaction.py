"""Pair potentials and the relative energy H_Lambda(eta | xi).

    H = sum_{x, x' in eta_Lambda} phi(x, x') <v_x, v_x'>                (diagonal included)
      + 2 sum_{x in eta_Lambda, y in xi outside Lambda} phi(x, y) <v_x, v_y>

The reference evaluator uses cell lists over the cube partition; the
all-pairs brute force is kept as its oracle. Both add up identical term
multisets with math.fsum, so they agree to the last bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .configuration import Configuration, cube_masses, project, restrict, tv_mass
from .geometry import PartitionSpec, Region, halo, neighbor_cubes


class AssumptionViolation(ValueError):
    """A pair potential fails positivity, symmetry, boundedness, (FR) or (RC)."""

    def __init__(self, assumption: str, detail: str):
        self.assumption = assumption
        self.detail = detail
        super().__init__(f"pair potential violates {assumption}: {detail}")


@dataclass(frozen=True)
class PairPotential:
    """Radial pair potential phi(x, y) = f(|x - y|) with certified constants.

    ``range`` is the certified finite range R and ``sup_norm`` the certified
    bound; ``repulsion(delta)`` returns the certified A_delta.
    """

    kind: str
    radial: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    sup_norm: float
    range: float
    params: dict = field(default_factory=dict, compare=False)
    _repulsion: Callable[[float], float] = field(default=None, compare=False, repr=False)

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.radial(np.sqrt(((x - y) ** 2).sum(axis=-1)))

    def repulsion(self, delta: float) -> float:
        return float(self._repulsion(delta)) if self._repulsion is not None else 0.0

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sup_norm": self.sup_norm, "range": self.range, **self.params}


def zero_potential(R: float = 1.0) -> PairPotential:
    """phi = 0 (free gas). Satisfies (FR) trivially but not (RC): A = 0."""
    return PairPotential("zero", lambda r: np.zeros_like(np.asarray(r, dtype=float)), 0.0, R, {},
                         lambda delta: 0.0)


def hard_range(c: float, R: float, cutoff: float | None = None) -> PairPotential:
    """phi = c on |x - y| <= cutoff (cutoff defaults to the certified range R)."""
    if not c > 0:
        raise ValueError("hard-range strength must be > 0")
    cut = R if cutoff is None else cutoff

    def f(r):
        return np.where(np.asarray(r) <= cut, c, 0.0)

    return PairPotential("hard_range", f, c, R, {"c": c, "cutoff": cut},
                         lambda delta: c if delta <= cut else 0.0)


def bump(c: float, R: float) -> PairPotential:
    """phi = c * max(0, 1 - (|x - y| / R)^2)^2, smooth and compactly supported."""
    if not c > 0:
        raise ValueError("bump strength must be > 0")

    def f(r):
        u = np.maximum(0.0, 1.0 - (np.asarray(r) / R) ** 2)
        return c * u * u

    def rep(delta):
        return c * max(0.0, 1.0 - (delta / R) ** 2) ** 2

    return PairPotential("bump", f, c, R, {"c": c}, rep)


def custom(radial, sup_norm: float, R: float, repulsion=None, name: str = "custom") -> PairPotential:
    return PairPotential(name, radial, sup_norm, R, {}, repulsion)


def verify_assumptions(phi: PairPotential, spec: PartitionSpec, rng: np.random.Generator,
                       n: int = 20000, require_repulsion: bool = True) -> None:
    """Fuzz-test positivity, boundedness, symmetry, (FR) and (RC); raise on the first failure."""
    d = spec.d
    if phi.range != spec.R:
        raise AssumptionViolation("finite range (FR)", f"certified range {phi.range} differs from partition R={spec.R}")

    def pairs(r):
        u = rng.standard_normal((len(r), d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        x = rng.uniform(-5, 5, size=(len(r), d))
        return x, x + r[:, None] * u

    R = phi.range
    r_all = np.concatenate([rng.uniform(0, 3 * R, n), [0.0, R, spec.delta]])
    x, y = pairs(r_all)
    a, b = phi(x, y), phi(y, x)
    if np.any(~np.isfinite(a)) or np.any(a < 0):
        raise AssumptionViolation("positivity", "phi takes negative or non-finite values")
    if np.any(a > phi.sup_norm * (1 + 1e-12)):
        raise AssumptionViolation("boundedness", f"phi exceeds its certified sup norm {phi.sup_norm}")
    if not np.array_equal(a, b):
        raise AssumptionViolation("symmetry", "phi(x, y) != phi(y, x)")
    r_far = np.concatenate([R * (1 + np.geomspace(1e-9, 1.0, n // 4)), rng.uniform(R, 4 * R, n)])
    r_far = r_far[r_far > R]
    x, y = pairs(r_far)
    # distances recomputed from the sampled points, not the nominal ones
    dist = np.sqrt(((x - y) ** 2).sum(axis=-1))
    bad = (phi(x, y) != 0) & (dist > R)
    if np.any(bad):
        raise AssumptionViolation("finite range (FR)",
                                  f"phi = {float(phi(x[bad][0], y[bad][0])):.6g} at |x-y| = {dist[bad][0]:.6g} > R = {R}")
    if require_repulsion:
        A = phi.repulsion(spec.delta)
        if not A > 0:
            raise AssumptionViolation("repulsion (RC)", f"certified A_delta = {A} is not > 0 at delta = {spec.delta}")
        r_near = np.concatenate([rng.uniform(0, spec.delta, n), [spec.delta]])
        x, y = pairs(r_near)
        dist = np.sqrt(((x - y) ** 2).sum(axis=-1))
        low = (phi(x, y) < A) & (dist <= spec.delta)
        if np.any(low):
            raise AssumptionViolation("repulsion (RC)", f"phi < A_delta = {A} at |x-y| = {dist[low][0]:.6g} <= delta")


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    boundary: float

    @property
    def total(self) -> float:
        return self.bulk + self.boundary

    def to_dict(self) -> dict:
        return {"bulk": self.bulk, "boundary": self.boundary, "total": self.total}


class InteractionError(ValueError):
    pass


def _block_terms(phi: PairPotential, xa, va, xb, vb) -> np.ndarray:
    D = xa[:, None, :] - xb[None, :, :]
    dist = np.sqrt((D * D).sum(axis=-1))
    return phi.radial(dist) * (va[:, None, :] * vb[None, :, :]).sum(axis=-1)


def _group_by_cube(cfg: Configuration) -> dict:
    groups: dict = {}
    for i, k in enumerate(cfg.cube_idx.tolist()):
        groups.setdefault(tuple(k), []).append(i)
    return {k: np.asarray(v) for k, v in groups.items()}


def _prepare(eta: Configuration, xi: Configuration | None, region: Region):
    if not region.issubset(eta.window):
        raise InteractionError("eta's window must contain Lambda")
    inner = project(eta, region)
    hal = halo(region)
    if xi is None:
        outer = Configuration.empty(hal)
    else:
        if xi.spec != region.spec:
            raise InteractionError("boundary condition lives on another partition")
        if not hal.issubset(xi.window):
            raise InteractionError("xi's window must contain halo(Lambda)")
        outer = restrict(xi, hal)
    return inner, outer


def hamiltonian(eta: Configuration, xi: Configuration | None, region: Region, phi: PairPotential,
                exclude_diagonal: bool = False) -> EnergyBreakdown:
    """H_Lambda(eta | xi) with pairs generated from cell lists over neighbour cubes."""
    inner, outer = _prepare(eta, xi, region)
    spec = region.spec
    gi = _group_by_cube(inner)
    go = _group_by_cube(outer)
    x, v = inner.positions, inner.marks
    bulk_terms, bnd_terms = [], []
    for k, ia in gi.items():
        for j in (k, *neighbor_cubes(k, spec)):
            ib = gi.get(j)
            if ib is not None:
                t = _block_terms(phi, x[ia], v[ia], x[ib], v[ib])
                if j == k and exclude_diagonal:
                    t = t[~np.eye(len(ia), dtype=bool)]
                bulk_terms.append(t.ravel())
            jb = go.get(j)
            if jb is not None and j != k:
                bnd_terms.append(_block_terms(phi, x[ia], v[ia], outer.positions[jb], outer.marks[jb]).ravel())
    bulk = math.fsum(np.concatenate(bulk_terms)) if bulk_terms else 0.0
    bnd = 2 * math.fsum(np.concatenate(bnd_terms)) if bnd_terms else 0.0
    return EnergyBreakdown(bulk, bnd)


def hamiltonian_bruteforce(eta: Configuration, xi: Configuration | None, region: Region, phi: PairPotential,
                           exclude_diagonal: bool = False) -> EnergyBreakdown:
    """All-pairs oracle: every atom of xi outside Lambda is paired, not just the halo."""
    if not region.issubset(eta.window):
        raise InteractionError("eta's window must contain Lambda")
    inner = project(eta, region)
    t = _block_terms(phi, inner.positions, inner.marks, inner.positions, inner.marks)
    if exclude_diagonal:
        t = t[~np.eye(len(inner), dtype=bool)]
    bulk = math.fsum(t.ravel())
    bnd = 0.0
    if xi is not None and len(xi):
        out = xi.subset(~xi.mask_in(region), xi.window - region)
        bnd = 2 * math.fsum(_block_terms(phi, inner.positions, inner.marks, out.positions, out.marks).ravel())
    return EnergyBreakdown(bulk, bnd)


def lower_bound_rhs(eta: Configuration, region: Region, A: float, mass_mode: str = "tv") -> float:
    """A * sum_{j in K_Lambda} mass(eta_Lambda on Q_j)^2."""
    masses = cube_masses(project(eta, region), mass_mode)
    return A * math.fsum(m * m for m in masses.values())


def finiteness_bound(eta: Configuration, xi: Configuration | None, region: Region, phi: PairPotential) -> float:
    """|phi|_inf (V_Lambda(eta)^2 + 2 V_Lambda(eta) V_U(xi)), U = halo(Lambda)."""
    inner, outer = _prepare(eta, xi, region)
    a = tv_mass(inner)
    b = tv_mass(outer)
    return phi.sup_norm * (a * a + 2 * a * b)


# -- batched evaluation for the samplers ---------------------------------------

def _segment_upper_pairs(counts: np.ndarray):
    """Global index pairs (i, j), i < j, inside each segment of a flat array."""
    offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
    owner = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(int(counts.sum())) - np.repeat(offsets, counts)
    reps = np.repeat(counts, counts) - 1 - local
    i = np.repeat(np.arange(len(owner)), reps)
    start = np.repeat(np.cumsum(reps) - reps, reps)
    j = i + 1 + (np.arange(len(i)) - start)
    return i, j, owner


def _segment_cross_pairs(counts_a, counts_b):
    """Pairs (a, b) of a-rows and b-rows sharing a segment."""
    owner = np.repeat(np.arange(len(counts_a)), counts_a)
    boff = np.concatenate([[0], np.cumsum(counts_b)])[:-1]
    reps = counts_b[owner]
    a = np.repeat(np.arange(len(owner)), reps)
    start = np.repeat(np.cumsum(reps) - reps, reps)
    b = boff[owner[a]] + (np.arange(len(a)) - start)
    return a, b, owner


def _pair_energy(phi, xa, va, xb, vb):
    D = xa - xb
    dist = np.sqrt((D * D).sum(axis=-1))
    return phi.radial(dist) * (va * vb).sum(axis=-1)


def batch_energy(counts, pos, marks, phi: PairPotential, bnd_counts=None, bnd_pos=None, bnd_marks=None,
                 exclude_diagonal: bool = False, chunk_pairs: int = 2_000_000) -> np.ndarray:
    """H for many configurations stored flat (see reference.Batch).

    Boundary atoms are given per configuration (bnd_counts aligned with counts),
    already restricted to the halo; pass bnd_counts=None for empty boundaries.
    """
    counts = np.asarray(counts, dtype=np.int64)
    B = len(counts)
    out = np.zeros(B)
    if B == 0 or phi.is_zero:
        return out
    # chunk configurations so the pair arrays stay bounded
    per = counts * (counts - 1) // 2 + (counts * bnd_counts if bnd_counts is not None else 0)
    cum = np.cumsum(per)
    off = np.concatenate([[0], np.cumsum(counts)])
    boff = np.concatenate([[0], np.cumsum(bnd_counts)]) if bnd_counts is not None else None
    start = 0
    while start < B:
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + chunk_pairs, side="right"))
        stop = max(stop, start + 1)
        sl = slice(start, stop)
        c = counts[sl]
        a0, a1 = off[start], off[stop]
        x, v = pos[a0:a1], marks[a0:a1]
        acc = np.zeros(stop - start)
        if not exclude_diagonal:
            diag = phi.radial(np.zeros(len(x))) * (v * v).sum(axis=-1)
            acc += np.bincount(np.repeat(np.arange(stop - start), c), weights=diag, minlength=stop - start)
        i, j, owner = _segment_upper_pairs(c)
        if len(i):
            e = _pair_energy(phi, x[i], v[i], x[j], v[j])
            acc += 2 * np.bincount(owner[i], weights=e, minlength=stop - start)
        if bnd_counts is not None:
            bc = np.asarray(bnd_counts[sl])
            b0, b1 = boff[start], boff[stop]
            a, b, owner = _segment_cross_pairs(c, bc)
            if len(a):
                e = _pair_energy(phi, x[a], v[a], bnd_pos[b0:b1][b], bnd_marks[b0:b1][b])
                acc += 2 * np.bincount(owner[a], weights=e, minlength=stop - start)
        out[sl] = acc
        start = stop
    return out


def local_energy(x, v, pos, marks, phi: PairPotential) -> float:
    """sum_i phi(x, pos_i) <v, marks_i> (no factor 2, no self term)."""
    if len(pos) == 0:
        return 0.0
    D = pos - x
    dist = np.sqrt((D * D).sum(axis=-1))
    return float((phi.radial(dist) * (marks @ v)).sum())
