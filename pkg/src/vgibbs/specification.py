"""Local Gibbs measures, their samplers and the specification kernels.

gamma_Lambda(d eta | xi) = exp(-H_Lambda(eta | xi)) / Z_Lambda(xi) mu_Lambda(d eta)

Rejection sampling is the exact (up to mark truncation) sampler. It needs
exp(-H) <= 1, which holds whenever every pair product <v, v'> is
nonnegative (positive-mark regime) or the potential is zero. With signed
marks H can be negative and the rejection sampler refuses to run; the MCMC
sampler covers that case.
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .configuration import Configuration, restrict
from .geometry import PartitionSpec, Region, cube_indices, cube_keys, halo, in_cubes
from .interaction import PairPotential, batch_energy
from .marks import MarkMeasure
from .reference import Batch, PoissonSpec, poisson_tv_moment, sample_poisson_batch, stack

DEFAULT_BUDGET = 10 ** 6


class LowAcceptanceError(RuntimeError):
    """The rejection sampler exceeded its per-sample trial budget."""

    def __init__(self, trials: int, accepted: int, budget: int):
        self.trials = trials
        self.accepted = accepted
        self.budget = budget
        self.z_estimate = accepted / trials if trials else float("nan")
        super().__init__(f"low acceptance: a sample needed more than {budget} trials "
                         f"(running Z estimate {self.z_estimate:.3g} from {accepted}/{trials})")

    def to_dict(self) -> dict:
        return {"error": "low_acceptance", "trials": self.trials, "accepted": self.accepted,
                "budget": self.budget, "z_estimate": self.z_estimate}


class NegativeEnergyError(RuntimeError):
    """A proposal had H < 0, so exp(-H) is not an acceptance probability."""

    def __init__(self, energy: float):
        self.energy = energy
        super().__init__(f"proposal energy {energy:.6g} < 0: exact rejection needs H >= 0 "
                         "(use the positive-mark regime or the MCMC sampler)")

    def to_dict(self) -> dict:
        return {"error": "negative_energy", "energy": self.energy}


@dataclass(frozen=True)
class Model:
    spec: PartitionSpec
    mm: MarkMeasure
    phi: PairPotential

    def __post_init__(self):
        if self.mm.d != self.spec.d:
            raise ValueError("mark measure dimension differs from the partition dimension")
        if self.phi.range != self.spec.R:
            raise ValueError(f"potential range {self.phi.range} differs from partition R={self.spec.R}")

    @property
    def A(self) -> float:
        return self.phi.repulsion(self.spec.delta)

    @property
    def positive(self) -> bool:
        return self.mm.direction is not None

    def poisson(self, region: Region) -> PoissonSpec:
        return PoissonSpec(self.mm, region)

    def boundary(self, region: Region, xi: Configuration | None) -> Configuration:
        """xi restricted to halo(region), with the halo as window."""
        hal = halo(region)
        if xi is None:
            return Configuration.empty(hal)
        r = restrict(xi, hal)
        return Configuration(r.positions, r.marks, hal, validate=False)


@dataclass(frozen=True)
class KernelEstimate:
    value: float
    stderr: float
    n_samples: int
    seed: int | None = None
    trunc_bound: float = 0.0

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples,
                "seed": self.seed, "trunc_bound": self.trunc_bound}


@dataclass(frozen=True)
class PartitionEstimate(KernelEstimate):
    mean_energy: float = 0.0
    jensen_lower: float = 0.0
    jensen_stderr: float = 0.0

    def to_dict(self) -> dict:
        return {**super().to_dict(), "mean_energy": self.mean_energy,
                "jensen_lower": self.jensen_lower, "jensen_stderr": self.jensen_stderr}


@dataclass(frozen=True)
class GibbsSample:
    config: Configuration
    boundary: Configuration
    accepted_after: int


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    mean = float(x.mean()) if n else float("nan")
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def truncation_energy_bound(model: Model, region: Region, bnd: Configuration) -> float:
    """E|H(eta) - H(eta without marks below eps)| under the reference measure.

    |dH| <= |phi| (V_s^2 + 2 V_s V_b + 2 V_s V_xi) with V_s, V_b the small- and
    large-mark velocity functionals, which are independent Poisson sums.
    """
    if model.phi.is_zero:
        return 0.0
    mm, vol = model.mm, region.volume
    s1 = vol * mm.moment_below(1)
    s2 = vol * mm.moment_below(2) + s1 * s1
    b1 = vol * mm.moment_above(1)
    v_xi = float(np.linalg.norm(bnd.marks, axis=1).sum()) if len(bnd) else 0.0
    return model.phi.sup_norm * (s2 + 2 * s1 * b1 + 2 * s1 * v_xi)


# -- partition function -------------------------------------------------------------

def _energies(model: Model, batch: Batch, bnd: Configuration | Batch) -> np.ndarray:
    if isinstance(bnd, Configuration):
        if len(bnd) == 0:
            return batch_energy(batch.counts, batch.positions, batch.marks, model.phi)
        bnd = Batch.repeat(bnd, len(batch))
    return batch_energy(batch.counts, batch.positions, batch.marks, model.phi,
                        bnd.counts, bnd.positions, bnd.marks)


def partition_function_mc(model: Model, region: Region, xi: Configuration | None, n: int,
                          rng: np.random.Generator, seed: int | None = None) -> PartitionEstimate:
    """Z_Lambda(xi) = E_mu exp(-H) with the Jensen bound exp(-E H) from the same draws."""
    if n < 100:
        raise ValueError("partition_function_mc needs n >= 100")
    bnd = model.boundary(region, xi)
    batch = sample_poisson_batch(model.poisson(region), n, rng)
    H = _energies(model, batch, bnd)
    w = np.exp(-H)
    z, se = _mean_se(w)
    mh, mh_se = _mean_se(H)
    jl = math.exp(-mh)
    return PartitionEstimate(z, se, n, seed, truncation_energy_bound(model, region, bnd),
                             mh, jl, jl * mh_se)


# -- exact rejection sampling ---------------------------------------------------------

@dataclass
class RejectionBatch:
    """n exact draws from gamma_Lambda(.|xi) and the trials each one consumed."""

    batch: Batch
    trials: np.ndarray
    boundary: Configuration | Batch

    @property
    def acceptance_rate(self) -> float:
        return len(self.trials) / float(self.trials.sum()) if len(self.trials) else float("nan")

    def samples(self) -> list[GibbsSample]:
        cfgs = self.batch.configurations()
        if isinstance(self.boundary, Batch):
            bnds = self.boundary.configurations()
        else:
            bnds = [self.boundary] * len(cfgs)
        return [GibbsSample(c, b, int(t)) for c, b, t in zip(cfgs, bnds, self.trials)]


def _aligned(marks: np.ndarray, direction) -> bool:
    """All marks are nonnegative multiples of ``direction``."""
    if len(marks) == 0:
        return True
    e = np.asarray(direction, dtype=float)
    proj = marks @ e
    return bool(np.all(proj >= 0) and np.allclose(marks, np.outer(proj, e), rtol=0, atol=1e-12 * (1 + np.abs(proj).max())))


def cube_energy_floor(model: Model, batch: Batch) -> np.ndarray:
    """A * sum_k V(Q_k)^2 per sample, a lower bound on H in the positive-mark regime."""
    n = len(batch)
    if len(batch.positions) == 0 or model.A == 0:
        return np.zeros(n)
    ref = np.sort(cube_keys(batch.window.index_array()))
    local = np.searchsorted(ref, cube_keys(cube_indices(batch.positions, batch.window.spec)))
    slot = batch.owner * len(ref) + local
    tv = np.bincount(slot, weights=np.linalg.norm(batch.marks, axis=1), minlength=n * len(ref))
    return model.A * (tv * tv).reshape(n, len(ref)).sum(axis=1)


def _rejection_core(model: Model, region: Region, n: int, rng: np.random.Generator,
                    bnd: Batch | None, budget: int, max_proposals: int = 50_000, prefilter: bool = True):
    """Sample n draws; draw i uses boundary row i of ``bnd`` (None: empty boundary).

    Every pending draw gets ``m`` proposals per round and keeps its first
    accepted one, which is exactly sequential rejection sampling. In the
    positive-mark regime proposals whose uniform already exceeds
    exp(-cube_energy_floor) are rejected without evaluating H; this changes
    the work, not the output.
    """
    ps = model.poisson(region)
    floor_ok = (prefilter and model.positive and model.A > 0
                and (bnd is None or _aligned(bnd.marks, model.mm.direction)))
    trials = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    parts, part_idx = [], []
    accepted = 0
    m = 1
    while len(pending):
        P = len(pending)
        m = max(1, min(m, max_proposals // P))
        prop = sample_poisson_batch(ps, P * m, rng)
        u = rng.random(P * m)
        cand = np.flatnonzero(u < np.exp(-cube_energy_floor(model, prop))) if floor_ok else np.arange(P * m)
        sub = prop.take(cand)
        if bnd is None:
            H = batch_energy(sub.counts, sub.positions, sub.marks, model.phi)
        else:
            b = bnd.take(np.repeat(pending, m)[cand])
            H = batch_energy(sub.counts, sub.positions, sub.marks, model.phi, b.counts, b.positions, b.marks)
        if len(H) and H.min() < 0:
            raise NegativeEnergyError(float(H.min()))
        acc = np.zeros(P * m, dtype=bool)
        acc[cand] = u[cand] < np.exp(-H)
        acc = acc.reshape(P, m)
        has = acc.any(axis=1)
        first = acc.argmax(axis=1)
        trials[pending] += np.where(has, first + 1, m)
        if np.any(has):
            parts.append(prop.take(np.flatnonzero(has) * m + first[has]))
            part_idx.append(pending[has])
            accepted += int(has.sum())
        pending = pending[~has]
        if len(pending) and trials[pending].max() > budget:
            raise LowAcceptanceError(int(trials.sum()), accepted, budget)
        rate = accepted / max(1, int(trials.sum()))
        m = int(min(256, math.ceil(2.0 / max(rate, 1e-6))))
    out = stack(parts, region)
    if parts:
        out = out.take(np.argsort(np.concatenate(part_idx), kind="stable"))
    return out, trials


def sample_gibbs_rejection_batch(model: Model, region: Region, xi: Configuration | None, n: int,
                                 rng: np.random.Generator, budget: int = DEFAULT_BUDGET) -> RejectionBatch:
    bnd = model.boundary(region, xi)
    rep = Batch.repeat(bnd, n) if len(bnd) else None
    batch, trials = _rejection_core(model, region, n, rng, rep, budget)
    return RejectionBatch(batch, trials, bnd)


def sample_gibbs_rejection(model: Model, region: Region, xi: Configuration | None,
                           rng: np.random.Generator, budget: int = DEFAULT_BUDGET) -> GibbsSample:
    return sample_gibbs_rejection_batch(model, region, xi, 1, rng, budget).samples()[0]


# -- MCMC --------------------------------------------------------------------------------

@dataclass(frozen=True)
class MCMCKnobs:
    p_birth: float = 0.3
    p_death: float = 0.3
    p_move: float = 0.3
    p_mark: float = 0.1
    burn_in: int = 10_000
    thin: int = 10
    move_scale: float | None = None  # default: a quarter of the cube edge

    def __post_init__(self):
        p = (self.p_birth, self.p_death, self.p_move, self.p_mark)
        if min(p) < 0 or abs(sum(p) - 1) > 1e-12:
            raise ValueError("MCMC proposal weights must be nonnegative and sum to 1")
        if (self.p_birth > 0) != (self.p_death > 0):
            raise ValueError("birth and death must both be enabled or both disabled")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")
        if self.move_scale is not None and not self.move_scale > 0:
            raise ValueError("move_scale must be > 0")


BIRTH, DEATH, MOVE, MARK = 0, 1, 2, 3


class MCMCState:
    """C independent birth/death/move/mark-resample chains advanced in lockstep.

    Atoms of chain c live in rows 0..n[c]-1 of pos[c], marks[c]. The boundary
    (already restricted to the halo) is shared by all chains.
    """

    def __init__(self, model: Model, region: Region, xi: Configuration | None, chains: int,
                 knobs: MCMCKnobs = MCMCKnobs(), init: Configuration | None = None):
        self.model, self.region, self.knobs = model, region, knobs
        spec = region.spec
        d = spec.d
        self.bnd = model.boundary(region, xi)
        n0 = 0 if init is None else len(init)
        cap = max(16, 2 * n0)
        self.pos = np.zeros((chains, cap, d))
        self.marks = np.zeros((chains, cap, d))
        self.n = np.full(chains, n0, dtype=np.int64)
        if n0:
            if not init.window.issubset(region) and not np.all(init.mask_in(region)):
                raise ValueError("initial configuration has atoms outside Lambda")
            self.pos[:, :n0] = init.positions
            self.marks[:, :n0] = init.marks
        ks = region.index_array()
        self.lo = spec.g * (ks.min(axis=0) - 0.5)
        self.hi = spec.g * (ks.max(axis=0) + 0.5)
        self.scale = knobs.move_scale if knobs.move_scale is not None else 0.25 * spec.g
        self.log_tv = math.log(model.mm.truncated_intensity * region.volume)
        self.phi0 = float(model.phi.radial(np.zeros(1))[0])
        p = np.array([knobs.p_birth, knobs.p_death, knobs.p_move, knobs.p_mark])
        self.cum = np.cumsum(p)
        self.log_bd = math.log(knobs.p_death / knobs.p_birth) if knobs.p_birth > 0 else 0.0
        self.steps = 0
        self.accepted = np.zeros(4, dtype=np.int64)
        self.proposed = np.zeros(4, dtype=np.int64)

    @property
    def chains(self) -> int:
        return len(self.n)

    def _grow(self):
        C, cap, d = self.pos.shape
        self.pos = np.concatenate([self.pos, np.zeros((C, cap, d))], axis=1)
        self.marks = np.concatenate([self.marks, np.zeros((C, cap, d))], axis=1)

    def interaction(self, x: np.ndarray, v: np.ndarray, skip: np.ndarray, rows=None) -> np.ndarray:
        """sum_j phi(x_c, x_j) <v_c, v_j> over the atoms of chain c except row skip[c], plus the boundary.

        ``rows`` selects a subset of chains (x, v, skip are then given for those only).
        """
        phi = self.model.phi
        n = self.n if rows is None else self.n[rows]
        w_ = int(n.max()) if len(n) else 0
        out = np.zeros(len(x))
        if w_:
            pos = self.pos[:, :w_] if rows is None else self.pos[rows, :w_]
            mk = self.marks[:, :w_] if rows is None else self.marks[rows, :w_]
            D = pos - x[:, None, :]
            r = np.sqrt((D * D).sum(axis=-1))
            w = phi.radial(r) * np.einsum("cjd,cd->cj", mk, v)
            j = np.arange(w_)
            live = (j[None, :] < n[:, None]) & (j[None, :] != skip[:, None])
            out = np.where(live, w, 0.0).sum(axis=1)
        if len(self.bnd):
            Db = self.bnd.positions[None, :, :] - x[:, None, :]
            rb = np.sqrt((Db * Db).sum(axis=-1))
            out = out + (phi.radial(rb) * (v @ self.bnd.marks.T)).sum(axis=1)
        return out

    def proposal_log_ratio(self, kind: np.ndarray, pick: np.ndarray, x_new: np.ndarray,
                           v_new: np.ndarray, jump: np.ndarray) -> np.ndarray:
        """Log Metropolis-Hastings ratio of each chain's proposal (-inf: reject).

        birth:  log(T vol / (n+1)) + log(p_d / p_b) - dH
        death:  log(n / (T vol)) + log(p_b / p_d) - dH
        move, mark: -dH (moves leaving Lambda are rejected)
        """
        C = self.chains
        c = np.arange(C)
        empty = self.n == 0
        xi_, vi = self.pos[c, pick], self.marks[c, pick]
        b, dth, mv, mk = (kind == BIRTH), (kind == DEATH), (kind == MOVE), (kind == MARK)
        xa = np.where(b[:, None], x_new, np.where(mv[:, None], jump, xi_))
        va = np.where(b[:, None], v_new, np.where(mk[:, None], v_new - vi, vi))
        skip = np.where(b, -1, pick)
        I1 = self.interaction(xa, va, skip)
        nv2, ov2 = (v_new * v_new).sum(axis=1), (vi * vi).sum(axis=1)
        dH = np.select([b, dth, mk], [self.phi0 * nv2 + 2 * I1, -self.phi0 * ov2 - 2 * I1,
                                      self.phi0 * (nv2 - ov2) + 2 * I1], default=0.0)
        mvr = np.flatnonzero(mv & ~empty)
        if len(mvr):
            dH[mvr] = 2 * (I1[mvr] - self.interaction(xi_[mvr], vi[mvr], pick[mvr], rows=mvr))
        la = np.full(C, -np.inf)
        la[b] = (self.log_tv - np.log(self.n + 1.0) + self.log_bd - dH)[b]
        ok = dth & ~empty
        la[ok] = (np.log(np.maximum(self.n, 1).astype(float)) - self.log_tv - self.log_bd - dH)[ok]
        if len(mvr):
            inside = self.region.contains_points(jump[mvr])
            la[mvr[inside]] = -dH[mvr[inside]]
        ok = mk & ~empty
        la[ok] = -dH[ok]
        return la

    def _reflect(self, x: np.ndarray) -> np.ndarray:
        L = self.hi - self.lo
        y = np.mod(x - self.lo, 2 * L)
        y = np.where(y > L, 2 * L - y, y)
        return self.lo + np.minimum(y, np.nextafter(L, 0))

    def step(self, rng: np.random.Generator):
        C, d = self.chains, self.region.spec.d
        c = np.arange(C)
        # fixed consumption of random numbers per step keeps runs reproducible
        kind = np.searchsorted(self.cum, rng.random(C) * self.cum[-1], side="right").clip(0, 3)
        pick = np.minimum((rng.random(C) * self.n).astype(np.int64), np.maximum(self.n - 1, 0))
        x_new = self.region.uniform_points(C, rng)
        v_new = self.model.mm.sample_marks(C, rng)
        jump = self._reflect(self.pos[c, pick] + self.scale * rng.standard_normal((C, d)))
        log_u = np.log(rng.random(C))
        acc = log_u < self.proposal_log_ratio(kind, pick, x_new, v_new, jump)
        np.add.at(self.proposed, kind, 1)
        np.add.at(self.accepted, kind[acc], 1)

        ab = acc & (kind == BIRTH)
        if ab.any():
            if int(self.n[ab].max()) >= self.pos.shape[1]:
                self._grow()
            self.pos[c[ab], self.n[ab]] = x_new[ab]
            self.marks[c[ab], self.n[ab]] = v_new[ab]
            self.n[ab] += 1
        ad = acc & (kind == DEATH)
        if ad.any():
            last = self.n[ad] - 1
            self.pos[c[ad], pick[ad]] = self.pos[c[ad], last]
            self.marks[c[ad], pick[ad]] = self.marks[c[ad], last]
            self.n[ad] -= 1
        am = acc & (kind == MOVE)
        self.pos[c[am], pick[am]] = jump[am]
        ak = acc & (kind == MARK)
        self.marks[c[ak], pick[ak]] = v_new[ak]
        self.steps += 1

    def run(self, steps: int, rng: np.random.Generator):
        for _ in range(steps):
            self.step(rng)

    def snapshot(self) -> Batch:
        d = self.region.spec.d
        rows = np.arange(self.pos.shape[1])[None, :] < self.n[:, None]
        return Batch(self.n.copy(), self.pos[rows].reshape(-1, d).copy(),
                     self.marks[rows].reshape(-1, d).copy(), self.region)

    def acceptance(self) -> dict:
        names = ("birth", "death", "move", "mark")
        return {nm: (int(a) / int(p) if p else float("nan"))
                for nm, a, p in zip(names, self.accepted, self.proposed)}


def sample_gibbs_mcmc(model: Model, region: Region, xi: Configuration | None, steps: int,
                      rng: np.random.Generator, knobs: MCMCKnobs = MCMCKnobs(),
                      init: Configuration | None = None) -> GibbsSample:
    """State of one chain after ``steps`` steps (steps >= burn-in)."""
    if steps < knobs.burn_in:
        raise ValueError(f"steps={steps} is below the burn-in {knobs.burn_in}")
    st = MCMCState(model, region, xi, 1, knobs, init)
    st.run(steps, rng)
    return GibbsSample(st.snapshot().configurations()[0], st.bnd, steps)


def sample_gibbs_mcmc_batch(model: Model, region: Region, xi: Configuration | None, n: int,
                            rng: np.random.Generator, knobs: MCMCKnobs = MCMCKnobs(),
                            chains: int = 1000) -> tuple[Batch, dict]:
    """n draws: ``chains`` parallel chains, burn-in, then one snapshot every ``thin`` steps.

    Sample order is chain-major within each snapshot round.
    """
    chains = max(1, min(chains, n)) if n else 1
    st = MCMCState(model, region, xi, chains, knobs)
    st.run(knobs.burn_in, rng)
    rounds = -(-n // chains) if n else 0
    snaps = []
    for _ in range(rounds):
        st.run(knobs.thin, rng)
        snaps.append(st.snapshot())
    out = stack(snaps, region)
    if len(out) > n:
        out = out.take(np.arange(n))
    return out, {"chains": chains, "steps_per_chain": st.steps, "acceptance": st.acceptance()}


# -- events ------------------------------------------------------------------------------

EVENT_KINDS = ("true", "false", "count", "tv", "vector_norm")
_OPS = {"<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt}


@dataclass(frozen=True)
class Event:
    """Predicate on the atom count, velocity functional or vector-mass norm inside ``cubes``."""

    kind: str
    cubes: frozenset = frozenset()
    op: str = "<="
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"event kind must be one of {EVENT_KINDS}, got {self.kind!r}")
        if self.op not in _OPS:
            raise ValueError(f"event op must be one of {tuple(_OPS)}, got {self.op!r}")
        object.__setattr__(self, "cubes", frozenset(tuple(int(c) for c in k) for k in self.cubes))

    @classmethod
    def always(cls) -> "Event":
        return cls("true")

    @classmethod
    def never(cls) -> "Event":
        return cls("false")

    def stats(self, batch: Batch) -> np.ndarray:
        """Per-sample (count, tv, vector mass...) over the event cubes; additive in the atoms."""
        n, d = len(batch), batch.window.spec.d
        out = np.zeros((n, 2 + d))
        if len(batch.positions) == 0 or not self.cubes:
            return out
        inside = in_cubes(cube_indices(batch.positions, batch.window.spec), self.cubes)
        own = batch.owner[inside]
        mk = batch.marks[inside]
        out[:, 0] = np.bincount(own, minlength=n)
        out[:, 1] = np.bincount(own, weights=np.linalg.norm(mk, axis=1), minlength=n)
        for j in range(d):
            out[:, 2 + j] = np.bincount(own, weights=mk[:, j], minlength=n)
        return out

    def decide(self, stats: np.ndarray) -> np.ndarray:
        n = len(stats)
        if self.kind == "true":
            return np.ones(n, dtype=bool)
        if self.kind == "false":
            return np.zeros(n, dtype=bool)
        if self.kind == "count":
            s = stats[:, 0]
        elif self.kind == "tv":
            s = stats[:, 1]
        else:
            s = np.linalg.norm(stats[:, 2:], axis=1)
        return _OPS[self.op](s, self.threshold)

    def __call__(self, eta: Configuration) -> bool:
        return bool(self.decide(self.stats(Batch.from_configurations([eta])))[0])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "cubes": [list(k) for k in sorted(self.cubes)],
                "op": self.op, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, data: dict) -> "Event":
        return cls(data["kind"], frozenset(tuple(k) for k in data.get("cubes", [])),
                   data.get("op", "<="), float(data.get("threshold", 0.0)))


def _outside(xi: Configuration | None, region: Region) -> Configuration | None:
    if xi is None:
        return None
    return xi.subset(~xi.mask_in(region), xi.window - region)


def kernel_probability(model: Model, region: Region, xi: Configuration | None, event: Event, n: int,
                       rng: np.random.Generator, budget: int = DEFAULT_BUDGET,
                       seed: int | None = None) -> KernelEstimate:
    """pi_Lambda(B | xi): B evaluated on eta_Lambda + xi outside Lambda, eta ~ gamma_Lambda(.|xi)."""
    rb = sample_gibbs_rejection_batch(model, region, xi, n, rng, budget)
    st = event.stats(rb.batch)
    out = _outside(xi, region)
    if out is not None and len(out):
        st = st + event.stats(Batch.from_configurations([out]))
    ind = event.decide(st).astype(float)
    p, se = _mean_se(ind)
    tb = 2 * truncation_energy_bound(model, region, rb.boundary) / max(rb.acceptance_rate, 1e-300)
    return KernelEstimate(p, se, n, seed, tb)


# -- consistency and DLR ---------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    lhs: float
    rhs: float
    diff: float
    stderr: float
    n: int
    seed: int | None
    passed: bool
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "diff": self.diff, "stderr": self.stderr,
                "n": self.n, "seed": self.seed, "pass": self.passed, **self.extra}


def _paired(lhs: np.ndarray, rhs: np.ndarray, seed, k_sigma: float, extra=None) -> ResidualReport:
    diff = lhs - rhs
    dm, dse = _mean_se(diff)
    return ResidualReport(float(lhs.mean()), float(rhs.mean()), dm, dse, len(lhs), seed,
                          abs(dm) <= k_sigma * dse, extra or {})


def two_stage(model: Model, inner: Region, full: Batch, event: Event, rng: np.random.Generator,
              budget: int = DEFAULT_BUDGET) -> tuple[np.ndarray, np.ndarray]:
    """Indicators of B for the outer draws and for one inner kernel draw each.

    ``full`` holds complete configurations on a window containing inner and its
    halo. For sample i the inner region is resampled from gamma_inner(.|full_i);
    returns (B after resampling, B on full_i).
    """
    if not (inner | halo(inner)).issubset(full.window):
        raise ValueError("outer configurations must cover the inner region and its halo")
    hal = halo(inner)
    bnd = full.select_rows(full.row_mask(hal), hal)
    keep = full.select_rows(~full.row_mask(inner), full.window - inner)
    resampled, _ = _rejection_core(model, inner, len(full), rng, bnd, budget)
    rhs = event.decide(event.stats(full))
    lhs = event.decide(event.stats(keep) + event.stats(resampled))
    return lhs.astype(float), rhs.astype(float)


def finite_volume_gibbs(model: Model, region: Region, xi: Configuration | None,
                        budget: int = DEFAULT_BUDGET) -> Callable[[int, np.random.Generator], Batch]:
    """Sampler of full configurations eta_region + xi outside region, eta ~ gamma_region(.|xi)."""
    out = _outside(xi, region)

    def draw(n: int, rng: np.random.Generator) -> Batch:
        rb = sample_gibbs_rejection_batch(model, region, xi, n, rng, budget)
        win = region | (out.window if out is not None else Region(region.spec))
        if out is None or len(out) == 0:
            return Batch(rb.batch.counts, rb.batch.positions, rb.batch.marks, win)
        return Batch.concat_rows([rb.batch, Batch.repeat(out, n)], win)

    return draw


def consistency_residual(model: Model, inner: Region, outer: Region, xi: Configuration | None, event: Event,
                         n: int, rng: np.random.Generator, budget: int = DEFAULT_BUDGET,
                         seed: int | None = None, k_sigma: float = 3.0) -> ResidualReport:
    """int pi_inner(B | eta) pi_outer(d eta | xi) - pi_outer(B | xi), paired two-stage estimate."""
    if not inner.issubset(outer):
        raise ValueError("the inner region must be contained in the outer region")
    if xi is None:
        xi = Configuration.empty(halo(outer))
    full = finite_volume_gibbs(model, outer, xi, budget)(n, rng)
    if not (inner | halo(inner)).issubset(full.window):
        full = Batch(full.counts, full.positions, full.marks, full.window | halo(inner))
    lhs, rhs = two_stage(model, inner, full, event, rng, budget)
    return _paired(lhs, rhs, seed, k_sigma)


def dlr_residual(model: Model, region: Region, approx_gibbs: Callable[[int, np.random.Generator], Batch],
                 event: Event, n: int, rng: np.random.Generator, budget: int = DEFAULT_BUDGET,
                 seed: int | None = None, k_sigma: float = 3.0) -> ResidualReport:
    """int pi_Lambda(B | eta) gamma(d eta) - gamma(B), gamma given by its sampler."""
    full = approx_gibbs(n, rng)
    lhs, rhs = two_stage(model, region, full, event, rng, budget)
    return _paired(lhs, rhs, seed, k_sigma)


@dataclass(frozen=True)
class DLRSweep:
    rings: tuple
    reports: tuple
    trend_ok: bool
    passed: bool

    def to_dict(self) -> dict:
        return {"rings": list(self.rings), "reports": [r.to_dict() for r in self.reports],
                "trend_ok": self.trend_ok, "pass": self.passed}


def dlr_sweep(model: Model, region: Region, xi: Configuration | None, event: Event, n: int,
              rng: np.random.Generator, rings: Sequence[int] = (1, 2, 3), budget: int = DEFAULT_BUDGET,
              seed: int | None = None, k_sigma: float = 3.0) -> DLRSweep:
    """DLR residuals with gamma approximated by gamma_{Lambda_N}(.|xi), Lambda_N = region + N halo rings.

    Trend test: |r_last| <= |r_first| + k_sigma * sqrt(s_first^2 + s_last^2).
    """
    reports = []
    for N in rings:
        big = region.expand(N)
        reports.append(dlr_residual(model, region, finite_volume_gibbs(model, big, xi, budget), event, n, rng,
                                    budget, seed, k_sigma))
    a, b = reports[0], reports[-1]
    trend = abs(b.diff) <= abs(a.diff) + k_sigma * math.hypot(a.stderr, b.stderr)
    return DLRSweep(tuple(rings), tuple(reports), trend, trend and all(r.passed for r in reports))


def void_probability(mm: MarkMeasure, region: Region) -> float:
    """P(no atoms in region) under the truncated reference measure."""
    return math.exp(-mm.truncated_intensity * region.volume)


__all__ = [
    "BIRTH", "DEATH", "MOVE", "MARK", "DEFAULT_BUDGET", "DLRSweep", "Event", "GibbsSample", "KernelEstimate",
    "LowAcceptanceError", "MCMCKnobs", "MCMCState", "Model", "NegativeEnergyError", "PartitionEstimate",
    "RejectionBatch", "ResidualReport", "consistency_residual", "dlr_residual", "dlr_sweep",
    "finite_volume_gibbs", "kernel_probability", "partition_function_mc", "poisson_tv_moment",
    "sample_gibbs_mcmc", "sample_gibbs_mcmc_batch", "sample_gibbs_rejection", "sample_gibbs_rejection_batch",
    "truncation_energy_bound", "two_stage", "void_probability",
]
