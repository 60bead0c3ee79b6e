"""Cube partition of R^d, neighbour families and halos.

Every cube ``Q_k = [-g/2, g/2)^d + g*k`` has edge ``g = delta / sqrt(d)`` and
therefore diameter ``delta``. Cubes are lower-closed / upper-open, so a point
on an upper face belongs to the next cube.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

CubeIndex = tuple[int, ...]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    d: int
    delta: float
    R: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise GeometryError(f"dimension must be a positive integer, got {self.d}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise GeometryError(f"repulsion radius delta must be > 0, got {self.delta}")
        if not (math.isfinite(self.R) and self.R > np.finfo(float).eps):
            raise GeometryError(f"interaction range R must exceed machine epsilon, got {self.R}")

    @property
    def g(self) -> float:
        return self.delta / math.sqrt(self.d)

    @property
    def cube_volume(self) -> float:
        return self.g ** self.d

    @cached_property
    def neighbor_offsets(self) -> tuple[CubeIndex, ...]:
        # Q_0 and Q_o are at distance g*|max(|o|-1, 0)|; keep offsets with gap <= R.
        reach = self.R / self.g
        span = int(math.floor(reach)) + 1
        lim = reach * reach * (1 + 1e-12)
        out = []
        for o in itertools.product(range(-span, span + 1), repeat=self.d):
            if not any(o):
                continue
            gap2 = sum(max(abs(c) - 1, 0) ** 2 for c in o)
            if gap2 <= lim:
                out.append(o)
        return tuple(out)

    def cube_lower(self, k: CubeIndex) -> np.ndarray:
        return self.g * (np.asarray(k, dtype=float) - 0.5)

    def cube_upper(self, k: CubeIndex) -> np.ndarray:
        return self.g * (np.asarray(k, dtype=float) + 0.5)

    def cube_contains(self, k: CubeIndex, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.cube_lower(k) <= x) and np.all(x < self.cube_upper(k)))


def cube_indices(x, spec: PartitionSpec) -> np.ndarray:
    """Vectorised cube lookup: rows of ``x`` (n, d) -> integer indices (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if spec.d > 1 or x.size == 1 else x.reshape(-1, 1)
    if x.shape[-1] != spec.d:
        raise GeometryError(f"points have dimension {x.shape[-1]}, partition has {spec.d}")
    if not np.all(np.isfinite(x)):
        raise GeometryError("non-finite coordinate")
    g = spec.g
    k = np.floor(x / g + 0.5)
    # rounding in x/g can push a point one cube off; repair with the exact face test
    k = np.where(x < g * (k - 0.5), k - 1, k)
    k = np.where(x >= g * (k + 0.5), k + 1, k)
    return k.astype(np.int64)


def cube_index(x, spec: PartitionSpec) -> CubeIndex:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.d,):
        raise GeometryError(f"expected a point of dimension {spec.d}, got shape {x.shape}")
    return tuple(int(c) for c in cube_indices(x.reshape(1, -1), spec)[0])


_KEY_OFF = 1 << 20
_KEY_BASE = 1 << 21


def cube_keys(idx) -> np.ndarray:
    """Encode integer cube indices (n, d), d <= 3, as int64 keys for vectorised lookups."""
    idx = np.asarray(idx, dtype=np.int64)
    idx = idx.reshape(len(idx), -1) if idx.ndim != 2 else idx
    key = np.zeros(len(idx), dtype=np.int64)
    for j in range(idx.shape[1]):
        key = key * _KEY_BASE + (idx[:, j] + _KEY_OFF)
    return key


def in_cubes(idx, cubes) -> np.ndarray:
    """Membership of each row of ``idx`` in the cube set ``cubes``."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        return np.zeros(0, dtype=bool)
    if not cubes:
        return np.zeros(len(idx), dtype=bool)
    if idx.shape[1] > 3:
        return np.fromiter((tuple(k) in cubes for k in idx.tolist()), dtype=bool, count=len(idx))
    ref = cube_keys(np.array(sorted(cubes), dtype=np.int64).reshape(len(cubes), -1))
    return np.isin(cube_keys(idx), ref)


def neighbor_cubes(k: CubeIndex, spec: PartitionSpec) -> frozenset[CubeIndex]:
    """All j != k whose closed cube is within distance R of Q_k."""
    return frozenset(tuple(a + b for a, b in zip(k, o)) for o in spec.neighbor_offsets)


def interaction_parameter(spec: PartitionSpec) -> float:
    """Neighbour-count bound v_d d^{d/2} ceil(R/delta + 1)^d."""
    d = spec.d
    # unit-ball volume by v_d = 2 pi / d * v_{d-2}; exact 2 in d = 1, unlike pi^(1/2) / Gamma(3/2)
    v_d = 1.0 if d % 2 == 0 else 2.0
    for j in range(d, 1, -2):
        v_d *= 2 * math.pi / j
    return v_d * d ** (d / 2) * math.ceil(spec.R / spec.delta + 1) ** d


@dataclass(frozen=True)
class Region:
    """Finite union of partition cubes."""

    spec: PartitionSpec
    cubes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        cubes = frozenset(tuple(int(c) for c in k) for k in self.cubes)
        for k in cubes:
            if len(k) != self.spec.d:
                raise GeometryError(f"cube index {k} has wrong dimension for d={self.spec.d}")
        object.__setattr__(self, "cubes", cubes)

    @classmethod
    def of(cls, spec: PartitionSpec, cubes: Iterable) -> "Region":
        return cls(spec, frozenset(tuple(np.atleast_1d(k).tolist()) for k in cubes))

    @classmethod
    def box(cls, spec: PartitionSpec, lo, hi) -> "Region":
        """Cubes with lo <= k <= hi componentwise (inclusive)."""
        lo = np.broadcast_to(np.asarray(lo, dtype=int), (spec.d,))
        hi = np.broadcast_to(np.asarray(hi, dtype=int), (spec.d,))
        ranges = [range(a, b + 1) for a, b in zip(lo, hi)]
        return cls(spec, frozenset(itertools.product(*ranges)))

    def __len__(self) -> int:
        return len(self.cubes)

    def __iter__(self) -> Iterator[CubeIndex]:
        return iter(self.sorted())

    def __contains__(self, k) -> bool:
        return tuple(k) in self.cubes

    def sorted(self) -> list[CubeIndex]:
        return sorted(self.cubes)

    @property
    def volume(self) -> float:
        return len(self.cubes) * self.spec.cube_volume

    def _check(self, other: "Region"):
        if other.spec != self.spec:
            raise GeometryError("regions live on different partitions")

    def __or__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.spec, self.cubes | other.cubes)

    def __and__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.spec, self.cubes & other.cubes)

    def __sub__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.spec, self.cubes - other.cubes)

    def issubset(self, other: "Region") -> bool:
        self._check(other)
        return self.cubes <= other.cubes

    def isdisjoint(self, other: "Region") -> bool:
        self._check(other)
        return self.cubes.isdisjoint(other.cubes)

    def contains_points(self, x) -> np.ndarray:
        return in_cubes(cube_indices(x, self.spec), self.cubes)

    def index_array(self) -> np.ndarray:
        return np.array(self.sorted(), dtype=np.int64).reshape(-1, self.spec.d)

    def uniform_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. uniform points on the region (all cubes have equal volume)."""
        ks = self.index_array()
        if len(ks) == 0:
            if n:
                raise GeometryError("cannot sample points in an empty region")
            return np.empty((0, self.spec.d))
        which = rng.integers(len(ks), size=n)
        u = rng.random((n, self.spec.d))
        return self.spec.g * (ks[which] - 0.5 + u)

    def expand(self, rings: int = 1) -> "Region":
        """Region together with ``rings`` successive halos."""
        out = self
        for _ in range(rings):
            out = out | halo(out)
        return out


def halo(region: Region, spec: PartitionSpec | None = None) -> Region:
    """Cubes outside ``region`` that are neighbours of some cube in it."""
    spec = spec or region.spec
    out = set()
    for k in region.cubes:
        out |= neighbor_cubes(k, spec)
    return Region(spec, frozenset(out) - region.cubes)
