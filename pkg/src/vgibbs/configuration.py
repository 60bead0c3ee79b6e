"""Finite windows of the cone K(R^d): eta = sum_x v_x delta_x restricted to a Region."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .geometry import CubeIndex, PartitionSpec, Region, cube_indices, in_cubes

MASS_MODES = ("tv", "vector-norm")


class ConfigurationError(ValueError):
    pass


class Configuration:
    """Atoms (position, nonzero mark) exhausting a window Region.

    Immutable: the arrays are made read-only on construction.
    """

    __slots__ = ("positions", "marks", "window", "_cubes")

    def __init__(self, positions, marks, window: Region, *, validate: bool = True):
        d = window.spec.d
        pos = np.array(positions, dtype=float).reshape(-1, d)
        mk = np.array(marks, dtype=float).reshape(-1, d)
        if pos.shape != mk.shape:
            raise ConfigurationError(f"{len(pos)} positions but {len(mk)} marks")
        if validate and not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mk))):
            raise ConfigurationError("non-finite position or mark")
        cubes = cube_indices(pos, window.spec) if len(pos) else np.empty((0, d), dtype=np.int64)
        if validate:
            if len(mk) and np.any(np.all(mk == 0, axis=1)):
                raise ConfigurationError("zero mark: atoms must carry a velocity in R^d \\ {0}")
            if len(pos) > 1 and len(np.unique(pos, axis=0)) != len(pos):
                raise ConfigurationError("duplicate positions: a configuration cannot contain two atoms at one point")
            inside = in_cubes(cubes, window.cubes)
            if not np.all(inside):
                bad = tuple(cubes[~inside][0].tolist())
                raise ConfigurationError(f"atoms outside the window, e.g. in cube {bad}")
        pos.setflags(write=False)
        mk.setflags(write=False)
        cubes.setflags(write=False)
        self.positions = pos
        self.marks = mk
        self.window = window
        self._cubes = cubes

    @classmethod
    def empty(cls, window: Region) -> "Configuration":
        return cls(np.empty((0, window.spec.d)), np.empty((0, window.spec.d)), window)

    @property
    def spec(self) -> PartitionSpec:
        return self.window.spec

    @property
    def d(self) -> int:
        return self.window.spec.d

    @property
    def cube_idx(self) -> np.ndarray:
        return self._cubes

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        if self.window != other.window or len(self) != len(other):
            return False
        a = np.lexsort(self.positions.T[::-1]) if len(self) else []
        b = np.lexsort(other.positions.T[::-1]) if len(other) else []
        return bool(np.array_equal(self.positions[a], other.positions[b])
                    and np.array_equal(self.marks[a], other.marks[b]))

    def __repr__(self) -> str:
        return f"Configuration(n={len(self)}, d={self.d}, window={len(self.window)} cubes)"

    def mask_in(self, region: Region) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        return in_cubes(self._cubes, region.cubes)

    def subset(self, mask, window: Region) -> "Configuration":
        return Configuration(self.positions[mask], self.marks[mask], window, validate=False)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.marks, axis=1)

    def with_marks(self, marks) -> "Configuration":
        return Configuration(self.positions, marks, self.window)


def project(eta: Configuration, region: Region) -> Configuration:
    """Canonical projection eta -> eta_Lambda, with the window shrunk to Lambda."""
    if not region.issubset(eta.window):
        raise ConfigurationError("projection region is not contained in the configuration window")
    return eta.subset(eta.mask_in(region), region)


def restrict(eta: Configuration, region: Region) -> Configuration:
    """Atoms of eta inside ``region``; the window becomes region & eta.window.

    Unlike ``project`` this never fails: it is the helper used for boundary
    conditions, whose windows need not cover the requested region.
    """
    common = region & eta.window
    return eta.subset(eta.mask_in(common), common)


def glue(*parts: Configuration) -> Configuration:
    """eta_1 + eta_2 + ... for configurations on pairwise disjoint windows."""
    parts = [p for p in parts if p is not None]
    if not parts:
        raise ConfigurationError("nothing to glue")
    spec = parts[0].spec
    cubes: set = set()
    for p in parts:
        if p.spec != spec:
            raise ConfigurationError("cannot glue configurations on different partitions")
        if not cubes.isdisjoint(p.window.cubes):
            raise ConfigurationError("glued windows overlap")
        cubes |= p.window.cubes
    pos = np.concatenate([p.positions for p in parts])
    mk = np.concatenate([p.marks for p in parts])
    return Configuration(pos, mk, Region(spec, frozenset(cubes)), validate=False)


def _check_inside(eta: Configuration, region: Region):
    if not region.issubset(eta.window):
        raise ConfigurationError("region is not contained in the configuration window")


def vector_mass(eta: Configuration, region: Region | None = None) -> np.ndarray:
    """eta(Lambda) = sum of marks of atoms in Lambda."""
    if region is None:
        return eta.marks.sum(axis=0)
    _check_inside(eta, region)
    return eta.marks[eta.mask_in(region)].sum(axis=0)


def tv_mass(eta: Configuration, region: Region | None = None) -> float:
    """Velocity functional V_Lambda = sum of |v_x| over atoms in Lambda."""
    if region is None:
        return float(eta.norms().sum())
    _check_inside(eta, region)
    return float(eta.norms()[eta.mask_in(region)].sum())


def cube_masses(eta: Configuration, mode: str = "tv") -> dict[CubeIndex, float]:
    """Scalar mass of every window cube (cubes without atoms map to 0)."""
    if mode not in MASS_MODES:
        raise ValueError(f"mass_mode must be one of {MASS_MODES}, got {mode!r}")
    out = {k: 0.0 for k in eta.window.cubes}
    if len(eta) == 0:
        return out
    uniq, inv = np.unique(eta.cube_idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    if mode == "tv":
        sums = np.bincount(inv, weights=eta.norms(), minlength=len(uniq))
        for k, s in zip(uniq.tolist(), sums):
            out[tuple(k)] = float(s)
    else:
        for j, k in enumerate(uniq.tolist()):
            out[tuple(k)] = float(np.linalg.norm(eta.marks[inv == j].sum(axis=0)))
    return out


@dataclass(frozen=True)
class CubeFunction:
    """Test function psi, constant on each partition cube (zero off ``values``)."""

    spec: PartitionSpec
    values: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", {tuple(int(c) for c in k): float(v) for k, v in dict(self.values).items()})

    def __call__(self, x) -> np.ndarray:
        idx = cube_indices(np.asarray(x, dtype=float).reshape(-1, self.spec.d), self.spec)
        return np.array([self.values.get(tuple(k), 0.0) for k in idx.tolist()])

    @property
    def support(self) -> Region:
        return Region(self.spec, frozenset(k for k, v in self.values.items() if v != 0))

    @property
    def sup_norm(self) -> float:
        return max((abs(v) for v in self.values.values()), default=0.0)

    def to_dict(self) -> dict:
        return {",".join(map(str, k)): v for k, v in sorted(self.values.items())}


PsiFunction = CubeFunction | Callable[[np.ndarray], np.ndarray]


def pairing(eta: Configuration, h, psi: PsiFunction) -> float:
    """<h (x) psi, eta> = sum_x psi(x) <h, v_x>."""
    h = np.asarray(h, dtype=float).reshape(eta.d)
    if len(eta) == 0:
        return 0.0
    w = np.asarray(psi(eta.positions), dtype=float).reshape(-1)
    return float(np.dot(w, eta.marks @ h))


@dataclass(frozen=True)
class TemperednessReport:
    alpha_temp: float
    value: float
    per_cube: dict

    def to_dict(self) -> dict:
        return {"alpha_temp": self.alpha_temp, "value": self.value,
                "per_cube": {",".join(map(str, k)): m for k, m in sorted(self.per_cube.items())}}


def temperedness(eta: Configuration, alpha_temp: float, mass_mode: str = "tv") -> TemperednessReport:
    """M_alpha(eta) = (sum_k mass(Q_k)^2 exp(-alpha |k|))^(1/2) over the window cubes."""
    if not alpha_temp > 0:
        raise ValueError("alpha_temp must be > 0")
    masses = cube_masses(eta, mass_mode)
    total = math.fsum(m * m * math.exp(-alpha_temp * math.sqrt(sum(c * c for c in k)))
                      for k, m in masses.items())
    return TemperednessReport(alpha_temp, math.sqrt(total), masses)


# -- text format ------------------------------------------------------------
#
#   # vgibbs configuration v1
#   # d = 2
#   # delta = 1.0
#   # R = 1.5
#   # window = 0,0;0,1;1,0
#   x_1 ... x_d v_1 ... v_d          (one atom per line, repr floats)

def dumps(eta: Configuration) -> str:
    spec = eta.spec
    buf = io.StringIO()
    buf.write("# vgibbs configuration v1\n")
    buf.write(f"# d = {spec.d}\n# delta = {spec.delta!r}\n# R = {spec.R!r}\n")
    buf.write("# window = " + ";".join(",".join(map(str, k)) for k in eta.window.sorted()) + "\n")
    order = np.lexsort(eta.positions.T[::-1]) if len(eta) else []
    for i in order:
        row = list(eta.positions[i]) + list(eta.marks[i])
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def loads(text: str) -> Configuration:
    header: dict[str, str] = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "=" in line:
                key, val = line[1:].split("=", 1)
                header[key.strip()] = val.strip()
            continue
        rows.append([float(t) for t in line.split()])
    try:
        d = int(header["d"])
        spec = PartitionSpec(d, float(header["delta"]), float(header["R"]))
    except KeyError as exc:
        raise ConfigurationError(f"configuration header lacks {exc}") from None
    win = header.get("window", "")
    cubes = [tuple(int(c) for c in item.split(",")) for item in win.split(";") if item]
    window = Region(spec, frozenset(cubes))
    arr = np.array(rows, dtype=float).reshape(-1, 2 * d)
    return Configuration(arr[:, :d], arr[:, d:], window)


def save(eta: Configuration, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(eta))


def load(path) -> Configuration:
    with open(path) as fh:
        return loads(fh.read())
