"""Permeability and source fields, boundary data, transmissibilities."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .grid import SIDES, FineGrid


@dataclass(frozen=True)
class SideCondition:
    """Dirichlet ``g = value + slope * s`` (``s`` the coordinate along the side) or Neumann."""

    kind: str = "neumann"
    value: float = 0.0
    slope: float = 0.0

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == "dirichlet"


@dataclass(frozen=True)
class BoundarySpec:
    left: SideCondition = field(default_factory=SideCondition)
    right: SideCondition = field(default_factory=SideCondition)
    bottom: SideCondition = field(default_factory=SideCondition)
    top: SideCondition = field(default_factory=SideCondition)

    @classmethod
    def from_dict(cls, sides: dict) -> "BoundarySpec":
        """``{"left": 1.0, "right": (0.0, 2.0), "top": "neumann"}``; omitted sides are Neumann."""
        kw = {}
        for side, spec in sides.items():
            if side not in SIDES:
                raise ConfigError(f"unknown boundary side {side!r}")
            if spec is None or (isinstance(spec, str) and spec.lower() in ("n", "neumann")):
                kw[side] = SideCondition()
            elif isinstance(spec, SideCondition):
                kw[side] = spec
            elif isinstance(spec, (tuple, list)):
                a, b = spec
                kw[side] = SideCondition("dirichlet", float(a), float(b))
            else:
                kw[side] = SideCondition("dirichlet", float(spec), 0.0)
        return cls(**kw)

    @classmethod
    def parse(cls, text: str) -> "BoundarySpec":
        """Parse ``"left=1,right=0,top=neumann"``; ``a+b*s`` gives an affine Dirichlet value."""
        sides = {}
        for item in filter(None, (t.strip() for t in text.split(","))):
            if "=" not in item:
                raise ConfigError(f"boundary item {item!r} is not side=value")
            side, val = (t.strip() for t in item.split("=", 1))
            if val.lower() in ("n", "neumann"):
                sides[side] = None
                continue
            sides[side] = _parse_affine(val, side)
        return cls.from_dict(sides)

    def side(self, name: str) -> SideCondition:
        return getattr(self, name)

    def dirichlet_edges(self, grid: FineGrid) -> tuple[np.ndarray, np.ndarray]:
        """Dirichlet edge ids and their mean boundary values (midpoint = trapezoid for affine g)."""
        edges, values = [], []
        mid = grid.edge_midpoints
        for name in SIDES:
            sc = self.side(name)
            if not sc.is_dirichlet:
                continue
            e = grid.boundary_edges(name)
            s = mid[e, 1] if name in ("left", "right") else mid[e, 0]
            edges.append(e)
            values.append(sc.value + sc.slope * s)
        if not edges:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.concatenate(edges), np.concatenate(values)

    @property
    def has_dirichlet(self) -> bool:
        return any(self.side(s).is_dirichlet for s in SIDES)

    def scaled(self, c: float) -> "BoundarySpec":
        return BoundarySpec(**{
            s: SideCondition(self.side(s).kind, c * self.side(s).value, c * self.side(s).slope)
            for s in SIDES
        })


_NUM = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_AFFINE = re.compile(
    rf"^(?P<a>[+-]?{_NUM})?(?:(?P<sign>^|[+-])(?P<b>{_NUM})?\*?s)?$"
)


def _parse_affine(text: str, side: str) -> tuple[float, float]:
    """``"2"``, ``"1+2*s"``, ``"1-s"``, ``"0.5*s"`` -> ``(value, slope)``."""
    m = _AFFINE.match(text.replace(" ", ""))
    if not m or (m.group("a") is None and m.group("sign") is None):
        raise ConfigError(f"bad boundary value {text!r} for side {side}")
    a = float(m.group("a") or 0.0)
    if m.group("sign") is None:
        return a, 0.0
    b = float(m.group("b") or 1.0)
    return a, -b if m.group("sign") == "-" else b


# --------------------------------------------------------------------------- io

def _read_raster(path, positive: bool) -> tuple[int, int, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"field file {path} does not exist")
    tokens = path.read_text().split()
    try:
        nx, ny = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot parse raster ({exc})") from exc
    if values.size != nx * ny:
        raise ConfigError(f"{path}: header says {nx}x{ny}={nx * ny} values, found {values.size}")
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ConfigError(f"{path}: non-finite value at cell {bad}")
    if positive and np.any(values <= 0):
        bad = int(np.flatnonzero(values <= 0)[0])
        raise ConfigError(f"{path}: non-positive permeability {values[bad]} at cell {bad} "
                          f"(i={bad % nx}, j={bad // nx})")
    return nx, ny, values


def load_perm(path, format: str = "raster", shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a per-cell permeability raster (``"nx ny"`` header, row-major, bottom row first).

    ``format="spe10"`` is the same layout; a pre-extracted 2D slice is expected.
    """
    if format not in ("raster", "spe10"):
        raise ConfigError(f"unknown permeability format {format!r}")
    nx, ny, values = _read_raster(path, positive=True)
    if shape is not None and (nx, ny) != tuple(shape):
        raise ConfigError(f"{path}: raster is {nx}x{ny} but the grid is {shape[0]}x{shape[1]}")
    return values


def load_source(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    nx, ny, values = _read_raster(path, positive=False)
    if shape is not None and (nx, ny) != tuple(shape):
        raise ConfigError(f"{path}: raster is {nx}x{ny} but the grid is {shape[0]}x{shape[1]}")
    return values


def write_raster(path, values, nx: int, ny: int) -> None:
    values = np.asarray(values, dtype=float).reshape(ny, nx)
    lines = [f"{nx} {ny}"] + [" ".join(repr(float(v)) for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------- generators

def parse_field_spec(spec: str) -> tuple[str, dict]:
    """``"inclusions,contrast=1e4,count=20"`` -> ``("inclusions", {...})``.

    ``"uniform(1)"`` style with a single positional value is accepted too.
    """
    spec = spec.strip()
    if spec.startswith("gen:"):
        spec = spec[4:]
    if "(" in spec and spec.endswith(")"):
        name, args = spec[:-1].split("(", 1)
        parts = [p for p in args.split(",") if p.strip()]
    else:
        name, *parts = spec.split(",")
    name = name.strip().lower()
    params = {}
    for k, p in enumerate(parts):
        key, eq, val = p.partition("=")
        if not eq:
            key, val = f"_{k}", key
        try:
            params[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"bad parameter {p!r} in field spec {spec!r}") from exc
    return name, params


_DEFAULTS = {
    "uniform": {"value": 1.0},
    "inclusions": {"contrast": 1e4, "count": 40, "size": 3, "gap": 1},
    "channels": {"contrast": 1e4, "count": 2, "width": 1},
    "lognormal": {"sigma": 1.0, "corr": 0.0},
}


def gen_perm(spec: str, nx: int, ny: int, seed: int = 0) -> np.ndarray:
    """Synthetic permeability; deterministic in ``(spec, nx, ny, seed)``.

    * ``uniform,value=c``
    * ``inclusions,contrast=C,count=n,size=s[,gap=g]`` -- ``n`` non-touching
      ``s x s`` squares of value ``C`` on a background of 1
    * ``channels,contrast=C,count=n[,width=w]`` -- ``n`` horizontal strips
      spanning the domain
    * ``lognormal,sigma=s[,corr=c]`` -- ``exp(s*g)`` with ``g`` a unit-variance
      Gaussian field smoothed over ``c`` cells
    """
    name, params = parse_field_spec(spec)
    if name not in _DEFAULTS:
        raise ConfigError(f"unknown permeability generator {name!r} in {spec!r}")
    p = dict(_DEFAULTS[name])
    if "_0" in params:
        params[next(iter(_DEFAULTS[name]))] = params.pop("_0")
    unknown = set(params) - set(p)
    if unknown:
        raise ConfigError(f"unknown parameters {sorted(unknown)} for generator {name!r}")
    p.update(params)
    rng = np.random.default_rng(np.uint64(seed))

    if name == "uniform":
        if p["value"] <= 0:
            raise ConfigError("uniform value must be positive")
        return np.full(nx * ny, float(p["value"]))

    if name == "lognormal":
        g = rng.standard_normal((ny, nx))
        if p["corr"] > 0:
            g = ndimage.gaussian_filter(g, p["corr"], mode="wrap")
            g /= g.std()
        return np.exp(p["sigma"] * g).ravel()

    if p["contrast"] <= 0:
        raise ConfigError("contrast must be positive")
    kappa = np.ones((ny, nx))

    if name == "channels":
        w = int(p["width"])
        count = int(p["count"])
        rows = np.arange(1, ny - w)
        if count > rows.size:
            raise ConfigError("too many channels for the grid")
        chosen = []
        for r in rng.permutation(rows):
            if all(abs(int(r) - c) > w for c in chosen):
                chosen.append(int(r))
            if len(chosen) == count:
                break
        for r in chosen:
            kappa[r:r + w, :] = p["contrast"]
        return kappa.ravel()

    # inclusions
    s, gap, count = int(p["size"]), int(p["gap"]), int(p["count"])
    taken = np.zeros((ny, nx), dtype=bool)
    placed = 0
    for _ in range(200 * max(count, 1)):
        if placed == count:
            break
        i, j = int(rng.integers(1, nx - s)), int(rng.integers(1, ny - s))
        lo_i, lo_j = max(i - gap, 0), max(j - gap, 0)
        if taken[lo_j:j + s + gap, lo_i:i + s + gap].any():
            continue
        taken[j:j + s, i:i + s] = True
        placed += 1
    if placed < count:
        raise ConfigError(f"could only place {placed} of {count} inclusions")
    kappa[taken] = p["contrast"]
    return kappa.ravel()


def balanced_blobs(grid: FineGrid, Nx: int, Ny: int, magnitude: float = 1.0) -> np.ndarray:
    """Source ``+c`` on one coarse cell and ``-c`` on a distant one (zero net mass)."""
    f = np.zeros((grid.ny, grid.nx))
    mx, my = grid.nx // Nx, grid.ny // Ny
    I0, J0 = Nx // 4, Ny // 4
    I1, J1 = Nx - 1 - Nx // 4, Ny - 1 - Ny // 4
    f[J0 * my:(J0 + 1) * my, I0 * mx:(I0 + 1) * mx] += magnitude
    f[J1 * my:(J1 + 1) * my, I1 * mx:(I1 + 1) * mx] -= magnitude
    return f.ravel()


# --------------------------------------------------------------------------- derived coefficients

def transmissibilities(kappa, grid: FineGrid, bc: BoundarySpec) -> np.ndarray:
    """Per-edge flux coefficient: harmonic mean inside, ``2*kappa_t`` on Dirichlet edges, 0 on Neumann."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0):
        raise ConfigError("permeability must be strictly positive")
    trans = np.zeros(grid.n_edges)
    e = grid.interior_edges
    k1, k2 = kappa[grid.edge_cells[e, 0]], kappa[grid.edge_cells[e, 1]]
    trans[e] = 2.0 / (1.0 / k1 + 1.0 / k2)
    de, _ = bc.dirichlet_edges(grid)
    trans[de] = 2.0 * kappa[grid.edge_inner_cell(de)]
    return trans


def cell_weights(trans, grid: FineGrid) -> np.ndarray:
    """Sum of the four edge transmissibilities of each cell."""
    return np.asarray(trans)[grid.cell_edges].sum(axis=1)


@dataclass(frozen=True, eq=False)
class PermeabilityModel:
    kappa: np.ndarray
    trans: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, kappa, grid: FineGrid, bc: BoundarySpec) -> "PermeabilityModel":
        kappa = np.asarray(kappa, dtype=float)
        if kappa.size != grid.n_cells:
            raise ConfigError(f"permeability has {kappa.size} values, grid has {grid.n_cells} cells")
        trans = transmissibilities(kappa, grid, bc)
        return cls(kappa, trans, cell_weights(trans, grid))

    @property
    def contrast(self) -> float:
        return float(self.kappa.max() / self.kappa.min())
