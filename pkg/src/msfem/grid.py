"""Uniform two-level grids, oversampled blocks and the four-color element split.

Fine cells are numbered row-major from the bottom row, ``cell = i + j*nx``.
Edges come in two families: vertical edges (normal along +x) numbered
``i + j*(nx+1)`` for ``i in 0..nx``, followed by horizontal edges (normal
along +y) numbered ``n_vertical + i + j*nx`` for ``j in 0..ny``.  Every edge
has a fixed orientation (+x or +y); the cell on its negative side is the
"minus" cell and gets orientation sign ``s_et = +1``, the other one ``-1``.

Coarse elements use the same convention, ``E = I + J*Nx`` (0-based).  The
two-index 1-based naming ``T_{(I+1),(J+1)}`` is only used by
:func:`four_coloring` and :func:`element_label`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class FineGrid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ConfigError(f"fine grid sizes must be positive, got {self.nx}x{self.ny}")
        if not np.isclose(self.lx / self.nx, self.ly / self.ny, rtol=1e-12):
            raise ConfigError(
                f"fine cells must be square: {self.lx}/{self.nx} != {self.ly}/{self.ny}"
            )

    @property
    def h(self) -> float:
        return self.lx / self.nx

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertical(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_horizontal(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def n_edges(self) -> int:
        return self.n_vertical + self.n_horizontal

    def cell_id(self, i, j):
        return np.asarray(i) + np.asarray(j) * self.nx

    def vedge(self, i, j):
        """Vertical edge at x-index ``i`` (0..nx) in cell row ``j``."""
        return np.asarray(i) + np.asarray(j) * (self.nx + 1)

    def hedge(self, i, j):
        """Horizontal edge in cell column ``i`` at y-index ``j`` (0..ny)."""
        return self.n_vertical + np.asarray(i) + np.asarray(j) * self.nx

    @cached_property
    def cell_centers(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack([(i.ravel() + 0.5) * self.h, (j.ravel() + 0.5) * self.h])

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """``(n_edges, 2)`` array of (minus, plus) cell ids, -1 outside the domain."""
        nx, ny = self.nx, self.ny
        out = np.full((self.n_edges, 2), -1, dtype=np.int64)
        # vertical edges
        i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny))
        i, j = i.ravel(), j.ravel()
        e = self.vedge(i, j)
        out[e, 0] = np.where(i > 0, self.cell_id(i - 1, j), -1)
        out[e, 1] = np.where(i < nx, self.cell_id(i, j), -1)
        # horizontal edges
        i, j = np.meshgrid(np.arange(nx), np.arange(ny + 1))
        i, j = i.ravel(), j.ravel()
        e = self.hedge(i, j)
        out[e, 0] = np.where(j > 0, self.cell_id(i, j - 1), -1)
        out[e, 1] = np.where(j < ny, self.cell_id(i, j), -1)
        return out

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """``(n_cells, 4)`` edge ids in the order left, right, bottom, top."""
        j, i = np.divmod(np.arange(self.n_cells), self.nx)
        return np.column_stack(
            [self.vedge(i, j), self.vedge(i + 1, j), self.hedge(i, j), self.hedge(i, j + 1)]
        )

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        h = self.h
        mid = np.empty((self.n_edges, 2))
        i, j = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny))
        mid[self.vedge(i.ravel(), j.ravel())] = np.column_stack([i.ravel() * h, (j.ravel() + 0.5) * h])
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny + 1))
        mid[self.hedge(i.ravel(), j.ravel())] = np.column_stack([(i.ravel() + 0.5) * h, j.ravel() * h])
        return mid

    @cached_property
    def is_vertical(self) -> np.ndarray:
        return np.arange(self.n_edges) < self.n_vertical

    @cached_property
    def interior_edges(self) -> np.ndarray:
        ec = self.edge_cells
        return np.flatnonzero((ec[:, 0] >= 0) & (ec[:, 1] >= 0))

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Signed edge-cell incidence ``D[e, t] = s_et`` of shape ``(n_edges, n_cells)``.

        ``(D @ p)[e]`` is the jump ``p_minus - p_plus`` on interior edges and
        ``s_et * p_t`` on boundary edges.
        """
        ec = self.edge_cells
        rows = np.concatenate([np.arange(self.n_edges)] * 2)
        cols = np.concatenate([ec[:, 0], ec[:, 1]])
        vals = np.concatenate([np.ones(self.n_edges), -np.ones(self.n_edges)])
        keep = cols >= 0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.n_edges, self.n_cells))

    def boundary_edges(self, side: str) -> np.ndarray:
        """Domain boundary edges on ``side``, ascending along the side."""
        nx, ny = self.nx, self.ny
        if side == "left":
            return self.vedge(0, np.arange(ny))
        if side == "right":
            return self.vedge(nx, np.arange(ny))
        if side == "bottom":
            return self.hedge(np.arange(nx), 0)
        if side == "top":
            return self.hedge(np.arange(nx), ny)
        raise ConfigError(f"unknown side {side!r}")

    def edge_inner_cell(self, edges) -> np.ndarray:
        """The single in-domain cell of each boundary edge."""
        ec = self.edge_cells[np.asarray(edges)]
        return np.where(ec[:, 0] >= 0, ec[:, 0], ec[:, 1])

    def outward_sign(self, edges) -> np.ndarray:
        """Orientation sign ``s_et`` of each boundary edge w.r.t. its inner cell."""
        ec = self.edge_cells[np.asarray(edges)]
        return np.where(ec[:, 0] >= 0, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class OversampledBlock:
    """A coarse element enlarged by ``layers`` fine layers, clipped to the domain.

    ``cells`` are global ids in block-local row-major order; ``boundary_edges``
    run bottom, right, top, left with ascending coordinate along each side,
    and ``boundary_cells[k]`` is the block cell adjacent to ``boundary_edges[k]``.
    """

    element: int
    layers: int
    i0: int
    i1: int
    j0: int
    j1: int
    cells: np.ndarray
    in_element: np.ndarray
    interior_edges: np.ndarray
    interior_pairs: np.ndarray
    boundary_edges: np.ndarray
    boundary_cells: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.i1 - self.i0, self.j1 - self.j0

    @property
    def n_cells(self) -> int:
        return self.cells.size

    @property
    def n_boundary(self) -> int:
        return self.boundary_edges.size

    @property
    def edges(self) -> np.ndarray:
        """All block edges: interior first, then the ordered boundary."""
        return np.concatenate([self.interior_edges, self.boundary_edges])


@dataclass(frozen=True)
class GridHierarchy:
    fine: FineGrid
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.Nx <= 0 or self.Ny <= 0:
            raise ConfigError(f"coarse sizes must be positive, got {self.Nx}x{self.Ny}")
        if self.fine.nx % self.Nx:
            raise ConfigError(f"fine nx={self.fine.nx} is not divisible by coarse Nx={self.Nx}")
        if self.fine.ny % self.Ny:
            raise ConfigError(f"fine ny={self.fine.ny} is not divisible by coarse Ny={self.Ny}")

    @property
    def mx(self) -> int:
        return self.fine.nx // self.Nx

    @property
    def my(self) -> int:
        return self.fine.ny // self.Ny

    @property
    def n_elements(self) -> int:
        return self.Nx * self.Ny

    def element_index(self, E: int) -> tuple[int, int]:
        if not 0 <= E < self.n_elements:
            raise IndexError(f"element {E} out of range 0..{self.n_elements - 1}")
        J, I = divmod(E, self.Nx)
        return I, J

    @cached_property
    def cell_element(self) -> np.ndarray:
        j, i = np.divmod(np.arange(self.fine.n_cells), self.fine.nx)
        return (i // self.mx) + (j // self.my) * self.Nx

    @cached_property
    def _element_cells(self) -> list[np.ndarray]:
        return [self.block(E, 0).cells for E in range(self.n_elements)]

    def element_cells(self, E: int) -> np.ndarray:
        return self._element_cells[E]

    def element_interior_edges(self, E: int) -> np.ndarray:
        return self.block(E, 0).interior_edges

    def element_boundary_edges(self, E: int) -> np.ndarray:
        return self.block(E, 0).boundary_edges

    def neighbors(self, E: int) -> list[int]:
        I, J = self.element_index(E)
        out = []
        for dI, dJ in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            if 0 <= I + dI < self.Nx and 0 <= J + dJ < self.Ny:
                out.append(I + dI + (J + dJ) * self.Nx)
        return sorted(out)

    @cached_property
    def _blocks(self) -> dict:
        return {}

    def block(self, E: int, layers: int = 0) -> OversampledBlock:
        key = (E, layers)
        if key not in self._blocks:
            self._blocks[key] = oversample(self, E, layers)
        return self._blocks[key]


def build_hierarchy(nx: int, ny: int, Nx: int, Ny: int, domain_extent=(1.0, None)) -> GridHierarchy:
    """Fine ``nx x ny`` grid over ``[0, lx] x [0, ly]`` nested in an ``Nx x Ny`` coarse grid.

    ``domain_extent=(lx, None)`` picks ``ly`` so that cells are square.
    """
    lx, ly = domain_extent
    if ly is None:
        ly = lx * ny / nx
    for name, n in (("nx", nx), ("ny", ny), ("Nx", Nx), ("Ny", Ny)):
        if int(n) != n or n <= 0:
            raise ConfigError(f"{name} must be a positive integer, got {n}")
    return GridHierarchy(FineGrid(int(nx), int(ny), float(lx), float(ly)), int(Nx), int(Ny))


def oversample(hierarchy: GridHierarchy, element: int, layers: int) -> OversampledBlock:
    if layers < 0:
        raise ValueError("layers must be >= 0")
    g = hierarchy.fine
    I, J = hierarchy.element_index(element)
    mx, my = hierarchy.mx, hierarchy.my
    i0, i1 = max(I * mx - layers, 0), min((I + 1) * mx + layers, g.nx)
    j0, j1 = max(J * my - layers, 0), min((J + 1) * my + layers, g.ny)
    bi, bj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1))
    bi, bj = bi.ravel(), bj.ravel()
    cells = g.cell_id(bi, bj)
    in_element = (bi // mx == I) & (bj // my == J)

    local = np.full(g.n_cells, -1, dtype=np.int64)
    local[cells] = np.arange(cells.size)
    # interior vertical then horizontal edges, both cells inside the block
    vi, vj = np.meshgrid(np.arange(i0 + 1, i1), np.arange(j0, j1))
    hi, hj = np.meshgrid(np.arange(i0, i1), np.arange(j0 + 1, j1))
    interior = np.concatenate([g.vedge(vi.ravel(), vj.ravel()), g.hedge(hi.ravel(), hj.ravel())])
    pairs = local[g.edge_cells[interior]]

    xs, ys = np.arange(i0, i1), np.arange(j0, j1)
    bottom = g.hedge(xs, j0)
    right = g.vedge(i1, ys)
    top = g.hedge(xs, j1)
    left = g.vedge(i0, ys)
    bedges = np.concatenate([bottom, right, top, left])
    bcells = np.concatenate(
        [g.cell_id(xs, j0), g.cell_id(i1 - 1, ys), g.cell_id(xs, j1 - 1), g.cell_id(i0, ys)]
    )
    return OversampledBlock(
        element=element,
        layers=layers,
        i0=i0,
        i1=i1,
        j0=j0,
        j1=j1,
        cells=cells,
        in_element=in_element,
        interior_edges=interior,
        interior_pairs=pairs,
        boundary_edges=bedges,
        boundary_cells=local[bcells],
    )


def four_coloring(hierarchy: GridHierarchy) -> list[np.ndarray]:
    """Split elements into I1..I4 = odd x odd, odd x even, even x odd, even x even.

    Parity refers to the 1-based (x, y) coarse indices.  Returns 0-based element
    ids; no two elements of one class share a coarse edge.
    """
    E = np.arange(hierarchy.n_elements)
    J, I = np.divmod(E, hierarchy.Nx)
    x_odd = (I + 1) % 2 == 1
    y_odd = (J + 1) % 2 == 1
    return [E[x_odd & y_odd], E[x_odd & ~y_odd], E[~x_odd & y_odd], E[~x_odd & ~y_odd]]


def element_label(hierarchy: GridHierarchy, E: int) -> tuple[int, int]:
    """1-based two-index name (i, j) of element ``E``."""
    I, J = hierarchy.element_index(E)
    return I + 1, J + 1
