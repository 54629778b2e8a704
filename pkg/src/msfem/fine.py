"""Velocity-eliminated fine-scale pressure system, flux recovery and error measures.

With trapezoidal quadrature the mixed mass matrix is diagonal, so every edge
flux is a transmissibility times a pressure jump and only the cell pressures
remain as unknowns.  Fluxes ``u[e]`` are total fluxes through the edge in its
fixed (+x or +y) orientation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .field import BoundarySpec, PermeabilityModel
from .grid import FineGrid, GridHierarchy


@dataclass(frozen=True)
class SolverConfig:
    method: str = "auto"  # auto | direct | cg
    rtol: float = 1e-12
    maxiter: int | None = None
    direct_limit: int = 40_000

    def __post_init__(self):
        if self.method not in ("auto", "direct", "cg"):
            raise ConfigError(f"unknown solver {self.method!r} (expected auto, direct or cg)")
        if not self.rtol > 0:
            raise ConfigError("solver rtol must be positive")


@dataclass(frozen=True, eq=False)
class PressureSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_edges: np.ndarray
    dirichlet_values: np.ndarray
    boundary_jump: np.ndarray  # s_et * g on Dirichlet edges, 0 elsewhere


@dataclass(frozen=True, eq=False)
class FineSolution:
    p: np.ndarray
    u: np.ndarray


def boundary_jump(grid: FineGrid, bc: BoundarySpec) -> np.ndarray:
    """Per-edge vector with ``s_et * g`` on Dirichlet edges so that ``u = trans * (D p - g)``."""
    g = np.zeros(grid.n_edges)
    de, dv = bc.dirichlet_edges(grid)
    g[de] = grid.outward_sign(de) * dv
    return g


def stiffness(grid: FineGrid, trans: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``a(r, q) = sum_e trans_e [r]_e [q]_e``; boundary jumps are the cell value."""
    trans = np.asarray(trans, dtype=float)
    e = grid.interior_edges
    m, p = grid.edge_cells[e, 0], grid.edge_cells[e, 1]
    w = trans[e]
    diag = trans[grid.cell_edges].sum(axis=1)
    n = grid.n_cells
    rows = np.concatenate([np.arange(n), m, p])
    cols = np.concatenate([np.arange(n), p, m])
    vals = np.concatenate([diag, -w, -w])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble(grid: FineGrid, trans, f, bc: BoundarySpec, require_dirichlet: bool = True) -> PressureSystem:
    trans = np.asarray(trans, dtype=float)
    f = np.asarray(f, dtype=float)
    if trans.size != grid.n_edges or f.size != grid.n_cells:
        raise ConfigError("transmissibility/source sizes do not match the grid")
    de, dv = bc.dirichlet_edges(grid)
    if require_dirichlet and de.size == 0:
        raise ConfigError("all boundaries are Neumann: the pressure system is singular")
    rhs = f * grid.h ** 2
    rhs = rhs + np.bincount(grid.edge_inner_cell(de), weights=trans[de] * dv, minlength=grid.n_cells)
    return PressureSystem(stiffness(grid, trans), rhs, de, dv, boundary_jump(grid, bc))


def _refine_direct(lu, A, b, rtol, steps=3):
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    for _ in range(steps):
        r = b - A @ x
        if np.linalg.norm(r) <= rtol * bnorm:
            break
        x = x + lu.solve(r)
    return x


def solve_spd(system, cfg: SolverConfig | None = None) -> np.ndarray:
    """Solve ``K p = b``.  ``system`` is a :class:`PressureSystem` or a ``(K, b)`` pair."""
    cfg = cfg or SolverConfig()
    if isinstance(system, PressureSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    if not np.any(b):
        return np.zeros(n)
    method = cfg.method
    if method == "auto":
        method = "direct" if n <= cfg.direct_limit else "cg"
    if method == "direct":
        lu = spla.splu(A.tocsc())
        return _refine_direct(lu, A, b, cfg.rtol)

    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator((n, n), matvec=lambda v: dinv * v, dtype=float)
    maxiter = cfg.maxiter or 20 * n
    x, info = spla.cg(A, b, rtol=cfg.rtol, atol=0.0, maxiter=maxiter, M=M)
    res = float(np.linalg.norm(b - A @ x))
    if info != 0 or res > 10 * cfg.rtol * np.linalg.norm(b):
        raise SolverError(
            f"conjugate gradients stopped after {maxiter} iterations with residual {res:.3e}",
            residual=res,
        )
    return x


def recover_velocity(p, trans, grid: FineGrid, bc: BoundarySpec | None = None, g=None) -> np.ndarray:
    """Edge fluxes ``u = trans * (D p - g)``; Neumann edges have zero transmissibility."""
    if g is None:
        g = boundary_jump(grid, bc) if bc is not None else 0.0
    return np.asarray(trans) * (grid.incidence @ np.asarray(p, dtype=float) - g)


def solve_fine(grid: FineGrid, model: PermeabilityModel, f, bc: BoundarySpec,
               cfg: SolverConfig | None = None) -> tuple[PressureSystem, FineSolution]:
    system = assemble(grid, model.trans, f, bc)
    p = solve_spd(system, cfg)
    return system, FineSolution(p, recover_velocity(p, model.trans, grid, g=system.boundary_jump))


def saddle_oracle(grid: FineGrid, kappa, f, bc: BoundarySpec | None, max_cells: int = 1024,
                  dirichlet: tuple | None = None):
    """Dense solve of the full mixed system with the diagonal trapezoidal mass matrix.

    Works directly from per-cell permeability (not from transmissibilities) and
    returns ``(u, p)``.  ``dirichlet=(edges, values)`` replaces the boundary
    data of ``bc`` with explicit per-edge values.  Small grids only.
    """
    if grid.n_cells > max_cells:
        raise ConfigError(f"saddle oracle limited to {max_cells} cells, got {grid.n_cells}")
    kappa = np.asarray(kappa, dtype=float)
    f = np.asarray(f, dtype=float)
    de, dv = bc.dirichlet_edges(grid) if dirichlet is None else map(np.asarray, dirichlet)
    is_dir = np.zeros(grid.n_edges, dtype=bool)
    is_dir[de] = True
    ec = grid.edge_cells
    active = np.flatnonzero(((ec[:, 0] >= 0) & (ec[:, 1] >= 0)) | is_dir)
    ne, nc = active.size, grid.n_cells

    # trapezoidal mass: half of 1/kappa from each adjacent cell
    inv_k = np.where(ec >= 0, 1.0 / kappa[np.maximum(ec, 0)], 0.0)
    a_diag = 0.5 * inv_k.sum(axis=1)[active]

    B = np.zeros((nc, ne))  # B[t, e] = -s_et
    for k, e in enumerate(active):
        if ec[e, 0] >= 0:
            B[ec[e, 0], k] = -1.0
        if ec[e, 1] >= 0:
            B[ec[e, 1], k] = 1.0
    G = np.zeros(ne)
    gval = np.zeros(grid.n_edges)
    gval[de] = grid.outward_sign(de) * dv
    G[:] = -gval[active]

    K = np.zeros((ne + nc, ne + nc))
    K[:ne, :ne] = np.diag(a_diag)
    K[:ne, ne:] = B.T
    K[ne:, :ne] = B
    rhs = np.concatenate([G, -f * grid.h ** 2])
    sol = sla.solve(K, rhs)
    u = np.zeros(grid.n_edges)
    u[active] = sol[:ne]
    return u, sol[ne:]


def energy_norm(u, trans, scope: str = "global", *, hierarchy: GridHierarchy | None = None,
                element: int | None = None, pressure=None, squared: bool = False) -> float:
    """``||u||_{kappa^-1}`` over the whole grid or one coarse element.

    Scopes: ``global`` (all edges with positive transmissibility), ``interior``
    (interior fine edges of ``element``), ``element`` (interior edges plus
    ``sum_{e in dT} trans_e q_te^2`` with ``q`` the cell pressure generating ``u``)
    and ``shared`` (interior edges plus half of every edge shared with a
    neighbouring element and all of its domain-boundary edges, so the element
    values of a global field add up to its global energy).
    """
    u = np.asarray(u, dtype=float)
    trans = np.asarray(trans, dtype=float)
    if scope == "global":
        act = trans > 0
        val = float(np.sum(u[act] ** 2 / trans[act]))
    elif scope in ("interior", "element", "shared"):
        if hierarchy is None or element is None:
            raise ConfigError(f"scope {scope!r} needs hierarchy and element")
        e = hierarchy.element_interior_edges(element)
        val = float(np.sum(u[e] ** 2 / trans[e]))
        if scope == "shared":
            b = hierarchy.element_boundary_edges(element)
            b = b[trans[b] > 0]
            half = np.where((hierarchy.fine.edge_cells[b] >= 0).all(axis=1), 0.5, 1.0)
            val += float(np.sum(half * u[b] ** 2 / trans[b]))
        elif scope == "element":
            if pressure is None:
                raise ConfigError("the element scope needs the pressure field generating u")
            blk = hierarchy.block(element, 0)
            q = np.asarray(pressure, dtype=float)[blk.cells[blk.boundary_cells]]
            val += float(np.sum(trans[blk.boundary_edges] * q ** 2))
    else:
        raise ConfigError(f"unknown energy scope {scope!r}")
    return val if squared else float(np.sqrt(val))


def rel_errors(ms, fine: FineSolution, trans) -> tuple[float, float]:
    """Relative pressure L2 error and relative flux energy error."""
    pn = np.linalg.norm(fine.p)
    un = energy_norm(fine.u, trans)
    if pn == 0 or un == 0:
        raise ConfigError("reference solution has zero norm; relative errors are undefined")
    erp = float(np.linalg.norm(ms.p - fine.p) / pn)
    eru = energy_norm(ms.u - fine.u, trans) / un
    return erp, eru


@dataclass(eq=False)
class DarcyProblem:
    """Everything the multiscale pipeline needs about one fine-scale problem."""

    hierarchy: GridHierarchy
    model: PermeabilityModel
    f: np.ndarray
    bc: BoundarySpec
    system: PressureSystem
    solver: SolverConfig = field(default_factory=SolverConfig)
    _fine: FineSolution | None = None

    @classmethod
    def build(cls, hierarchy: GridHierarchy, kappa, f, bc: BoundarySpec,
              solver: SolverConfig | None = None) -> "DarcyProblem":
        grid = hierarchy.fine
        model = kappa if isinstance(kappa, PermeabilityModel) else PermeabilityModel.build(kappa, grid, bc)
        f = np.asarray(f, dtype=float)
        if f.size != grid.n_cells:
            raise ConfigError(f"source has {f.size} values, grid has {grid.n_cells} cells")
        system = assemble(grid, model.trans, f, bc)
        return cls(hierarchy, model, f, bc, system, solver or SolverConfig())

    @property
    def grid(self) -> FineGrid:
        return self.hierarchy.fine

    @property
    def trans(self) -> np.ndarray:
        return self.model.trans

    @property
    def weights(self) -> np.ndarray:
        return self.model.weights

    @property
    def fine(self) -> FineSolution:
        """Reference fine solution, computed on first access."""
        if self._fine is None:
            p = solve_spd(self.system, self.solver)
            self._fine = FineSolution(p, self.velocity(p))
        return self._fine

    def velocity(self, p) -> np.ndarray:
        return recover_velocity(p, self.trans, self.grid, g=self.system.boundary_jump)

    def residual(self, p) -> np.ndarray:
        """Fine residual ``b - K p`` (zero for the fine solution)."""
        return self.system.rhs - self.system.matrix @ p
