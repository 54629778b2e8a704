"""Local snapshot spaces and correction functions on (oversampled) coarse blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SolverError
from .field import PermeabilityModel
from .grid import FineGrid, GridHierarchy, OversampledBlock


def block_outward_sign(grid: FineGrid, block: OversampledBlock) -> np.ndarray:
    """``s_et`` of each block-boundary edge with respect to its block cell."""
    ec = grid.edge_cells[block.boundary_edges]
    return np.where(ec[:, 0] == block.cells[block.boundary_cells], 1.0, -1.0)


def block_boundary_trans(block: OversampledBlock, kappa) -> np.ndarray:
    """Half-cell transmissibility ``2 kappa_t`` on every block-boundary edge."""
    return 2.0 * np.asarray(kappa)[block.cells[block.boundary_cells]]


def neumann_block_matrix(block: OversampledBlock, trans) -> np.ndarray:
    """Dense jump-form matrix over the block's interior edges only (singular, kernel = constants)."""
    n = block.n_cells
    a, b = block.interior_pairs[:, 0], block.interior_pairs[:, 1]
    w = np.asarray(trans)[block.interior_edges]
    K = sp.coo_matrix(
        (np.concatenate([w, w, -w, -w]), (np.concatenate([a, b, a, b]), np.concatenate([a, b, b, a]))),
        shape=(n, n),
    )
    return K.toarray()


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Harmonic snapshots on a block, one column per boundary fine edge.

    ``pressure`` is ``(n_block_cells, J)``; ``velocity`` is ``(n_block_edges, J)``
    over ``block.edges`` (interior edges, then the ordered boundary) and
    ``edge_trans`` holds the transmissibilities used on those edges.
    """

    element: int
    block: OversampledBlock
    pressure: np.ndarray
    velocity: np.ndarray
    edge_trans: np.ndarray
    cell_weights: np.ndarray  # kappa-bar cell weights times h^2 on block cells

    @property
    def n_snapshots(self) -> int:
        return self.pressure.shape[1]

    @property
    def restricted(self) -> np.ndarray:
        """Snapshot pressures restricted to the coarse element, ``(n_T, J)``."""
        return self.pressure[self.block.in_element]

    @property
    def element_cells(self) -> np.ndarray:
        return self.block.cells[self.block.in_element]


def build_snapshots(block: OversampledBlock, model: PermeabilityModel, grid: FineGrid) -> SnapshotSet:
    """Solve the J local Dirichlet problems with unit boundary data on one edge each."""
    bt = block_boundary_trans(block, model.kappa)
    K = neumann_block_matrix(block, model.trans)
    bc_cells = block.boundary_cells
    np.add.at(K, (bc_cells, bc_cells), bt)
    J = block.n_boundary
    B = np.zeros((block.n_cells, J))
    B[bc_cells, np.arange(J)] = bt
    try:
        factor = sla.cho_factor(K)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - Dirichlet block is always SPD
        raise SolverError(f"local snapshot system of element {block.element} is singular") from exc
    phi = sla.cho_solve(factor, B)

    pairs = block.interior_pairs
    t_int = np.asarray(model.trans)[block.interior_edges]
    psi_int = t_int[:, None] * (phi[pairs[:, 0]] - phi[pairs[:, 1]])
    sign = block_outward_sign(grid, block)
    psi_bnd = (sign * bt)[:, None] * (phi[bc_cells] - np.eye(J))
    weights = np.asarray(model.weights)[block.cells] * grid.h ** 2
    return SnapshotSet(
        element=block.element,
        block=block,
        pressure=phi,
        velocity=np.vstack([psi_int, psi_bnd]),
        edge_trans=np.concatenate([t_int, bt]),
        cell_weights=weights,
    )


def build_snapshots_local(hierarchy: GridHierarchy, element: int, model: PermeabilityModel) -> SnapshotSet:
    """Snapshots on the coarse element itself (no oversampling)."""
    return build_snapshots(hierarchy.block(element, 0), model, hierarchy.fine)


@dataclass(frozen=True, eq=False)
class CorrectionFunction:
    element: int
    block: OversampledBlock
    block_values: np.ndarray  # zero-mean Neumann solution on the block

    @property
    def values(self) -> np.ndarray:
        """Restriction to the coarse element."""
        return self.block_values[self.block.in_element]

    @property
    def element_cells(self) -> np.ndarray:
        return self.block.cells[self.block.in_element]


def build_correction(block: OversampledBlock, trans, f, grid: FineGrid) -> CorrectionFunction:
    """Neumann block problem driven by the mean-free part of ``f``, pinned to zero mean."""
    fb = np.asarray(f, dtype=float)[block.cells]
    fhat = fb - fb.mean()
    n = block.n_cells
    if not np.any(fhat):
        return CorrectionFunction(block.element, block, np.zeros(n))
    # adding the rank-one term 1 1^T makes the system SPD and forces a zero mean
    K = neumann_block_matrix(block, trans) + np.ones((n, n))
    x = sla.cho_solve(sla.cho_factor(K), fhat * grid.h ** 2)
    return CorrectionFunction(block.element, block, x)
