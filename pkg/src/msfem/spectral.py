"""Local spectral decomposition of snapshot spaces and offline basis selection.

The mass matrix ``M`` of a snapshot set is singular whenever a block cell owns
two boundary edges (block corners): opposite unit data on those two edges
produces zero pressure.  Its range is spanned by the orthonormal columns
``1_{B_t} / sqrt|B_t|`` (``B_t`` the boundary edges touching cell ``t``) and the
stiffness ``A`` does not couple that range to the kernel, so the pencil is
solved exactly on the range.  Eigenvectors are reported in snapshot
coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, SolverError
from .snapshot import SnapshotSet


@dataclass(frozen=True, eq=False)
class OfflineEig:
    element: int
    values: np.ndarray  # ascending, length r = number of distinct boundary cells
    vectors: np.ndarray  # (J, r), M-orthonormal
    A: np.ndarray
    M: np.ndarray
    range_basis: np.ndarray  # (J, r) orthonormal basis of range(M)

    @property
    def rank(self) -> int:
        return self.values.size

    def next_value(self, l: int) -> float | None:
        """Eigenvalue following the first ``l`` (``None`` when the pool is exhausted)."""
        return float(self.values[l]) if l < self.rank else None


def snapshot_matrices(snap: SnapshotSet, boundary_energy: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Velocity energy ``A`` and kappa-bar weighted mass ``M`` of the snapshot columns.

    ``boundary_energy`` adds the half-cell terms of the block-boundary edges to
    ``A``; by default they are included on oversampled blocks and left out when
    the block is the element itself (energy over its interior edges only).
    """
    if boundary_energy is None:
        boundary_energy = snap.block.layers > 0
    n = snap.velocity.shape[0] if boundary_energy else snap.block.interior_edges.size
    psi = snap.velocity[:n]
    A = psi.T @ (psi / snap.edge_trans[:n, None])
    phi = snap.pressure
    M = phi.T @ (phi * snap.cell_weights[:, None])
    return 0.5 * (A + A.T), 0.5 * (M + M.T)


def mass_range_basis(snap: SnapshotSet) -> np.ndarray:
    cells = snap.block.boundary_cells
    uniq, first = np.unique(cells, return_index=True)
    uniq = uniq[np.argsort(first)]
    Q = np.zeros((cells.size, uniq.size))
    for k, t in enumerate(uniq):
        hit = cells == t
        Q[hit, k] = 1.0 / np.sqrt(hit.sum())
    return Q


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def local_eig(snap: SnapshotSet, boundary_energy: bool | None = None) -> OfflineEig:
    """Solve ``A x = lambda M x`` on the snapshot space; ascending, M-orthonormal."""
    A, M = snapshot_matrices(snap, boundary_energy)
    Q = mass_range_basis(snap)
    Ar, Mr = Q.T @ A @ Q, Q.T @ M @ Q
    try:
        vals, Y = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"snapshot mass matrix of element {snap.element} is not positive definite") from exc
    vals = np.maximum(vals, 0.0)
    V = _fix_signs(Q @ Y)
    return OfflineEig(snap.element, vals, V, A, M, Q)


def select_offline(eig: OfflineEig, snap: SnapshotSet, l: int) -> np.ndarray:
    """First ``l`` offline basis fields on the element, ``(l, n_T)``.

    The first field is the exact constant on the element, unit in the
    kappa-bar weighted norm; the others are restricted eigenfunctions.
    """
    if not 1 <= l <= eig.rank:
        raise ConfigError(f"basis count {l} out of range 1..{eig.rank} for element {eig.element}")
    w = snap.cell_weights[snap.block.in_element]
    const = np.full(w.size, 1.0 / np.sqrt(w.sum()))
    rest = (snap.restricted @ eig.vectors[:, 1:l]).T
    return np.vstack([const[None, :], rest])
