"""Multiscale pressure space, offline preparation and the coarse Galerkin solve."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import BasisDependenceError, ConfigError
from .fine import DarcyProblem
from .grid import GridHierarchy
from .snapshot import SnapshotSet, build_correction, build_snapshots
from .spectral import OfflineEig, local_eig, select_offline


@dataclass(frozen=True)
class BasisTag:
    kind: str  # "offline" or "online"
    index: int  # eigen rank for offline, enrichment level for online


@dataclass(frozen=True, eq=False)
class MultiscaleSpace:
    """Per-element ordered basis fields on the element's cells (zero outside)."""

    hierarchy: GridHierarchy
    bases: tuple  # per element: tuple of 1D arrays over element cells
    tags: tuple  # per element: tuple of BasisTag

    @classmethod
    def empty(cls, hierarchy: GridHierarchy) -> "MultiscaleSpace":
        n = hierarchy.n_elements
        return cls(hierarchy, tuple(() for _ in range(n)), tuple(() for _ in range(n)))

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(b) for b in self.bases], dtype=np.int64)

    @property
    def n_dofs(self) -> int:
        return int(self.counts.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    def add_basis(self, element: int, values, tag: BasisTag) -> "MultiscaleSpace":
        return self.add_many({element: [(values, tag)]})

    def add_many(self, additions: dict) -> "MultiscaleSpace":
        """Append ``{element: [(values, tag), ...]}`` and return the enlarged space."""
        bases, tags = list(self.bases), list(self.tags)
        for E, items in additions.items():
            n_T = self.hierarchy.element_cells(E).size
            for values, tag in items:
                values = np.asarray(values, dtype=float)
                if values.shape != (n_T,):
                    raise ConfigError(f"basis for element {E} must have {n_T} cell values, got {values.shape}")
                if not np.any(values):
                    raise ConfigError(f"refusing to add a zero basis field to element {E}")
                bases[E] = bases[E] + (values,)
                tags[E] = tags[E] + (tag,)
        return MultiscaleSpace(self.hierarchy, tuple(bases), tuple(tags))

    def prolongation(self) -> sp.csc_matrix:
        """Sparse ``(n_cells, n_dofs)`` matrix whose columns are the zero-extended bases."""
        rows, cols, vals = [], [], []
        col = 0
        for E, fields in enumerate(self.bases):
            cells = self.hierarchy.element_cells(E)
            for v in fields:
                rows.append(cells)
                cols.append(np.full(cells.size, col))
                vals.append(v)
                col += 1
        n = self.hierarchy.fine.n_cells
        if col == 0:
            return sp.csc_matrix((n, 0))
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, col)
        )


@dataclass(frozen=True, eq=False)
class CoarseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    prolongation: sp.csc_matrix
    shift: np.ndarray  # correction field added to every multiscale solution


@dataclass(frozen=True, eq=False)
class MsSolution:
    coefficients: np.ndarray
    p: np.ndarray
    u: np.ndarray
    coarse_residual: float
    level: int = 1


def correction_field(problem: DarcyProblem, layers: int, workers: int = 1) -> np.ndarray:
    """Global sum of the element-restricted correction functions."""
    h = problem.hierarchy
    if not np.any(problem.f):
        return np.zeros(h.fine.n_cells)

    def one(E):
        return build_correction(h.block(E, layers), problem.trans, problem.f, h.fine)

    out = np.zeros(h.fine.n_cells)
    for c in _map(one, range(h.n_elements), workers):
        out[c.element_cells] = c.values
    return out


def assemble_coarse(space: MultiscaleSpace, problem: DarcyProblem, shift=None) -> CoarseSystem:
    """Galerkin projection of the fine system; the correction field only enters the rhs."""
    R = space.prolongation()
    K = problem.system.matrix
    shift = np.zeros(problem.grid.n_cells) if shift is None else np.asarray(shift, dtype=float)
    KR = (K @ R).tocsc()
    Kc = (R.T @ KR).toarray()
    rhs = R.T @ (problem.system.rhs - K @ shift)
    return CoarseSystem(0.5 * (Kc + Kc.T), rhs, R, shift)


def _coarse_cholesky(Kc: np.ndarray, pivot_tol: float = 1e-12):
    d = np.sqrt(np.diag(Kc))
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0])
        raise BasisDependenceError(f"coarse basis {bad} has zero energy; reduce the basis count")
    S = Kc / d[:, None] / d[None, :]
    try:
        L = sla.cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise BasisDependenceError(
            "coarse matrix is not positive definite: bases are linearly dependent; reduce the basis count"
        ) from exc
    piv = np.diag(L) ** 2
    if piv.min() < pivot_tol:
        k = int(np.argmin(piv))
        raise BasisDependenceError(
            f"coarse basis {k} is numerically dependent on earlier ones (pivot {piv[k]:.2e}); "
            "reduce the basis count"
        )
    return L, d


def solve_ms(space: MultiscaleSpace, problem: DarcyProblem, shift=None, level: int = 1) -> MsSolution:
    cs = assemble_coarse(space, problem, shift)
    if cs.rhs.size == 0:
        raise ConfigError("multiscale space is empty")
    L, d = _coarse_cholesky(cs.matrix)
    y = sla.cho_solve((L, True), cs.rhs / d)
    c = y / d
    r = cs.rhs - cs.matrix @ c
    bn = np.linalg.norm(cs.rhs)
    res = float(np.linalg.norm(r) / bn) if bn > 0 else float(np.linalg.norm(r))
    p = cs.prolongation @ c + cs.shift
    return MsSolution(c, p, problem.velocity(p), res, level)


# --------------------------------------------------------------------------- offline preparation

@dataclass(frozen=True, eq=False)
class ElementOffline:
    snapshots: SnapshotSet
    eig: OfflineEig

    def bases(self, l: int) -> np.ndarray:
        return select_offline(self.eig, self.snapshots, l)

    def basis(self, k: int) -> np.ndarray:
        """Offline basis of rank ``k`` (0-based; rank 0 is the constant)."""
        if k == 0:
            return select_offline(self.eig, self.snapshots, 1)[0]
        return self.snapshots.restricted @ self.eig.vectors[:, k]


def _map(fn, items, workers: int):
    items = list(items)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def prepare_offline(problem: DarcyProblem, layers: int, workers: int = 1) -> list[ElementOffline]:
    h = problem.hierarchy

    def one(E):
        snap = build_snapshots(h.block(E, layers), problem.model, h.fine)
        return ElementOffline(snap, local_eig(snap))

    return _map(one, range(h.n_elements), workers)


def initial_space(offline: list[ElementOffline], hierarchy: GridHierarchy, l: int) -> MultiscaleSpace:
    space = MultiscaleSpace.empty(hierarchy)
    additions = {}
    for E, data in enumerate(offline):
        n = min(l, data.eig.rank)
        additions[E] = [(v, BasisTag("offline", k)) for k, v in enumerate(data.bases(n))]
    return space.add_many(additions)
