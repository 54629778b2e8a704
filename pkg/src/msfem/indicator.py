"""Local residual indicators and the theta-criterion element selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .fine import DarcyProblem
from .snapshot import SnapshotSet
from .spectral import OfflineEig


@dataclass(frozen=True, eq=False)
class ElementIndicator:
    element: int
    eta2: float
    kind: str  # "offline" or "online"
    field: np.ndarray | None = None  # Riesz representative on the element (online only)
    saturated: bool = False


def residual_vector(snap: SnapshotSet, fine_residual) -> np.ndarray:
    """``r_j = (f, q_j) - a(p_ms, q_j)`` for the element restrictions ``q_j`` of the snapshots.

    ``fine_residual`` is ``b - K p_ms`` on the whole grid; the Dirichlet data
    already sits in ``b``.
    """
    return snap.restricted.T @ np.asarray(fine_residual)[snap.element_cells]


def residual_norm2(r, eig: OfflineEig) -> float:
    """``r^T M^+ r``: squared dual norm in the kappa-bar weighted snapshot norm.

    ``r`` lies in the range of ``M``, so the solve is carried out there.
    """
    Q = eig.range_basis
    rr = Q.T @ r
    Mr = Q.T @ eig.M @ Q
    return float(rr @ sla.cho_solve(sla.cho_factor(0.5 * (Mr + Mr.T)), rr))


def eta_offline(snap: SnapshotSet, eig: OfflineEig, fine_residual, l: int) -> ElementIndicator:
    lam = eig.next_value(l)
    if lam is None:
        return ElementIndicator(snap.element, 0.0, "offline", saturated=True)
    r = residual_vector(snap, fine_residual)
    return ElementIndicator(snap.element, residual_norm2(r, eig) / lam, "offline")


class RieszSolver:
    """Cached element Cholesky factors of the local energy form.

    The local form is the fine form restricted to the element's cells with
    zero extension: interior edges plus ``trans_e q_te^2`` on its boundary
    edges, i.e. the principal submatrix of the fine matrix.
    """

    def __init__(self, problem: DarcyProblem):
        self.problem = problem
        self._factors: dict[int, tuple] = {}

    def matrix(self, element: int) -> np.ndarray:
        cells = self.problem.hierarchy.element_cells(element)
        return self.problem.system.matrix[cells][:, cells].toarray()

    def factor(self, element: int):
        if element not in self._factors:
            self._factors[element] = sla.cho_factor(self.matrix(element))
        return self._factors[element]

    def __call__(self, element: int, fine_residual) -> ElementIndicator:
        cells = self.problem.hierarchy.element_cells(element)
        rT = np.asarray(fine_residual)[cells]
        if not np.any(rT):
            return ElementIndicator(element, 0.0, "online", np.zeros(cells.size))
        phi = sla.cho_solve(self.factor(element), rT)
        return ElementIndicator(element, max(float(rT @ phi), 0.0), "online", phi)


def riesz_online(problem: DarcyProblem, element: int, fine_residual) -> ElementIndicator:
    """Online basis ``phi`` with ``a(phi, q) = (f, q) - a(p_ms, q)`` on the element; ``eta^2 = a(phi, phi)``."""
    return RieszSolver(problem)(element, fine_residual)


def select_elements(eta2, theta: float, ids=None, exclude=None) -> list[int]:
    """Smallest prefix of elements (by descending eta^2, ties by id) holding ``theta`` of the total."""
    if not 0 < theta <= 1:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    eta2 = np.asarray(eta2, dtype=float)
    ids = np.arange(eta2.size) if ids is None else np.asarray(ids)
    if exclude is not None:
        keep = ~np.isin(ids, list(exclude))
        eta2, ids = eta2[keep], ids[keep]
    total = eta2.sum()
    if total <= 0:
        return []
    order = np.lexsort((ids, -eta2))
    csum = np.cumsum(eta2[order])
    # relative slack guards against summation-order rounding when theta = 1
    n = int(np.searchsorted(csum, theta * total * (1 - 1e-14), side="left")) + 1
    return [int(i) for i in ids[order[:min(n, ids.size)]]]
