"""Offline and online enrichment loops (adaptive and uniform) with per-level histories."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SolverError
from .fine import DarcyProblem, energy_norm, rel_errors
from .grid import four_coloring
from .indicator import RieszSolver, eta_offline, select_elements
from .multiscale import (
    BasisTag,
    ElementOffline,
    MsSolution,
    MultiscaleSpace,
    correction_field,
    initial_space,
    prepare_offline,
    solve_ms,
)

# relative energy left after projection below which a new field counts as dependent
DEPENDENCE_TOL = 1e-6

MODES = ("offline-adaptive", "online-adaptive", "offline-uniform", "online-uniform")


@dataclass(frozen=True)
class EnrichmentConfig:
    """Enrichment settings.

    ``layers=None`` means 2 oversampling layers for the offline modes and none
    for the online modes; ``sweep=None`` means ``batch`` for online-adaptive
    and ``colored`` for online-uniform.  ``tol`` bounds ``max_i eta_i``.
    """

    mode: str = "offline-adaptive"
    theta: float = 0.7
    init_basis: int = 3
    add_per_iter: int = 1
    tol: float = 0.0
    dof_cap: int | None = None
    max_iters: int = 10
    layers: int | None = None
    sweep: str | None = None
    indicator: str = "residual"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not 0 < self.theta <= 1:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if self.init_basis < 1:
            raise ConfigError("init_basis must be at least 1")
        if self.add_per_iter < 1:
            raise ConfigError("add_per_iter must be at least 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be non-negative")
        if self.layers is not None and self.layers < 0:
            raise ConfigError("layers must be non-negative")
        if self.sweep not in (None, "batch", "colored"):
            raise ConfigError(f"unknown sweep {self.sweep!r} (batch or colored)")
        if self.indicator not in ("residual", "exact"):
            raise ConfigError(f"unknown indicator {self.indicator!r} (residual or exact)")
        if self.tol < 0:
            raise ConfigError("tol must be non-negative")

    @property
    def online(self) -> bool:
        return self.mode.startswith("online")

    @property
    def uniform(self) -> bool:
        return self.mode.endswith("uniform")

    @property
    def effective_layers(self) -> int:
        if self.layers is not None:
            return self.layers
        return 0 if self.online else 2

    @property
    def effective_sweep(self) -> str:
        if self.sweep is not None:
            return self.sweep
        return "colored" if self.uniform else "batch"


@dataclass(eq=False)
class LevelRecord:
    level: int
    dofs: int
    erp: float
    eru: float
    sum_eta2: float
    max_eta: float
    counts: np.ndarray
    wall_ms: float
    error_energy: float  # ||u_h - u_ms||^2 in the kappa^-1 norm
    selected: list = field(default_factory=list)
    solution: MsSolution | None = None


@dataclass(eq=False)
class EnrichmentHistory:
    mode: str
    records: list = field(default_factory=list)
    stop_reason: str = ""
    saturated: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def dofs(self) -> np.ndarray:
        return self.column("dofs")

    @property
    def eru(self) -> np.ndarray:
        return self.column("eru")

    @property
    def erp(self) -> np.ndarray:
        return self.column("erp")

    @property
    def final(self) -> LevelRecord:
        return self.records[-1]


def exact_indicator(problem: DarcyProblem, element: int, fine, ms, scope: str = "shared") -> float:
    """Squared local flux error on one element (needs the fine solution).

    ``shared`` splits interface edges between the two elements, so the values
    add up to the global error; ``element`` is the boundary-augmented local norm.
    """
    return energy_norm(
        fine.u - ms.u,
        problem.trans,
        scope,
        hierarchy=problem.hierarchy,
        element=element,
        pressure=fine.p - ms.p,
        squared=True,
    )


def _energy_frame(B: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Rows forming a K-orthonormal basis of the span of the rows of ``B``."""
    if B.size == 0:
        return np.zeros((0, K.shape[0]))
    G = B @ K @ B.T
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    keep = w > DEPENDENCE_TOL ** 2 * w.max()
    return (V[:, keep] / np.sqrt(w[keep])).T @ B


class _Run:
    """Shared state of one enrichment run."""

    def __init__(self, cfg: EnrichmentConfig, problem: DarcyProblem, offline=None, shift=None):
        self.cfg = cfg
        self.problem = problem
        self.h = problem.hierarchy
        layers = cfg.effective_layers
        self.offline: list[ElementOffline] = offline or prepare_offline(problem, layers, cfg.workers)
        self.shift = correction_field(problem, layers, cfg.workers) if shift is None else shift
        self.space: MultiscaleSpace = initial_space(self.offline, self.h, cfg.init_basis)
        self.n_offline = self.space.counts.copy()
        self.history = EnrichmentHistory(cfg.mode)
        self.riesz = RieszSolver(problem)
        self.skipped = 0
        self.level = 1
        self.t0 = time.perf_counter()

    def solve(self) -> MsSolution:
        try:
            return solve_ms(self.space, self.problem, self.shift, self.level)
        except SolverError as exc:
            raise type(exc)(f"level {self.level}: {exc}") from exc

    def saturated(self) -> np.ndarray:
        rank = np.array([o.eig.rank for o in self.offline])
        return self.n_offline >= rank

    def offline_eta2(self, sol: MsSolution) -> np.ndarray:
        if self.cfg.indicator == "exact":
            fine = self.problem.fine
            eta2 = np.array([exact_indicator(self.problem, E, fine, sol) for E in range(self.h.n_elements)])
            return np.where(self.saturated(), 0.0, eta2)
        res = self.problem.residual(sol.p)
        return np.array([
            eta_offline(o.snapshots, o.eig, res, int(self.n_offline[E])).eta2
            for E, o in enumerate(self.offline)
        ])

    def online_indicators(self, sol: MsSolution, elements) -> dict:
        res = self.problem.residual(sol.p)
        return {int(E): self.riesz(int(E), res) for E in elements}

    def record(self, sol: MsSolution, eta2: np.ndarray, selected=()) -> LevelRecord:
        fine = self.problem.fine
        erp, eru = rel_errors(sol, fine, self.problem.trans)
        err = energy_norm(fine.u - sol.u, self.problem.trans, squared=True)
        now = time.perf_counter()
        rec = LevelRecord(
            level=self.level,
            dofs=self.space.n_dofs,
            erp=erp,
            eru=eru,
            sum_eta2=float(np.sum(eta2)),
            max_eta=float(np.sqrt(np.max(eta2))) if len(eta2) else 0.0,
            counts=self.space.counts.copy(),
            wall_ms=1e3 * (now - self.t0),
            error_energy=err,
            selected=list(selected),
            solution=sol,
        )
        self.t0 = now
        self.history.records.append(rec)
        return rec

    def stop_reason(self, rec: LevelRecord) -> str:
        cfg = self.cfg
        if not cfg.online and self.saturated().all():
            # every indicator is zero by convention here, which says nothing about tol
            return "saturated"
        if rec.max_eta <= cfg.tol:
            return "tol"
        if cfg.dof_cap is not None and rec.dofs >= cfg.dof_cap:
            return "dof-cap"
        if rec.level - 1 >= cfg.max_iters:
            return "max-iters"
        return ""

    def finish(self, reason: str) -> EnrichmentHistory:
        self.history.stop_reason = reason
        if not self.cfg.online:
            self.history.saturated = [int(E) for E in np.flatnonzero(self.saturated())]
        return self.history

    # ---- additions
    def orthogonalize(self, E: int, fields: list) -> list:
        """Energy-orthogonalize new element fields against the element's current bases.

        The span is unchanged, which keeps the coarse matrix well conditioned;
        fields that are numerically dependent are dropped.
        """
        K = self.riesz.matrix(E)
        frame = _energy_frame(np.array(self.space.bases[E]), K)
        kept = []
        for v in fields:
            w = v / np.sqrt(v @ K @ v)
            for _ in range(2):
                w = w - frame.T @ (frame @ (K @ w))
            norm = np.sqrt(max(w @ K @ w, 0.0))
            if norm < DEPENDENCE_TOL:
                self.skipped += 1
                kept.append(None)
                continue
            w = w / norm
            frame = np.vstack([frame, w[None, :]])
            kept.append(w)
        return kept

    def add_offline(self, elements):
        additions = {}
        for E in elements:
            off = self.offline[E]
            start = int(self.n_offline[E])
            stop = min(start + self.cfg.add_per_iter, off.eig.rank)
            if stop > start:
                new = self.orthogonalize(E, [off.basis(k) for k in range(start, stop)])
                items = [(v, BasisTag("offline", k)) for k, v in zip(range(start, stop), new) if v is not None]
                if items:
                    additions[E] = items
                self.n_offline[E] = stop
        self.space = self.space.add_many(additions)
        return sorted(additions)

    def add_online(self, indicators: dict, elements):
        additions = {}
        for E in elements:
            if indicators[E].eta2 <= 0:
                continue
            (v,) = self.orthogonalize(E, [indicators[E].field])
            if v is not None:
                additions[E] = [(v, BasisTag("online", self.level))]
        self.space = self.space.add_many(additions)
        return sorted(additions)


def run_offline_adaptive(cfg: EnrichmentConfig, problem: DarcyProblem, **prepared) -> EnrichmentHistory:
    if cfg.online:
        raise ConfigError(f"mode {cfg.mode} is not an offline mode")
    run = _Run(cfg, problem, **prepared)
    while True:
        sol = run.solve()
        eta2 = run.offline_eta2(sol)
        rec = run.record(sol, eta2)
        reason = run.stop_reason(rec)
        if reason:
            return run.finish(reason)
        added = []
        while not added:
            sat = np.flatnonzero(run.saturated())
            if sat.size == run.h.n_elements:
                return run.finish("saturated")
            if cfg.uniform:
                chosen = [E for E in range(run.h.n_elements) if E not in set(sat)]
            else:
                chosen = select_elements(eta2, cfg.theta, exclude=sat)
            if not chosen:
                return run.finish("converged")
            added = run.add_offline(chosen)
            if not added:
                # every candidate was dependent; re-rank with the advanced eigenvalue counts
                eta2 = run.offline_eta2(sol)
        rec.selected = added
        run.level += 1


def run_online_adaptive(cfg: EnrichmentConfig, problem: DarcyProblem, **prepared) -> EnrichmentHistory:
    if not cfg.online:
        raise ConfigError(f"mode {cfg.mode} is not an online mode")
    run = _Run(cfg, problem, **prepared)
    theta = 1.0 if cfg.uniform else cfg.theta
    classes = four_coloring(run.h) if cfg.effective_sweep == "colored" else [np.arange(run.h.n_elements)]
    all_elements = range(run.h.n_elements)
    while True:
        sol = run.solve()
        inds = run.online_indicators(sol, all_elements)
        eta2 = np.array([inds[E].eta2 for E in all_elements])
        rec = run.record(sol, eta2)
        reason = run.stop_reason(rec)
        if reason:
            return run.finish(reason)
        added = []
        for k, cls in enumerate(classes):
            if len(cls) == 0:
                continue
            if k > 0 and added:
                # later color classes see the solution updated by the earlier ones
                inds = run.online_indicators(run.solve(), cls)
            e2 = np.array([inds[int(E)].eta2 for E in cls])
            chosen = select_elements(e2, theta, ids=cls)
            added += run.add_online(inds, chosen)
        if not added:
            return run.finish("converged")
        rec.selected = sorted(added)
        run.level += 1


def run_uniform(cfg: EnrichmentConfig, problem: DarcyProblem, **prepared) -> EnrichmentHistory:
    if not cfg.uniform:
        raise ConfigError(f"mode {cfg.mode} is not a uniform mode")
    if cfg.online:
        return run_online_adaptive(cfg, problem, **prepared)
    return run_offline_adaptive(cfg, problem, **prepared)


def run(cfg: EnrichmentConfig, problem: DarcyProblem, **prepared) -> EnrichmentHistory:
    if cfg.uniform:
        return run_uniform(cfg, problem, **prepared)
    if cfg.online:
        return run_online_adaptive(cfg, problem, **prepared)
    return run_offline_adaptive(cfg, problem, **prepared)


def with_mode(cfg: EnrichmentConfig, mode: str) -> EnrichmentConfig:
    return replace(cfg, mode=mode)
