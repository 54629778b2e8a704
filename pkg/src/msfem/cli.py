"""``msfem run``: configure a problem, run enrichment modes and write reports.

Exit status: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .adapt import MODES, EnrichmentConfig, EnrichmentHistory, run
from .errors import ConfigError, SolverError
from .field import BoundarySpec, balanced_blobs, gen_perm, load_perm, load_source
from .fine import DarcyProblem, SolverConfig
from .grid import GridHierarchy, build_hierarchy

HISTORY_HEADER = ["iter", "dofs", "erp", "eru", "sum_eta2", "wall_ms"]


# --------------------------------------------------------------------------- parsing helpers

def parse_pair(text: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"{what} must look like NXxNY, got {text!r}") from exc


def parse_domain(text: str) -> tuple[float, float | None]:
    try:
        parts = [float(t) for t in text.lower().split("x")]
    except ValueError as exc:
        raise ConfigError(f"domain must look like LX or LXxLY, got {text!r}") from exc
    if len(parts) == 1:
        return parts[0], None
    if len(parts) == 2:
        return parts[0], parts[1]
    raise ConfigError(f"domain must look like LX or LXxLY, got {text!r}")


def parse_optional_int(text):
    if text is None or str(text).lower() in ("", "none"):
        return None
    return int(text)


def parse_optional_float(text):
    if text is None or str(text).lower() in ("", "none"):
        return None
    return float(text)


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys are long flag names."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (t.strip() for t in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msfem", description="Adaptive multiscale Darcy solver experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one or more enrichment modes",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g = r.add_argument_group("problem")
    g.add_argument("--fine", default="100x100", help="fine grid NXxNY")
    g.add_argument("--coarse", default="10x10", help="coarse grid NXxNY")
    g.add_argument("--domain", default="1", help="domain LX or LXxLY (cells must be square)")
    g.add_argument("--perm", default="gen:inclusions,contrast=1e4,count=40,size=3",
                   help="gen:<spec> or file:<path>")
    g.add_argument("--seed", type=int, default=0, help="generator seed (u64)")
    g.add_argument("--source", default="balanced-blobs", help="zero, balanced-blobs, const:<c> or file:<path>")
    g.add_argument("--bc", default="left=1,right=0",
                   help="side=value|a+b*s|neumann list; omitted sides are Neumann")
    e = r.add_argument_group("enrichment")
    e.add_argument("--mode", default="offline-adaptive",
                   help=f"one mode or a comma list of: {', '.join(MODES)}")
    e.add_argument("--theta", type=float, default=0.7, help="fraction of the total indicator to mark")
    e.add_argument("--init-basis", type=int, default=3, help="offline basis fields per element at start")
    e.add_argument("--tol", type=float, default=0.0, help="stop when max element eta <= tol")
    e.add_argument("--max-iters", type=int, default=10, help="enrichment iterations")
    e.add_argument("--dof-cap", type=parse_optional_int, default=None, help="stop once dofs reach this")
    e.add_argument("--add-per-iter", type=int, default=1, help="fields added per marked element")
    e.add_argument("--layers", type=parse_optional_int, default=None,
                   help="oversampling layers (default 2 offline, 0 online)")
    e.add_argument("--sweep", default=None, choices=["batch", "colored"],
                   help="online sweep (default batch adaptive, colored uniform)")
    e.add_argument("--indicator", default="residual", choices=["residual", "exact"],
                   help="element error measure driving the marking")
    s = r.add_argument_group("solver and output")
    s.add_argument("--solver", default="auto", choices=["auto", "direct", "cg"], help="fine linear solver")
    s.add_argument("--rtol", type=float, default=1e-12, help="relative residual tolerance for cg")
    s.add_argument("--workers", type=int, default=1, help="threads for per-element work")
    s.add_argument("--out", default="msfem-out", help="output directory")
    s.add_argument("--plot", action="store_true", help="write convergence.svg")
    s.add_argument("--config", default=None, help="key=value file; command-line flags win")
    return p


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and args.config:
        # re-parse with file values as defaults so explicit flags still win
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices["run"]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        typed = {}
        for a in sub._actions:
            if a.dest in values:
                val = values[a.dest]
                if isinstance(a, argparse._StoreTrueAction):
                    typed[a.dest] = val.lower() in ("1", "true", "yes", "on")
                else:
                    typed[a.dest] = a.type(val) if a.type else val
        sub.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------- setup

def make_field(args, hierarchy: GridHierarchy):
    g = hierarchy.fine
    if args.perm.startswith("gen:"):
        kappa = gen_perm(args.perm[4:], g.nx, g.ny, args.seed)
    elif args.perm.startswith("file:"):
        kappa = load_perm(args.perm[5:], shape=(g.nx, g.ny))
    else:
        raise ConfigError(f"--perm must start with gen: or file:, got {args.perm!r}")
    src = args.source
    if src == "zero":
        f = np.zeros(g.n_cells)
    elif src == "balanced-blobs":
        f = balanced_blobs(g, hierarchy.Nx, hierarchy.Ny)
    elif src.startswith("const:"):
        f = np.full(g.n_cells, float(src[6:]))
    elif src.startswith("file:"):
        f = load_source(src[5:], shape=(g.nx, g.ny))
    else:
        raise ConfigError(f"unknown source {src!r}")
    return kappa, f


def make_configs(args) -> list[EnrichmentConfig]:
    modes = [m.strip() for m in args.mode.split(",") if m.strip()]
    if not modes:
        raise ConfigError("no mode given")
    return [
        EnrichmentConfig(
            mode=m,
            theta=args.theta,
            init_basis=args.init_basis,
            add_per_iter=args.add_per_iter,
            tol=args.tol,
            dof_cap=args.dof_cap,
            max_iters=args.max_iters,
            layers=args.layers,
            sweep=args.sweep,
            indicator=args.indicator,
            workers=args.workers,
        )
        for m in modes
    ]


# --------------------------------------------------------------------------- reporting

def write_history_csv(history: EnrichmentHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history.records:
            w.writerow([r.level, r.dofs, repr(r.erp), repr(r.eru), repr(r.sum_eta2), repr(r.wall_ms)])


def read_history_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {k: (int(v) if k in ("iter", "dofs") else float(v)) for k, v in row.items()}
        for row in rows
    ]


def write_basis_map(counts, hierarchy: GridHierarchy, path) -> None:
    """Per-element basis counts as Ny rows of Nx integers, top row first."""
    grid = np.asarray(counts, dtype=np.int64).reshape(hierarchy.Ny, hierarchy.Nx)[::-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow([int(v) for v in row])


def plot_histories(histories: dict, path) -> bool:
    """Eru against dofs, one series per run; returns False (with a warning) when empty."""
    if not histories or all(len(h) == 0 for h in histories.values()):
        warnings.warn("no histories to plot; skipping the convergence plot", stacklevel=2)
        return False
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "msfem", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, h in histories.items():
            ax.semilogy(h.dofs, h.eru, marker="o", ms=3, label=name)
        ax.set_xlabel("dofs")
        ax.set_ylabel("relative flux error")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return True


def report(histories: dict, hierarchy: GridHierarchy, out_dir, plot: bool = False, extra: dict | None = None) -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    paths = {}
    summary = {"runs": {}, **(extra or {})}
    for name, h in histories.items():
        hp, bp = out / f"history_{name}.csv", out / f"basis_map_{name}.csv"
        write_history_csv(h, hp)
        write_basis_map(h.final.counts, hierarchy, bp)
        paths[name] = {"history": str(hp), "basis_map": str(bp)}
        summary["runs"][name] = {
            "stop_reason": h.stop_reason,
            "levels": len(h),
            "dofs": int(h.final.dofs),
            "erp": h.final.erp,
            "eru": h.final.eru,
            "sum_eta2": h.final.sum_eta2,
            "max_eta": h.final.max_eta,
            "saturated_elements": h.saturated,
        }
    if plot and plot_histories(histories, out / "convergence.svg"):
        paths["plot"] = str(out / "convergence.svg")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = str(out / "summary.json")
    return paths


# --------------------------------------------------------------------------- entry point

def execute(args) -> dict:
    stage = "setup"
    try:
        nx, ny = parse_pair(args.fine, "--fine")
        Nx, Ny = parse_pair(args.coarse, "--coarse")
        hierarchy = build_hierarchy(nx, ny, Nx, Ny, parse_domain(args.domain))
        kappa, f = make_field(args, hierarchy)
        bc = BoundarySpec.parse(args.bc)
        configs = make_configs(args)
        solver = SolverConfig(args.solver, args.rtol)
        problem = DarcyProblem.build(hierarchy, kappa, f, bc, solver)
        stage = "fine solve"
        problem.fine
        histories = {}
        for cfg in configs:
            stage = f"enrichment ({cfg.mode})"
            histories[cfg.mode] = run(cfg, problem)
        stage = "report"
        extra = {"config": {k: v for k, v in vars(args).items() if k != "command"},
                 "enrichment": [asdict(c) for c in configs]}
        return report(histories, hierarchy, args.out, args.plot, extra)
    except ConfigError:
        raise
    except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise SolverError(f"{stage}: {exc}") from exc


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        execute(args)
    except ConfigError as exc:
        print(f"msfem: configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"msfem: numerical failure in {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
