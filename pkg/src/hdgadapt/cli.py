"""Experiment runner: configure a benchmark, run the adaptive loop, export
convergence history, meshes, solutions and effectivity tables."""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import problems
from .adapt import AdaptParams, adaptive_loop, read_history, write_history
from .fem import element_basis, quadrature_element
from .hdg import LocalSolveError
from .linsolve import SingularMatrixError
from .mesh import save_mesh

PROBLEM_CHOICES = ("example1", "example2", "example3", "poly")

_DEFAULT_N0 = {"example1": 20, "example2": 8, "example3": 20, "poly": 4}
_DEFAULT_EPS = {"example1": 1e-5, "example2": 1e-5, "example3": 1e-4,
                "poly": 1e-3}


class RunConfig:
    """Fully resolved parameters of one adaptive run."""

    FIELDS = ("problem", "eps", "alpha", "p", "theta1", "theta2", "rho0",
              "n0", "max_dofs", "max_iters", "out", "export_vtk")

    def __init__(self, problem, p, eps=None, alpha=None, theta1=0.5,
                 theta2=0.5, rho0=1.0, n0=None, max_dofs=2e5, max_iters=40,
                 out="out", export_vtk=False):
        if problem not in PROBLEM_CHOICES:
            raise ValueError(f"unknown problem {problem!r}")
        if p not in (1, 2, 3):
            raise ValueError(f"polynomial order must be 1, 2 or 3, got {p}")
        self.problem = problem
        self.p = int(p)
        self.eps = float(eps) if eps is not None else _DEFAULT_EPS[problem]
        self.alpha = float(alpha) if alpha is not None else \
            (1e-3 if problem == "example2" else None)
        self.theta1, self.theta2 = float(theta1), float(theta2)
        self.rho0 = float(rho0)
        self.n0 = int(n0) if n0 is not None else _DEFAULT_N0[problem]
        self.max_dofs = float(max_dofs)
        self.max_iters = int(max_iters)
        self.out = out
        self.export_vtk = bool(export_vtk)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in data.items() if k in cls.FIELDS}
        return cls(**known)

    def make_problem(self):
        if self.problem == "example1":
            return problems.make_example1(self.eps)
        if self.problem == "example2":
            return problems.make_example2(self.alpha, self.eps)
        if self.problem == "example3":
            return problems.make_example3(self.eps)
        return problems.make_manufactured_poly(self.p, self.eps)


def run(config):
    """Execute one configured run; returns the AdaptiveResult.

    Artifacts written to config.out: history.csv, mesh_final.txt,
    config_echo.json, effectivity.csv (when an exact solution exists) and
    solution_final.vtk on request.
    """
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "config_echo.json"), "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    problem = config.make_problem()
    params = AdaptParams(theta1=config.theta1, theta2=config.theta2,
                         rho0=config.rho0, max_dofs=config.max_dofs,
                         max_iters=config.max_iters, n0=config.n0)
    partial = {"records": [], "mesh": None, "solution": None}

    def hook(rec, mesh, solution, report):
        partial["records"].append(rec)
        partial["mesh"], partial["solution"] = mesh, solution

    try:
        result = adaptive_loop(problem, config.p, params, on_iteration=hook)
    except (LocalSolveError, SingularMatrixError):
        if partial["records"]:  # keep what completed before the failure
            from .adapt import AdaptiveResult
            _write_artifacts(config, AdaptiveResult(
                partial["records"], partial["mesh"], partial["solution"],
                None))
        raise
    _write_artifacts(config, result)
    return result


def _write_artifacts(config, result):
    write_history(result.records, os.path.join(config.out, "history.csv"))
    save_mesh(result.mesh, os.path.join(config.out, "mesh_final.txt"))
    if result.records and result.records[0].err_energy is not None:
        with open(os.path.join(config.out, "effectivity.csv"), "w") as fh:
            fh.write("iter,N,eta,err_energy,effectivity\n")
            for rec in result.records:
                eff = rec.eta / rec.err_energy if rec.err_energy else math.nan
                fh.write(f"{rec.iteration},{rec.n_dofs},{rec.eta:.17g},"
                         f"{rec.err_energy:.17g},{eff:.17g}\n")
    if config.export_vtk and result.solution is not None:
        write_vtk(result.solution,
                  os.path.join(config.out, "solution_final.vtk"))


def write_vtk(solution, path):
    """Legacy-VTK triangle export: cell means of u_h plus vertex-averaged
    point values."""
    mesh, p = solution.mesh, solution.p
    basis = element_basis(p)
    rule = quadrature_element(2 * p)
    phi = basis.eval(rule.points)
    means = 2.0 * (solution.u @ np.einsum("q,qi->i", rule.weights, phi))

    corner_phi = basis.eval(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    corner_vals = solution.u @ corner_phi.T               # (nt, 3)
    acc = np.zeros(mesh.n_vertices)
    cnt = np.zeros(mesh.n_vertices)
    np.add.at(acc, mesh.triangles.ravel(), corner_vals.ravel())
    np.add.at(cnt, mesh.triangles.ravel(), 1.0)
    point_vals = acc / np.maximum(cnt, 1.0)

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("hdgadapt solution\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} 0\n")
        fh.write(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for tri in mesh.triangles:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {mesh.n_triangles}\n")
        fh.write("5\n" * mesh.n_triangles)
        fh.write(f"CELL_DATA {mesh.n_triangles}\n")
        fh.write("SCALARS u_mean double 1\nLOOKUP_TABLE default\n")
        for v in means:
            fh.write(f"{v:.17g}\n")
        fh.write(f"POINT_DATA {mesh.n_vertices}\n")
        fh.write("SCALARS u double 1\nLOOKUP_TABLE default\n")
        for v in point_vals:
            fh.write(f"{v:.17g}\n")


def slope(history_path, column, window):
    """Least-squares slope of log(column) vs log(N) over the trailing rows."""
    cols = read_history(history_path)
    if column not in cols:
        raise ValueError(f"column {column!r} not in history file")
    n = cols["N"]
    y = cols[column]
    keep = ~np.isnan(y) & (y > 0)
    n, y = n[keep], y[keep]
    if window < 4 or len(n) < window:
        raise ValueError(f"need at least 4 rows in the window, "
                         f"have {len(n)} for window {window}")
    n, y = n[-window:], y[-window:]
    coef = np.polyfit(np.log(n), np.log(y), 1)
    return float(coef[0])


def slope_last_decade(history_path, column):
    """Slope over the rows within a factor 10 of the final DOF count."""
    cols = read_history(history_path)
    n, y = cols["N"], cols[column]
    keep = ~np.isnan(y) & (y > 0) & (n >= n[-1] / 10.0)
    if keep.sum() < 4:
        raise ValueError("fewer than 4 rows in the last DOF decade")
    coef = np.polyfit(np.log(n[keep]), np.log(y[keep]), 1)
    return float(coef[0])


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdgadapt",
        description="Adaptive HDG solver for convection-diffusion benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    prun = sub.add_parser("run", help="run an adaptive benchmark")
    prun.add_argument("--config", help="config_echo.json of a previous run; "
                      "explicit flags override its values")
    prun.add_argument("--problem", choices=PROBLEM_CHOICES)
    prun.add_argument("--eps", type=float)
    prun.add_argument("--alpha", type=float)
    prun.add_argument("--p", type=int, choices=(1, 2, 3))
    prun.add_argument("--theta1", type=float)
    prun.add_argument("--theta2", type=float)
    prun.add_argument("--rho0", type=float)
    prun.add_argument("--n0", type=int)
    prun.add_argument("--max-dofs", dest="max_dofs", type=float)
    prun.add_argument("--max-iters", dest="max_iters", type=int)
    prun.add_argument("--out")
    prun.add_argument("--export-vtk", dest="export_vtk", action="store_true",
                      default=None)

    pslope = sub.add_parser("slope", help="log-log rate from a history CSV")
    pslope.add_argument("history")
    pslope.add_argument("--column", default="eta")
    pslope.add_argument("--window", type=int, default=0,
                        help="trailing row count; 0 = last DOF decade")
    return parser


def _config_from_args(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for key in RunConfig.FIELDS:
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if "problem" not in data:
        raise ValueError("--problem is required (or provide --config)")
    if "p" not in data:
        data["p"] = 1
    return RunConfig.from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = _config_from_args(args)
            result = run(config)
            last = result.records[-1]
            print(f"{config.problem}: {len(result.records)} iterations, "
                  f"N={last.n_dofs}, eta={last.eta:.6e}")
            return 0
        if args.command == "slope":
            if args.window:
                value = slope(args.history, args.column, args.window)
            else:
                value = slope_last_decade(args.history, args.column)
            print(f"{value:.17g}")
            return 0
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (LocalSolveError, SingularMatrixError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
