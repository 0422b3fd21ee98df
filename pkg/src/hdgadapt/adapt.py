"""Bulk (Dorfler) marking and the SOLVE -> ESTIMATE -> MARK -> REFINE loop."""

import math
import time

import numpy as np

from . import estimator, hdg
from .mesh import BOUNDARY, build_structured_unit_square, nvb_refine

CSV_HEADER = "iter,N,eta1,eta2,eta,err_h,err_energy,resid,seconds"


class MarkingParams:
    """Bulk fractions for the face and element passes (defaults 0.5/0.5)."""

    def __init__(self, theta1=0.5, theta2=0.5):
        for name, val in (("theta1", theta1), ("theta2", theta2)):
            if not (0.0 < val <= 1.0):
                raise ValueError(f"{name} must be in (0,1], got {val}")
        self.theta1 = theta1
        self.theta2 = theta2


class AdaptParams:
    """Knobs of the adaptive driver."""

    def __init__(self, theta1=0.5, theta2=0.5, rho0=1.0, max_dofs=2e5,
                 max_iters=40, n0=20, pattern="ne"):
        self.marking = MarkingParams(theta1, theta2)
        if not (0.0 < rho0 <= 1.0):
            raise ValueError(f"rho0 must be in (0,1], got {rho0}")
        self.rho0 = rho0
        self.max_dofs = float(max_dofs)
        self.max_iters = int(max_iters)
        self.n0 = int(n0)
        self.pattern = pattern


class ConvergenceRecord:
    """One adaptive iteration: DOF count, estimator parts, optional errors."""

    def __init__(self, iteration, n_dofs, eta1, eta2, eta, err_h, err_energy,
                 resid, seconds, bulk_ok=True, underresolved=False):
        self.iteration = iteration
        self.n_dofs = n_dofs
        self.eta1 = eta1
        self.eta2 = eta2
        self.eta = eta
        self.err_h = err_h                  # None when no exact solution
        self.err_energy = err_energy
        self.resid = resid
        self.seconds = seconds
        self.bulk_ok = bulk_ok
        self.underresolved = underresolved

    def csv_row(self):
        def fmt(v):
            return "" if v is None else f"{v:.17g}"
        return (f"{self.iteration},{self.n_dofs},{fmt(self.eta1)},"
                f"{fmt(self.eta2)},{fmt(self.eta)},{fmt(self.err_h)},"
                f"{fmt(self.err_energy)},{fmt(self.resid)},{fmt(self.seconds)}")


def write_history(records, path_or_file):
    own = isinstance(path_or_file, (str, bytes))
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")
    finally:
        if own:
            fh.close()


def read_history(path_or_file):
    """Parse a history CSV back into a column dict of float arrays."""
    own = isinstance(path_or_file, (str, bytes))
    fh = open(path_or_file, "r") if own else path_or_file
    try:
        header = fh.readline().strip().split(",")
        cols = {name: [] for name in header}
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(header):
                continue
            for name, val in zip(header, parts):
                cols[name].append(float(val) if val else math.nan)
    finally:
        if own:
            fh.close()
    return {k: np.array(v) for k, v in cols.items()}


def dorfler_mark(indicators_sq, theta):
    """Greedy bulk marking: smallest descending prefix whose squared sum
    reaches theta * total; ties broken by ascending entity id."""
    vals = np.asarray(indicators_sq, dtype=float)
    if (vals < 0).any():
        raise ValueError("indicators must be nonnegative")
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must be in (0,1], got {theta}")
    order = np.argsort(-vals, kind="stable")
    svals = vals[order]
    total = math.fsum(svals)
    if total == 0.0:
        return np.empty(0, dtype=np.int64)
    running = np.cumsum(svals)
    k = int(np.searchsorted(running, theta * total)) + 1
    k = min(k, len(svals))
    # exact re-check with compensated sums; extend on ulp-level shortfalls
    while k < len(svals) and math.fsum(svals[:k]) < theta * total:
        k += 1
    return np.sort(order[:k])


def verify_bulk(indicators_sq, marked, theta):
    """Independent check of the bulk inequality (compensated summation)."""
    vals = np.asarray(indicators_sq, dtype=float)
    return math.fsum(vals[marked]) >= theta * math.fsum(vals)


def marked_faces_to_elements(mesh, face_ids):
    """Union of omega_F over the marked faces."""
    face_ids = np.asarray(face_ids, dtype=np.int64)
    if face_ids.size and (face_ids.min() < 0 or face_ids.max() >= mesh.n_faces):
        raise ValueError("marked face id out of range")
    elems = np.concatenate([mesh.face_left[face_ids],
                            mesh.face_right[face_ids]])
    return np.unique(elems[elems != BOUNDARY])


class AdaptiveResult:
    def __init__(self, records, mesh, solution, report):
        self.records = records
        self.mesh = mesh
        self.solution = solution
        self.report = report


def adaptive_loop(problem, p, params=None, mesh=None, on_iteration=None):
    """Run SOLVE -> ESTIMATE -> MARK -> REFINE until max_dofs or max_iters.

    Marking runs two independent bulk passes: faces against
    (eta_F^0)^2 + (eta_F^boundary)^2 with theta1, elements against eta_T^2
    with theta2; the refined set is the union of the marked elements and the
    elements sharing a marked face.
    """
    params = params or AdaptParams()
    if mesh is None:
        mesh = build_structured_unit_square(params.n0, params.pattern)
    records = []
    solution = report = None
    has_exact = problem.exact is not None

    for it in range(params.max_iters + 1):
        t0 = time.perf_counter()
        solution = hdg.solve_hdg(mesh, problem, p, params.rho0)
        report = estimator.estimate(solution)
        if has_exact:
            err = estimator.error_norms(solution)
            err_h, err_energy, under = err.simple, err.energy, err.underresolved
        else:
            err_h = err_energy = None
            under = False
        seconds = time.perf_counter() - t0
        n_dofs = solution.n_trace_dofs
        rec = ConvergenceRecord(it, n_dofs, report.eta1, report.eta2,
                                report.eta, err_h, err_energy,
                                solution.solver_residual, seconds,
                                underresolved=under)
        records.append(rec)
        if on_iteration is not None:
            on_iteration(rec, mesh, solution, report)

        if it >= params.max_iters or n_dofs >= params.max_dofs:
            break
        marked_f = dorfler_mark(report.face_sq, params.marking.theta1)
        marked_t = dorfler_mark(report.eta_T_sq, params.marking.theta2)
        rec.bulk_ok = (verify_bulk(report.face_sq, marked_f,
                                   params.marking.theta1)
                       and verify_bulk(report.eta_T_sq, marked_t,
                                       params.marking.theta2))
        refine_set = np.union1d(marked_faces_to_elements(mesh, marked_f),
                                marked_t)
        if refine_set.size == 0:
            break    # estimator identically zero: nothing left to refine
        mesh = nvb_refine(mesh, refine_set)

    return AdaptiveResult(records, mesh, solution, report)
