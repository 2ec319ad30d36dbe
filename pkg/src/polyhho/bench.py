"""Benchmark studies: convergence rates, pressure robustness, and the
lid-driven cavity, with CSV and gnuplot-ready outputs.

Reported N_dof is the closed-form count of unknowns of the condensed
linearized problem over all mesh faces plus one pressure mean per cell,
2 (k+1) #faces + #cells; the solver separately asserts that the system
it actually factorizes has the matching interior-face count on every
iteration.
"""

import os
from dataclasses import dataclass, field
from itertools import combinations
from time import perf_counter
from types import SimpleNamespace

import numpy as np

from .forms import Discretization
from .mesh import gen_family, subtriangulate
from .solutions import kovasznay, lid_velocity, potential, \
    rotation_with_gradient_force
from .solver import SolverError, ptc_newton_solve

__all__ = [
    "CSV_COLUMNS", "LevelRow", "ExperimentReport", "CavityResult",
    "compute_eoc", "paper_ndof", "sample_cell_velocity", "run_kovasznay",
    "run_robustness", "run_lambda_sweep", "run_cavity",
]

CSV_COLUMNS = ("level,N_dof,h,err_energy,eoc_energy,err_u_l2,eoc_u,"
               "err_p_l2,eoc_p,iters,seconds")


def _version():
    try:
        from importlib.metadata import version
        return version("polyhho")
    except Exception:
        return "unknown"


def paper_ndof(mesh, k):
    """Unknowns of the condensed linearized problem counted over all
    faces: 2 (k+1) per face plus one pressure mean per cell."""
    return 2 * (k + 1) * mesh.n_faces + mesh.n_cells


def compute_eoc(errors, h_values, floor=0.0):
    """Estimated orders of convergence log(e_{i-1}/e_i)/log(h_{i-1}/h_i).

    The first entry is None, as is any entry whose errors are zero,
    negative, non-finite or at/below `floor` (round-off rows carry no
    order information and are rendered as '--')."""
    errors = [float(e) for e in errors]
    hs = [float(h) for h in h_values]
    if len(errors) < 2 or len(errors) != len(hs):
        raise ValueError("need at least two matching error/h levels")
    out = [None]
    for e0, e1, h0, h1 in zip(errors, errors[1:], hs, hs[1:]):
        defined = (np.isfinite(e0) and np.isfinite(e1)
                   and e0 > floor and e1 > floor
                   and h0 > 0 and h1 > 0 and h0 != h1)
        out.append(float(np.log(e0 / e1) / np.log(h0 / h1))
                   if defined else None)
    return out


@dataclass
class LevelRow:
    """One refinement level of a convergence study."""
    level: int
    n_dof: int
    h: float
    err_energy: float
    err_u_l2: float
    err_p_l2: float
    iters: int
    seconds: float
    converged: bool
    message: str = ""


@dataclass
class ExperimentReport:
    """Per-level error table of one study plus its configuration."""
    name: str
    metadata: dict
    rows: list = field(default_factory=list)

    @property
    def flagged(self):
        return any(not r.converged for r in self.rows)

    def eoc(self, which):
        """EOC column ('energy', 'u' or 'p'); all-None for one level."""
        key = {"energy": "err_energy", "u": "err_u_l2", "p": "err_p_l2"}
        errs = [getattr(r, key[which]) for r in self.rows]
        if len(self.rows) < 2:
            return [None] * len(self.rows)
        return compute_eoc(errs, [r.h for r in self.rows])

    def csv_text(self):
        def num(x):
            return f"{x:.6e}" if np.isfinite(x) else "nan"

        def rate(v):
            return "--" if v is None else f"{v:.3f}"

        eoc = {w: self.eoc(w) for w in ("energy", "u", "p")}
        lines = [CSV_COLUMNS]
        for i, r in enumerate(self.rows):
            lines.append(
                f"{r.level},{r.n_dof},{num(r.h)},{num(r.err_energy)},"
                f"{rate(eoc['energy'][i])},{num(r.err_u_l2)},"
                f"{rate(eoc['u'][i])},{num(r.err_p_l2)},{rate(eoc['p'][i])},"
                f"{r.iters},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"

    def dat_text(self):
        lines = ["# " + "  ".join(f"{k}: {v}"
                                  for k, v in self.metadata.items()),
                 "# h  err_energy  err_u_l2  err_p_l2  N_dof"]
        for r in self.rows:
            lines.append(f"{r.h:.6e} {r.err_energy:.6e} {r.err_u_l2:.6e} "
                         f"{r.err_p_l2:.6e} {r.n_dof}")
        for r in self.rows:
            if not r.converged:
                lines.append(f"# level {r.level} flagged: {r.message}")
        return "\n".join(lines) + "\n"

    def table_lines(self):
        """Human-readable table for the console."""
        eoc = {w: self.eoc(w) for w in ("energy", "u", "p")}

        def rate(v):
            return "   --" if v is None else f"{v:5.3f}"

        lines = [f"{'level':>5} {'N_dof':>8} {'h':>10} {'energy':>10} "
                 f"{'eoc':>5} {'u_l2':>10} {'eoc':>5} {'p_l2':>10} "
                 f"{'eoc':>5} {'it':>4} {'sec':>8}"]
        for i, r in enumerate(self.rows):
            flag = "" if r.converged else "   [flagged: " + r.message + "]"
            lines.append(
                f"{r.level:5d} {r.n_dof:8d} {r.h:10.3e} {r.err_energy:10.3e} "
                f"{rate(eoc['energy'][i])} {r.err_u_l2:10.3e} "
                f"{rate(eoc['u'][i])} {r.err_p_l2:10.3e} "
                f"{rate(eoc['p'][i])} {r.iters:4d} {r.seconds:8.2f}{flag}")
        return lines

    def save(self, outdir, stem=None):
        """Write <stem>.csv and <stem>.dat; returns the two paths."""
        stem = stem or self.name
        os.makedirs(outdir, exist_ok=True)
        paths = (os.path.join(outdir, stem + ".csv"),
                 os.path.join(outdir, stem + ".dat"))
        for path, text in zip(paths, (self.csv_text(), self.dat_text())):
            with open(path, "w") as fh:
                fh.write(text)
        return paths


# ---------------------------------------------------------------------------
# shared solve wrapper
# ---------------------------------------------------------------------------

def _steady_solve(disc, nu, body_force, dirichlet, convection=True,
                  **solver_kw):
    problem = SimpleNamespace(disc=disc, nu=nu, body_force=body_force,
                              dirichlet=dirichlet, convection=convection)
    t0 = perf_counter()
    state = ptc_newton_solve(problem, **solver_kw)
    return state, perf_counter() - t0


def _metadata(study, k, nu, lam, family, mode):
    return {"study": study, "k": k, "nu": nu, "lambda": lam,
            "family": family, "mode": mode, "version": _version()}


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

def run_kovasznay(k, family, levels, nu=0.025, base=5, mode="robust",
                  **solver_kw):
    """Convergence study against the exact laminar wake flow on its
    2 x 2 box, refining the mesh from n = base by doubling."""
    flow = kovasznay(nu)
    report = ExperimentReport(
        "kovasznay", _metadata("kovasznay", k, nu, 0.0, family, mode))
    for lev in range(levels):
        n = base * 2 ** lev
        mesh = gen_family(family, n, box=flow.box)
        disc = Discretization(mesh, k, mode=mode)
        state, secs = _steady_solve(disc, nu, flow.f, flow.u, **solver_kw)
        err = disc.error_norms(state.U, state.P, flow.u, flow.p, nu)
        report.rows.append(LevelRow(
            lev, paper_ndof(mesh, k), float(mesh.cell_diameter.max()),
            err["energy"], err["velocity_l2"], err["pressure_l2"],
            state.iterations, secs, state.converged, state.message))
    return report


def run_robustness(k, family, lam, mode, levels=1, base=10, **solver_kw):
    """Rigid rotation under the irrotational force (3 lam x^2, 0) on the
    unit square at nu = 1: velocity errors of the robust variant stay at
    round-off for any lam, the cell-polynomial variant's scale with it."""
    flow = rotation_with_gradient_force(lam)
    report = ExperimentReport(
        "robustness", _metadata("robustness", k, flow.nu, lam, family, mode))
    for lev in range(levels):
        n = base * 2 ** lev
        mesh = gen_family(family, n)
        disc = Discretization(mesh, k, mode=mode)
        state, secs = _steady_solve(disc, flow.nu, flow.f, flow.u,
                                    **solver_kw)
        err = disc.error_norms(state.U, state.P, flow.u, flow.p, flow.nu)
        report.rows.append(LevelRow(
            lev, paper_ndof(mesh, k), float(mesh.cell_diameter.max()),
            err["energy"], err["velocity_l2"], err["pressure_l2"],
            state.iterations, secs, state.converged, state.message))
    return report


def run_lambda_sweep(lams=(0.0, 1e3, 1e6), k=1, family="cartesian", n=10,
                     mode="robust", **solver_kw):
    """Solve the rotation problem once per lambda on fresh
    discretizations; returns the states and the largest pairwise
    Euclidean distance between their velocity dof vectors."""
    states = []
    for lam in lams:
        flow = rotation_with_gradient_force(lam)
        disc = Discretization(gen_family(family, n), k, mode=mode)
        state, _ = _steady_solve(disc, flow.nu, flow.f, flow.u, **solver_kw)
        states.append(state)
    worst = max(float(np.linalg.norm(a.U - b.U))
                for a, b in combinations(states, 2))
    return states, worst


# ---------------------------------------------------------------------------
# cavity
# ---------------------------------------------------------------------------

def sample_cell_velocity(disc, U, pts, tol=1e-10):
    """Cell-polynomial velocity values at points of the meshed domain;
    a point on a shared cell boundary gets the average over the cells
    containing it."""
    pts = np.asarray(pts, dtype=float)
    vals = np.zeros((len(pts), 2))
    counts = np.zeros(len(pts))
    sub = subtriangulate(disc.mesh)
    for ci, ctx in enumerate(disc.contexts):
        pad = tol * max(1.0, ctx.geom.diameter)
        lo = ctx.geom.pts.min(axis=0) - pad
        hi = ctx.geom.pts.max(axis=0) + pad
        box = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
        if box.size == 0:
            continue
        inside = np.zeros(box.size, dtype=bool)

        def cross2(e, d):
            return e[0] * d[:, 1] - e[1] * d[:, 0]

        for tri in sub.simplices[ci]:
            a, b, c = disc.mesh.vertices[tri]
            p = pts[box]
            eps = tol * ctx.geom.diameter ** 2
            s0 = cross2(b - a, p - a)
            s1 = cross2(c - b, p - b)
            s2 = cross2(a - c, p - c)
            inside |= (s0 >= -eps) & (s1 >= -eps) & (s2 >= -eps)
        hit = box[inside]
        if hit.size == 0:
            continue
        ph = ctx.basis.eval(pts[hit])
        uT = U[disc.dofmap.gather(ci)][:2 * ctx.nk].reshape(2, ctx.nk)
        vals[hit] += ph @ uT.T
        counts[hit] += 1.0
    if np.any(counts == 0):
        missing = pts[counts == 0][0]
        raise ValueError(f"sample point {tuple(missing)} lies outside "
                         "the mesh")
    return vals / counts[:, None]


@dataclass
class CavityResult:
    """Centerline profiles of one lid-driven cavity solve."""
    metadata: dict
    y: np.ndarray
    u1: np.ndarray   # u1 sampled along the vertical line x1 = 1/2
    x: np.ndarray
    u2: np.ndarray   # u2 sampled along the horizontal line x2 = 1/2
    iters: int
    seconds: float
    converged: bool
    message: str
    U: np.ndarray
    P: np.ndarray

    def dat_texts(self):
        head = "# " + "  ".join(f"{k}: {v}" for k, v in
                                self.metadata.items())
        note = ("# overlay external reference profiles (e.g. published "
                "cavity benchmarks) from separate files")
        flag = [] if self.converged else [f"# flagged: {self.message}"]
        u1 = [head, note, "# y  u1(0.5, y)", *flag] + [
            f"{a:.6e} {b:.6e}" for a, b in zip(self.y, self.u1)]
        u2 = [head, note, "# x  u2(x, 0.5)", *flag] + [
            f"{a:.6e} {b:.6e}" for a, b in zip(self.x, self.u2)]
        return "\n".join(u1) + "\n", "\n".join(u2) + "\n"

    def save(self, outdir, stem="cavity"):
        os.makedirs(outdir, exist_ok=True)
        paths = (os.path.join(outdir, stem + "_u1.dat"),
                 os.path.join(outdir, stem + "_u2.dat"))
        for path, text in zip(paths, self.dat_texts()):
            with open(path, "w") as fh:
                fh.write(text)
        return paths


def run_cavity(re, lam, k, n, mode="robust", family="cartesian",
               samples=101, psi="cubic", convection=True,
               re_continuation=(), **solver_kw):
    """Lid-driven cavity on the unit square at Reynolds number re (unit
    lid speed and size, so nu = 1/re), optionally forced by the
    irrotational field lam * grad(psi).

    re_continuation: increasing Reynolds numbers solved first on the same
    discretization, each warm-starting the next, with the last state
    seeding the target solve.  At high Reynolds number the discrete system
    has a second, weak-circulation steady state whose basin swallows cold
    starts; walking the physical branch up in Reynolds number stays out of
    it.  Stage solves use default solver settings; keyword overrides apply
    to the final solve only.
    """
    if re_continuation and ("u0" in solver_kw or "p0" in solver_kw):
        raise ValueError("re_continuation and an explicit initial state "
                         "are mutually exclusive")
    mesh = gen_family(family, n)
    disc = Discretization(mesh, k, mode=mode)
    nu = 1.0 / float(re)
    force = None
    if lam:
        grad = potential(psi)[1]

        def force(pts):
            return lam * grad(pts)

    stage_iters = []
    stage_secs = 0.0
    for r in re_continuation:
        stage, secs = _steady_solve(
            disc, 1.0 / float(r), force, lid_velocity,
            convection=convection,
            u0=None if not stage_iters else stage.U,
            p0=None if not stage_iters else stage.P)
        stage_iters.append(stage.iterations)
        stage_secs += secs
        if not stage.converged:
            raise SolverError(
                f"continuation stage re={r} failed: {stage.message}")
    if stage_iters:
        solver_kw = dict(solver_kw, u0=stage.U, p0=stage.P)
    state, secs = _steady_solve(disc, nu, force, lid_velocity,
                                convection=convection, **solver_kw)
    t = np.linspace(0.0, 1.0, samples)
    u1 = sample_cell_velocity(
        disc, state.U, np.column_stack([np.full(samples, 0.5), t]))[:, 0]
    u2 = sample_cell_velocity(
        disc, state.U, np.column_stack([t, np.full(samples, 0.5)]))[:, 1]
    meta = _metadata("cavity", k, nu, lam, family, mode)
    meta["re"] = float(re)
    meta["psi"] = psi if lam else None
    if re_continuation:
        meta["re_continuation"] = [float(r) for r in re_continuation]
        meta["continuation_iters"] = stage_iters
    return CavityResult(meta, t, u1, t, u2, state.iterations,
                        secs + stage_secs, state.converged, state.message,
                        state.U, state.P)
