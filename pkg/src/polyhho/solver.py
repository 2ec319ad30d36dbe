"""Nonlinear solve of the discrete steady Navier-Stokes system:
pseudo-transient continuation (PTC) Newton iterations with the SER
pseudo-time-step update, Dirichlet boundary handling by dof elimination,
and per-cell static condensation of the linearized saddle systems.

Each Newton step solves, in increment form,

    [ nu A + J_t(u) + (1/dt) M_cell   B_f^T    0   ] [du]   [ r_mom  ]
    [ B_f                             0        m   ] [dp] = [ r_mass ]
    [ 0                               m^T      0   ] [g ]   [ r_mean ]

restricted to the free (non-Dirichlet) velocity dofs, where M_cell is the
identity on cell velocity dofs (the cell basis is orthonormal) and m is
the pressure mean vector closing the one-dimensional pressure kernel.
Cell velocity dofs and all but one pressure dof per cell couple only
inside their own cell, so they are eliminated cell by cell with small
dense factorizations; the remaining system (face dofs, one pressure dof
per cell, one multiplier) is factorized sparsely and the eliminated
unknowns are recovered exactly.
"""

import os

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, lu_factor, lu_solve
from scipy.sparse.linalg import splu

from .basis import l2_project


class SolverError(RuntimeError):
    pass


DEFAULTS = {
    "dt0": 1.0,
    "dt_max": 1e12,
    "stop_tol": 1e-11,
    "max_iter": 200,
    "growth_limit": 1e4,
    "reject_growth": 2.0,
    "max_rejects": 20,
}


def parse_config(source):
    """Parse a key=value solver/problem config (text or file path).

    Recognized keys: k, nu, dt0, stop_tol, max_iter, mode (robust or
    classic), lambda, psi (poly:<id>).  Blank lines and #-comments are
    ignored; all keys are optional.
    """
    if "\n" not in source and os.path.exists(source):
        with open(source) as fh:
            source = fh.read()
    out = {}
    casts = {"k": int, "max_iter": int, "nu": float, "dt0": float,
             "stop_tol": float, "lambda": float, "mode": str, "psi": str}
    for ln, line in enumerate(source.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in casts:
            raise ValueError(f"line {ln}: unknown key {key!r}")
        out[key] = casts[key](val)
    if out.get("mode") not in (None, "robust", "classic"):
        raise ValueError(f"mode must be robust or classic, got {out['mode']!r}")
    if "psi" in out and not out["psi"].startswith("poly:"):
        raise ValueError(f"psi must be poly:<id>, got {out['psi']!r}")
    return out


def boundary_interpolate(disc, g):
    """Velocity vector whose boundary face blocks carry the face-wise L2
    projections of g (callable pts -> (npts, 2)); all other dofs zero."""
    U = np.zeros(disc.dofmap.n_v)
    done = set()
    for ci, ctx in enumerate(disc.contexts):
        for i, f in enumerate(ctx.fids):
            if not disc.mesh.boundary_faces[f] or f in done:
                continue
            done.add(f)
            fb = ctx.fbases[i]
            nfk = fb.dim
            for c in (0, 1):
                U[disc.dofmap.face_v(f)[c * nfk:(c + 1) * nfk]] = l2_project(
                    lambda pts, c=c: np.asarray(g(pts), float)[:, c], fb)
    return U


def free_velocity_mask(disc):
    """True on velocity dofs that are unknowns under Dirichlet conditions
    (all cell dofs and interior face dofs)."""
    mask = np.ones(disc.dofmap.n_v, dtype=bool)
    for f in np.flatnonzero(disc.mesh.boundary_faces):
        mask[disc.dofmap.face_v(f)] = False
    return mask


def cell_mass_matrix(disc):
    """Mass matrix of the cell velocity polynomials: the identity on cell
    dofs (orthonormal basis), zero on face dofs."""
    d = np.zeros(disc.dofmap.n_v)
    for ci in range(len(disc.contexts)):
        d[disc.dofmap.cell_v(ci)] = 1.0
    return sparse.diags(d).tocsr()


class CondensedSystem:
    """Static condensation of one linearized saddle system.

    Unknown ordering of the full system: free velocity dofs, then all
    pressure dofs, then the mean multiplier.  Eliminated per cell: the
    cell velocity dofs and every non-constant pressure dof; these couple
    only to their own cell's face dofs and constant pressure dof, so the
    elimination is embarrassingly cell-local.
    """

    def __init__(self, disc, S, rhs, free):
        self.S = S
        self.rhs = rhs
        n_full = S.shape[0]
        nvf = int(free.sum())
        # full-system index of every free velocity dof
        vmap = -np.ones(disc.dofmap.n_v, dtype=int)
        vmap[free] = np.arange(nvf)

        elim_mask = np.zeros(n_full, dtype=bool)
        self.cells = []
        for ci, ctx in enumerate(disc.contexts):
            cell_ids = vmap[disc.dofmap.cell_v(ci)]
            pids = nvf + disc.dofmap.pressure(ci)
            eids = np.concatenate([cell_ids, pids[1:]])
            rids = np.concatenate([
                vmap[np.concatenate(
                    [disc.dofmap.face_v(f) for f in ctx.fids])],
                pids[:1]])
            rids = rids[rids >= 0]  # drop Dirichlet faces
            elim_mask[eids] = True
            SEE = S[np.ix_(eids, eids)].toarray()
            SER = S[np.ix_(eids, rids)].toarray()
            SRE = S[np.ix_(rids, eids)].toarray()
            try:
                lu = lu_factor(SEE)
            except LinAlgError as exc:
                raise SolverError(
                    f"singular eliminated block in cell {ci}") from exc
            if not np.all(np.isfinite(lu[0])) or np.any(
                    np.abs(np.diag(lu[0])) < 1e-14 * max(
                        1.0, np.abs(SEE).max())):
                raise SolverError(f"singular eliminated block in cell {ci}")
            self.cells.append((eids, rids, lu, SER, SRE))

        self.keep = np.flatnonzero(~elim_mask)
        kmap = -np.ones(n_full, dtype=int)
        kmap[self.keep] = np.arange(self.keep.size)
        self.kmap = kmap
        gcond = rhs[self.keep].copy()
        rows, cols, vals = [], [], []
        for eids, rids, lu, SER, SRE in self.cells:
            rr = kmap[rids]
            corr = SRE @ lu_solve(lu, SER)
            rows.append(np.repeat(rr, rr.size))
            cols.append(np.tile(rr, rr.size))
            vals.append(-corr.ravel())
            gcond[rr] -= SRE @ lu_solve(lu, rhs[eids])
        nk_ = self.keep.size
        self.Scond = (S[np.ix_(self.keep, self.keep)].tocsc()
                      + sparse.coo_matrix(
                          (np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nk_, nk_)).tocsc())
        self.gcond = gcond

    @property
    def n_retained(self):
        return self.keep.size

    def solve(self):
        """Solve the condensed system and recover the eliminated unknowns;
        returns the full solution vector."""
        xk = splu(self.Scond).solve(self.gcond)
        x = np.zeros(self.S.shape[0])
        x[self.keep] = xk
        for eids, rids, lu, SER, SRE in self.cells:
            x[eids] = lu_solve(lu, self.rhs[eids] - SER @ x[rids])
        return x


def retained_count(disc):
    """Closed-form size of the condensed system under Dirichlet
    conditions: face unknowns on interior faces, one pressure dof per
    cell, one mean multiplier."""
    n_int = int(np.sum(~disc.mesh.boundary_faces))
    return 2 * (disc.k + 1) * n_int + len(disc.contexts) + 1


class NewtonPTCState:
    """Result of a pseudo-transient continuation Newton solve."""

    def __init__(self, U, P, dt, history, converged, message):
        self.U = U
        self.P = P
        self.dt = dt
        self.history = history  # list of (momentum, mass) residual norms
        self.converged = converged
        self.message = message

    @property
    def iterations(self):
        return len(self.history) - 1


def _linearized(disc, A, B, Mc, free, nu, U, dt, convection):
    nvf = int(free.sum())
    K = (nu * A + (0.0 if dt == np.inf else 1.0 / dt) * Mc)
    if convection:
        K = K + disc.convection_jacobian(U)
    K = K[free][:, free].tocsr()
    Bf = B[:, free].tocsr()
    m = disc.pressure_mean_vector()
    S = sparse.bmat([
        [K, Bf.T, None],
        [Bf, None, m[:, None]],
        [None, sparse.csr_matrix(m[None, :]), None],
    ], format="csr")
    return S, nvf


def momentum_residual(disc, A, B, F, nu, U, P, convection):
    r = F - nu * (A @ U) - B.T @ P
    if convection:
        r = r - disc.convection_matrix(U) @ U
    return r


def ptc_newton_solve(problem, dt0=None, stop_tol=None, max_iter=None,
                     dt_max=None, u0=None, p0=None, verbose=False):
    """Drive the discrete problem to a steady state.

    problem: object with attributes disc (Discretization), nu,
    body_force (callable or None), dirichlet (callable or None), and
    convection (bool; False solves the linear Stokes-type problem with
    plain Newton, i.e. dt = inf).

    u0, p0: optional initial velocity/pressure dof vectors (e.g. a
    converged state of a nearby problem).  They must already satisfy the
    Dirichlet data — boundary rows are kept frozen, so a mismatched guess
    converges to the wrong problem.  Default is the Dirichlet lift.

    The momentum residual is measured in the Euclidean norm on free
    velocity dofs; the stopping tolerance is floored at 100 eps times the
    initial residual scale so that huge body forces (whose residual can
    never cancel below round-off) terminate cleanly.

    Pseudo-time control: SER grows the step as the residual decays,
    dt_{n+1} = dt_n * |r_{n-1}| / |r_n|, clamped from above by dt_max and
    from below by dt0 (or by the last accepted step when backtracking had
    to go lower).  A step whose residual grows by more than a factor of 2
    is rejected and re-solved with dt/4 — without this, strongly
    convective starts from the plain Dirichlet lift can leave dt0-sized
    steps outside the basin of attraction.
    """
    dt0 = DEFAULTS["dt0"] if dt0 is None else float(dt0)
    stop_tol = DEFAULTS["stop_tol"] if stop_tol is None else float(stop_tol)
    max_iter = DEFAULTS["max_iter"] if max_iter is None else int(max_iter)
    dt_max = DEFAULTS["dt_max"] if dt_max is None else float(dt_max)

    disc = problem.disc
    nu = problem.nu
    convection = getattr(problem, "convection", True)
    A = disc.viscous_matrix()
    B = disc.coupling_matrix()
    Mc = cell_mass_matrix(disc)
    free = free_velocity_mask(disc)
    F = (disc.body_force_vector(problem.body_force)
         if problem.body_force is not None else np.zeros(disc.dofmap.n_v))
    if u0 is not None:
        U = np.array(u0, dtype=float)
        if U.shape != (disc.dofmap.n_v,):
            raise SolverError(f"u0 has shape {U.shape}, "
                              f"expected ({disc.dofmap.n_v},)")
    else:
        U = (boundary_interpolate(disc, problem.dirichlet)
             if problem.dirichlet is not None
             else np.zeros(disc.dofmap.n_v))
    if p0 is not None:
        P = np.array(p0, dtype=float)
        if P.shape != (disc.dofmap.n_p,):
            raise SolverError(f"p0 has shape {P.shape}, "
                              f"expected ({disc.dofmap.n_p},)")
    else:
        P = np.zeros(disc.dofmap.n_p)
    m = disc.pressure_mean_vector()

    dt = np.inf if not convection else dt0
    dt_floor = dt0
    history = []
    best = np.inf
    converged = False
    message = ""

    def residual(U, P):
        """Momentum residual vector, mass residual vector, their norms and
        the combined norm driving step control.  Step acceptance must look
        at the combined norm: the first step from a lift state trades a
        large mass residual for momentum residual and only the total
        shrinks.

        The component of the mass residual along the constant pressure is
        the net boundary flux of the projected Dirichlet data (a
        quadrature-level data defect, exactly compensated by the mean
        multiplier); no velocity update can reduce it, so it is projected
        out of the residual driving the controls."""
        r_mom = momentum_residual(disc, A, B, F, nu, U, P, convection)[free]
        r_mass = -(B @ U)
        r_mass -= (m @ r_mass) / (m @ m) * m
        mom = float(np.linalg.norm(r_mom))
        comb = float(np.hypot(mom, np.linalg.norm(r_mass)))
        return r_mom, r_mass, mom, comb

    r_mom, r_mass, rnorm, cnorm = residual(U, P)
    history.append((rnorm, float(np.linalg.norm(r_mass))))
    eff_tol = max(stop_tol, 100.0 * np.finfo(float).eps * max(cnorm, 1.0))
    for it in range(max_iter + 1):
        if verbose:
            print(f"  iter {it:3d}  dt {dt:9.3e}  |r_mom| {rnorm:9.3e}  "
                  f"|r_mass| {history[-1][1]:9.3e}")
        if rnorm < eff_tol and history[-1][1] < np.sqrt(eff_tol):
            converged = True
            message = f"converged in {it} iterations"
            break
        if rnorm > DEFAULTS["growth_limit"] * best:
            message = (f"diverged: residual grew to {rnorm:.3e} "
                       f"({DEFAULTS['growth_limit']:.0e} over best "
                       f"{best:.3e})")
            break
        if it == max_iter:
            message = f"max_iter={max_iter} exceeded, residual {rnorm:.3e}"
            break
        best = min(best, rnorm)

        rhs = np.concatenate([r_mom, r_mass, [-(m @ P)]])
        for attempt in range(DEFAULTS["max_rejects"] + 1):
            try:
                S, nvf = _linearized(disc, A, B, Mc, free, nu, U, dt,
                                     convection)
                cond = CondensedSystem(disc, S, rhs, free)
            except SolverError:
                if attempt == DEFAULTS["max_rejects"]:
                    raise
                dt = dt / 4.0
                continue
            if cond.n_retained != retained_count(disc):
                raise SolverError(
                    f"condensed system has {cond.n_retained} unknowns, "
                    f"expected {retained_count(disc)}")
            x = cond.solve()
            U_new = U.copy()
            U_new[free] += x[:nvf]
            P_new = P + x[nvf:-1]
            t_mom, t_mass, tnorm, tcomb = residual(U_new, P_new)
            ok = np.isfinite(tcomb) and tcomb <= max(
                DEFAULTS["reject_growth"] * cnorm, eff_tol)
            if not convection or ok or attempt == DEFAULTS["max_rejects"]:
                break
            dt = dt / 4.0
            if verbose:
                print(f"        reject (|r| {tcomb:9.3e}), retry dt "
                      f"{dt:9.3e}")
        if convection and tcomb > 0:
            dt_floor = min(dt_floor, dt)
            dt = min(max(dt * cnorm / tcomb, dt_floor), dt_max)
        U, P = U_new, P_new
        r_mom, r_mass, rnorm, cnorm = t_mom, t_mass, tnorm, tcomb
        history.append((rnorm, float(np.linalg.norm(r_mass))))
    return NewtonPTCState(U, P, dt, history, converged, message)
