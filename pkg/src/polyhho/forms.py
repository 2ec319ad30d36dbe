"""Global forms of the hybrid discretization of steady incompressible
Navier-Stokes: the viscous bilinear form, the pressure-velocity coupling,
the body-force functional, and the convective trilinear form with its
Jacobian.

The body force and the convective term come in two flavours selected at
construction time:

* ``robust``: test velocities are replaced by their divergence-preserving
  Raviart-Thomas reconstruction, which makes the velocity error immune to
  large irrotational body-force components;
* ``classic``: cell polynomial products, as in standard hybrid
  discretizations, kept for comparison runs.

The convective form is evaluated without materializing the high-degree
piecewise gradient: expanding its defining moments turns each cell
contribution into a volume term driven by the cell-polynomial gradient
plus face terms driven by the face/cell difference, each a difference of
two identical-looking products.  Evaluating both products and subtracting
keeps the form exactly skew in its last two slots at assembly level, so
``trilinear_apply(w, v, v)`` returns exactly zero.  In two dimensions no
curl is needed anywhere: the rotational structure is carried implicitly
by the skew volume factor (the gradient minus its transpose).
"""

import numpy as np
from scipy import sparse

from .local import GlobalDofMap, build_contexts, interpolate_global, \
    seminorm_1h
from .basis import l2_project
from .rt import reconstruction_map, rt_space


class Discretization:
    """Forms and error norms of one mesh/degree pair.

    Parameters
    ----------
    mesh : PolyMesh
    k : polynomial degree of the hybrid velocity/pressure spaces
    mode : "robust" (Raviart-Thomas test velocities in body force and
        convection) or "classic" (cell polynomial products).
    """

    def __init__(self, mesh, k, mode="robust"):
        if mode not in ("robust", "classic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mesh = mesh
        self.k = k
        self.mode = mode
        self.contexts = build_contexts(mesh, k)
        self.dofmap = GlobalDofMap(mesh, k)
        self._cache = {}
        self._conv_data = {}
        self._conv_pattern = None

    # -- linear forms ------------------------------------------------------

    def viscous_matrix(self):
        """Sparse symmetric global matrix of the viscous form: cell-gradient
        Gram plus jump stabilization, summed over cells."""
        if "viscous" in self._cache:
            return self._cache["viscous"]
        rows, cols, vals = [], [], []
        for ci, ctx in enumerate(self.contexts):
            Gc = ctx.gradient_cell()
            # orthonormal cell basis: the integral of Gc(w):Gc(v) is the
            # coefficient-wise dot product
            A = np.einsum("rcaj,rcal->jl", Gc, Gc) + ctx.stabilization()
            idx = self.dofmap.gather(ci)
            rows.append(np.repeat(idx, idx.size))
            cols.append(np.tile(idx, idx.size))
            vals.append(A.ravel())
        n = self.dofmap.n_v
        A = sparse.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        self._cache["viscous"] = A
        return A

    def coupling_matrix(self):
        """Sparse coupling matrix B with b(v, q) = q @ B @ v =
        -sum_T int_T (D_T v) q."""
        if "coupling" in self._cache:
            return self._cache["coupling"]
        rows, cols, vals = [], [], []
        for ci, ctx in enumerate(self.contexts):
            D = ctx.divergence()
            pr = self.dofmap.pressure(ci)
            idx = self.dofmap.gather(ci)
            rows.append(np.repeat(pr, idx.size))
            cols.append(np.tile(idx, pr.size))
            vals.append(-D.ravel())
        B = sparse.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dofmap.n_p, self.dofmap.n_v)).tocsr()
        self._cache["coupling"] = B
        return B

    def pressure_mean_vector(self):
        """m with m @ q = int_Omega q for pressure coefficient vectors."""
        if "pmean" not in self._cache:
            m = np.zeros(self.dofmap.n_p)
            for ci, ctx in enumerate(self.contexts):
                # only the normalized constant has a nonzero integral
                m[self.dofmap.pressure(ci)[0]] = np.sqrt(ctx.geom.area)
            self._cache["pmean"] = m
        return self._cache["pmean"]

    def body_force_vector(self, phi):
        """Global load vector of the body-force functional for a callable
        phi(pts) -> (npts, 2).  Robust mode integrates phi against the
        reconstructed test velocities per fan simplex; classic mode
        integrates against the cell polynomial."""
        F = np.zeros(self.dofmap.n_v)
        deg = 2 * self.k + 10
        for ci, ctx in enumerate(self.contexts):
            loc = np.zeros(ctx.n_loc)
            if self.mode == "robust":
                space = rt_space(ctx)
                R = reconstruction_map(ctx)
                for t, tg in enumerate(ctx.tri_geoms):
                    pts, w = tg.quad(deg)
                    E = np.einsum("pcr,rj->pcj",
                                  space.point_eval_operator(t, pts), R)
                    loc += np.einsum("p,pc,pcj->j", w, phi(pts), E)
            else:
                pts, w = ctx.cell_rule(deg)
                ph = ctx.basis.eval(pts)
                f = phi(pts)
                for c in (0, 1):
                    loc[ctx.cell_slice(c)] = np.einsum(
                        "p,p,pa->a", w, f[:, c], ph)
            F[self.dofmap.gather(ci)] += loc
        return F

    # -- convective term ---------------------------------------------------

    def _cell_eval_arrays(self, ctx, t, pts):
        """(npts, 2, n_loc) values of the test velocity attached to each
        local dof at points of simplex t: the reconstruction in robust
        mode, the cell polynomial in classic mode."""
        if self.mode == "robust":
            space = rt_space(ctx)
            return np.einsum("pcr,rj->pcj",
                             space.point_eval_operator(t, pts),
                             reconstruction_map(ctx))
        E = np.zeros((len(pts), 2, ctx.n_loc))
        ph = ctx.basis.eval(pts)
        for c in (0, 1):
            E[:, c, ctx.cell_slice(c)] = ph
        return E

    def _conv_cell(self, ci):
        """Cached per-cell tensor T of the convective trilinear form:
        t(w, v, z) = z @ (T @ w) @ v on the cell's local dofs.

        The trilinear form is the skew-symmetrized pair
        (Rv . grad w_T, Rz) - (Rz . grad w_T, Rv) plus the boundary
        correction ((w_F - w_T) . Rz)(Rv . n) - ((w_F - w_T) . Rv)(Rz . n),
        with R the velocity attached to each dof (divergence-preserving
        reconstruction in robust mode, the raw cell polynomial in classic
        mode).  Only the advected-field slot hits the gradient/jump of w,
        so T is antisymmetric in (v, z) by construction and T @ w is an
        exactly-skew local matrix for every w.
        """
        if ci in self._conv_data:
            return self._conv_data[ci]
        ctx = self.contexts[ci]
        deg = 4 * self.k + 4
        n, nk = ctx.n_loc, ctx.nk
        # volume part: the advected field enters through its cell gradient
        V1 = np.zeros((n, n, 2, nk))
        for t, tg in enumerate(ctx.tri_geoms):
            pts, w = tg.quad(deg)
            dph = ctx.basis.grad(pts)
            EV = self._cell_eval_arrays(ctx, t, pts)
            V1 += np.einsum("p,pca,pri,pcj->ijra", w, dph, EV, EV,
                            optimize=True)
        T = np.zeros((n, n, n))
        V1 = V1.reshape(n, n, 2 * nk)
        T[:, :, :2 * nk] = V1 - V1.transpose(1, 0, 2)
        # face part: the advected field enters through its face-cell jump
        for i in range(ctx.n_faces):
            pts, w = ctx.fgeoms[i].quad(deg)
            DEL = np.zeros((len(pts), 2, n))
            chi = ctx.fbases[i].eval(pts)
            ph = ctx.basis.eval(pts)
            for c in (0, 1):
                DEL[:, c, ctx.face_dofs(i, c)] = chi
                DEL[:, c, ctx.cell_dofs(c)] = -ph
            EF = self._cell_eval_arrays(ctx, int(ctx.face_simplex[i]), pts)
            EFn = np.einsum("pci,c->pi", EF, ctx.normals[i])
            S = np.einsum("p,pck,pci,pj->ijk", w, DEL, EF, EFn,
                          optimize=True)
            T += S - S.transpose(1, 0, 2)
        self._conv_data[ci] = T
        return T

    def trilinear_apply(self, W, V, Z):
        """t(w, v, z), exactly skew in (v, z): with the antisymmetric local
        matrix C = T @ w the value is evaluated as (z.Cv - v.Cz)/2, whose
        two products are computed identically when V is Z, so
        t(w, v, v) returns exactly 0.0."""
        total = 0.0
        for ci in range(len(self.contexts)):
            idx = self.dofmap.gather(ci)
            C = self._conv_cell(ci) @ W[idx]
            vl, zl = V[idx], Z[idx]
            total += 0.5 * (zl @ (C @ vl) - vl @ (C @ zl))
        return total

    def _assemble_convection(self, W, want_slot1):
        vals = []
        for ci in range(len(self.contexts)):
            idx = self.dofmap.gather(ci)
            T = self._conv_cell(ci)
            wl = W[idx]
            # z @ C @ v = t(w, v, z); the slot-1 derivative adds
            # z @ D @ d = t(d, w, z)
            loc = T @ wl
            if want_slot1:
                loc = loc + np.einsum("ijk,j->ik", T, wl)
            vals.append(loc.ravel())
        if self._conv_pattern is None:
            rows, cols = [], []
            for ci in range(len(self.contexts)):
                idx = self.dofmap.gather(ci)
                rows.append(np.repeat(idx, idx.size))
                cols.append(np.tile(idx, idx.size))
            self._conv_pattern = (np.concatenate(rows), np.concatenate(cols))
        n = self.dofmap.n_v
        return sparse.coo_matrix(
            (np.concatenate(vals), self._conv_pattern),
            shape=(n, n)).tocsr()

    def convection_matrix(self, W):
        """Sparse C(w) with z @ C(w) @ v = t(w, v, z); the convective
        residual is C(w) @ w."""
        return self._assemble_convection(W, want_slot1=False)

    def convection_jacobian(self, W):
        """Sparse matrix of d @ -> t(d, w, .) + t(w, d, .), the derivative
        of the convective residual at w."""
        return self._assemble_convection(W, want_slot1=True)

    # -- error norms -------------------------------------------------------

    def velocity_seminorm(self, V):
        return seminorm_1h(self.contexts, self.dofmap, V)

    def interpolate(self, f):
        return interpolate_global(f, self.contexts, self.dofmap)

    def project_pressure(self, p):
        """Pressure-layout coefficients of the cellwise L2 projection."""
        P = np.zeros(self.dofmap.n_p)
        for ci, ctx in enumerate(self.contexts):
            P[self.dofmap.pressure(ci)] = l2_project(
                lambda pts: p(pts), ctx.basis)
        return P

    def zero_pressure_mean(self, P):
        """Shift a pressure vector to zero mean over the domain."""
        m = self.pressure_mean_vector()
        area = m @ m  # sum of cell areas
        return P - (m @ P) / area * m

    def error_norms(self, U, P, exact_u, exact_p, nu):
        """Energy, velocity and pressure errors of a discrete state
        against callables exact_u(pts)->(n,2), exact_p(pts)->(n,).

        All three are discrete distances of the state to the exact
        solution's interpolant/projection: with e = U - (interpolant of
        exact_u), energy = sqrt(nu * a(e, e)); velocity_l2 is the broken
        L2 norm of the cell-polynomial part of e; pressure_l2 is the
        broken L2 distance of P to the cellwise projection of exact_p,
        both normalized to zero mean.  The velocity measure is the
        superclose quantity that converges one order faster than the
        energy error.  The bases being orthonormal, both L2 norms are
        Euclidean norms of coefficient vectors.
        """
        e = U - self.interpolate(exact_u)
        A = self.viscous_matrix()
        energy = float(np.sqrt(max(nu * (e @ (A @ e)), 0.0)))
        cell = np.concatenate([e[self.dofmap.cell_v(ci)]
                               for ci in range(len(self.contexts))])
        ep = self.zero_pressure_mean(np.asarray(P, dtype=float)) \
            - self.zero_pressure_mean(self.project_pressure(exact_p))
        return {"energy": energy,
                "velocity_l2": float(np.linalg.norm(cell)),
                "pressure_l2": float(np.linalg.norm(ep))}
