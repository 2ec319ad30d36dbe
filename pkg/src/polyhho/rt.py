"""Divergence-preserving velocity reconstruction into Raviart-Thomas space.

Each cell's fan subtriangulation carries a patch of broken Raviart-Thomas
functions of degree k (per simplex: P^k(tau)^2 plus the radial extension
spanned by x times the homogeneous degree-k monomials).  A patch function
is stored through physical degrees of freedom:

* interior moments against an L2-orthonormal basis of P^{k-1}(tau)^2 per
  simplex, ordered x component first;
* normal-component moments sqrt(h_e) int_e (w . n_e) q_m against the
  orthonormal edge basis, one block per distinct sub-edge (the cell faces
  first, then the fan diagonals).  The edge normal n_e follows the global
  mesh orientation, so the block is shared by the adjacent simplices and,
  for a mesh face, by the two adjacent cells; single-valued edge blocks
  make the patched field H(div)-conforming.

With this normalization the dof 2-norm is uniformly comparable to the L2
norm of the field (see :meth:`RTSpace.norm_equivalence_bounds`).

The reconstruction of a hybrid velocity vector is the patch function whose
boundary normal trace matches the face unknowns, whose divergence has the
discrete divergence's moments against the full broken P^k space (hence
equals it pointwise), and whose moments against the rotated-monomial
fields (x - x_fan)^perp P^{k-2}(T) agree with the cell unknown.  It is
computed constructively - a boundary-data lifting plus a constrained
interior mixed solve with the zero-mean pressure-like multiplier - and
returned as a matrix acting on the local dof layout of
:class:`~polyhho.local.CellContext`; the residual of the full defining
system is verified for every dof column before the matrix is cached.
"""

import numpy as np
from scipy.linalg import solve

from .basis import (FaceBasis, FaceGeometry, KoszulBasis, ScaledBasis2D,
                    monomial_exponents, poly_dim)


class ReconstructionError(RuntimeError):
    """A cell's reconstruction system is degenerate or inconsistent."""


class RTSpace:
    """Raviart-Thomas patch of degree k on one cell's fan subtriangulation.

    Dof layout: per-simplex interior moment blocks (2 * dim P^{k-1} each,
    x moments then y moments), followed by one block of k+1 normal-moment
    dofs per distinct sub-edge.
    """

    def __init__(self, ctx):
        self.ctx = ctx
        k = ctx.k
        self.k = k
        self.S = len(ctx.tri_geoms)
        self.nkm = poly_dim(k - 1)
        self.nfk = k + 1

        # distinct sub-edges: cell faces first, fan diagonals after; each
        # keeps its globally oriented geometry and shared orthonormal basis
        edges = [(ctx.fgeoms[i], ctx.fbases[i]) for i in range(ctx.n_faces)]
        simplex_edges = [[] for _ in range(self.S)]
        for i in range(ctx.n_faces):
            simplex_edges[int(ctx.face_simplex[i])].append(i)
        verts = ctx.mesh.vertices
        for a, b, t1, t2 in ctx.interior_subfaces:
            fg = FaceGeometry(verts[a], verts[b])
            eid = len(edges)
            edges.append((fg, FaceBasis(fg, k)))
            simplex_edges[int(t1)].append(eid)
            simplex_edges[int(t2)].append(eid)
        self.edges = edges
        self.simplex_edges = simplex_edges
        self.n_edges = len(edges)
        if any(len(se) != 3 for se in simplex_edges):
            raise ReconstructionError(
                f"cell {ctx.ci}: fan simplices and sub-edges are inconsistent")

        self.n_interior = self.S * 2 * self.nkm
        self.n_rt = self.n_interior + self.n_edges * self.nfk
        self.boundary_mask = np.zeros(self.n_rt, dtype=bool)
        for i in range(ctx.n_faces):
            self.boundary_mask[self.edge_dofs(i)] = True

        self.moment_bases = [ScaledBasis2D(tg, k - 1) if k >= 1 else None
                             for tg in ctx.tri_geoms]
        self.broken_bases = [ScaledBasis2D(tg, k) for tg in ctx.tri_geoms]
        self.koszul = KoszulBasis(ctx.fan_point, ctx.geom.diameter, k - 1)
        exps = monomial_exponents(k)
        self._top_exps = exps[exps.sum(axis=1) == k]

        # per-simplex map from patch dof values to generator coefficients
        self._vinv = []
        self.patch_index = []
        for t in range(self.S):
            idx = np.concatenate([self.interior_dofs(t, 0),
                                  self.interior_dofs(t, 1)]
                                 + [self.edge_dofs(e)
                                    for e in simplex_edges[t]])
            V = self._dof_matrix(t)
            cond = np.linalg.cond(V)
            if not np.isfinite(cond) or cond > 1e10:
                raise ReconstructionError(
                    f"cell {ctx.ci}: degenerate simplex {t} "
                    f"(dof matrix condition estimate {cond:.2e})")
            self._vinv.append(np.linalg.solve(V, np.eye(len(V))))
            self.patch_index.append(idx)
        self._cache = {}

    # -- dof layout ------------------------------------------------------

    def interior_dofs(self, t, comp):
        s = t * 2 * self.nkm + comp * self.nkm
        return np.arange(s, s + self.nkm)

    def edge_dofs(self, e):
        s = self.n_interior + e * self.nfk
        return np.arange(s, s + self.nfk)

    # -- generators ------------------------------------------------------

    def _gen_eval(self, t, pts):
        """(npts, 2, ngen) generator values on simplex t: the orthonormal
        P^k(tau)^2 fields followed by the radial top-degree extensions."""
        pts = np.asarray(pts, dtype=float)
        tb = self.broken_bases[t]
        tg = self.ctx.tri_geoms[t]
        phi = tb.eval(pts)
        nk = tb.dim
        s = (pts - tg.centroid) / tg.diameter
        mono = s[:, 0:1] ** self._top_exps[:, 0] \
            * s[:, 1:2] ** self._top_exps[:, 1]
        G = np.zeros((len(pts), 2, 2 * nk + self.nfk))
        G[:, 0, :nk] = phi
        G[:, 1, nk:2 * nk] = phi
        G[:, :, 2 * nk:] = s[:, :, None] * mono[:, None, :]
        return G

    def _gen_div(self, t, pts):
        """(npts, ngen) generator divergences on simplex t."""
        pts = np.asarray(pts, dtype=float)
        tb = self.broken_bases[t]
        tg = self.ctx.tri_geoms[t]
        dphi = tb.grad(pts)
        nk = tb.dim
        s = (pts - tg.centroid) / tg.diameter
        mono = s[:, 0:1] ** self._top_exps[:, 0] \
            * s[:, 1:2] ** self._top_exps[:, 1]
        D = np.empty((len(pts), 2 * nk + self.nfk))
        D[:, :nk] = dphi[:, 0, :]
        D[:, nk:2 * nk] = dphi[:, 1, :]
        # the radial extensions are homogeneous of degree k+1 in s
        D[:, 2 * nk:] = (self.k + 2) / tg.diameter * mono
        return D

    def _dof_matrix(self, t):
        """Values of the dof functionals on the generators of simplex t."""
        k = self.k
        tg = self.ctx.tri_geoms[t]
        nd = (k + 1) * (k + 3)
        V = np.empty((nd, nd))
        row = 0
        if self.nkm:
            pts, w = tg.quad(2 * k + 2)
            G = self._gen_eval(t, pts)
            mb = self.moment_bases[t].eval(pts)
            for c in (0, 1):
                V[row:row + self.nkm] = np.einsum("p,pa,pg->ag",
                                                  w, mb, G[:, c, :])
                row += self.nkm
        for e in self.simplex_edges[t]:
            fg, fb = self.edges[e]
            qpts, qw = fg.quad(2 * k + 2)
            gn = np.einsum("pcg,c->pg", self._gen_eval(t, qpts), fg.normal)
            V[row:row + self.nfk] = np.sqrt(fg.length) * np.einsum(
                "p,pm,pg->mg", qw, fb.eval(qpts), gn)
            row += self.nfk
        return V

    # -- evaluation ------------------------------------------------------

    def eval_field(self, t, pts, patch):
        """(npts, 2) values on simplex t of the field with patch dofs."""
        loc = self._vinv[t] @ np.asarray(patch, float)[self.patch_index[t]]
        return np.einsum("pcg,g->pc", self._gen_eval(t, pts), loc)

    def div_field(self, t, pts, patch):
        """(npts,) divergence on simplex t of the field with patch dofs."""
        loc = self._vinv[t] @ np.asarray(patch, float)[self.patch_index[t]]
        return self._gen_div(t, pts) @ loc

    def point_eval_operator(self, t, pts):
        """(npts, 2, n_rt) matrix: patch dofs -> values at pts in simplex t."""
        op = np.zeros((len(pts), 2, self.n_rt))
        op[:, :, self.patch_index[t]] = np.einsum(
            "pcg,gd->pcd", self._gen_eval(t, pts), self._vinv[t])
        return op

    def point_div_operator(self, t, pts):
        """(npts, n_rt) matrix: patch dofs -> divergence at pts."""
        op = np.zeros((len(pts), self.n_rt))
        op[:, self.patch_index[t]] = self._gen_div(t, pts) @ self._vinv[t]
        return op

    # -- patch matrices ----------------------------------------------------

    def _simplex_rules(self):
        return [tg.quad(2 * self.k + 2) for tg in self.ctx.tri_geoms]

    def mass_matrix(self):
        """(n_rt, n_rt) Gram of the canonical patch basis over the cell."""
        if "mass" not in self._cache:
            M = np.zeros((self.n_rt, self.n_rt))
            for t, (pts, w) in enumerate(self._simplex_rules()):
                G = self._gen_eval(t, pts)
                Q = np.einsum("p,pcg,pch->gh", w, G, G)
                Vi = self._vinv[t]
                ix = np.ix_(self.patch_index[t], self.patch_index[t])
                M[ix] += Vi.T @ Q @ Vi
            self._cache["mass"] = M
        return self._cache["mass"]

    def div_moment_matrix(self):
        """(S * dim P^k, n_rt) divergence moments against the broken basis."""
        if "divmom" not in self._cache:
            nk = self.broken_bases[0].dim
            B = np.zeros((self.S * nk, self.n_rt))
            for t, (pts, w) in enumerate(self._simplex_rules()):
                dv = self._gen_div(t, pts)
                ph = self.broken_bases[t].eval(pts)
                Bl = np.einsum("p,pb,pg->bg", w, ph, dv) @ self._vinv[t]
                B[t * nk:(t + 1) * nk, self.patch_index[t]] += Bl
            self._cache["divmom"] = B
        return self._cache["divmom"]

    def koszul_moment_matrix(self):
        """(n_rt, dim) moments against the rotated-monomial fields."""
        if "koszul" not in self._cache:
            K = np.zeros((self.n_rt, self.koszul.dim))
            for t, (pts, w) in enumerate(self._simplex_rules()):
                G = self._gen_eval(t, pts)
                xi = self.koszul.eval(pts)
                Kl = np.einsum("p,pcg,pcm->gm", w, G, xi)
                K[self.patch_index[t]] += self._vinv[t].T @ Kl
            self._cache["koszul"] = K
        return self._cache["koszul"]

    def koszul_cell_moments(self):
        """(dim, n_loc) moments of the cell unknown against the rotated
        monomials, as a matrix on the local dof layout."""
        if "koszul_cell" not in self._cache:
            ctx = self.ctx
            Kc = np.zeros((self.koszul.dim, ctx.n_loc))
            for t, (pts, w) in enumerate(self._simplex_rules()):
                xi = self.koszul.eval(pts)
                phT = ctx.basis.eval(pts)
                for c in (0, 1):
                    Kc[:, ctx.cell_slice(c)] += np.einsum(
                        "p,pm,pa->ma", w, xi[:, c, :], phT)
            self._cache["koszul_cell"] = Kc
        return self._cache["koszul_cell"]

    def cell_moment_matrix(self):
        """(n_rt, n_loc) moments of the canonical patch basis against the
        cell basis; only the cell dof columns are populated."""
        if "cellmom" not in self._cache:
            ctx = self.ctx
            E = np.zeros((self.n_rt, ctx.n_loc))
            for t, (pts, w) in enumerate(self._simplex_rules()):
                G = self._gen_eval(t, pts)
                phT = ctx.basis.eval(pts)
                Vi = self._vinv[t]
                for c in (0, 1):
                    El = np.einsum("p,pg,pa->ga", w, G[:, c, :], phT)
                    E[np.ix_(self.patch_index[t], ctx.cell_dofs(c))] \
                        += Vi.T @ El
            self._cache["cellmom"] = E
        return self._cache["cellmom"]

    def broken_cross_grams(self):
        """Per simplex, the Gram of its broken basis against the cell
        basis (both degree k)."""
        if "cross" not in self._cache:
            out = []
            for t, (pts, w) in enumerate(self._simplex_rules()):
                out.append(np.einsum("p,pb,pa->ba", w,
                                     self.broken_bases[t].eval(pts),
                                     self.ctx.basis.eval(pts)))
            self._cache["cross"] = out
        return self._cache["cross"]

    def broken_mean_vector(self):
        """(S * dim P^k,) integrals of the broken basis functions."""
        if "mean" not in self._cache:
            nk = self.broken_bases[0].dim
            c = np.zeros(self.S * nk)
            for t, (pts, w) in enumerate(self._simplex_rules()):
                c[t * nk:(t + 1) * nk] = w @ self.broken_bases[t].eval(pts)
            self._cache["mean"] = c
        return self._cache["mean"]

    def lifting_matrix(self):
        """(n_rt, n_loc) boundary-data lifting: boundary edge dofs are the
        face unknown's normal moments, every other dof is zero.  Because
        the face bases are orthonormal and globally oriented the block is
        diagonal, sqrt(h_F) n_F per component, identical from both cells
        sharing the face."""
        if "lifting" not in self._cache:
            ctx = self.ctx
            L = np.zeros((self.n_rt, ctx.n_loc))
            for i in range(ctx.n_faces):
                fg = ctx.fgeoms[i]
                rows = self.edge_dofs(i)
                root = np.sqrt(fg.length)
                for c in (0, 1):
                    L[rows, ctx.face_dofs(i, c)] = root * fg.normal[c]
            self._cache["lifting"] = L
        return self._cache["lifting"]

    def norm_equivalence_bounds(self):
        """(lo, hi): extreme eigenvalues, over the simplices, of the mass
        matrix in normalized dof coordinates.  Both stay in a fixed
        bracket on shape-regular fans, expressing that the L2 norm and
        the dof 2-norm are uniformly comparable."""
        lo, hi = np.inf, -np.inf
        for t, (pts, w) in enumerate(self._simplex_rules()):
            G = self._gen_eval(t, pts)
            Q = np.einsum("p,pcg,pch->gh", w, G, G)
            Vi = self._vinv[t]
            ev = np.linalg.eigvalsh(Vi.T @ Q @ Vi)
            lo, hi = min(lo, ev[0]), max(hi, ev[-1])
        return lo, hi


def rt_space(ctx):
    """The (cached) Raviart-Thomas patch space of a cell context."""
    if "rt_space" not in ctx._cache:
        ctx._cache["rt_space"] = RTSpace(ctx)
    return ctx._cache["rt_space"]


def boundary_lifting(ctx, vec):
    """Patch dofs of the boundary-data lifting of a local dof vector:
    normal trace of the face unknowns on the cell boundary, zero interior
    moments and zero normal trace on the fan diagonals."""
    return rt_space(ctx).lifting_matrix() @ np.asarray(vec, dtype=float)


def reconstruction_map(ctx):
    """(n_rt, n_loc) matrix of the divergence-preserving reconstruction.

    Built constructively as boundary lifting plus the interior mixed
    solve on the zero-normal-trace subspace, with the pressure-like
    multiplier constrained to zero mean through a symmetric border row.
    The residual of the full defining system is checked for all dof
    columns; failure raises :class:`ReconstructionError` with the cell id
    and a condition estimate instead of silently regularizing.
    """
    if "rt_map" in ctx._cache:
        return ctx._cache["rt_map"]
    space = rt_space(ctx)
    nk = ctx.nk
    M = space.mass_matrix()
    B = space.div_moment_matrix()
    K = space.koszul_moment_matrix()
    cvec = space.broken_mean_vector()
    L = space.lifting_matrix()
    Ecl = space.cell_moment_matrix()
    Kcell = space.koszul_cell_moments()
    Dmat = ctx.divergence()
    Dmom = np.concatenate([X @ Dmat for X in space.broken_cross_grams()])

    free = ~space.boundary_mask
    nf = int(free.sum())
    nb = B.shape[0]
    nz = K.shape[1]
    n = nf + nb + nz + 1
    A = np.zeros((n, n))
    A[:nf, :nf] = M[np.ix_(free, free)]
    A[:nf, nf:nf + nb] = B[:, free].T
    A[nf:nf + nb, :nf] = B[:, free]
    A[:nf, nf + nb:n - 1] = K[free]
    A[nf + nb:n - 1, :nf] = K[free].T
    A[nf:nf + nb, -1] = cvec
    A[-1, nf:nf + nb] = cvec

    rhs = np.zeros((n, ctx.n_loc))
    rhs[:nf] = Ecl[free] - M[free] @ L
    rhs[nf:nf + nb] = Dmom - B @ L
    rhs[nf + nb:n - 1] = Kcell

    # symmetric diagonal equilibration: the mass block is O(1) in the
    # normalized dofs while the divergence and moment blocks scale with
    # the cell size
    h = ctx.geom.diameter
    d = np.concatenate([np.ones(nf), np.full(nb, h),
                        np.full(nz, 1.0 / h), [1.0 / h ** 2]])
    try:
        Y = solve(d[:, None] * A * d[None, :], d[:, None] * rhs,
                  assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise ReconstructionError(
            f"cell {ctx.ci}: singular reconstruction system "
            f"(condition estimate {np.linalg.cond(A):.2e})") from exc
    X = d[:, None] * Y

    R = L.copy()
    R[free] += X[:nf]
    psi = X[nf:nf + nb]
    zeta = X[nf + nb:n - 1]

    # residual of the full defining system, all dof columns at once
    res = (np.linalg.norm(B @ R - Dmom) ** 2
           + np.linalg.norm(K.T @ R - Kcell) ** 2
           + np.linalg.norm(M[free] @ R + B[:, free].T @ psi
                            + K[free] @ zeta - Ecl[free]) ** 2) ** 0.5
    scale = max(1.0, np.linalg.norm(R), np.linalg.norm(psi),
                np.linalg.norm(zeta)) \
        * max(1.0, np.linalg.norm(M), np.linalg.norm(B), np.linalg.norm(K))
    if not res <= 1e-10 * scale:
        raise ReconstructionError(
            f"cell {ctx.ci}: reconstruction residual {res:.2e} exceeds "
            f"1e-10 * {scale:.2e} "
            f"(condition estimate {np.linalg.cond(A):.2e})")
    ctx._cache["rt_map"] = R
    return R


def solve_local_mixed(ctx, vec):
    """Patch dofs of the reconstruction of one local dof vector."""
    return reconstruction_map(ctx) @ np.asarray(vec, dtype=float)


def global_reconstruction(contexts, dofmap, U):
    """Reconstruct a mesh-wide dof vector cell by cell into an
    :class:`RTField`.  Normal dofs are single-valued across mesh
    interfaces because both cells derive them from the shared face
    unknowns in the same global orientation."""
    U = np.asarray(U, dtype=float)
    coeffs = [reconstruction_map(ctx) @ U[dofmap.gather(ci)]
              for ci, ctx in enumerate(contexts)]
    return RTField(contexts, coeffs)


class RTField:
    """A broken Raviart-Thomas field over the whole mesh, stored as one
    patch dof vector per cell."""

    def __init__(self, contexts, coeffs):
        self.contexts = contexts
        self.coeffs = coeffs

    def eval_simplex(self, ci, t, pts):
        """(npts, 2) values at points inside simplex t of cell ci."""
        return rt_space(self.contexts[ci]).eval_field(t, pts,
                                                      self.coeffs[ci])

    def div_simplex(self, ci, t, pts):
        """(npts,) divergence at points inside simplex t of cell ci."""
        return rt_space(self.contexts[ci]).div_field(t, pts,
                                                     self.coeffs[ci])

    def _locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cell = np.full(len(pts), -1, dtype=int)
        simp = np.full(len(pts), -1, dtype=int)
        for ci, ctx in enumerate(self.contexts):
            for t, tg in enumerate(ctx.tri_geoms):
                todo = cell < 0
                if not np.any(todo):
                    return cell, simp
                p0 = tg.pts[0]
                J = np.column_stack([tg.pts[1] - p0, tg.pts[2] - p0])
                lam = np.linalg.solve(J, (pts[todo] - p0).T).T
                inside = (lam[:, 0] >= -1e-12) & (lam[:, 1] >= -1e-12) \
                    & (lam.sum(axis=1) <= 1.0 + 1e-12)
                hit = np.flatnonzero(todo)[inside]
                cell[hit] = ci
                simp[hit] = t
        if np.any(cell < 0):
            raise ValueError("point outside the mesh")
        return cell, simp

    def eval(self, pts):
        """(npts, 2) values at arbitrary points (located per simplex)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cell, simp = self._locate(pts)
        out = np.empty((len(pts), 2))
        for ci, t in set(zip(cell.tolist(), simp.tolist())):
            sel = (cell == ci) & (simp == t)
            out[sel] = self.eval_simplex(ci, t, pts[sel])
        return out

    def divergence(self, pts):
        """(npts,) divergence at arbitrary points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cell, simp = self._locate(pts)
        out = np.empty(len(pts))
        for ci, t in set(zip(cell.tolist(), simp.tolist())):
            sel = (cell == ci) & (simp == t)
            out[sel] = self.div_simplex(ci, t, pts[sel])
        return out

    def max_divergence(self):
        """Largest |divergence| over all simplex quadrature points."""
        worst = 0.0
        for ci, ctx in enumerate(self.contexts):
            for t, tg in enumerate(ctx.tri_geoms):
                pts, _ = tg.quad(2 * ctx.k + 2)
                worst = max(worst,
                            np.max(np.abs(self.div_simplex(ci, t, pts))))
        return worst

    def interface_jump_max(self, n_samples=5):
        """Largest normal-component jump over interior mesh faces, sampled
        at interior points of each face from both adjacent cells."""
        incid = {}
        for ci, ctx in enumerate(self.contexts):
            for li, f in enumerate(ctx.fids):
                incid.setdefault(int(f), []).append((ci, li))
        worst = 0.0
        ts = np.linspace(-1.0, 1.0, n_samples + 2)[1:-1]
        for f, lst in incid.items():
            if len(lst) != 2:
                continue
            ctx0 = self.contexts[lst[0][0]]
            fg = ctx0.fgeoms[lst[0][1]]
            pts = fg.midpoint + 0.5 * fg.length * ts[:, None] * fg.tangent
            sides = []
            for ci, li in lst:
                t = int(self.contexts[ci].face_simplex[li])
                sides.append(self.eval_simplex(ci, t, pts) @ fg.normal)
            worst = max(worst, np.max(np.abs(sides[0] - sides[1])))
        return worst
