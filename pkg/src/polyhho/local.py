"""Cell-local building blocks of the hybrid velocity discretization.

Velocity unknowns attached to a cell T are polynomial coefficients in
L2-orthonormal bases:

* a cell part v_T in P^k(T)^2,
* a face part v_F in P^k(F)^2 for every face F of T (boundary faces carry
  dofs too; essential boundary conditions zero them at the solver level).

The flat local vector is laid out block-wise, x component before y inside
each block::

    [ cell x | cell y | face0 x | face0 y | face1 x | face1 y | ... ]

:class:`CellContext` caches the geometry, bases and quadrature of one cell
and builds the local operator matrices on first use: the discrete
divergence, the gradient reconstructions (cell test space and per-simplex
test space on the fan subtriangulation), the potential reconstruction, the
jump stabilization and the discrete H1-like seminorm.  All matrices depend
only on the geometry and the degree, so contexts can be built for any
number of cells independently.

:class:`GlobalDofMap` fixes the matching mesh-wide layout: all cell
velocity blocks first, then all face blocks, plus one pressure coefficient
block of dim P^k(T) per cell.
"""

import numpy as np
from scipy.linalg import solve

from .basis import (CellGeometry, FaceBasis, FaceGeometry, ScaledBasis2D,
                    TriGeometry, l2_project, poly_dim)
from .mesh import subtriangulate


class LocalDofs:
    """Structured view of one cell's flat velocity dof vector."""

    def __init__(self, ctx, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (ctx.n_loc,):
            raise ValueError(
                f"expected {ctx.n_loc} local dofs, got shape {vec.shape}")
        self.ctx = ctx
        self.vec = vec

    @property
    def v_T(self):
        """(2, dim P^k(T)) cell coefficients."""
        return self.vec[:2 * self.ctx.nk].reshape(2, self.ctx.nk)

    def v_F(self, i):
        """(2, k+1) coefficients on the cell's i-th face."""
        s = 2 * self.ctx.nk + 2 * self.ctx.nfk * i
        return self.vec[s:s + 2 * self.ctx.nfk].reshape(2, self.ctx.nfk)


class CellContext:
    """Geometry, bases, quadrature and local operators of one cell."""

    def __init__(self, mesh, ci, k):
        if k < 0:
            raise ValueError("polynomial degree must be >= 0")
        self.mesh = mesh
        self.ci = ci
        self.k = k

        sub = subtriangulate(mesh)
        self.tri_ids = sub.simplices[ci]
        self.tri_pts = mesh.vertices[self.tri_ids]
        self.tri_geoms = [TriGeometry(p) for p in self.tri_pts]
        self.geom = CellGeometry(mesh.cell_points(ci), self.tri_pts,
                                 centroid=mesh.cell_centroid[ci],
                                 diameter=mesh.cell_diameter[ci])
        self.fan_point = mesh.vertices[sub.fan_vertex[ci]]
        self.face_simplex = sub.face_simplex[ci]
        self.interior_subfaces = sub.interior_subfaces[ci]

        fids, fsigns = mesh.cell_faces[ci]
        self.fids = fids
        self.fsigns = fsigns.astype(float)
        # faces keep their mesh-wide orientation so that the two cells
        # sharing a face see the same face basis; outward normals differ
        # by the stored sign only
        self.fgeoms = [FaceGeometry(mesh.vertices[a], mesh.vertices[b])
                       for a, b in mesh.faces[fids]]
        self.normals = np.array([s * fg.normal for s, fg
                                 in zip(self.fsigns, self.fgeoms)])
        self.h_F = np.array([fg.length for fg in self.fgeoms])

        self.nk = poly_dim(k)
        self.nk1 = poly_dim(k + 1)
        self.nfk = k + 1
        self.n_faces = len(fids)
        self.n_loc = 2 * self.nk + 2 * self.nfk * self.n_faces

        self.basis = ScaledBasis2D(self.geom, k)
        self.basis_up = ScaledBasis2D(self.geom, k + 1)
        self.fbases = [FaceBasis(fg, k) for fg in self.fgeoms]

        self._cell_rules = {}
        self._face_rules = {}
        self._cache = {}

    # -- dof layout ------------------------------------------------------

    def cell_slice(self, comp):
        return slice(comp * self.nk, (comp + 1) * self.nk)

    def face_slice(self, i, comp):
        s = 2 * self.nk + 2 * self.nfk * i + comp * self.nfk
        return slice(s, s + self.nfk)

    def cell_dofs(self, comp):
        return np.arange(comp * self.nk, (comp + 1) * self.nk)

    def face_dofs(self, i, comp):
        s = 2 * self.nk + 2 * self.nfk * i + comp * self.nfk
        return np.arange(s, s + self.nfk)

    def scalar_dofs(self, comp):
        """Vector-layout indices of one component's scalar dofs, cell block
        first, then the face blocks (the layout of the scalar operators)."""
        parts = [self.cell_dofs(comp)]
        parts += [self.face_dofs(i, comp) for i in range(self.n_faces)]
        return np.concatenate(parts)

    @property
    def n_scalar(self):
        return self.nk + self.nfk * self.n_faces

    # -- quadrature cache ------------------------------------------------

    def cell_rule(self, degree):
        if degree not in self._cell_rules:
            self._cell_rules[degree] = self.geom.quad(degree)
        return self._cell_rules[degree]

    def face_rule(self, i, degree):
        key = (i, degree)
        if key not in self._face_rules:
            self._face_rules[key] = self.fgeoms[i].quad(degree)
        return self._face_rules[key]

    # -- interpolation ---------------------------------------------------

    def interpolate(self, f, quad_degree=None):
        """Hybrid interpolant of a vector field: L2 projections onto the
        cell and onto every face.  f maps (npts, 2) points to (npts, 2)."""
        vec = np.zeros(self.n_loc)
        for comp in (0, 1):
            def g(pts, c=comp):
                return np.asarray(f(pts), dtype=float)[:, c]
            vec[self.cell_slice(comp)] = l2_project(g, self.basis,
                                                    quad_degree)
            for i, fb in enumerate(self.fbases):
                vec[self.face_slice(i, comp)] = l2_project(g, fb,
                                                           quad_degree)
        return vec

    # -- discrete divergence ---------------------------------------------

    def divergence(self):
        """Matrix (dim P^k(T), n_loc) of the discrete divergence, rows in
        the orthonormal cell basis, defined by testing against q in P^k(T):

            (D v, q)_T = -(v_T, grad q)_T + sum_F (v_F . n_TF, q)_F.
        """
        if "D" not in self._cache:
            D = np.zeros((self.nk, self.n_loc))
            pts, w = self.cell_rule(2 * self.k)
            phi = self.basis.eval(pts)
            dphi = self.basis.grad(pts)
            for comp in (0, 1):
                D[:, self.cell_slice(comp)] = -np.einsum(
                    "p,pj,pa->aj", w, phi, dphi[:, comp, :])
            for i in range(self.n_faces):
                fpts, fw = self.face_rule(i, 2 * self.k)
                chi = self.fbases[i].eval(fpts)
                q = self.basis.eval(fpts)
                m = np.einsum("p,pm,pa->am", fw, chi, q)
                for comp in (0, 1):
                    D[:, self.face_slice(i, comp)] += \
                        self.normals[i, comp] * m
            self._cache["D"] = D
        return self._cache["D"]

    # -- gradient reconstructions ----------------------------------------

    def _gradient_block(self, tb, vol_rule, faces):
        """Moments (2, 2, dim tb, n_loc) of the gradient relation

            (G v, tau)_T = (grad v_T, tau)_T
                           + sum_F ((v_F - v_T) (x) n_TF, tau)_F

        against an orthonormal scalar test basis tb (one tensor component
        at a time), with the volume integral over vol_rule's support and
        the face sum restricted to the given parent faces.  Entry order is
        (velocity component, derivative direction, test index, dof)."""
        pts, w = vol_rule
        psi = tb.eval(pts)
        dphi = self.basis.grad(pts)
        vol = np.einsum("p,pb,pcj->cbj", w, psi, dphi)
        G = np.zeros((2, 2, tb.dim, self.n_loc))
        for r in (0, 1):
            G[r, :, :, self.cell_slice(r)] = vol
        for i in faces:
            fpts, fw = self.face_rule(i, self.k + tb.degree)
            psi_f = tb.eval(fpts)
            chi = self.fbases[i].eval(fpts)
            phi_f = self.basis.eval(fpts)
            mf = np.einsum("p,pb,pm->bm", fw, psi_f, chi)
            mc = np.einsum("p,pb,pj->bj", fw, psi_f, phi_f)
            n = self.normals[i]
            for r in (0, 1):
                for c in (0, 1):
                    G[r, c, :, self.face_slice(i, r)] += n[c] * mf
                    G[r, c, :, self.cell_slice(r)] -= n[c] * mc
        return G

    def gradient_cell(self):
        """(2, 2, dim P^k(T), n_loc) gradient reconstruction with the cell
        test space P^k(T)^{2x2} (the one entering the viscous term)."""
        if "Gcell" not in self._cache:
            self._cache["Gcell"] = self._gradient_block(
                self.basis, self.cell_rule(2 * self.k),
                range(self.n_faces))
        return self._cache["Gcell"]

    def gradient_submesh(self, l=None):
        """Gradient reconstruction with piecewise test space P^l on the fan
        subtriangulation (default l = 2(k+1), the convective-term degree).
        Returns one (basis, matrix) pair per simplex; each matrix is shaped
        (2, 2, dim P^l, n_loc) and gives the orthonormal coefficients of
        the reconstructed gradient on that simplex."""
        if l is None:
            l = 2 * (self.k + 1)
        key = ("Gsub", l)
        if key not in self._cache:
            blocks = []
            for t, tg in enumerate(self.tri_geoms):
                tb = ScaledBasis2D(tg, l)
                rule = tg.quad(l + max(self.k - 1, 0))
                faces = [i for i in range(self.n_faces)
                         if self.face_simplex[i] == t]
                blocks.append((tb, self._gradient_block(tb, rule, faces)))
            self._cache[key] = blocks
        return self._cache[key]

    # -- potential reconstruction and stabilization ------------------------

    def potential(self):
        """Scalar potential-reconstruction matrix (dim P^{k+1}(T),
        n_scalar): coefficients of p in the orthonormal P^{k+1} basis
        solving, for every w in P^{k+1}(T),

            (grad p, grad w)_T = (grad v_T, grad w)_T
                                 + sum_F (v_F - v_T, grad w . n_TF)_F

        closed by the mean constraint int_T p = int_T v_T.  Acts on the
        scalar dof layout (one velocity component at a time)."""
        if "P" not in self._cache:
            ns = self.n_scalar
            pts, w = self.cell_rule(2 * self.k)
            g_up = self.basis_up.grad(pts)
            g_lo = self.basis.grad(pts)
            K = np.einsum("p,pca,pcb->ab", w, g_up, g_up)
            rhs = np.zeros((self.nk1, ns))
            rhs[:, :self.nk] = np.einsum("p,pca,pcj->aj", w, g_up, g_lo)
            for i in range(self.n_faces):
                fpts, fw = self.face_rule(i, 2 * self.k)
                gn = np.einsum("pca,c->pa", self.basis_up.grad(fpts),
                               self.normals[i])
                chi = self.fbases[i].eval(fpts)
                phi_f = self.basis.eval(fpts)
                fs = slice(self.nk + i * self.nfk,
                           self.nk + (i + 1) * self.nfk)
                rhs[:, fs] += np.einsum("p,pm,pa->am", fw, chi, gn)
                rhs[:, :self.nk] -= np.einsum("p,pj,pa->aj", fw, phi_f, gn)
            # both bases start with the normalized constant, so the
            # stiffness kernel is exactly the first coefficient and the
            # mean constraint pins it to the cell dof's first coefficient
            P = np.zeros((self.nk1, ns))
            P[0, 0] = 1.0
            P[1:] = solve(K[1:, 1:], rhs[1:], assume_a="pos")
            self._cache["P"] = P
        return self._cache["P"]

    def projection_to_cell(self):
        """(dim P^k, dim P^{k+1}) matrix of the L2 projection onto P^k(T)
        of a field given in the orthonormal P^{k+1}(T) basis."""
        if "proj" not in self._cache:
            pts, w = self.cell_rule(2 * self.k + 2)
            self._cache["proj"] = np.einsum(
                "p,pa,pb->ab", w, self.basis.eval(pts),
                self.basis_up.eval(pts))
        return self._cache["proj"]

    def stabilization_factors(self):
        """Per-face jump operators of the stabilization: a list of pairs
        (h_F^{-1}, Delta) with Delta of shape (2(k+1), n_loc) mapping local
        dofs to the face-basis coefficients of

            delta_F v = pi_F^k( v_F - p|_F - pi_T^k(v_T - p)|_F )

        for both components (p the potential reconstruction), so that
        s_T(u, v) = sum_F h_F^{-1} (Delta_F u) . (Delta_F v)."""
        if "Sfac" not in self._cache:
            P = self.potential()
            ns = self.n_scalar
            W = np.zeros((self.nk, ns))
            W[:, :self.nk] = np.eye(self.nk)
            W -= self.projection_to_cell() @ P
            factors = []
            for i in range(self.n_faces):
                fpts, fw = self.face_rule(i, 2 * self.k + 2)
                chi = self.fbases[i].eval(fpts)
                tr_up = np.einsum("p,pm,pb->mb", fw, chi,
                                  self.basis_up.eval(fpts))
                tr_lo = np.einsum("p,pm,pj->mj", fw, chi,
                                  self.basis.eval(fpts))
                delta = -tr_up @ P - tr_lo @ W
                fs = slice(self.nk + i * self.nfk,
                           self.nk + (i + 1) * self.nfk)
                delta[:, fs] += np.eye(self.nfk)
                D = np.zeros((2 * self.nfk, self.n_loc))
                for comp in (0, 1):
                    rows = slice(comp * self.nfk, (comp + 1) * self.nfk)
                    D[rows, self.scalar_dofs(comp)] = delta
                factors.append((1.0 / self.h_F[i], D))
            self._cache["Sfac"] = factors
        return self._cache["Sfac"]

    def stabilization(self):
        """(n_loc, n_loc) symmetric PSD matrix of the jump stabilization

            s_T(u, v) = sum_F h_F^{-1} (delta_F u, delta_F v)_F.

        Vanishes on hybrid interpolants of P^{k+1}(T)^2 fields; when that
        cancellation matters numerically, evaluate through
        :meth:`stabilization_value`, which applies the face factors before
        squaring instead of going through the assembled matrix."""
        if "S" not in self._cache:
            S = np.zeros((self.n_loc, self.n_loc))
            for hinv, D in self.stabilization_factors():
                S += hinv * (D.T @ D)
            self._cache["S"] = S
        return self._cache["S"]

    def stabilization_value(self, u, v=None):
        """s_T(u, v) evaluated in factored form (exact cancellation on
        interpolated P^{k+1} fields down to round-off of the jumps)."""
        u = np.asarray(u, dtype=float)
        v = u if v is None else np.asarray(v, dtype=float)
        return float(sum(hinv * np.dot(D @ u, D @ v)
                         for hinv, D in self.stabilization_factors()))

    # -- seminorm ----------------------------------------------------------

    def seminorm_matrix(self):
        """(n_loc, n_loc) PSD matrix of the discrete H1-like seminorm

            |v|_{1,T}^2 = ||grad v_T||_T^2 + sum_F h_F^{-1} ||v_F - v_T||_F^2.
        """
        if "N1" not in self._cache:
            ns = self.n_scalar
            pts, w = self.cell_rule(2 * self.k)
            g = self.basis.grad(pts)
            Ns = np.zeros((ns, ns))
            Ns[:self.nk, :self.nk] = np.einsum("p,pca,pcb->ab", w, g, g)
            for i in range(self.n_faces):
                fpts, fw = self.face_rule(i, 2 * self.k)
                chi = self.fbases[i].eval(fpts)
                phi_f = self.basis.eval(fpts)
                m_fc = np.einsum("p,pm,pj->mj", fw, chi, phi_f)
                m_cc = np.einsum("p,pi,pj->ij", fw, phi_f, phi_f)
                hinv = 1.0 / self.h_F[i]
                fs = slice(self.nk + i * self.nfk,
                           self.nk + (i + 1) * self.nfk)
                # the face basis is orthonormal, so its own mass is identity
                Ns[fs, fs] += hinv * np.eye(self.nfk)
                Ns[fs, :self.nk] -= hinv * m_fc
                Ns[:self.nk, fs] -= hinv * m_fc.T
                Ns[:self.nk, :self.nk] += hinv * m_cc
            N = np.zeros((self.n_loc, self.n_loc))
            for comp in (0, 1):
                idx = self.scalar_dofs(comp)
                N[np.ix_(idx, idx)] = Ns
            self._cache["N1"] = N
        return self._cache["N1"]

    def seminorm_1T(self, vec):
        vec = np.asarray(vec, dtype=float)
        return float(np.sqrt(max(vec @ self.seminorm_matrix() @ vec, 0.0)))


class GlobalDofMap:
    """Mesh-wide unknown layout at degree k.

    Velocity: all cell blocks first (2 dim P^k(T) coefficients per cell),
    then all face blocks (2 (k+1) per face, boundary faces included).
    Pressure: one block of dim P^k(T) coefficients per cell, indexed
    separately from the velocity.
    """

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.k = k
        self.nk = poly_dim(k)
        self.nfk = k + 1
        self.cell_block = 2 * self.nk
        self.face_block = 2 * self.nfk
        self.n_cell_v = mesh.n_cells * self.cell_block
        self.n_v = self.n_cell_v + mesh.n_faces * self.face_block
        self.n_p = mesh.n_cells * self.nk

    def cell_v(self, ci):
        return np.arange(ci * self.cell_block, (ci + 1) * self.cell_block)

    def face_v(self, f):
        s = self.n_cell_v + f * self.face_block
        return np.arange(s, s + self.face_block)

    def pressure(self, ci):
        return np.arange(ci * self.nk, (ci + 1) * self.nk)

    def gather(self, ci):
        """Global velocity indices of cell ci's local dofs, in the local
        block order (cell block, then faces in cell_faces order)."""
        fids, _ = self.mesh.cell_faces[ci]
        return np.concatenate([self.cell_v(ci)]
                              + [self.face_v(f) for f in fids])


def build_contexts(mesh, k):
    """One CellContext per cell (cells are independent of each other)."""
    return [CellContext(mesh, ci, k) for ci in range(mesh.n_cells)]


def interpolate_global(f, contexts, dofmap):
    """Global hybrid interpolant of a vector field in the velocity layout.

    Shared faces are written once per adjacent cell with identical values,
    since both cells project onto the same mesh-oriented face basis."""
    U = np.zeros(dofmap.n_v)
    for ctx in contexts:
        U[dofmap.gather(ctx.ci)] = ctx.interpolate(f)
    return U


def seminorm_1h(contexts, dofmap, U):
    """Global discrete H1-like seminorm: root of the sum of cell squares."""
    total = 0.0
    for ctx in contexts:
        v = U[dofmap.gather(ctx.ci)]
        total += v @ ctx.seminorm_matrix() @ v
    return float(np.sqrt(max(total, 0.0)))
