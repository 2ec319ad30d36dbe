"""Structural invariants of the discretization, measured numerically.

Each check returns the worst residual of one exact identity of the
method over one mesh: commutation of the hybrid interpolant with the
discrete divergence, pointwise divergence preservation and polynomial
exactness of the velocity reconstruction, preservation of the cell
moments of degree k-1, exact skewness of the convective form, and
invariance of the discrete momentum load under irrotational forcing.
The identities hold to round-off by construction, so the thresholds are
absolute.  The suite backs both the test suite and the ``polyhho
proptest`` command.
"""

from dataclasses import dataclass

import numpy as np

from .basis import monomial_exponents, poly_dim
from .forms import Discretization
from .mesh import gen_family
from .rt import reconstruction_map, rt_space
from .solver import free_velocity_mask

__all__ = [
    "FAMILIES", "PropertyResult", "run_property_suite", "format_results",
    "check_commutation", "check_divergence_preservation",
    "check_cell_moment_consistency", "check_polynomial_exactness",
    "check_non_dissipativity", "check_velocity_invariance",
]

FAMILIES = ("cartesian", "hexagonal", "kershaw")


# ---------------------------------------------------------------------------
# polynomial test data
# ---------------------------------------------------------------------------

def _monomial_values(pts, center, h, degree):
    """(npts, nm) design matrix of the monomials ((x - c)/h)^alpha."""
    u = (np.asarray(pts, dtype=float) - center) / h
    e = monomial_exponents(degree)
    return u[:, 0:1] ** e[:, 0] * u[:, 1:2] ** e[:, 1]


def _monomial_grads(pts, center, h, degree):
    """(npts, 2, nm) gradients of the scaled monomials."""
    u = (np.asarray(pts, dtype=float) - center) / h
    e = monomial_exponents(degree)
    out = np.zeros((len(u), 2, len(e)))
    for j, (a, b) in enumerate(e):
        if a:
            out[:, 0, j] = a * u[:, 0] ** (a - 1) * u[:, 1] ** b / h
        if b:
            out[:, 1, j] = b * u[:, 0] ** a * u[:, 1] ** (b - 1) / h
    return out


def _mesh_frame(mesh):
    """Center and diameter scale of the meshed domain."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    return 0.5 * (lo + hi), float(np.max(hi - lo))


def _interpolate_fields(ctx, center, h, degree, C):
    """Hybrid interpolants, one column per field, of the polynomial
    vector fields with monomial coefficients C of shape (2, nm, nfields):
    L2 projections onto the cell and onto every face by quadrature."""
    vec = np.zeros((ctx.n_loc, C.shape[2]))
    qd = 2 * degree + 2
    pts, w = ctx.cell_rule(qd)
    V = _monomial_values(pts, center, h, degree)
    ph = ctx.basis.eval(pts)
    for c in (0, 1):
        vec[ctx.cell_slice(c)] = np.einsum("p,pa,pf->af", w, ph, V @ C[c])
    for i, fb in enumerate(ctx.fbases):
        fpts, fw = ctx.face_rule(i, qd)
        Vf = _monomial_values(fpts, center, h, degree)
        q = fb.eval(fpts)
        for c in (0, 1):
            vec[ctx.face_slice(i, c)] = np.einsum(
                "p,pm,pf->mf", fw, q, Vf @ C[c])
    return vec


# ---------------------------------------------------------------------------
# individual checks: each returns the worst residual, or None if the
# identity is vacuous at this degree
# ---------------------------------------------------------------------------

def check_commutation(disc, rng, n_fields=50):
    """Discrete divergence of the interpolant equals the L2 projection
    of the divergence, coefficientwise, for polynomial fields of degree
    k+2."""
    k = disc.k
    deg = k + 2
    center, h = _mesh_frame(disc.mesh)
    C = rng.standard_normal((2, poly_dim(deg), n_fields))
    worst = 0.0
    for ctx in disc.contexts:
        vec = _interpolate_fields(ctx, center, h, deg, C)
        d_interp = ctx.divergence() @ vec
        pts, w = ctx.cell_rule(2 * deg + 2)
        G = _monomial_grads(pts, center, h, deg)
        div_vals = G[:, 0] @ C[0] + G[:, 1] @ C[1]
        d_proj = np.einsum("p,pa,pf->af", w, ctx.basis.eval(pts), div_vals)
        worst = max(worst, float(np.max(np.abs(d_interp - d_proj))))
    return worst


def check_divergence_preservation(disc, rng, n_vectors=50):
    """The reconstruction of any dof vector has pointwise divergence
    equal to the discrete divergence polynomial."""
    k = disc.k
    worst = 0.0
    for ctx in disc.contexts:
        space = rt_space(ctx)
        vec = rng.standard_normal((ctx.n_loc, n_vectors))
        W = reconstruction_map(ctx) @ vec
        dc = ctx.divergence() @ vec
        for t, tg in enumerate(ctx.tri_geoms):
            pts, _ = tg.quad(2 * k + 2)
            dv = space.point_div_operator(t, pts) @ W
            ref = ctx.basis.eval(pts) @ dc
            worst = max(worst, float(np.max(np.abs(dv - ref))))
    return worst


def check_cell_moment_consistency(disc, rng, n_vectors=50):
    """Moments of degree k-1 of (reconstruction - cell polynomial)
    vanish; vacuous at k = 0."""
    k = disc.k
    if k == 0:
        return None
    worst = 0.0
    for ctx in disc.contexts:
        space = rt_space(ctx)
        vec = rng.standard_normal((ctx.n_loc, n_vectors))
        W = reconstruction_map(ctx) @ vec
        cell = np.stack([vec[ctx.cell_slice(0)], vec[ctx.cell_slice(1)]])
        mom = 0.0
        for t, tg in enumerate(ctx.tri_geoms):
            pts, w = tg.quad(2 * k + 2)
            vals = np.einsum("pcr,rf->pcf", space.point_eval_operator(t, pts),
                             W)
            vals -= np.einsum("pa,caf->pcf", ctx.basis.eval(pts), cell)
            mb = ctx.basis.eval(pts)[:, :poly_dim(k - 1)]
            mom += np.einsum("p,pa,pcf->caf", w, mb, vals)
        norms = np.sqrt(np.sum(mom ** 2, axis=(0, 1)))
        worst = max(worst, float(norms.max()))
    return worst


def check_polynomial_exactness(disc, rng=None):
    """Interpolating then reconstructing reproduces every velocity in
    P^k(T)^2 pointwise (checked on the complete monomial basis)."""
    k = disc.k
    nm = poly_dim(k)
    C = np.zeros((2, nm, 2 * nm))
    C[0, :, :nm] = np.eye(nm)
    C[1, :, nm:] = np.eye(nm)
    worst = 0.0
    for ctx in disc.contexts:
        c0, hT = ctx.geom.centroid, ctx.geom.diameter
        vec = _interpolate_fields(ctx, c0, hT, k, C)
        space = rt_space(ctx)
        W = reconstruction_map(ctx) @ vec
        for t, tg in enumerate(ctx.tri_geoms):
            pts, _ = tg.quad(2 * k + 2)
            vals = np.einsum("pcr,rf->pcf", space.point_eval_operator(t, pts),
                             W)
            V = _monomial_values(pts, c0, hT, k)
            ref = np.stack([V @ C[0], V @ C[1]], axis=1)
            worst = max(worst, float(np.max(np.abs(vals - ref))))
    return worst


def check_non_dissipativity(disc, rng, n_triples=50):
    """The convective form is exactly skew in its last two slots:
    |t(w, v, v)| normalized by ||w|| ||v||^2."""
    n = disc.dofmap.n_v
    worst = 0.0
    for _ in range(n_triples):
        W = rng.standard_normal(n)
        V = rng.standard_normal(n)
        t = disc.trilinear_apply(W, V, V)
        worst = max(worst, abs(t)
                    / (np.linalg.norm(W) * np.linalg.norm(V) ** 2))
    return worst


def check_velocity_invariance(disc, rng):
    """An irrotational body force grad(psi) loads only the pressure: the
    momentum load equals the coupling applied to the projected potential
    on every interior velocity dof, for psi of each degree up to k+3."""
    center, h = _mesh_frame(disc.mesh)
    B = disc.coupling_matrix()
    free = free_velocity_mask(disc)
    worst = 0.0
    for deg in range(1, disc.k + 4):
        c = rng.standard_normal(poly_dim(deg))

        def psi(pts):
            return _monomial_values(pts, center, h, deg) @ c

        def grad_psi(pts):
            return np.einsum("pcm,m->pc",
                             _monomial_grads(pts, center, h, deg), c)

        F = disc.body_force_vector(grad_psi)
        r = F - B.T @ disc.project_pressure(psi)
        scale = max(1.0, float(np.max(np.abs(F))))
        worst = max(worst, float(np.max(np.abs(r[free]))) / scale)
    return worst


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropertyResult:
    """Worst residual of one identity on one mesh at one degree."""
    name: str
    k: int
    family: str
    max_residual: float
    tol: float

    @property
    def passed(self):
        return self.max_residual <= self.tol


_CHECKS = (
    ("commutation", check_commutation, 1e-11),
    ("divergence preservation", check_divergence_preservation, 1e-10),
    ("cell-moment consistency", check_cell_moment_consistency, 1e-10),
    ("polynomial exactness", check_polynomial_exactness, 1e-11),
    ("non-dissipativity", check_non_dissipativity, 1e-12),
    ("velocity invariance", check_velocity_invariance, 1e-11),
)


def run_property_suite(ks=(0, 1, 2), n=4, families=FAMILIES, seed=20240823):
    """Run every check on one mesh per family for each degree."""
    results = []
    for family in families:
        mesh = gen_family(family, n)
        for k in ks:
            disc = Discretization(mesh, k)
            rng = np.random.default_rng(seed)
            for name, fn, tol in _CHECKS:
                r = fn(disc, rng)
                if r is None:
                    continue
                results.append(PropertyResult(name, k, family, r, tol))
    return results


def format_results(results):
    """One PASS/FAIL line per result."""
    return [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} k={r.k}  "
            f"{r.family:<10} max residual {r.max_residual:9.3e}  "
            f"(tol {r.tol:.0e})" for r in results]
