"""Tests for the nonlinear solver: config parsing, Dirichlet handling,
static condensation, and the PTC Newton iteration.

Oracles
-------
* static condensation against a direct sparse factorization of the full
  (uncondensed) linearized system — a dual-path solve;
* manufactured polynomial Stokes and rigid-rotation solutions whose
  interpolates the discrete systems reproduce exactly, so the solver must
  return them to solver precision;
* the residual of the interpolated exact state for the large-gradient
  force problem, which must sit at round-off relative to the data scale.
"""

import numpy as np
import pytest
from scipy.sparse.linalg import splu

from polyhho import gen_cartesian
from polyhho.forms import Discretization
from polyhho.solutions import kovasznay, rotation_with_gradient_force
from polyhho.solver import (CondensedSystem, DEFAULTS, boundary_interpolate,
                            cell_mass_matrix, free_velocity_mask,
                            momentum_residual, parse_config, ptc_newton_solve,
                            retained_count, _linearized)

from test_hho_local import hexagon_mesh

RNG = np.random.default_rng(20240821)


class SteadyProblem:
    def __init__(self, disc, nu, body_force=None, dirichlet=None,
                 convection=True):
        self.disc = disc
        self.nu = nu
        self.body_force = body_force
        self.dirichlet = dirichlet
        self.convection = convection


def flow_problem(flow, mesh, k, mode="robust", convection=True):
    disc = Discretization(mesh, k, mode=mode)
    return SteadyProblem(disc, flow.nu, flow.f, flow.u,
                         convection=convection)


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_full():
    text = """
    # solver settings
    k = 1
    nu = 0.025   # viscosity
    dt0 = 2.5
    stop_tol = 1e-10
    max_iter = 50
    mode = classic
    lambda = 1e6
    psi = poly:cubic
    """
    cfg = parse_config(text)
    assert cfg == {"k": 1, "nu": 0.025, "dt0": 2.5, "stop_tol": 1e-10,
                   "max_iter": 50, "mode": "classic", "lambda": 1e6,
                   "psi": "poly:cubic"}


def test_parse_config_empty_and_errors(tmp_path):
    assert parse_config("\n# nothing\n") == {}
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("viscosity = 1")
    with pytest.raises(ValueError, match="expected key=value"):
        parse_config("k 1")
    with pytest.raises(ValueError, match="mode must be"):
        parse_config("mode = fast")
    with pytest.raises(ValueError, match="psi must be"):
        parse_config("psi = cubic")
    path = tmp_path / "run.cfg"
    path.write_text("k = 2\nnu = 1.0\n")
    assert parse_config(str(path)) == {"k": 2, "nu": 1.0}


# ---------------------------------------------------------------------------
# boundary data


def test_boundary_interpolate_zero():
    disc = Discretization(gen_cartesian(2), 1)
    U = boundary_interpolate(disc, lambda pts: np.zeros((len(pts), 2)))
    assert np.all(U == 0.0)


def test_boundary_interpolate_matches_global_interpolate():
    disc = Discretization(gen_cartesian(2), 1)
    g = lambda pts: np.column_stack([
        pts[:, 0] * pts[:, 1], pts[:, 0] - pts[:, 1] ** 2])
    U = boundary_interpolate(disc, g)
    ref = disc.interpolate(g)
    for f in range(disc.mesh.face_cells.shape[0]):
        dofs = disc.dofmap.face_v(f)
        if disc.mesh.boundary_faces[f]:
            assert np.max(np.abs(U[dofs] - ref[dofs])) < 1e-13
        else:
            assert np.all(U[dofs] == 0.0)
    assert np.all(U[:disc.dofmap.n_cell_v] == 0.0)


def test_boundary_interpolate_lid():
    from polyhho.solutions import lid_velocity
    disc = Discretization(gen_cartesian(3), 0)
    U = boundary_interpolate(disc, lid_velocity)
    mesh = disc.mesh
    for f in np.flatnonzero(mesh.boundary_faces):
        ci = int(mesh.face_cells[f][mesh.face_cells[f] >= 0][0])
        ctx = disc.contexts[ci]
        i = list(ctx.fids).index(f)
        mid = ctx.fgeoms[i].midpoint
        h = ctx.fgeoms[i].length
        coeffs = U[disc.dofmap.face_v(f)]
        if abs(mid[1] - 1.0) < 1e-12:  # lid: constant (1, 0)
            assert abs(coeffs[0] - np.sqrt(h)) < 1e-13
            assert abs(coeffs[1]) < 1e-13
        else:
            assert np.max(np.abs(coeffs)) < 1e-13


def test_free_mask_counts():
    disc = Discretization(gen_cartesian(3), 1)
    free = free_velocity_mask(disc)
    nb = int(np.sum(disc.mesh.boundary_faces))
    assert free.sum() == disc.dofmap.n_v - 2 * (disc.k + 1) * nb
    M = cell_mass_matrix(disc)
    U = RNG.standard_normal(disc.dofmap.n_v)
    MU = M @ U
    assert np.allclose(MU[:disc.dofmap.n_cell_v],
                       U[:disc.dofmap.n_cell_v])
    assert np.all(MU[disc.dofmap.n_cell_v:] == 0.0)


# ---------------------------------------------------------------------------
# static condensation


def linearized_at_random_state(disc, nu, dt):
    free = free_velocity_mask(disc)
    U = RNG.standard_normal(disc.dofmap.n_v)
    A = disc.viscous_matrix()
    B = disc.coupling_matrix()
    Mc = cell_mass_matrix(disc)
    S, nvf = _linearized(disc, A, B, Mc, free, nu, U, dt, True)
    rhs = RNG.standard_normal(S.shape[0])
    return S, rhs, free


@pytest.mark.parametrize("maker,k", [
    (lambda: gen_cartesian(2), 1),
    (hexagon_mesh, 2),
])
def test_condensed_solve_matches_direct(maker, k):
    disc = Discretization(maker(), k)
    S, rhs, free = linearized_at_random_state(disc, nu=0.3, dt=0.7)
    cond = CondensedSystem(disc, S, rhs, free)
    x = cond.solve()
    ref = splu(S.tocsc()).solve(rhs)
    scale = np.linalg.norm(ref)
    assert np.linalg.norm(x - ref) < 1e-11 * scale
    assert np.linalg.norm(S @ x - rhs) < 1e-10 * max(
        1.0, np.linalg.norm(rhs))


def test_condensed_counts():
    disc = Discretization(gen_cartesian(4), 1)
    S, rhs, free = linearized_at_random_state(disc, nu=1.0, dt=1.0)
    cond = CondensedSystem(disc, S, rhs, free)
    mesh = disc.mesh
    n_int = int(np.sum(~mesh.boundary_faces))
    n_cells = len(disc.contexts)
    assert retained_count(disc) == 2 * 2 * n_int + n_cells + 1
    assert cond.n_retained == retained_count(disc)


def test_condensed_single_cell_no_dirichlet():
    # with every dof free, the condensed system keeps the face dofs, one
    # pressure dof, and the multiplier
    disc = Discretization(gen_cartesian(1), 1)
    A = disc.viscous_matrix()
    B = disc.coupling_matrix()
    Mc = cell_mass_matrix(disc)
    free = np.ones(disc.dofmap.n_v, dtype=bool)
    U = RNG.standard_normal(disc.dofmap.n_v)
    S, nvf = _linearized(disc, A, B, Mc, free, 1.0, U, 1.0, True)
    rhs = RNG.standard_normal(S.shape[0])
    cond = CondensedSystem(disc, S, rhs, free)
    assert cond.n_retained == 2 * (disc.k + 1) * 4 + 1 + 1


# ---------------------------------------------------------------------------
# PTC Newton solve


def test_zero_problem_zero_solution():
    disc = Discretization(gen_cartesian(2), 1)
    state = ptc_newton_solve(SteadyProblem(disc, 1.0))
    assert state.converged
    assert state.iterations == 0
    assert np.all(state.U == 0.0) and np.all(state.P == 0.0)


def test_stokes_polynomial_one_step():
    # Stokes with u = (y^2, x^2), p = x - 1/2: at k = 1 the discrete
    # problem reproduces the pair exactly, and without convection the
    # first linear solve lands on it
    nu = 0.7
    u = lambda pts: np.column_stack([pts[:, 1] ** 2, pts[:, 0] ** 2])
    p = lambda pts: pts[:, 0] - 0.5
    f = lambda pts: np.tile([-2.0 * nu + 1.0, -2.0 * nu],
                            (len(pts), 1))
    disc = Discretization(gen_cartesian(3), 1)
    state = ptc_newton_solve(
        SteadyProblem(disc, nu, f, u, convection=False))
    assert state.converged
    assert state.iterations <= 2
    assert np.max(np.abs(state.U - disc.interpolate(u))) < 1e-9
    Pref = disc.zero_pressure_mean(disc.project_pressure(p))
    assert np.max(np.abs(disc.zero_pressure_mean(state.P) - Pref)) < 1e-9
    for rm, rmass in state.history[1:]:
        assert rmass < 1e-10


def test_rotation_solution_exact_at_k1():
    flow = rotation_with_gradient_force(0.0)
    state = ptc_newton_solve(flow_problem(flow, gen_cartesian(2), 1))
    assert state.converged
    disc = Discretization(gen_cartesian(2), 1)
    assert np.linalg.norm(state.U - disc.interpolate(flow.u)) < 1e-8
    for rm, rmass in state.history[1:]:
        assert rmass < 1e-10


def test_interpolated_state_residual_large_lambda():
    # interpolate the exact rigid rotation and its Bernoulli pressure at
    # lambda = 1e6: the free-dof momentum residual must be at round-off
    # relative to the data scale
    lam = 1e6
    flow = rotation_with_gradient_force(lam)
    disc = Discretization(gen_cartesian(4), 1)
    from polyhho.solver import free_velocity_mask as fvm
    A = disc.viscous_matrix()
    B = disc.coupling_matrix()
    F = disc.body_force_vector(flow.f)
    U = disc.interpolate(flow.u)
    P = disc.project_pressure(flow.p)
    r = momentum_residual(disc, A, B, F, flow.nu, U, P, True)[fvm(disc)]
    scale = max(np.linalg.norm(F), 1.0)
    assert np.linalg.norm(r) < 1e-12 * scale


def test_solver_determinism():
    flow = rotation_with_gradient_force(10.0)
    runs = []
    for _ in range(2):
        state = ptc_newton_solve(flow_problem(flow, gen_cartesian(2), 1))
        runs.append(state.history)
    assert runs[0] == runs[1]


def test_max_iter_report():
    flow = kovasznay()
    mesh = gen_cartesian(2, box=flow.box)
    state = ptc_newton_solve(flow_problem(flow, mesh, 0), max_iter=1)
    assert not state.converged
    assert "max_iter" in state.message
    assert len(state.history) == 2


def test_kovasznay_residual_history():
    flow = kovasznay()
    mesh = gen_cartesian(8, box=flow.box)
    state = ptc_newton_solve(flow_problem(flow, mesh, 1))
    assert state.converged
    res = [rm for rm, _ in state.history]
    # strictly decreasing after an initial transient of at most 3 steps
    drops = [i for i in range(1, len(res)) if res[i] >= res[i - 1]]
    assert all(i <= 3 for i in drops)
    assert res[-1] < DEFAULTS["stop_tol"]
    for rm, rmass in state.history[1:]:
        assert rmass < 1e-9
