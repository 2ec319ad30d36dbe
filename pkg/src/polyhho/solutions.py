"""Closed-form reference flows and boundary data for the benchmark
studies.

The discretization writes the convective term in rotational form, so the
discrete pressure approximates the Bernoulli pressure p_kin + |u|^2/2;
every exact pressure returned here follows that convention (error norms
normalize both sides to zero mean, so additive constants are free).
"""

import numpy as np


class ExactFlow:
    """An exact steady solution: velocity, Bernoulli pressure, body force
    (None means zero), viscosity, and the bounding box of its domain."""

    def __init__(self, u, p, f, nu, box):
        self.u = u
        self.p = p
        self.f = f
        self.nu = nu
        self.box = box


def kovasznay(nu=0.025):
    """Laminar flow behind a periodic array of cylinders: an exact
    Navier-Stokes solution with zero body force on (-0.5, 1.5) x (0, 2).
    """
    lam = 1.0 / (2.0 * nu) - np.sqrt(
        1.0 / (4.0 * nu ** 2) + 4.0 * np.pi ** 2)

    def u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([
            1.0 - np.exp(lam * x) * np.cos(2.0 * np.pi * y),
            lam / (2.0 * np.pi) * np.exp(lam * x) * np.sin(2.0 * np.pi * y),
        ])

    def p(pts):
        x = pts[:, 0]
        v = u(pts)
        return -0.5 * np.exp(2.0 * lam * x) + 0.5 * np.einsum(
            "pc,pc->p", v, v)

    return ExactFlow(u, p, None, nu, ((-0.5, 0.0), (1.5, 2.0)))


def rotation_with_gradient_force(lam):
    """Rigid rotation u = (-y, x) driven by the irrotational force
    f = (3 lam x^2, 0) at nu = 1 on the unit square.

    The velocity is independent of lam; the force is absorbed by the
    Bernoulli pressure lam x^3 + x^2 + y^2 + C, which makes the problem a
    sharp probe of pressure robustness as lam grows.
    """

    def u(pts):
        return np.column_stack([-pts[:, 1], pts[:, 0]])

    def p(pts):
        x, y = pts[:, 0], pts[:, 1]
        return lam * x ** 3 + x ** 2 + y ** 2

    def f(pts):
        return np.column_stack([
            3.0 * lam * pts[:, 0] ** 2, np.zeros(len(pts))])

    return ExactFlow(u, p, f, 1.0, ((0.0, 0.0), (1.0, 1.0)))


def lid_velocity(pts, top=1.0):
    """Dirichlet datum of the lid-driven cavity: (1, 0) on the top side
    of the unit square, zero elsewhere."""
    g = np.zeros((len(pts), 2))
    g[np.abs(pts[:, 1] - top) < 1e-12, 0] = 1.0
    return g


# named polynomial potentials accepted by the psi=poly:<id> config key;
# each entry maps to (psi, grad psi)
POTENTIALS = {
    "cubic": (
        lambda pts: (pts[:, 0] ** 3 + pts[:, 1] ** 3) / 3.0,
        lambda pts: np.column_stack([pts[:, 0] ** 2, pts[:, 1] ** 2]),
    ),
    "x3": (
        lambda pts: pts[:, 0] ** 3,
        lambda pts: np.column_stack(
            [3.0 * pts[:, 0] ** 2, np.zeros(len(pts))]),
    ),
}


def potential(name):
    """Look up a named potential; accepts both 'cubic' and 'poly:cubic'."""
    key = name.split(":", 1)[1] if ":" in name else name
    if key not in POTENTIALS:
        raise KeyError(
            f"unknown potential {name!r}; known: "
            + ", ".join(sorted(POTENTIALS)))
    return POTENTIALS[key]


def add_gradient_force(flow, lam, name="cubic"):
    """The same flow with lam * grad(psi) added to the body force and
    absorbed into the exact Bernoulli pressure."""
    psi, gpsi = potential(name)

    def f(pts):
        base = (flow.f(pts) if flow.f is not None
                else np.zeros((len(pts), 2)))
        return base + lam * gpsi(pts)

    def p(pts):
        return flow.p(pts) + lam * psi(pts)

    return ExactFlow(flow.u, p, f, flow.nu, flow.box)
