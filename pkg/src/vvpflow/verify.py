"""Manufactured solutions, error norms, convergence studies, cavity demo.

Velocity errors are measured in the combined norm
(||e||^2 + ||curl e||^2 + ||div e||^2)^(1/2); vorticity and pressure in
plain L2.  Exact fields are evaluated analytically at elevated-degree
quadrature points, never interpolated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import ProblemCoefficients, SystemAssembler, default_quad_degree
from .mesh import Mesh, build_structured, geometry_arrays
from .quadrature import physical_points, quadrature
from .solver import NonlinearSettings, SolveReport, solve_newton, solve_picard
from .spaces import DiscreteField, eval_field, method_spaces, tabulate


@dataclass(eq=False)
class ManufacturedCase:
    """Closed-form solution triple with enough derivatives to build f.

    All callables are vectorized over coordinate arrays; vector-valued
    ones return a trailing component axis (gradients return (..., 2, 2)
    with grad[..., i, j] = d u_i / d x_j).  The velocity must be
    divergence free and ``omega`` its scalar curl.
    """

    name: str
    rect: tuple[float, float, float, float]
    u: callable
    grad_u: callable
    p: callable
    grad_p: callable
    omega: callable
    grad_omega: callable
    nu: callable
    grad_nu: callable
    sigma: callable
    nu0: float
    nu1: float
    sigma0: float
    sigma1: float
    pressure_integral: float = 0.0
    f: callable = field(default=None)

    def __post_init__(self):
        if self.f is None:
            self.f = lambda x, y: forcing_from_momentum(self, x, y)


def forcing_from_momentum(case: ManufacturedCase, x, y) -> np.ndarray:
    """Body force making the case an exact solution of the momentum balance:

    f = sigma u + nu curl omega + (u . grad) u - 2 eps(u) grad nu + grad p,

    where curl of the scalar vorticity is (dy omega, -dx omega) and
    eps(u) is the symmetric velocity gradient.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(case.u(x, y), dtype=float)
    gu = np.asarray(case.grad_u(x, y), dtype=float)
    gw = np.asarray(case.grad_omega(x, y), dtype=float)
    gp = np.asarray(case.grad_p(x, y), dtype=float)
    nu = np.asarray(case.nu(x, y), dtype=float)
    gnu = np.asarray(case.grad_nu(x, y), dtype=float)
    sig = np.asarray(case.sigma(x, y), dtype=float)

    curl_w = np.stack([gw[..., 1], -gw[..., 0]], axis=-1)
    conv = np.einsum("...ij,...j->...i", gu, u)
    eps = 0.5 * (gu + np.swapaxes(gu, -1, -2))
    eps_gnu = np.einsum("...ij,...j->...i", eps, gnu)
    return sig[..., None] * u + nu[..., None] * curl_w + conv - 2.0 * eps_gnu + gp


def example1_case_2d(nu0: float = 0.1, nu1: float = 1.0, perm: float = 0.1) -> ManufacturedCase:
    """Smooth manufactured flow on the unit square with oscillatory viscosity.

    u = (cos(pi x) sin(pi y), -sin(pi x) cos(pi y)),
    p = sin(pi x) sin(pi y),
    nu = nu0 + (nu1 - nu0) cos^2(pi x y),    sigma = nu / perm.
    """
    pi = np.pi
    dnu = nu1 - nu0

    def u(x, y):
        return np.stack([np.cos(pi * x) * np.sin(pi * y), -np.sin(pi * x) * np.cos(pi * y)], axis=-1)

    def grad_u(x, y):
        sx, cx = np.sin(pi * x), np.cos(pi * x)
        sy, cy = np.sin(pi * y), np.cos(pi * y)
        g = np.empty(np.shape(x) + (2, 2))
        g[..., 0, 0] = -pi * sx * sy
        g[..., 0, 1] = pi * cx * cy
        g[..., 1, 0] = -pi * cx * cy
        g[..., 1, 1] = pi * sx * sy
        return g

    def p(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def grad_p(x, y):
        return np.stack(
            [pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)], axis=-1
        )

    def omega(x, y):
        return -2.0 * pi * np.cos(pi * x) * np.cos(pi * y)

    def grad_omega(x, y):
        return np.stack(
            [
                2.0 * pi**2 * np.sin(pi * x) * np.cos(pi * y),
                2.0 * pi**2 * np.cos(pi * x) * np.sin(pi * y),
            ],
            axis=-1,
        )

    def nu(x, y):
        return nu0 + dnu * np.cos(pi * x * y) ** 2

    def grad_nu(x, y):
        s2 = np.sin(2.0 * pi * x * y)
        return np.stack([-pi * dnu * s2 * y, -pi * dnu * s2 * x], axis=-1)

    def sigma(x, y):
        return nu(x, y) / perm

    return ManufacturedCase(
        name="example1-2d",
        rect=(0.0, 0.0, 1.0, 1.0),
        u=u,
        grad_u=grad_u,
        p=p,
        grad_p=grad_p,
        omega=omega,
        grad_omega=grad_omega,
        nu=nu,
        grad_nu=grad_nu,
        sigma=sigma,
        nu0=nu0,
        nu1=nu1,
        sigma0=nu0 / perm,
        sigma1=nu1 / perm,
        pressure_integral=4.0 / np.pi**2,
    )


def coefficients_from_case(
    case: ManufacturedCase, kappa1: float | None = None, kappa2: float | None = None
) -> ProblemCoefficients:
    """Problem data for a case, with the standard augmentation weights
    kappa1 = (2/3) nu0 and kappa2 = nu0 / 2 unless overridden."""
    return ProblemCoefficients(
        nu=case.nu,
        grad_nu=case.grad_nu,
        sigma=case.sigma,
        f=case.f,
        kappa1=(2.0 / 3.0) * case.nu0 if kappa1 is None else kappa1,
        kappa2=0.5 * case.nu0 if kappa2 is None else kappa2,
        nu0=case.nu0,
        nu1=case.nu1,
        sigma0=case.sigma0,
        sigma1=case.sigma1,
    )


# ---------------------------------------------------------------------------
# norms


def _quad_loop(mesh: Mesh, degree: int):
    rule = quadrature(degree)
    jac, inv, det = geometry_arrays(mesh)
    chunk = 512
    for c0 in range(0, mesh.n_cells, chunk):
        cells = np.arange(c0, min(c0 + chunk, mesh.n_cells))
        wdet = rule.weights[None, :] * det[cells, None]
        xq = physical_points(rule, jac[cells], mesh.vertices[mesh.cells[cells, 0]])
        yield cells, wdet, xq, inv[cells], rule


def l2_error(field: DiscreteField, exact, quad_degree: int) -> float:
    """L2 distance between a discrete field and an analytic function."""
    mesh = field.space.mesh
    rule = quadrature(quad_degree)
    tab = tabulate(field.space, rule.points)
    total = 0.0
    for cells, wdet, xq, inv, _ in _quad_loop(mesh, quad_degree):
        vals = eval_field(field, tab, cells, inv)
        diff = vals - np.asarray(exact(xq[..., 0], xq[..., 1]), dtype=float)
        if field.space.vector:
            total += float(np.einsum("cq,cqi,cqi->", wdet, diff, diff))
        else:
            total += float(np.einsum("cq,cq,cq->", wdet, diff, diff))
    return math.sqrt(total)


def velocity_error_norm(u_h: DiscreteField, case: ManufacturedCase, quad_degree: int) -> float:
    """Combined velocity error: L2 of the value, curl and divergence
    mismatches (the exact field is solenoidal with curl = case.omega)."""
    mesh = u_h.space.mesh
    rule = quadrature(quad_degree)
    tab = tabulate(u_h.space, rule.points)
    total = 0.0
    for cells, wdet, xq, inv, _ in _quad_loop(mesh, quad_degree):
        vals, grads = eval_field(u_h, tab, cells, inv, grad=True)
        diff = vals - np.asarray(case.u(xq[..., 0], xq[..., 1]), dtype=float)
        curl_h = grads[..., 1, 0] - grads[..., 0, 1]
        div_h = grads[..., 0, 0] + grads[..., 1, 1]
        dcurl = curl_h - np.asarray(case.omega(xq[..., 0], xq[..., 1]), dtype=float)
        total += float(np.einsum("cq,cqi,cqi->", wdet, diff, diff))
        total += float(np.einsum("cq,cq,cq->", wdet, dcurl, dcurl))
        total += float(np.einsum("cq,cq,cq->", wdet, div_h, div_h))
    return math.sqrt(total)


def error_norms(u_h: DiscreteField, w_h: DiscreteField, p_h: DiscreteField, case: ManufacturedCase, quad_degree: int | None = None):
    """(e_u, e_w, e_p) against the case, at assembly degree + 3."""
    if quad_degree is None:
        quad_degree = default_quad_degree(u_h.space) + 3
    e_u = velocity_error_norm(u_h, case, quad_degree)
    e_w = l2_error(w_h, case.omega, quad_degree)
    e_p = l2_error(p_h, case.p, quad_degree)
    return e_u, e_w, e_p


def div_norm(u_h: DiscreteField, quad_degree: int | None = None) -> float:
    """||div u_h||_0; the augmentation controls but never nullifies it."""
    if quad_degree is None:
        quad_degree = default_quad_degree(u_h.space)
    mesh = u_h.space.mesh
    rule = quadrature(quad_degree)
    tab = tabulate(u_h.space, rule.points)
    total = 0.0
    for cells, wdet, _, inv, _ in _quad_loop(mesh, quad_degree):
        _, grads = eval_field(u_h, tab, cells, inv, grad=True)
        div_h = grads[..., 0, 0] + grads[..., 1, 1]
        total += float(np.einsum("cq,cq,cq->", wdet, div_h, div_h))
    return math.sqrt(total)


def integral(field: DiscreteField, quad_degree: int | None = None) -> float:
    """Integral of a scalar discrete field over the domain."""
    if quad_degree is None:
        quad_degree = 2 * field.space.element.degree
    mesh = field.space.mesh
    rule = quadrature(quad_degree)
    tab = tabulate(field.space, rule.points)
    total = 0.0
    for cells, wdet, _, inv, _ in _quad_loop(mesh, quad_degree):
        vals = eval_field(field, tab, cells, inv)
        total += float(np.einsum("cq,cq->", wdet, vals))
    return total


def eoc(errors, hs) -> list[float]:
    """Observed decay rates log(e_i / e_{i+1}) / log(h_i / h_{i+1})."""
    errors = list(errors)
    hs = list(hs)
    if len(errors) != len(hs) or len(errors) < 2:
        raise ValueError("need matching error/mesh-size lists of length >= 2")
    if any(hs[i + 1] >= hs[i] for i in range(len(hs) - 1)):
        raise ValueError("mesh sizes must decrease strictly")
    rates = []
    for i in range(len(errors) - 1):
        if errors[i] == 0.0 or errors[i + 1] == 0.0:
            warnings.warn("zero error value: rate reported as nan", stacklevel=2)
            rates.append(math.nan)
        else:
            rates.append(math.log(errors[i] / errors[i + 1]) / math.log(hs[i] / hs[i + 1]))
    return rates


# ---------------------------------------------------------------------------
# studies


@dataclass
class ConvergenceReport:
    family: str
    vorticity: str
    levels: list[tuple[float, int]]  # (h, system dofs)
    errors: list[tuple[float, float, float]]
    rates: list[tuple[float, float, float]]
    iterations: list[int]
    converged: list[bool]
    final_residuals: list[float] = field(default_factory=list)
    partial: bool = False

    def __post_init__(self):
        if len(self.rates) != len(self.levels) - 1:
            raise ValueError("need one rate tuple per consecutive level pair")
        if any(e < 0.0 for row in self.errors for e in row):
            raise ValueError("error norms cannot be negative")

    def columns(self):
        e = np.array(self.errors)
        return e[:, 0], e[:, 1], e[:, 2]


def run_convergence(
    family: str,
    levels: int = 6,
    case: ManufacturedCase | None = None,
    vorticity: str = "dg1",
    settings: NonlinearSettings | None = None,
    kappa1: float | None = None,
    kappa2: float | None = None,
) -> ConvergenceReport:
    """Solve on meshes n = 2, 4, ..., 2^levels and tabulate errors/rates."""
    if levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    case = case or example1_case_2d()
    coeffs = coefficients_from_case(case, kappa1=kappa1, kappa2=kappa2)
    settings = settings or NonlinearSettings(method="newton", tol=1e-8)
    solve = solve_newton if settings.method == "newton" else solve_picard

    hs, dofs, errs, iters, oks, finals = [], [], [], [], [], []
    for level in range(levels):
        n = 2 ** (level + 1)
        mesh = build_structured(n, n, case.rect)
        spaces = method_spaces(mesh, family, vorticity)
        u_h, w_h, p_h, rep = solve(
            spaces, coeffs, settings, g=case.u, pressure_target=case.pressure_integral
        )
        hs.append(mesh.h)
        dofs.append(sum(s.n_dofs for s in spaces) + 1)
        errs.append(error_norms(u_h, w_h, p_h, case))
        iters.append(rep.iterations)
        oks.append(bool(rep.converged))
        finals.append(rep.residual_history[-1])

    cols = list(zip(*errs))
    rates = list(zip(*(eoc(col, hs) for col in cols)))
    return ConvergenceReport(
        family=family,
        vorticity=vorticity,
        levels=list(zip(hs, dofs)),
        errors=errs,
        rates=[tuple(r) for r in rates],
        iterations=iters,
        converged=oks,
        final_residuals=finals,
        partial=not all(oks),
    )


def cavity_coefficients(nu0: float = 0.002, perm: float = 0.1) -> ProblemCoefficients:
    """Wide-cavity data: nu = nu0 (1 + x y / 2) on (0,2)x(0,1), zero force,
    Brinkman term sigma = nu / perm."""

    def nu(x, y):
        return nu0 * (1.0 + 0.5 * x * y)

    def grad_nu(x, y):
        return np.stack([0.5 * nu0 * y, 0.5 * nu0 * x], axis=-1)

    def sigma(x, y):
        return nu(x, y) / perm

    return ProblemCoefficients(
        nu=nu,
        grad_nu=grad_nu,
        sigma=sigma,
        f=lambda x, y: np.zeros(np.shape(x) + (2,)),
        kappa1=(2.0 / 3.0) * nu0,
        kappa2=0.5 * nu0,
        nu0=nu0,
        nu1=2.0 * nu0,
        sigma0=nu0 / perm,
        sigma1=2.0 * nu0 / perm,
    )


def run_cavity(
    nx: int = 64,
    ny: int = 32,
    nu0: float = 0.002,
    perm: float = 0.1,
    settings: NonlinearSettings | None = None,
):
    """Lid-driven wide cavity on (0,2)x(0,1) with MINI velocity and
    continuous P1 vorticity; returns the fields and the solve report.

    The lid moves with u = (1, 0); the discontinuous corner data is
    resolved by the tag application order (the lid value wins).
    """
    if nx < 8 or ny < 8:
        raise ValueError("cavity resolution must be at least 8x8")
    mesh = build_structured(nx, ny, (0.0, 0.0, 2.0, 1.0))
    spaces = method_spaces(mesh, "mini", "cg1")
    coeffs = cavity_coefficients(nu0=nu0, perm=perm)
    g = {"top": (1.0, 0.0)}
    settings = settings or NonlinearSettings(method="newton", tol=1e-8, max_iters=50)
    solve = solve_newton if settings.method == "newton" else solve_picard
    u_h, w_h, p_h, rep = solve(spaces, coeffs, settings, g=g, pressure_target=0.0)
    return {"velocity": u_h, "vorticity": w_h, "pressure": p_h}, rep
