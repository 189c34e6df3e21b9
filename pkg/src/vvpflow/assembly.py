"""Assembly of the augmented velocity-vorticity-pressure saddle system.

The block system over the concatenated unknowns [u | w | p | m] (m the
scalar multiplier fixing the pressure integral) realizes, cellwise by
quadrature,

    (sigma u, v) + kappa1 (curl u, curl v) + kappa2 (div u, div v)
    - 2 (eps(u) grad_nu, v) + ((beta . grad) u, v)
    + ((nu - kappa1) w, curl v) + (w, grad_nu x v)
    - (nu theta, curl u) + (nu w, theta)
    - (p, div v) - (q, div u) + m (q, 1) + (p, 1) row  =  (f, v)

with 2D conventions curl v = dx v2 - dy v1, curl of a scalar
th = (dy th, -dx th), and a x b = a1 b2 - a2 b1.

Cells are processed in fixed-size chunks and merged in cell order, so
repeated assemblies of identical inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import geometry_arrays
from .ordering import dof_support_centroids, nested_dissection
from .quadrature import physical_points, quadrature
from .spaces import DiscreteField, FunctionSpace, boundary_values, chunk_dirs, eval_field, physical_gradients, tabulate

CHUNK = 512


@dataclass
class ProblemCoefficients:
    """Pointwise problem data and the two augmentation weights.

    ``nu``, ``sigma`` map arrays (x, y) to arrays; ``grad_nu`` and ``f``
    map to arrays with a trailing component axis.  ``grad_nu`` is the
    analytic viscosity gradient (None means identically zero); supplying
    it as data avoids differentiation noise in the viscosity-gradient
    terms.  ``kappa1`` must stay in (0, 2/3 nu0]; the upper end is
    admissible because the ellipticity margin kappa1 - 3 kappa1^2 / (4 nu0)
    is still nu0 / 3 there.
    """

    nu: callable
    sigma: callable
    f: callable
    kappa1: float
    kappa2: float
    nu0: float
    nu1: float
    sigma0: float
    sigma1: float
    grad_nu: callable | None = None
    validate: bool = True

    def __post_init__(self):
        if self.validate:
            self.check_bounds()

    def check_bounds(self):
        if not (0.0 < self.nu0 <= self.nu1):
            raise ValueError(f"viscosity bounds must satisfy 0 < nu0 <= nu1, got ({self.nu0}, {self.nu1})")
        if not (0.0 < self.sigma0 <= self.sigma1):
            raise ValueError(f"sigma bounds must satisfy 0 < sigma0 <= sigma1, got ({self.sigma0}, {self.sigma1})")
        limit = (2.0 / 3.0) * self.nu0
        if not (0.0 < self.kappa1 <= limit * (1.0 + 1e-12)):
            raise ValueError(
                f"kappa1 = {self.kappa1} outside the admissible interval (0, {limit}] = (0, 2/3 nu0]"
            )
        if self.kappa2 <= 0.0:
            raise ValueError(f"kappa2 must be positive, got {self.kappa2}")


@dataclass(eq=False)
class AssembledSystem:
    """Sparse block system over [velocity | vorticity | pressure | multiplier]."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    block_index: tuple[int, int, int, int, int]
    bc_applied: bool = False
    parts: dict | None = field(default=None, repr=False)
    ordering: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.block_index[-1]
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError(
                f"system of size {self.matrix.shape} does not match the block "
                f"layout ending at {n}"
            )

    @property
    def n(self) -> int:
        return self.block_index[-1]

    def split(self, x: np.ndarray):
        """Split a solution vector into (u, w, p, m) coefficient blocks."""
        o = self.block_index
        return x[: o[1]], x[o[1] : o[2]], x[o[2] : o[3]], float(x[o[3]])


def default_quad_degree(velocity_space: FunctionSpace) -> int:
    """2 * velocity degree + 2; the extra 2 absorbs variable coefficients."""
    return 2 * velocity_space.element.degree + 2


def _check_spaces(spaces):
    V, W, Q = spaces
    if not (V.mesh is W.mesh is Q.mesh):
        raise ValueError("velocity, vorticity and pressure spaces live on different meshes")
    if not V.vector or W.vector or Q.vector:
        raise ValueError("expected (vector velocity, scalar vorticity, scalar pressure) spaces")
    return V, W, Q


class SystemAssembler:
    """Chunked cellwise assembler with a cached advection-independent part.

    One instance precomputes geometry, reference tabulations and the
    coefficient samples; Oseen matrices for successive advecting fields
    then only re-assemble the convection blocks.  Instances hold no
    mutable state besides caches and may be shared across sequential
    solves; distinct instances are fully independent.
    """

    def __init__(self, spaces, coeffs: ProblemCoefficients, quad_degree: int | None = None):
        self.V, self.W, self.Q = _check_spaces(spaces)
        if coeffs.validate:  # guards against post-construction mutation
            coeffs.check_bounds()
        self.coeffs = coeffs
        self.rule = quadrature(default_quad_degree(self.V) if quad_degree is None else quad_degree)
        mesh = self.V.mesh
        self.mesh = mesh
        self.jac, self.inv, self.det = geometry_arrays(mesh)
        self.tab_v = tabulate(self.V, self.rule.points)
        self.tab_w = tabulate(self.W, self.rule.points)
        self.tab_q = tabulate(self.Q, self.rule.points)
        n_u, n_w, n_p = self.V.n_dofs, self.W.n_dofs, self.Q.n_dofs
        self.block_index = (0, n_u, n_u + n_w, n_u + n_w + n_p, n_u + n_w + n_p + 1)
        self._linear = None
        self._ordering = None

    # ---------------------------------------------------------- chunk helpers

    def _chunks(self):
        nc = self.mesh.n_cells
        for c0 in range(0, nc, CHUNK):
            yield np.arange(c0, min(c0 + CHUNK, nc))

    def _geometry(self, cells):
        wdet = self.rule.weights[None, :] * self.det[cells, None]
        xq = physical_points(self.rule, self.jac[cells], self.mesh.vertices[self.mesh.cells[cells, 0]])
        return wdet, xq

    def _velocity_arrays(self, cells, derivatives: bool = True):
        """Physical values V, gradients G, curl and div of the velocity basis."""
        dirs = chunk_dirs(self.tab_v, cells)
        vals = np.einsum(
            "bq,cbi->cbqi",
            self.tab_v.shapes,
            np.broadcast_to(dirs, (len(cells),) + dirs.shape[1:]),
        )
        dphys = physical_gradients(self.tab_v, self.inv[cells])
        grads = np.einsum("cbqj,cbi->cbqij", dphys, dirs)
        if not derivatives:
            return vals, grads, None, None
        curl = grads[..., 1, 0] - grads[..., 0, 1]
        div = grads[..., 0, 0] + grads[..., 1, 1]
        return vals, grads, curl, div

    def _coefficient_samples(self, xq):
        c = self.coeffs
        x, y = xq[..., 0], xq[..., 1]
        nu = np.asarray(c.nu(x, y), dtype=float)
        if c.validate:
            slack = 1e-12 * max(1.0, abs(c.nu1))
            if nu.min() < c.nu0 - slack or nu.max() > c.nu1 + slack:
                raise ValueError(
                    f"viscosity leaves its declared bounds [{c.nu0}, {c.nu1}] "
                    f"(sampled range [{nu.min()}, {nu.max()}])"
                )
        sig = np.broadcast_to(np.asarray(c.sigma(x, y), dtype=float), nu.shape)
        gnu = None if c.grad_nu is None else np.asarray(c.grad_nu(x, y), dtype=float)
        return nu, sig, gnu

    # ------------------------------------------------------------- assembly

    def _ensure_linear(self):
        if self._linear is not None:
            return self._linear
        k1, k2 = self.coeffs.kappa1, self.coeffs.kappa2
        o = self.block_index
        cd_u = self.V.cell_dofs
        cd_w = self.W.cell_dofs + o[1]
        cd_q = self.Q.cell_dofs + o[2]
        terms: dict[str, list] = {}
        rhs = np.zeros(o[4])
        pmass = np.zeros(self.Q.n_dofs)

        def add(name, rows_map, cols_map, local):
            na, nb = local.shape[1], local.shape[2]
            rows = np.repeat(rows_map, nb, axis=1).ravel()
            cols = np.tile(cols_map, (1, na)).ravel()
            terms.setdefault(name, [[], [], []])
            terms[name][0].append(rows)
            terms[name][1].append(cols)
            terms[name][2].append(local.ravel())

        wvals = self.tab_w.shapes  # vorticity/pressure bases are affine-invariant
        pvals = self.tab_q.shapes
        for cells in self._chunks():
            wdet, xq = self._geometry(cells)
            nu, sig, gnu = self._coefficient_samples(xq)
            fq = np.asarray(self.coeffs.f(xq[..., 0], xq[..., 1]), dtype=float)
            vv, gv, curl, div = self._velocity_arrays(cells)
            ru, rw, rq = cd_u[cells], cd_w[cells], cd_q[cells]

            add("uu_sigma", ru, ru, np.einsum("cq,caqi,cbqi->cab", wdet * sig, vv, vv, optimize=True))
            if k1 != 0.0:
                add("uu_curl", ru, ru, k1 * np.einsum("cq,caq,cbq->cab", wdet, curl, curl, optimize=True))
            if k2 != 0.0:
                add("uu_div", ru, ru, k2 * np.einsum("cq,caq,cbq->cab", wdet, div, div, optimize=True))
            if gnu is not None:
                eps_gnu = 0.5 * (
                    np.einsum("cbqij,cqj->cbqi", gv, gnu, optimize=True)
                    + np.einsum("cbqji,cqj->cbqi", gv, gnu, optimize=True)
                )
                add(
                    "uu_gradnu",
                    ru,
                    ru,
                    -2.0 * np.einsum("cq,cbqi,caqi->cab", wdet, eps_gnu, vv, optimize=True),
                )
                cross = np.einsum("cq,caq->caq", gnu[..., 0], vv[..., 1]) - np.einsum(
                    "cq,caq->caq", gnu[..., 1], vv[..., 0]
                )
                add("uw_gradnu", ru, rw, np.einsum("cq,caq,bq->cab", wdet, cross, wvals, optimize=True))

            coupling = np.einsum("cq,caq,bq->cab", wdet * nu, curl, wvals, optimize=True)
            add("uw_nu", ru, rw, coupling)
            # same floats, transposed placement: bitwise antisymmetric pair
            add("wu_nu", rw, ru, -coupling.transpose(0, 2, 1))
            if k1 != 0.0:
                add("uw_kappa1", ru, rw, -k1 * np.einsum("cq,caq,bq->cab", wdet, curl, wvals, optimize=True))
            add("ww_nu", rw, rw, np.einsum("cq,aq,bq->cab", wdet * nu, wvals, wvals, optimize=True))

            bform = -np.einsum("cq,caq,bq->cab", wdet, div, pvals, optimize=True)
            add("up", ru, rq, bform)
            add("pu", rq, ru, bform.transpose(0, 2, 1))

            np.add.at(rhs, ru, np.einsum("cq,caqi,cqi->ca", wdet, vv, fq, optimize=True))
            np.add.at(pmass, self.Q.cell_dofs[cells], np.einsum("cq,bq->cb", wdet, pvals))

        coo = {
            name: (np.concatenate(r), np.concatenate(c), np.concatenate(v))
            for name, (r, c, v) in terms.items()
        }
        p_cols = o[2] + np.arange(self.Q.n_dofs)
        m_row = np.full(self.Q.n_dofs, o[3])
        coo["mp"] = (m_row, p_cols, pmass)
        coo["pm"] = (p_cols, m_row, pmass)
        self._linear = (coo, rhs)
        return self._linear

    def _convection(self, beta: DiscreteField, dual: bool = False, pair: bool = False):
        """COO triplets of ((beta . grad) u, v); with ``dual``, of the
        Newton derivative block ((v . grad) beta, w); with ``pair``, both
        at once sharing the tabulation work."""
        if beta.space is not self.V and beta.space.n_dofs != self.V.n_dofs:
            raise ValueError("advecting field must live on the velocity space")
        rows, cols, vals, dual_vals = [], [], [], []
        cd_u = self.V.cell_dofs
        want_direct = pair or not dual
        want_dual = pair or dual
        for cells in self._chunks():
            wdet, _ = self._geometry(cells)
            vv, gv, _, _ = self._velocity_arrays(cells, derivatives=False)
            coefs = beta.coefficients[cd_u[cells]]
            bv = np.einsum("cb,cbqi->cqi", coefs, vv, optimize=True)
            ru = cd_u[cells]
            na = ru.shape[1]
            rows.append(np.repeat(ru, na, axis=1).ravel())
            cols.append(np.tile(ru, (1, na)).ravel())
            if want_direct:
                wbv = wdet[..., None] * bv
                local = np.einsum("cqj,cbqij,caqi->cab", wbv, gv, vv, optimize=True)
                vals.append(local.ravel())
            if want_dual:
                gb = np.einsum("cb,cbqij->cqij", coefs, gv, optimize=True)
                wgb = wdet[..., None, None] * gb
                local = np.einsum("cqij,cbqj,caqi->cab", wgb, vv, vv, optimize=True)
                dual_vals.append(local.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        if pair:
            return rows, cols, np.concatenate(vals), np.concatenate(dual_vals)
        return rows, cols, np.concatenate(vals if not dual else dual_vals)

    def _elimination_order(self, matrix: sp.csr_matrix) -> np.ndarray:
        """Nested-dissection DOF order, multiplier last (it couples globally)."""
        if self._ordering is None:
            centroids = self.mesh.vertices[self.mesh.cells].mean(axis=1)
            o = self.block_index
            coords = np.empty((o[4], 2))
            for space, lo, hi in ((self.V, 0, o[1]), (self.W, o[1], o[2]), (self.Q, o[2], o[3])):
                coords[lo:hi] = dof_support_centroids(space.n_dofs, space.cell_dofs, centroids)
            coords[o[3]] = centroids.mean(axis=0)
            self._ordering = nested_dissection(matrix, coords, last=np.array([o[3]]))
        return self._ordering

    def oseen(
        self,
        beta: DiscreteField | None = None,
        pressure_target: float = 0.0,
        keep_parts: bool = False,
        conv_triplets=None,
    ) -> AssembledSystem:
        """Assemble the linearised system with frozen advecting field ``beta``.

        ``conv_triplets`` short-circuits the convection assembly with
        precomputed COO data (solver loops reuse the paired pass).
        """
        coo, rhs = self._ensure_linear()
        n = self.block_index[4]
        parts_coo = dict(coo)
        if conv_triplets is not None:
            parts_coo["uu_conv"] = conv_triplets
        elif beta is not None:
            parts_coo["uu_conv"] = self._convection(beta)
        rows = np.concatenate([t[0] for t in parts_coo.values()])
        cols = np.concatenate([t[1] for t in parts_coo.values()])
        vals = np.concatenate([t[2] for t in parts_coo.values()])
        matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        full_rhs = rhs.copy()
        full_rhs[-1] = pressure_target
        parts = None
        if keep_parts:
            parts = {
                name: sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
                for name, (r, c, v) in parts_coo.items()
            }
        return AssembledSystem(
            matrix, full_rhs, self.block_index, parts=parts,
            ordering=self._elimination_order(matrix),
        )

    def newton_system(self, state: np.ndarray, pressure_target: float = 0.0):
        """Jacobian and residual of the nonlinear map at ``state``.

        The residual is rhs - [a + N(u_h; u_h, .) + b + b^T + multiplier]
        applied to the state, with velocity Dirichlet rows zeroed (the
        state is expected to satisfy the boundary values).  The Jacobian
        augments the Oseen matrix at beta = u_h with the convection block
        differentiated with respect to the advecting argument.
        """
        state = np.asarray(state, dtype=float)
        if state.shape != (self.block_index[4],):
            raise ValueError("state vector does not match the system size")
        u_field = DiscreteField(self.V, state[: self.block_index[1]])
        system = self.oseen(beta=u_field, pressure_target=pressure_target)
        residual = system.rhs - system.matrix @ state
        residual[self.V.dirichlet_dofs] = 0.0
        r, c, v = self._convection(u_field, dual=True)
        n = self.block_index[4]
        jac = system.matrix + sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
        return AssembledSystem(jac, system.rhs, self.block_index, ordering=system.ordering), residual

    def gram_x(self) -> sp.csr_matrix:
        """Gram matrix of the combined velocity/vorticity norm.

        For stacked coefficients [u | w], coef' G coef equals
        ||u||^2 + ||curl u||^2 + ||div u||^2 + ||w||^2.
        """
        o = self.block_index
        cd_u = self.V.cell_dofs
        cd_w = self.W.cell_dofs + o[1]
        rows, cols, vals = [], [], []
        wvals = self.tab_w.shapes
        for cells in self._chunks():
            wdet, _ = self._geometry(cells)
            vv, _, curl, div = self._velocity_arrays(cells)
            local_u = (
                np.einsum("cq,caqi,cbqi->cab", wdet, vv, vv, optimize=True)
                + np.einsum("cq,caq,cbq->cab", wdet, curl, curl, optimize=True)
                + np.einsum("cq,caq,cbq->cab", wdet, div, div, optimize=True)
            )
            local_w = np.einsum("cq,aq,bq->cab", wdet, wvals, wvals, optimize=True)
            for local, dofs in ((local_u, cd_u[cells]), (local_w, cd_w[cells])):
                na = local.shape[1]
                rows.append(np.repeat(dofs, na, axis=1).ravel())
                cols.append(np.tile(dofs, (1, na)).ravel())
                vals.append(local.ravel())
        n = o[2]
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()


def assemble_oseen(
    spaces,
    coeffs: ProblemCoefficients,
    beta: DiscreteField | None = None,
    pressure_target: float = 0.0,
    quad_degree: int | None = None,
    keep_parts: bool = False,
) -> AssembledSystem:
    """One-shot Oseen assembly; see :class:`SystemAssembler` for solver loops."""
    return SystemAssembler(spaces, coeffs, quad_degree).oseen(
        beta=beta, pressure_target=pressure_target, keep_parts=keep_parts
    )


def assemble_newton(
    spaces,
    coeffs: ProblemCoefficients,
    state: np.ndarray,
    pressure_target: float = 0.0,
    quad_degree: int | None = None,
):
    """Jacobian system and nonlinear residual at a full state vector."""
    return SystemAssembler(spaces, coeffs, quad_degree).newton_system(
        state, pressure_target=pressure_target
    )


def assemble_gram_X(spaces, coeffs: ProblemCoefficients | None = None, quad_degree: int | None = None):
    """Gram matrix of the velocity/vorticity product norm (see gram_x)."""
    V, W, Q = _check_spaces(spaces)
    if coeffs is None:
        coeffs = ProblemCoefficients(
            nu=lambda x, y: np.ones_like(x),
            sigma=lambda x, y: np.ones_like(x),
            f=lambda x, y: np.zeros(np.shape(x) + (2,)),
            kappa1=0.5,
            kappa2=1.0,
            nu0=1.0,
            nu1=1.0,
            sigma0=1.0,
            sigma1=1.0,
        )
    return SystemAssembler((V, W, Q), coeffs, quad_degree).gram_x()


def apply_dirichlet(system: AssembledSystem, space: FunctionSpace, g) -> AssembledSystem:
    """Impose velocity boundary values by symmetric elimination.

    Constrained rows and columns are replaced by the identity, and the
    right-hand side absorbs the lifting, so symmetric sub-blocks stay
    symmetric.  ``g`` follows :func:`vvpflow.spaces.boundary_values`.
    """
    if system.bc_applied:
        raise RuntimeError("Dirichlet data was already applied to this system")
    dofs = space.dirichlet_dofs
    vals = boundary_values(space, g)
    n = system.n
    lift = np.zeros(n)
    lift[dofs] = vals
    rhs = system.rhs - system.matrix @ lift
    rhs[dofs] = vals
    keep = np.ones(n)
    keep[dofs] = 0.0
    mask = sp.diags(keep)
    ident = np.zeros(n)
    ident[dofs] = 1.0
    matrix = (mask @ system.matrix @ mask + sp.diags(ident)).tocsr()
    return AssembledSystem(
        matrix, rhs, system.block_index, bc_applied=True, ordering=system.ordering
    )
