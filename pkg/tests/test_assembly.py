import numpy as np
import pytest
import scipy.sparse as sp

from vvpflow.assembly import (
    AssembledSystem,
    ProblemCoefficients,
    SystemAssembler,
    apply_dirichlet,
    assemble_gram_X,
    assemble_newton,
    assemble_oseen,
)
from vvpflow.elements import GRAD_LAMBDA
from vvpflow.mesh import build_structured, cell_geometry
from vvpflow.quadrature import physical_points, quadrature
from vvpflow.solver import solve_linear
from vvpflow.spaces import DiscreteField, build_space, eval_field, interpolate, method_spaces, tabulate
from vvpflow.verify import coefficients_from_case, example1_case_2d

RNG = np.random.default_rng(42)


def zero_vector(x, y):
    return np.zeros(np.shape(x) + (2,))


def constant_coefficients(nu=1.0, sigma=1.0, kappa1=0.5, kappa2=1.0, f=zero_vector):
    return ProblemCoefficients(
        nu=lambda x, y: np.full_like(x, nu),
        sigma=lambda x, y: np.full_like(x, sigma),
        f=f,
        kappa1=kappa1,
        kappa2=kappa2,
        nu0=nu,
        nu1=nu,
        sigma0=sigma,
        sigma1=sigma,
    )


def degenerate_coefficients():
    # sigma = 0 and disabled augmentation: only representable with the
    # validation escape hatch
    return ProblemCoefficients(
        nu=lambda x, y: np.ones_like(x),
        sigma=lambda x, y: np.zeros_like(x),
        f=zero_vector,
        kappa1=0.0,
        kappa2=0.0,
        nu0=1.0,
        nu1=1.0,
        sigma0=0.0,
        sigma1=0.0,
        validate=False,
    )


def example1_setup(n=4, family="taylor-hood", vorticity="dg1"):
    case = example1_case_2d()
    coeffs = coefficients_from_case(case)
    spaces = method_spaces(build_structured(n, n), family, vorticity)
    return case, coeffs, spaces


class TestProblemCoefficients:
    def test_kappa1_above_limit_rejected(self):
        with pytest.raises(ValueError):
            constant_coefficients(nu=0.1, kappa1=0.08, kappa2=0.05)

    def test_kappa1_at_limit_accepted(self):
        c = constant_coefficients(nu=0.1, kappa1=(2.0 / 3.0) * 0.1, kappa2=0.05)
        assert c.kappa1 == pytest.approx(2.0 / 30.0)

    def test_nonpositive_kappa2_rejected(self):
        with pytest.raises(ValueError):
            constant_coefficients(kappa2=0.0)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            ProblemCoefficients(
                nu=lambda x, y: np.ones_like(x),
                sigma=lambda x, y: np.ones_like(x),
                f=zero_vector,
                kappa1=0.1,
                kappa2=0.1,
                nu0=1.0,
                nu1=0.5,
                sigma0=1.0,
                sigma1=1.0,
            )

    def test_mutated_kappa1_caught_at_assembly(self):
        c = constant_coefficients(nu=0.1, kappa1=0.05, kappa2=0.05)
        c.kappa1 = 0.2  # corrupt after construction
        spaces = method_spaces(build_structured(2, 2), "taylor-hood", "dg1")
        with pytest.raises(ValueError, match="kappa1"):
            assemble_oseen(spaces, c)

    def test_viscosity_leaving_bounds_caught_at_assembly(self):
        bad = ProblemCoefficients(
            nu=lambda x, y: np.full_like(x, 0.1),
            sigma=lambda x, y: np.ones_like(x),
            f=zero_vector,
            kappa1=0.2,
            kappa2=0.2,
            nu0=0.5,
            nu1=1.0,
            sigma0=1.0,
            sigma1=1.0,
        )
        spaces = method_spaces(build_structured(2, 2), "taylor-hood", "dg1")
        with pytest.raises(ValueError, match="bounds"):
            assemble_oseen(spaces, bad)


def test_mismatched_meshes_rejected():
    m1, m2 = build_structured(2, 2), build_structured(2, 2)
    V = build_space(m1, "p2", vector=True)
    W = build_space(m2, "dg1")
    Q = build_space(m1, "p1")
    with pytest.raises(ValueError, match="mesh"):
        assemble_oseen((V, W, Q), constant_coefficients())


def test_degenerate_zero_data_gives_zero_rhs():
    spaces = method_spaces(build_structured(2, 2), "taylor-hood", "dg1")
    system = assemble_oseen(spaces, degenerate_coefficients())
    assert np.all(system.rhs == 0.0)


def test_zero_data_solves_to_zero():
    spaces = method_spaces(build_structured(2, 2), "taylor-hood", "dg1")
    system = assemble_oseen(spaces, constant_coefficients())
    bc = apply_dirichlet(system, spaces[0], None)
    x = solve_linear(bc)
    assert np.abs(x).max() <= 1e-14


def test_kappa_blocks_match_hand_outer_products():
    # P1 vector velocity: constant per-basis curl/div, so each cell
    # contributes area * (k1 c c' + k2 d d'); assembled by hand here
    mesh = build_structured(1, 1)
    V = build_space(mesh, "p1", vector=True)
    W = build_space(mesh, "dg0")
    Q = build_space(mesh, "p1")
    k1, k2 = 0.5, 1.0
    system = assemble_oseen((V, W, Q), constant_coefficients(kappa1=k1, kappa2=k2), keep_parts=True)
    expected = np.zeros((V.n_dofs, V.n_dofs))
    for cell in range(mesh.n_cells):
        _, inv_t, area = cell_geometry(mesh, cell)
        grads = GRAD_LAMBDA @ inv_t.T  # physical gradients of the barycentrics
        c_vec = np.empty(6)
        d_vec = np.empty(6)
        for k in range(3):
            c_vec[2 * k] = -grads[k, 1]  # curl of lambda_k e_x
            c_vec[2 * k + 1] = grads[k, 0]  # curl of lambda_k e_y
            d_vec[2 * k] = grads[k, 0]
            d_vec[2 * k + 1] = grads[k, 1]
        local = area * (k1 * np.outer(c_vec, c_vec) + k2 * np.outer(d_vec, d_vec))
        dofs = V.cell_dofs[cell]
        expected[np.ix_(dofs, dofs)] += local
    got = (system.parts["uu_curl"] + system.parts["uu_div"]).toarray()[: V.n_dofs, : V.n_dofs]
    assert np.allclose(got, expected, atol=1e-14)


def _bitwise_negated_transpose(a: sp.csr_matrix, b: sp.csr_matrix) -> bool:
    at = a.tocsr().copy()
    bt = b.T.tocsr().copy()
    at.sum_duplicates()
    bt.sum_duplicates()
    at.sort_indices()
    bt.sort_indices()
    return (
        np.array_equal(at.indptr, bt.indptr)
        and np.array_equal(at.indices, bt.indices)
        and np.array_equal(at.data, -bt.data)
    )


def test_viscous_coupling_blocks_are_exact_negated_transposes():
    _, coeffs, spaces = example1_setup(n=2)
    system = assemble_oseen(spaces, coeffs, keep_parts=True)
    assert _bitwise_negated_transpose(system.parts["uw_nu"], system.parts["wu_nu"])
    # and the composite blocks cancel exactly when added
    total = system.parts["uw_nu"] + system.parts["wu_nu"].T
    assert total.count_nonzero() == 0


def test_pressure_blocks_are_exact_transposes():
    _, coeffs, spaces = example1_setup(n=2)
    system = assemble_oseen(spaces, coeffs, keep_parts=True)
    up = system.parts["up"].tocsr()
    pu_t = system.parts["pu"].T.tocsr()
    up.sort_indices()
    pu_t.sort_indices()
    assert np.array_equal(up.indptr, pu_t.indptr)
    assert np.array_equal(up.indices, pu_t.indices)
    assert np.array_equal(up.data, pu_t.data)


def test_multiplier_row_structure():
    _, coeffs, spaces = example1_setup(n=2)
    system = assemble_oseen(spaces, coeffs)
    o = system.block_index
    m = o[3]
    dense_row = system.matrix[m].toarray().ravel()
    assert dense_row[m] == 0.0
    assert np.all(dense_row[: o[2]] == 0.0)  # couples to pressure only
    assert np.all(dense_row[o[2] : o[3]] > 0.0)  # P1 hat integrals
    col = system.matrix[:, m].toarray().ravel()
    assert np.array_equal(col, dense_row)


def test_skew_pairing_identity():
    # N(b;u,v) + N(b;v,u) + (div b, u.v) = 0 for zero-trace u, v and
    # polynomial data under exact quadrature
    _, coeffs, spaces = example1_setup(n=4)
    V = spaces[0]
    # quadratic advecting field with nonvanishing divergence 2x + 1
    beta = interpolate(V, lambda x, y: np.stack([x**2 + 2.0 * y, x + y], axis=-1))
    system = assemble_oseen(spaces, coeffs, beta=beta, keep_parts=True)
    K = system.parts["uu_conv"][: V.n_dofs, : V.n_dofs]

    free = np.setdiff1d(np.arange(V.n_dofs), V.dirichlet_dofs)
    u = np.zeros(V.n_dofs)
    v = np.zeros(V.n_dofs)
    u[free] = RNG.standard_normal(len(free))
    v[free] = RNG.standard_normal(len(free))

    n1 = float(v @ (K @ u))
    n2 = float(u @ (K @ v))

    # independent quadrature of (div beta, u . v)
    rule = quadrature(6)
    from vvpflow.mesh import geometry_arrays

    mesh = V.mesh
    jac, inv, det = geometry_arrays(mesh)
    tab = tabulate(V, rule.points)
    cells = np.arange(mesh.n_cells)
    _, gb = eval_field(beta, tab, cells, inv, grad=True)
    div_b = gb[..., 0, 0] + gb[..., 1, 1]
    uu = eval_field(DiscreteField(V, u), tab, cells, inv)
    vv = eval_field(DiscreteField(V, v), tab, cells, inv)
    wdet = rule.weights[None, :] * det[:, None]
    pairing = float(np.einsum("cq,cq,cqi,cqi->", wdet, div_b, uu, vv))

    scale = max(abs(n1), abs(n2), abs(pairing))
    assert abs(n1 + n2 + pairing) / scale < 1e-10


def test_coercivity_sampled_on_random_fields():
    case = example1_case_2d()
    coeffs = coefficients_from_case(case, kappa1=(2.0 / 3.0) * 0.1 * 0.999, kappa2=0.05)
    spaces = method_spaces(build_structured(4, 4), "taylor-hood", "dg1")
    system = assemble_oseen(spaces, coeffs)
    o = system.block_index
    a_xx = system.matrix[: o[2], : o[2]]
    sym = 0.5 * (a_xx + a_xx.T)
    free_u = np.setdiff1d(np.arange(o[1]), spaces[0].dirichlet_dofs)
    for _ in range(100):
        x = np.zeros(o[2])
        x[free_u] = RNG.standard_normal(len(free_u))
        x[o[1] :] = RNG.standard_normal(o[2] - o[1])
        assert x @ (sym @ x) > 0.0


class TestApplyDirichlet:
    def test_zero_data_gives_identity_rows(self):
        _, coeffs, spaces = example1_setup(n=2)
        system = assemble_oseen(spaces, coeffs)
        bc = apply_dirichlet(system, spaces[0], None)
        for dof in spaces[0].dirichlet_dofs[:10]:
            row = bc.matrix[int(dof)].toarray().ravel()
            expected = np.zeros_like(row)
            expected[dof] = 1.0
            assert np.array_equal(row, expected)
            assert bc.rhs[dof] == 0.0

    def test_double_application_rejected(self):
        _, coeffs, spaces = example1_setup(n=2)
        bc = apply_dirichlet(assemble_oseen(spaces, coeffs), spaces[0], None)
        with pytest.raises(RuntimeError):
            apply_dirichlet(bc, spaces[0], None)

    def test_symmetric_blocks_stay_symmetric(self):
        # beta = 0 and constant viscosity: the velocity block is symmetric
        spaces = method_spaces(build_structured(3, 3), "taylor-hood", "dg1")
        system = assemble_oseen(spaces, constant_coefficients())
        bc = apply_dirichlet(system, spaces[0], lambda x, y: np.stack([y, x], axis=-1))
        n_u = bc.block_index[1]
        block = bc.matrix[:n_u, :n_u]
        asym = abs(block - block.T).max()
        assert asym < 1e-13

    def test_lifting_moves_data_to_rhs(self):
        case, coeffs, spaces = example1_setup(n=2)
        system = assemble_oseen(spaces, coeffs)
        bc = apply_dirichlet(system, spaces[0], case.u)
        vals = bc.rhs[spaces[0].dirichlet_dofs]
        assert np.abs(vals).max() > 0.1  # boundary data is nonzero


def test_elimination_order_is_permutation_with_multiplier_last():
    _, coeffs, spaces = example1_setup(n=4)
    system = assemble_oseen(spaces, coeffs)
    perm = system.ordering
    assert np.array_equal(np.sort(perm), np.arange(system.n))
    assert perm[-1] == system.block_index[3]


def test_system_split_blocks():
    _, coeffs, spaces = example1_setup(n=2)
    system = assemble_oseen(spaces, coeffs)
    x = np.arange(system.n, dtype=float)
    u, w, p, m = system.split(x)
    assert len(u) == spaces[0].n_dofs
    assert len(w) == spaces[1].n_dofs
    assert len(p) == spaces[2].n_dofs
    assert m == float(system.n - 1)
    assert np.array_equal(np.concatenate([u, w, p, [m]]), x)


def test_size_mismatch_rejected():
    import scipy.sparse as sp2

    with pytest.raises(ValueError):
        AssembledSystem(sp2.identity(5).tocsr(), np.zeros(4), (0, 1, 2, 3, 4))


def test_assembly_determinism():
    _, coeffs, spaces = example1_setup(n=3)
    beta = interpolate(spaces[0], lambda x, y: np.stack([y, -x], axis=-1))
    a = assemble_oseen(spaces, coeffs, beta=beta)
    b = assemble_oseen(spaces, coeffs, beta=beta)
    assert np.array_equal(a.matrix.indptr, b.matrix.indptr)
    assert np.array_equal(a.matrix.indices, b.matrix.indices)
    assert np.array_equal(a.matrix.data, b.matrix.data)
    assert np.array_equal(a.rhs, b.rhs)


class TestNewtonSystem:
    def test_zero_state_matches_advection_free_oseen(self):
        _, coeffs, spaces = example1_setup(n=2)
        asm = SystemAssembler(spaces, coeffs)
        jac, residual = asm.newton_system(np.zeros(asm.block_index[4]))
        base = asm.oseen()
        # identical up to the summation-order roundoff of the appended
        # zero-valued convection entries
        diff = jac.matrix - base.matrix
        assert abs(diff).max() <= 1e-14
        free = np.setdiff1d(np.arange(base.n), spaces[0].dirichlet_dofs)
        assert np.array_equal(residual[free], base.rhs[free])
        assert np.all(residual[spaces[0].dirichlet_dofs] == 0.0)

    def test_directional_derivative_is_second_order(self):
        _, coeffs, spaces = example1_setup(n=2)
        asm = SystemAssembler(spaces, coeffs)
        n = asm.block_index[4]
        state = np.zeros(n)
        state[: asm.block_index[1]] = 0.1 * RNG.standard_normal(asm.block_index[1])
        state[spaces[0].dirichlet_dofs] = 0.0
        delta = RNG.standard_normal(n)
        delta[spaces[0].dirichlet_dofs] = 0.0

        free = np.setdiff1d(np.arange(n), spaces[0].dirichlet_dofs)
        jac, res0 = asm.newton_system(state)
        gaps = []
        for eps in (1e-3, 1e-4):
            _, res_eps = asm.newton_system(state + eps * delta)
            gap = res_eps - res0 + eps * (jac.matrix @ delta)
            gaps.append(np.abs(gap[free]).max())
        # the residual is quadratic in the state, so the gap scales as eps^2
        ratio = gaps[0] / gaps[1]
        assert 80.0 < ratio < 120.0

    def test_state_length_validated(self):
        _, coeffs, spaces = example1_setup(n=2)
        with pytest.raises(ValueError):
            assemble_newton(spaces, coeffs, np.zeros(3))


class TestGramMatrix:
    def setup_method(self):
        self.spaces = method_spaces(build_structured(4, 4), "taylor-hood", "dg1")
        self.G = assemble_gram_X(self.spaces)
        self.n_u = self.spaces[0].n_dofs

    def norm2(self, u_field=None, w_field=None):
        x = np.zeros(self.n_u + self.spaces[1].n_dofs)
        if u_field is not None:
            x[: self.n_u] = u_field.coefficients
        if w_field is not None:
            x[self.n_u :] = w_field.coefficients
        return float(x @ (self.G @ x))

    def test_constant_velocity(self):
        u = interpolate(self.spaces[0], lambda x, y: np.stack([np.ones_like(x), np.zeros_like(x)], axis=-1))
        assert self.norm2(u_field=u) == pytest.approx(1.0, abs=1e-13)

    def test_shear_velocity(self):
        u = interpolate(self.spaces[0], lambda x, y: np.stack([y, np.zeros_like(x)], axis=-1))
        # |v|^2 = 1/3, curl^2 = 1, div^2 = 0
        assert self.norm2(u_field=u) == pytest.approx(4.0 / 3.0, abs=1e-13)

    def test_positive_definite(self):
        sym_gap = abs(self.G - self.G.T).max()
        assert sym_gap < 1e-14
        for _ in range(20):
            x = RNG.standard_normal(self.G.shape[0])
            assert x @ (self.G @ x) > 0.0
        assert np.zeros(self.G.shape[0]) @ (self.G @ np.zeros(self.G.shape[0])) == 0.0
