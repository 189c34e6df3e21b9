"""Global function spaces: DOF maps, boundary data, interpolation, evaluation.

DOF numbering is entity-based and deterministic:

==============  =======================================================
family          global numbering
==============  =======================================================
p1 (cont.)      vertex index
p2 (cont.)      vertices, then edge midpoints (nv + edge)
p1bubble        vertices, then cell bubbles (nv + cell)
dg1             3 * cell + local vertex
dg0             cell
vector          2 * scalar dof + component (interleaved)
bernardi-raugel interleaved vertex components, then edge bubbles
                (2 * nv + edge)
==============  =======================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elements import ScalarElement, VectorElement, scalar_element, vector_element
from .mesh import TAG_APPLICATION_ORDER, Mesh

# 3-point Gauss-Legendre on [0, 1], used for edge moments of boundary data
_EDGE_QP = 0.5 * (1.0 + np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]))
_EDGE_QW = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(eq=False)
class FunctionSpace:
    mesh: Mesh
    family: str
    element: ScalarElement | VectorElement
    vector: bool
    cell_dofs: np.ndarray  # (nc, n_local)
    n_dofs: int
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        self.cell_dofs = np.ascontiguousarray(self.cell_dofs, dtype=np.int64)

    def __repr__(self):
        kind = "vector" if self.vector else "scalar"
        return f"FunctionSpace({self.family}, {kind}, {self.n_dofs} dofs)"


@dataclass(eq=False)
class DiscreteField:
    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError(
                f"coefficient vector of length {len(self.coefficients)} does not "
                f"match space with {self.space.n_dofs} dofs"
            )


def _scalar_cell_dofs(mesh: Mesh, family: str):
    nv, nc = mesh.n_vertices, mesh.n_cells
    if family == "p1":
        return mesh.cells.copy(), nv
    if family == "p2":
        return np.hstack([mesh.cells, nv + mesh.cell_edges]), nv + mesh.n_edges
    if family == "p1bubble":
        return np.hstack([mesh.cells, (nv + np.arange(nc))[:, None]]), nv + nc
    if family == "dg1":
        return np.arange(3 * nc).reshape(nc, 3), 3 * nc
    if family == "dg0":
        return np.arange(nc)[:, None], nc
    raise ValueError(f"unknown scalar family {family!r}")


def _boundary_vertices(mesh: Mesh) -> np.ndarray:
    edges = np.fromiter(mesh.boundary_tags, dtype=np.int64)
    return np.unique(mesh.edges[edges].ravel())


def build_space(mesh: Mesh, family: str, vector: bool = False) -> FunctionSpace:
    """Assemble the global DOF map for one field.

    Velocity (vector) spaces also collect the DOFs with nonzero boundary
    trace, ready for Dirichlet elimination.
    """
    if family == "bernardi-raugel" or vector:
        elem = vector_element(family)
        if family == "bernardi-raugel":
            nv = mesh.n_vertices
            vpart = np.empty((mesh.n_cells, 6), dtype=np.int64)
            vpart[:, 0::2] = 2 * mesh.cells
            vpart[:, 1::2] = 2 * mesh.cells + 1
            cell_dofs = np.hstack([vpart, 2 * nv + mesh.cell_edges])
            n_dofs = 2 * nv + mesh.n_edges
        else:
            scalar_dofs, n_scalar = _scalar_cell_dofs(mesh, family)
            cell_dofs = np.empty((mesh.n_cells, 2 * scalar_dofs.shape[1]), dtype=np.int64)
            cell_dofs[:, 0::2] = 2 * scalar_dofs
            cell_dofs[:, 1::2] = 2 * scalar_dofs + 1
            n_dofs = 2 * n_scalar
        space = FunctionSpace(mesh, family, elem, True, cell_dofs, n_dofs)
        space.dirichlet_dofs = _trace_dofs(space)
        return space

    elem = scalar_element(family)
    cell_dofs, n_dofs = _scalar_cell_dofs(mesh, family)
    return FunctionSpace(mesh, family, elem, False, cell_dofs, n_dofs)


def _trace_dofs(space: FunctionSpace) -> np.ndarray:
    mesh = space.mesh
    bverts = _boundary_vertices(mesh)
    bedges = np.fromiter(mesh.boundary_tags, dtype=np.int64)
    dofs = [2 * bverts, 2 * bverts + 1]
    if space.family == "p2":
        mids = 2 * (mesh.n_vertices + bedges)
        dofs += [mids, mids + 1]
    elif space.family == "bernardi-raugel":
        dofs.append(2 * mesh.n_vertices + bedges)
    # the interior MINI bubble has zero trace and stays unconstrained
    return np.unique(np.concatenate(dofs))


def method_spaces(mesh: Mesh, family: str, vorticity: str = "dg1"):
    """Velocity/vorticity/pressure spaces of one discretisation stack.

    ``family``: taylor-hood (P2/P1), mini (P1+bubble/P1) or
    bernardi-raugel (P1+edge bubbles/P0).  The vorticity space is free;
    a pairing outside the ones with proven convergence rates only warns.
    """
    stacks = {
        "taylor-hood": ("p2", "p1", ("cg1", "dg1")),
        "mini": ("p1bubble", "p1", ("cg1", "dg1")),
        "bernardi-raugel": ("bernardi-raugel", "dg0", ("cg1", "dg0")),
    }
    if family not in stacks:
        raise ValueError(f"unknown element family {family!r}; choose from {sorted(stacks)}")
    wmap = {"cg1": "p1", "dg0": "dg0", "dg1": "dg1"}
    if vorticity not in wmap:
        raise ValueError(f"unknown vorticity space {vorticity!r}; choose from {sorted(wmap)}")
    vfam, pfam, covered = stacks[family]
    if vorticity not in covered:
        import warnings

        warnings.warn(
            f"vorticity space {vorticity!r} with {family!r} is outside the pairings "
            f"with proven rates {covered}",
            stacklevel=2,
        )
    V = build_space(mesh, vfam, vector=True)
    W = build_space(mesh, wmap[vorticity])
    Q = build_space(mesh, pfam)
    return V, W, Q


# ---------------------------------------------------------------------------
# boundary data


def _as_vector_fn(g):
    if g is None:
        return lambda x, y: np.zeros(np.shape(x) + (2,))
    if isinstance(g, (tuple, list, np.ndarray)):
        gx, gy = float(g[0]), float(g[1])
        return lambda x, y: np.stack([np.full_like(x, gx), np.full_like(x, gy)], axis=-1)
    return g


def boundary_values(space: FunctionSpace, g) -> np.ndarray:
    """Dirichlet values aligned with ``space.dirichlet_dofs``.

    ``g`` is a vectorized callable (x, y) -> (..., 2), a constant pair,
    None (zero), or a dict mapping boundary tags to any of those.  Tagged
    data is applied bottom, right, left, top, so at corners the top (lid)
    value overwrites the side values.
    """
    if not space.vector:
        raise ValueError("boundary_values expects a velocity (vector) space")
    mesh = space.mesh
    values = np.zeros(space.n_dofs)
    if isinstance(g, dict):
        unknown = set(g) - set(TAG_APPLICATION_ORDER)
        if unknown:
            raise ValueError(f"unknown boundary tags {sorted(unknown)}")
        groups = [(tag, _as_vector_fn(g.get(tag))) for tag in TAG_APPLICATION_ORDER]
    else:
        groups = [(None, _as_vector_fn(g))]

    for tag, fn in groups:
        edges = (
            np.fromiter(mesh.boundary_tags, dtype=np.int64)
            if tag is None
            else mesh.boundary_edges(tag)
        )
        if len(edges) == 0:
            continue
        va, vb = mesh.edges[edges, 0], mesh.edges[edges, 1]
        pa, pb = mesh.vertices[va], mesh.vertices[vb]
        ga = fn(pa[:, 0], pa[:, 1])
        gb = fn(pb[:, 0], pb[:, 1])
        values[2 * va], values[2 * va + 1] = ga[:, 0], ga[:, 1]
        values[2 * vb], values[2 * vb + 1] = gb[:, 0], gb[:, 1]
        if space.family == "p2":
            mid = 0.5 * (pa + pb)
            gm = fn(mid[:, 0], mid[:, 1])
            mdof = 2 * (mesh.n_vertices + edges)
            values[mdof], values[mdof + 1] = gm[:, 0], gm[:, 1]
        elif space.family == "bernardi-raugel":
            values[2 * mesh.n_vertices + edges] = _edge_flux_coefficients(
                mesh, edges, fn, ga, gb
            )
    return values[space.dirichlet_dofs]


def _edge_flux_coefficients(mesh, edges, fn, ga, gb):
    """Bubble coefficients matching the mean normal flux of ``fn`` per edge.

    The bubble with unit coefficient carries normal flux |e| / 6, and the
    vertex part carries the trapezoidal flux of the endpoint values.
    """
    va, vb = mesh.edges[edges, 0], mesh.edges[edges, 1]
    pa, pb = mesh.vertices[va], mesh.vertices[vb]
    normals = mesh.edge_normals[edges]
    lengths = mesh.edge_lengths[edges]
    pts = pa[:, None, :] + _EDGE_QP[None, :, None] * (pb - pa)[:, None, :]
    gq = fn(pts[..., 0], pts[..., 1])
    flux = lengths * np.einsum("q,eqi,ei->e", _EDGE_QW, gq, normals)
    lin_flux = 0.5 * lengths * np.einsum("ei,ei->e", ga + gb, normals)
    return (flux - lin_flux) / (lengths / 6.0)


# ---------------------------------------------------------------------------
# interpolation


def interpolate(space: FunctionSpace, fn) -> DiscreteField:
    """Nodal interpolant of an analytic (vectorized) point function.

    Exactly reproduces any function in the local space: Lagrange families
    by the usual node evaluation, the MINI bubble by matching the centroid
    value, and the edge-normal bubbles by matching edge-mean normal flux.
    """
    mesh = space.mesh
    vx, vy = mesh.vertices[:, 0], mesh.vertices[:, 1]
    centroids = mesh.vertices[mesh.cells].mean(axis=1)

    if space.vector:
        fn = _as_vector_fn(fn)
        coefs = np.zeros(space.n_dofs)
        gv = fn(vx, vy)
        coefs[0 : 2 * mesh.n_vertices : 2] = gv[:, 0]
        coefs[1 : 2 * mesh.n_vertices : 2] = gv[:, 1]
        if space.family == "p2":
            mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
            gm = fn(mids[:, 0], mids[:, 1])
            coefs[2 * mesh.n_vertices :: 2] = gm[:, 0]
            coefs[2 * mesh.n_vertices + 1 :: 2] = gm[:, 1]
        elif space.family == "p1bubble":
            gc = fn(centroids[:, 0], centroids[:, 1])
            vert_mean = gv[mesh.cells].mean(axis=1)
            bub = 27.0 * (gc - vert_mean)
            coefs[2 * mesh.n_vertices :: 2] = bub[:, 0]
            coefs[2 * mesh.n_vertices + 1 :: 2] = bub[:, 1]
        elif space.family == "bernardi-raugel":
            all_edges = np.arange(mesh.n_edges)
            pa = mesh.vertices[mesh.edges[:, 0]]
            pb = mesh.vertices[mesh.edges[:, 1]]
            ga = fn(pa[:, 0], pa[:, 1])
            gb = fn(pb[:, 0], pb[:, 1])
            coefs[2 * mesh.n_vertices :] = _edge_flux_coefficients(
                mesh, all_edges, fn, ga, gb
            )
        return DiscreteField(space, coefs)

    coefs = np.zeros(space.n_dofs)
    if space.family == "p1":
        coefs[:] = fn(vx, vy)
    elif space.family == "p2":
        coefs[: mesh.n_vertices] = fn(vx, vy)
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        coefs[mesh.n_vertices :] = fn(mids[:, 0], mids[:, 1])
    elif space.family == "p1bubble":
        gv = fn(vx, vy)
        coefs[: mesh.n_vertices] = gv
        gc = fn(centroids[:, 0], centroids[:, 1])
        coefs[mesh.n_vertices :] = 27.0 * (gc - gv[mesh.cells].mean(axis=1))
    elif space.family == "dg1":
        p = mesh.vertices[mesh.cells]
        coefs[:] = fn(p[..., 0], p[..., 1]).ravel()
    elif space.family == "dg0":
        coefs[:] = fn(centroids[:, 0], centroids[:, 1])
    else:  # pragma: no cover
        raise ValueError(f"interpolation not implemented for {space.family!r}")
    return DiscreteField(space, coefs)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(eq=False)
class SpaceTabulation:
    """Reference tabulation of one space at a fixed point set."""

    space: FunctionSpace
    points: np.ndarray
    shapes: np.ndarray  # (n_local, npts)
    dshapes: np.ndarray  # (n_local, npts, 2)
    dirs: np.ndarray | None  # (nc | 1, n_local, 2) for vector spaces


def tabulate(space: FunctionSpace, points: np.ndarray) -> SpaceTabulation:
    shapes, dshapes = space.element.tabulate(points)
    dirs = space.element.directions(space.mesh) if space.vector else None
    return SpaceTabulation(space, np.atleast_2d(points), shapes, dshapes, dirs)


def physical_gradients(tab: SpaceTabulation, inv: np.ndarray) -> np.ndarray:
    """Shape gradients in physical coordinates, (ncells, n_local, npts, 2)."""
    return np.einsum("bqk,cki->cbqi", tab.dshapes, inv)


def chunk_dirs(tab: SpaceTabulation, cells: slice | np.ndarray) -> np.ndarray:
    return tab.dirs if tab.dirs.shape[0] == 1 else tab.dirs[cells]


def eval_field(field: DiscreteField, tab: SpaceTabulation, cells, inv, grad: bool = False):
    """Field values (and optionally gradients) at the tabulated points.

    Returns values of shape (ncells, npts) or (ncells, npts, 2) and, when
    requested, gradients (ncells, npts, 2) or (ncells, npts, 2, 2) with
    layout grad[..., i, j] = d v_i / d x_j.
    """
    coefs = field.coefficients[field.space.cell_dofs[cells]]
    if not field.space.vector:
        vals = np.einsum("cb,bq->cq", coefs, tab.shapes)
        if not grad:
            return vals
        dphys = physical_gradients(tab, inv)
        return vals, np.einsum("cb,cbqj->cqj", coefs, dphys)
    dirs = chunk_dirs(tab, cells)
    vals = np.einsum("cb,bq,cbi->cqi", coefs, tab.shapes, dirs)
    if not grad:
        return vals
    dphys = physical_gradients(tab, inv)
    grads = np.einsum("cb,cbqj,cbi->cqij", coefs, dphys, dirs)
    return vals, grads


class EvalResult:
    """Pointwise value/derivative bundle from :func:`eval_cell`."""

    def __init__(self, value, gradient, curl2d=None, div2d=None, vector=False):
        self.value = value
        self.gradient = gradient
        self._curl = curl2d
        self._div = div2d
        self._vector = vector

    @property
    def curl2d(self):
        if not self._vector:
            raise ValueError("curl2d is only defined for vector fields")
        return self._curl

    @property
    def div2d(self):
        if not self._vector:
            raise ValueError("div2d is only defined for vector fields")
        return self._div


def eval_cell(field: DiscreteField, cell: int, point) -> EvalResult:
    """Evaluate a field inside one cell at a reference point."""
    from .mesh import cell_geometry

    space = field.space
    pt = np.asarray(point, dtype=float).reshape(1, 2)
    if pt[0, 0] < -1e-12 or pt[0, 1] < -1e-12 or pt.sum() > 1.0 + 1e-12:
        raise ValueError(f"reference point {point} lies outside the reference triangle")
    tab = tabulate(space, pt)
    _, inv_t, _ = cell_geometry(space.mesh, cell)
    inv = inv_t.T[None]
    cells = np.array([cell])
    if space.vector:
        vals, grads = eval_field(field, tab, cells, inv, grad=True)
        g = grads[0, 0]
        return EvalResult(vals[0, 0], g, curl2d=g[1, 0] - g[0, 1], div2d=g[0, 0] + g[1, 1], vector=True)
    vals, grads = eval_field(field, tab, cells, inv, grad=True)
    return EvalResult(float(vals[0, 0]), grads[0, 0])


def vertex_values(field: DiscreteField) -> np.ndarray:
    """Field sampled at mesh vertices; discontinuous fields are averaged
    over the incident cells."""
    mesh = field.space.mesh
    ref_corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tab = tabulate(field.space, ref_corners)
    vals = eval_field(field, tab, slice(None), None, grad=False)
    shape = (mesh.n_vertices, 2) if field.space.vector else (mesh.n_vertices,)
    acc = np.zeros(shape)
    count = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(acc, mesh.cells[:, k], vals[:, k])
        np.add.at(count, mesh.cells[:, k], 1.0)
    return acc / (count[:, None] if field.space.vector else count)
