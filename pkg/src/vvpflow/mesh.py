"""Structured triangular meshes of axis-aligned rectangles.

Each nx-by-ny grid square is split into two triangles along the
lower-left to upper-right diagonal.  Entity numbering is deterministic
(lexicographic vertices, row-major cells, lexicographically sorted
edges) so that downstream matrix assembly is reproducible bit for bit.
Meshes are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

import numpy as np

#: Tags assigned to boundary edges of the rectangle.
BOUNDARY_TAGS = ("bottom", "right", "top", "left")

#: Order in which tagged Dirichlet data is applied; later tags overwrite
#: values at shared corner vertices, so the top (lid) value wins.
TAG_APPLICATION_ORDER = ("bottom", "right", "left", "top")


class Mesh:
    """Triangulation of a rectangle with edge connectivity and boundary tags.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array
        Vertex indices, counterclockwise.
    edges : (ne, 2) int array
        Vertex index pairs with ``edges[i, 0] < edges[i, 1]``, sorted
        lexicographically.
    cell_edges : (nc, 3) int array
        Global index of local edge k = (cells[c, k], cells[c, (k+1) % 3]).
    edge_cells : (ne, 2) int array
        Incident cells; second entry is -1 for boundary edges.
    edge_normals : (ne, 2) float array
        Unit normal of each edge, fixed by the canonical edge direction
        (low vertex to high vertex, rotated clockwise).  Shared by both
        incident cells.
    boundary_tags : dict int -> str
        Side tag for every boundary edge.
    h : float
        Maximum cell diameter.
    """

    def __init__(self, nx: int, ny: int, rect: tuple[float, float, float, float]):
        if nx < 1 or ny < 1:
            raise ValueError(f"subdivision counts must be >= 1, got nx={nx}, ny={ny}")
        x0, y0, x1, y1 = rect
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate rectangle {rect}")
        self.nx = int(nx)
        self.ny = int(ny)
        self.rect = (float(x0), float(y0), float(x1), float(y1))

        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        xx, yy = np.meshgrid(xs, ys)  # vertex (ix, iy) -> iy * (nx + 1) + ix
        self.vertices = np.column_stack([xx.ravel(), yy.ravel()])

        self.cells = self._build_cells(nx, ny)
        self._check_orientation()
        self._build_edges()
        self._tag_boundary()
        self.h = float(self._cell_diameters().max())

    @staticmethod
    def _build_cells(nx: int, ny: int) -> np.ndarray:
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
        ix, iy = ix.ravel(), iy.ravel()
        v00 = iy * (nx + 1) + ix
        v10 = v00 + 1
        v01 = v00 + (nx + 1)
        v11 = v01 + 1
        cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
        cells[0::2] = np.column_stack([v00, v10, v11])  # lower triangle
        cells[1::2] = np.column_stack([v00, v11, v01])  # upper triangle
        return cells

    def _check_orientation(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(signed <= 0):
            raise ValueError("mesh contains non-counterclockwise cells")

    def _build_edges(self):
        nc = len(self.cells)
        # local edge k joins local vertices k and k+1 (mod 3)
        pairs = np.concatenate(
            [self.cells[:, [0, 1]], self.cells[:, [1, 2]], self.cells[:, [2, 0]]]
        )
        canon = np.sort(pairs, axis=1)
        edges, inverse = np.unique(canon, axis=0, return_inverse=True)
        self.edges = edges
        self.cell_edges = inverse.reshape(3, nc).T.copy()

        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        for c in range(nc):
            for e in self.cell_edges[c]:
                edge_cells[e, 0 if edge_cells[e, 0] < 0 else 1] = c
        self.edge_cells = edge_cells

        t = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
        length = np.hypot(t[:, 0], t[:, 1])
        self.edge_lengths = length
        self.edge_normals = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]

    def _tag_boundary(self):
        x0, y0, x1, y1 = self.rect
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        self.boundary_tags: dict[int, str] = {}
        boundary = np.nonzero(self.edge_cells[:, 1] < 0)[0]
        mid = 0.5 * (self.vertices[self.edges[boundary, 0]] + self.vertices[self.edges[boundary, 1]])
        for e, (mx, my) in zip(boundary, mid):
            if abs(my - y0) < tol:
                tag = "bottom"
            elif abs(mx - x1) < tol:
                tag = "right"
            elif abs(my - y1) < tol:
                tag = "top"
            elif abs(mx - x0) < tol:
                tag = "left"
            else:  # pragma: no cover - structured construction precludes this
                raise ValueError(f"boundary edge {e} lies on no rectangle side")
            self.boundary_tags[int(e)] = tag

    def _cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d01 = np.hypot(*(p[:, 0] - p[:, 1]).T)
        d12 = np.hypot(*(p[:, 1] - p[:, 2]).T)
        d20 = np.hypot(*(p[:, 2] - p[:, 0]).T)
        return np.maximum(np.maximum(d01, d12), d20)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def boundary_edges(self, tag: str | None = None) -> np.ndarray:
        """Indices of boundary edges, optionally restricted to one side."""
        if tag is None:
            return np.fromiter(self.boundary_tags, dtype=np.int64)
        if tag not in BOUNDARY_TAGS:
            raise ValueError(f"unknown boundary tag {tag!r}")
        return np.fromiter(
            (e for e, t in self.boundary_tags.items() if t == tag), dtype=np.int64
        )

    def __repr__(self):
        return (
            f"Mesh({self.nx}x{self.ny} on {self.rect}, "
            f"{self.n_vertices} vertices, {self.n_cells} cells, h={self.h:.4g})"
        )


def build_structured(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Triangulate ``rect`` into ``2 * nx * ny`` triangles."""
    return Mesh(nx, ny, rect)


def refine_uniform(mesh: Mesh) -> Mesh:
    """One level of uniform refinement; halves the mesh size exactly."""
    return Mesh(2 * mesh.nx, 2 * mesh.ny, mesh.rect)


def cell_geometry(mesh: Mesh, cell: int):
    """Affine map data of one cell.

    Returns the Jacobian of the map from the reference triangle
    {(0,0), (1,0), (0,1)}, its inverse transpose, and the cell area.
    """
    p = mesh.vertices[mesh.cells[cell]]
    jac = np.column_stack([p[1] - p[0], p[2] - p[0]])
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det <= 0 or not np.isfinite(det):
        raise ValueError(f"degenerate cell {cell}: |J| = {det}")
    inv_t = np.array([[jac[1, 1], -jac[1, 0]], [-jac[0, 1], jac[0, 0]]]) / det
    return jac, inv_t, 0.5 * det


def geometry_arrays(mesh: Mesh):
    """Batched Jacobians, inverses and determinants for all cells.

    Returns ``(jac, inv, det)`` with shapes (nc, 2, 2), (nc, 2, 2), (nc,);
    ``inv`` is the plain inverse (not transposed).
    """
    p = mesh.vertices[mesh.cells]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    return jac, inv, det
