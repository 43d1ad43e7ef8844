"""P1 triangular finite elements for plane-strain elasticity on a rectangle.

Two structured mesh families cover the resolutions used by the dataset:

* ``diagonal``: an (m+1) x (m+1) corner grid, each cell split into two
  triangles along one diagonal; (m+1)^2 nodes.
* ``crisscross``: the same corner grid plus one node at each cell center,
  each cell split into four triangles; (m+1)^2 + m^2 nodes.

The stiffness matrix depends only on mesh and material, so
:class:`ElasticitySolver` factorizes it once and back-substitutes per load
case. Fields are transferred to uniform grids by linear interpolation on the
same triangulation (no re-triangulation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elasticity import (
    DIRICHLET,
    EDGE_NORMALS,
    DomainSpec,
    LoadCase,
    MaterialParams,
    analytical_displacement,
    analytical_traction,
    body_force,
    constitutive_stress,
)
from .errors import FemSolveError, MeshError

# Fixed channel order used by every grid artifact in the package.
CHANNELS = ("ux", "uy", "sxx", "syy", "sxy")

DEFAULT_COARSE_NODES = 41
DEFAULT_FINE_NODES = 16384


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of the rectangle with tagged boundary edges."""

    nodes: np.ndarray  # (N, 2) float64
    triangles: np.ndarray  # (T, 3) int, counter-clockwise
    boundary_edges: tuple  # ((node_a, node_b), edge_tag) pairs
    family: str = "custom"
    divisions: int = 0

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def edge_nodes(self, tag: str) -> np.ndarray:
        """Sorted unique node indices lying on the named boundary edge."""
        ids = [pair for pair, t in self.boundary_edges if t == tag]
        if not ids:
            return np.empty(0, dtype=int)
        return np.unique(np.asarray(ids, dtype=int).ravel())


@dataclass
class NodalSolution:
    """Displacement and recovered stress at mesh nodes for one load case."""

    ux: np.ndarray
    uy: np.ndarray
    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    q: float = 0.0

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass
class FieldGrid:
    """Uniform grid of the five field channels, nodes at cell centers.

    ``values`` has shape (5, ny, nx) in the order ``CHANNELS``; node (j, i)
    sits at ((i + 1/2) hx, (j + 1/2) hy), so nx * hx spans the domain width.
    """

    values: np.ndarray
    spacing: tuple[float, float]
    q: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[0] != len(CHANNELS):
            raise ValueError(
                f"expected values of shape (5, ny, nx), got {self.values.shape}"
            )
        hx, hy = self.spacing
        if not (hx > 0 and hy > 0):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def resolution(self) -> tuple[int, int]:
        """(nx, ny) node counts."""
        return self.values.shape[2], self.values.shape[1]

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrids X, Y of shape (ny, nx) with nodes at cell centers."""
        nx, ny = self.resolution
        hx, hy = self.spacing
        x = (np.arange(nx) + 0.5) * hx
        y = (np.arange(ny) + 0.5) * hy
        return np.meshgrid(x, y)

    def channel(self, name: str) -> np.ndarray:
        return self.values[CHANNELS.index(name)]


def _structured_corner_grid(m: int, domain: DomainSpec):
    xs = np.linspace(0.0, domain.width, m + 1)
    ys = np.linspace(0.0, domain.height, m + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (m + 1) + i  # noqa: E731
    return nodes, idx


def _boundary_edges(m: int, idx) -> tuple:
    edges = []
    for i in range(m):
        edges.append(((idx(i, 0), idx(i + 1, 0)), "bottom"))
        edges.append(((idx(i, m), idx(i + 1, m)), "top"))
    for j in range(m):
        edges.append(((idx(0, j), idx(0, j + 1)), "left"))
        edges.append(((idx(m, j), idx(m, j + 1)), "right"))
    return tuple(edges)


def _build_diagonal(m: int, domain: DomainSpec) -> Mesh:
    nodes, idx = _structured_corner_grid(m, domain)
    tris = []
    for j in range(m):
        for i in range(m):
            n00, n10 = idx(i, j), idx(i + 1, j)
            n01, n11 = idx(i, j + 1), idx(i + 1, j + 1)
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    return Mesh(
        nodes=nodes,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_edges=_boundary_edges(m, idx),
        family="diagonal",
        divisions=m,
    )


def _build_crisscross(m: int, domain: DomainSpec) -> Mesh:
    corners, idx = _structured_corner_grid(m, domain)
    hx = domain.width / m
    hy = domain.height / m
    cx = (np.arange(m) + 0.5) * hx
    cy = (np.arange(m) + 0.5) * hy
    CX, CY = np.meshgrid(cx, cy)
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    nodes = np.vstack([corners, centers])
    base = corners.shape[0]
    cidx = lambda i, j: base + j * m + i  # noqa: E731
    tris = []
    for j in range(m):
        for i in range(m):
            n00, n10 = idx(i, j), idx(i + 1, j)
            n01, n11 = idx(i, j + 1), idx(i + 1, j + 1)
            c = cidx(i, j)
            tris.append((n00, n10, c))
            tris.append((n10, n11, c))
            tris.append((n11, n01, c))
            tris.append((n01, n00, c))
    return Mesh(
        nodes=nodes,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_edges=_boundary_edges(m, idx),
        family="crisscross",
        divisions=m,
    )


def build_coarse_mesh(domain: DomainSpec, target_nodes: int) -> Mesh:
    """Build the structured mesh whose node count lands closest to the target.

    Picks between the diagonal and crisscross families. Raises
    :class:`MeshError` if no candidate lands within 15% of ``target_nodes``.
    """
    if target_nodes < 9:
        raise MeshError(f"target_nodes must be at least 9, got {target_nodes}")
    best = None  # (abs error, family, m, count)
    m = 1
    while True:
        for fam, count in (
            ("diagonal", (m + 1) ** 2),
            ("crisscross", (m + 1) ** 2 + m**2),
        ):
            err = abs(count - target_nodes)
            if best is None or err < best[0]:
                best = (err, fam, m, count)
        if (m + 1) ** 2 > 1.3 * target_nodes + 4:
            break
        m += 1
    err, fam, m, count = best
    if err > 0.15 * target_nodes:
        raise MeshError(
            f"no structured mesh within 15% of {target_nodes} nodes; nearest is {count}"
        )
    builder = _build_diagonal if fam == "diagonal" else _build_crisscross
    mesh = builder(m, domain)
    _, _, two_area = _triangle_geometry(mesh)
    if np.any(two_area <= 0):
        raise MeshError("mesh contains non-positively-oriented triangles")
    return mesh


def _triangle_geometry(mesh: Mesh):
    """Per-triangle shape constants: b_i, c_i and twice the signed area."""
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    two_area = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    return b, c, two_area


def _elasticity_matrix(mat: MaterialParams) -> np.ndarray:
    lam, mu = mat.lame_lambda, mat.lame_mu
    return np.array(
        [[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]]
    )


def element_strains(mesh: Mesh, ux: np.ndarray, uy: np.ndarray):
    """Constant per-element strains (eps_xx, eps_yy, eps_xy) from nodal displacement."""
    b, c, two_area = _triangle_geometry(mesh)
    tri = mesh.triangles
    exx = (b * ux[tri]).sum(axis=1) / two_area
    eyy = (c * uy[tri]).sum(axis=1) / two_area
    gxy = ((c * ux[tri]).sum(axis=1) + (b * uy[tri]).sum(axis=1)) / two_area
    return exx, eyy, 0.5 * gxy


def recover_nodal_stress(mesh: Mesh, ux: np.ndarray, uy: np.ndarray, mat: MaterialParams):
    """Area-weighted average of adjacent element stresses at each node."""
    exx, eyy, exy = element_strains(mesh, ux, uy)
    sxx_e, syy_e, sxy_e = constitutive_stress(exx, eyy, exy, mat)
    _, _, two_area = _triangle_geometry(mesh)
    area = 0.5 * two_area
    flat = mesh.triangles.ravel()
    wsum = np.zeros(mesh.num_nodes)
    np.add.at(wsum, flat, np.repeat(area, 3))
    out = []
    for s_e in (sxx_e, syy_e, sxy_e):
        acc = np.zeros(mesh.num_nodes)
        np.add.at(acc, flat, np.repeat(area * s_e, 3))
        out.append(acc / wsum)
    return tuple(out)


class ElasticitySolver:
    """Reusable solver: assemble and factorize once, solve per load case.

    The boundary data callables default to the manufactured-solution oracle;
    tests substitute patch-test data through them. Signatures:
    ``body_fn(x, y, load)``, ``displacement_fn(x, y, load)``,
    ``traction_fn(x, y, normal, load)``.
    """

    def __init__(
        self,
        mesh: Mesh,
        mat: MaterialParams,
        domain: DomainSpec | None = None,
        *,
        body_fn=None,
        displacement_fn=None,
        traction_fn=None,
    ):
        self.mesh = mesh
        self.mat = mat
        self.domain = DomainSpec() if domain is None else domain
        self.body_fn = body_fn or (lambda x, y, load: body_force(x, y, load, mat))
        self.displacement_fn = displacement_fn or (
            lambda x, y, load: analytical_displacement(x, y, load)
        )
        self.traction_fn = traction_fn or (
            lambda x, y, normal, load: analytical_traction(x, y, normal, load, mat)
        )

        self._b, self._c, self._two_area = _triangle_geometry(self.mesh)
        if np.any(self._two_area <= 0):
            raise FemSolveError("mesh has non-positive triangle areas")
        self._area = 0.5 * self._two_area
        self._assemble_stiffness()
        self._partition_dofs()

    def _assemble_stiffness(self):
        tri = self.mesh.triangles
        T = tri.shape[0]
        b, c, two_area = self._b, self._c, self._two_area
        B = np.zeros((T, 3, 6))
        B[:, 0, 0::2] = b / two_area[:, None]
        B[:, 1, 1::2] = c / two_area[:, None]
        B[:, 2, 0::2] = c / two_area[:, None]
        B[:, 2, 1::2] = b / two_area[:, None]
        D = _elasticity_matrix(self.mat)
        Ke = self._area[:, None, None] * np.einsum("tra,rs,tsb->tab", B, D, B)
        dof = np.empty((T, 6), dtype=np.int64)
        dof[:, 0::2] = 2 * tri
        dof[:, 1::2] = 2 * tri + 1
        rows = np.repeat(dof, 6, axis=1).ravel()
        cols = np.tile(dof, (1, 6)).ravel()
        n = 2 * self.mesh.num_nodes
        self._K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsc()

    def _partition_dofs(self):
        part = self.domain.partition
        dir_nodes: set[int] = set()
        for (a, bnode), tag in self.mesh.boundary_edges:
            if part[tag] == DIRICHLET:
                dir_nodes.add(int(a))
                dir_nodes.add(int(bnode))
        if not dir_nodes:
            raise FemSolveError(
                "no Dirichlet constraints in BC partition; stiffness is singular"
            )
        self._dir_nodes = np.array(sorted(dir_nodes), dtype=np.int64)
        n = 2 * self.mesh.num_nodes
        cons = np.zeros(n, dtype=bool)
        cons[2 * self._dir_nodes] = True
        cons[2 * self._dir_nodes + 1] = True
        self._cons_mask = cons
        self._free = np.flatnonzero(~cons)
        self._consd = np.flatnonzero(cons)
        K = self._K
        self._K_ff = K[self._free][:, self._free].tocsc()
        self._K_fc = K[self._free][:, self._consd].tocsc()
        try:
            self._lu = spla.splu(self._K_ff)
        except RuntimeError as exc:  # singular factorization
            raise FemSolveError(f"stiffness factorization failed: {exc}") from exc

    def _body_load(self, load: LoadCase) -> np.ndarray:
        """Consistent body-force load via the three-midpoint (degree-2) rule."""
        p = self.mesh.nodes[self.mesh.triangles]  # (T, 3, 2)
        mids = 0.5 * (p + np.roll(p, -1, axis=1))  # m01, m12, m20
        bx, by = self.body_fn(mids[..., 0], mids[..., 1], load)  # (T, 3)
        w = self._area / 6.0
        # vertex i touches the midpoints of its two incident edges
        fx = np.stack(
            [bx[:, 0] + bx[:, 2], bx[:, 0] + bx[:, 1], bx[:, 1] + bx[:, 2]], axis=1
        )
        fy = np.stack(
            [by[:, 0] + by[:, 2], by[:, 0] + by[:, 1], by[:, 1] + by[:, 2]], axis=1
        )
        f = np.zeros(2 * self.mesh.num_nodes)
        tri = self.mesh.triangles
        np.add.at(f, (2 * tri).ravel(), (w[:, None] * fx).ravel())
        np.add.at(f, (2 * tri + 1).ravel(), (w[:, None] * fy).ravel())
        return f

    def _neumann_load(self, load: LoadCase) -> np.ndarray:
        """Edge traction load via two-point Gauss quadrature per segment."""
        f = np.zeros(2 * self.mesh.num_nodes)
        part = self.domain.partition
        g = 0.5 / np.sqrt(3.0)
        s_pts = (0.5 - g, 0.5 + g)
        for (a, b), tag in self.mesh.boundary_edges:
            if part[tag] == DIRICHLET:
                continue
            pa, pb = self.mesh.nodes[a], self.mesh.nodes[b]
            length = float(np.hypot(*(pb - pa)))
            normal = EDGE_NORMALS[tag]
            for s in s_pts:
                pt = pa + s * (pb - pa)
                tx, ty = self.traction_fn(pt[0], pt[1], normal, load)
                w = 0.5 * length
                f[2 * a] += w * (1.0 - s) * float(tx)
                f[2 * a + 1] += w * (1.0 - s) * float(ty)
                f[2 * b] += w * s * float(tx)
                f[2 * b + 1] += w * s * float(ty)
        return f

    def solve(self, load: LoadCase) -> NodalSolution:
        f = self._body_load(load) + self._neumann_load(load)
        xy = self.mesh.nodes[self._dir_nodes]
        ubx, uby = self.displacement_fn(xy[:, 0], xy[:, 1], load)
        uc = np.empty(2 * self._dir_nodes.size)
        uc[0::2] = ubx
        uc[1::2] = uby
        rhs = f[self._free] - self._K_fc @ uc
        uf = self._lu.solve(rhs)
        if not np.all(np.isfinite(uf)):
            raise FemSolveError("linear solve produced non-finite displacement")
        u = np.empty(2 * self.mesh.num_nodes)
        u[self._free] = uf
        u[self._consd] = uc
        ux, uy = u[0::2], u[1::2]
        sxx, syy, sxy = recover_nodal_stress(self.mesh, ux, uy, self.mat)
        return NodalSolution(ux=ux, uy=uy, sxx=sxx, syy=syy, sxy=sxy, q=load.q)


def assemble_and_solve(
    mesh: Mesh,
    mat: MaterialParams,
    load: LoadCase,
    domain: DomainSpec | None = None,
    **data_fns,
) -> NodalSolution:
    """One-shot FEM solve. See :class:`ElasticitySolver` for the reusable form."""
    return ElasticitySolver(mesh, mat, domain, **data_fns).solve(load)


def sample_to_grid(mesh: Mesh, sol: NodalSolution, resolution, domain: DomainSpec | None = None) -> FieldGrid:
    """Linearly interpolate a nodal solution onto a cell-centered uniform grid.

    Interpolation runs on the FEM triangulation itself, so grid values are
    exactly the P1 field evaluated at grid nodes.
    """
    import matplotlib.tri as mtri

    domain = DomainSpec() if domain is None else domain
    if np.isscalar(resolution):
        nx = ny = int(resolution)
    else:
        nx, ny = (int(r) for r in resolution)
    hx, hy = domain.width / nx, domain.height / ny
    x = (np.arange(nx) + 0.5) * hx
    y = (np.arange(ny) + 0.5) * hy
    X, Y = np.meshgrid(x, y)

    triang = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    finder = triang.get_trifinder()
    values = np.empty((len(CHANNELS), ny, nx))
    for k, name in enumerate(CHANNELS):
        interp = mtri.LinearTriInterpolator(triang, sol.channel(name), trifinder=finder)
        z = interp(X, Y)
        if np.ma.is_masked(z) and z.mask.any():
            j, i = np.argwhere(z.mask)[0]
            raise MeshError(
                f"grid node ({X[j, i]:.6g}, {Y[j, i]:.6g}) falls outside the mesh"
            )
        values[k] = np.ma.getdata(z)
    return FieldGrid(values=values, spacing=(hx, hy), q=sol.q)


def displacement_l2_error(mesh: Mesh, sol: NodalSolution, load: LoadCase) -> float:
    """Relative L2(domain) error of FEM displacement against the closed form.

    Uses the degree-2 edge-midpoint rule on each triangle for both numerator
    and denominator.
    """
    p = mesh.nodes[mesh.triangles]
    mids = 0.5 * (p + np.roll(p, -1, axis=1))  # (T, 3, 2)
    tri = mesh.triangles
    uh_x = 0.5 * (sol.ux[tri] + np.roll(sol.ux[tri], -1, axis=1))
    uh_y = 0.5 * (sol.uy[tri] + np.roll(sol.uy[tri], -1, axis=1))
    ex_x, ex_y = analytical_displacement(mids[..., 0], mids[..., 1], load)
    _, _, two_area = _triangle_geometry(mesh)
    w = (0.5 * two_area / 3.0)[:, None]
    err = np.sum(w * ((uh_x - ex_x) ** 2 + (uh_y - ex_y) ** 2))
    ref = np.sum(w * (ex_x**2 + ex_y**2))
    return float(np.sqrt(err / ref))
