"""FEM solver: mesh families, patch tests, convergence, recovery, resampling."""

import numpy as np
import pytest

from elastisr import (
    DIRICHLET,
    NEUMANN,
    DomainSpec,
    FemSolveError,
    LoadCase,
    MaterialParams,
    MeshError,
    NodalSolution,
    assemble_and_solve,
    build_coarse_mesh,
    displacement_l2_error,
    recover_nodal_stress,
    sample_to_grid,
)
from elastisr.elasticity import analytical_displacement
from elastisr.fem import ElasticitySolver, _triangle_geometry


ALL_DIRICHLET = DomainSpec.unit_square(
    {"bottom": DIRICHLET, "top": DIRICHLET, "left": DIRICHLET, "right": DIRICHLET}
)


def test_mesh_family_node_counts(domain):
    # the default coarse mesh: 4x4 crisscross cells, 25 corners + 16 centers
    mesh = build_coarse_mesh(domain, 41)
    assert (mesh.family, mesh.divisions, mesh.num_nodes) == ("crisscross", 4, 41)
    assert mesh.num_triangles == 64
    # refinement ladder used by the convergence study
    for target, nodes in ((145, 145), (545, 545), (2113, 2113)):
        assert build_coarse_mesh(domain, target).num_nodes == nodes
    # smallest diagonal mesh and the fine evaluation mesh
    assert build_coarse_mesh(domain, 9).num_nodes == 9
    fine = build_coarse_mesh(domain, 16384)
    assert (fine.family, fine.divisions, fine.num_nodes) == ("diagonal", 127, 16384)


def test_mesh_errors(domain):
    with pytest.raises(MeshError):
        build_coarse_mesh(domain, 5)
    with pytest.raises(MeshError):
        build_coarse_mesh(domain, 11)  # nothing within 15% of 11 in either family


def test_mesh_geometry(domain):
    for target in (9, 41, 145):
        mesh = build_coarse_mesh(domain, target)
        _, _, two_area = _triangle_geometry(mesh)
        assert np.all(two_area > 0), "triangles must be counter-clockwise"
        assert np.isclose(two_area.sum() / 2.0, domain.width * domain.height)
        # every triangle index valid, all nodes coordinates inside the rectangle
        assert mesh.triangles.min() >= 0 and mesh.triangles.max() < mesh.num_nodes
        assert mesh.nodes.min() >= 0.0
        # boundary edges: 4 sides x divisions segments, endpoints on the boundary
        assert len(mesh.boundary_edges) == 4 * mesh.divisions
        for (a, b), tag in mesh.boundary_edges:
            for n in (a, b):
                x, y = mesh.nodes[n]
                on_boundary = (
                    np.isclose(x, 0) or np.isclose(x, domain.width)
                    or np.isclose(y, 0) or np.isclose(y, domain.height)
                )
                assert on_boundary, f"edge node {n} of {tag} not on boundary"


def _linear_data(coef):
    a, b, c, d, e, f = coef

    def displacement_fn(x, y, load):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return a + b * x + c * y, d + e * x + f * y

    return displacement_fn


def test_patch_test_all_dirichlet(mat):
    """Linear displacement with zero body force is reproduced to roundoff."""
    coef = (0.1, 0.4, -0.3, -0.2, 0.25, 0.5)
    mesh = build_coarse_mesh(ALL_DIRICHLET, 41)
    sol = assemble_and_solve(
        mesh,
        mat,
        LoadCase(q=0.0),
        ALL_DIRICHLET,
        body_fn=lambda x, y, load: (np.zeros_like(np.asarray(x, float)),) * 2,
        displacement_fn=_linear_data(coef),
    )
    ex, ey = _linear_data(coef)(mesh.nodes[:, 0], mesh.nodes[:, 1], None)
    np.testing.assert_allclose(sol.ux, ex, atol=1e-12)
    np.testing.assert_allclose(sol.uy, ey, atol=1e-12)
    # constant strain -> constant recovered stress at every node, corners included
    lam, mu = mat.lame_lambda, mat.lame_mu
    exx, eyy, gxy = coef[1], coef[5], coef[2] + coef[4]
    np.testing.assert_allclose(sol.sxx, lam * (exx + eyy) + 2 * mu * exx, atol=1e-11)
    np.testing.assert_allclose(sol.syy, lam * (exx + eyy) + 2 * mu * eyy, atol=1e-11)
    np.testing.assert_allclose(sol.sxy, mu * gxy, atol=1e-11)


def test_patch_test_with_neumann_edge(mat, domain):
    """Same linear field, but the top edge is loaded by its exact traction."""
    coef = (0.0, 0.2, 0.1, 0.0, -0.15, 0.3)
    lam, mu = mat.lame_lambda, mat.lame_mu
    exx, eyy, gxy = coef[1], coef[5], coef[2] + coef[4]
    sxx = lam * (exx + eyy) + 2 * mu * exx
    syy = lam * (exx + eyy) + 2 * mu * eyy
    sxy = mu * gxy

    def traction_fn(x, y, normal, load):
        x = np.asarray(x, dtype=float)
        n1, n2 = normal
        return (
            np.full_like(x, sxx * n1 + sxy * n2),
            np.full_like(x, sxy * n1 + syy * n2),
        )

    mesh = build_coarse_mesh(domain, 145)
    sol = assemble_and_solve(
        mesh,
        mat,
        LoadCase(q=0.0),
        domain,
        body_fn=lambda x, y, load: (np.zeros_like(np.asarray(x, float)),) * 2,
        displacement_fn=_linear_data(coef),
        traction_fn=traction_fn,
    )
    ex, ey = _linear_data(coef)(mesh.nodes[:, 0], mesh.nodes[:, 1], None)
    np.testing.assert_allclose(sol.ux, ex, atol=1e-11)
    np.testing.assert_allclose(sol.uy, ey, atol=1e-11)


def test_zero_data_gives_zero_solution(mat):
    mesh = build_coarse_mesh(ALL_DIRICHLET, 41)
    zero2 = lambda x, y, load: (np.zeros_like(np.asarray(x, float)),) * 2  # noqa: E731
    sol = assemble_and_solve(
        mesh, mat, LoadCase(q=0.0), ALL_DIRICHLET, body_fn=zero2, displacement_fn=zero2
    )
    for ch in ("ux", "uy", "sxx", "syy", "sxy"):
        np.testing.assert_allclose(sol.channel(ch), 0.0, atol=1e-14)


def test_dirichlet_nodes_match_data_exactly(mat, domain):
    load = LoadCase(q=3.0)
    mesh = build_coarse_mesh(domain, 145)
    sol = assemble_and_solve(mesh, mat, load, domain)
    for tag in domain.dirichlet_edges:
        nodes = mesh.edge_nodes(tag)
        ex, ey = analytical_displacement(mesh.nodes[nodes, 0], mesh.nodes[nodes, 1], load)
        np.testing.assert_allclose(sol.ux[nodes], ex, atol=1e-15)
        np.testing.assert_allclose(sol.uy[nodes], ey, atol=1e-15)


def test_convergence_second_order(mat, domain):
    load = LoadCase(q=2.0)
    errs = []
    for target in (41, 145, 545, 2113):
        mesh = build_coarse_mesh(domain, target)
        sol = assemble_and_solve(mesh, mat, load, domain)
        errs.append(displacement_l2_error(mesh, sol, load))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert all(o >= 1.8 for o in orders), f"observed orders {orders}"


def test_fine_mesh_stress_at_top_center(mat, domain):
    """Recovered s_yy at (1/2, 1) on a fine even-division mesh is within 5% of 8."""
    mesh = build_coarse_mesh(domain, 129 * 129)
    sol = ElasticitySolver(mesh, mat, domain).solve(LoadCase(q=4.0))
    node = int(
        np.argmin(np.abs(mesh.nodes[:, 0] - 0.5) + np.abs(mesh.nodes[:, 1] - 1.0))
    )
    assert np.allclose(mesh.nodes[node], [0.5, 1.0])
    assert abs(sol.syy[node] - 8.0) <= 0.05 * 8.0


def test_solver_reuse_matches_one_shot(mat, domain):
    mesh = build_coarse_mesh(domain, 41)
    solver = ElasticitySolver(mesh, mat, domain)
    for q in (0.0, 1.5, 4.0):
        a = solver.solve(LoadCase(q=q))
        b = assemble_and_solve(mesh, mat, LoadCase(q=q), domain)
        np.testing.assert_allclose(a.ux, b.ux, atol=1e-14)
        np.testing.assert_allclose(a.sxy, b.sxy, atol=1e-13)


def test_no_dirichlet_raises(mat):
    all_neumann = DomainSpec.unit_square(
        {"bottom": NEUMANN, "top": NEUMANN, "left": NEUMANN, "right": NEUMANN}
    )
    mesh = build_coarse_mesh(all_neumann, 41)
    with pytest.raises(FemSolveError):
        assemble_and_solve(mesh, MaterialParams(), LoadCase(q=1.0), all_neumann)


def test_recover_nodal_stress_constant_field(mat, domain):
    mesh = build_coarse_mesh(domain, 145)
    # u = (2x, -y): exx=2, eyy=-1, gxy=0
    sxx, syy, sxy = recover_nodal_stress(
        mesh, 2.0 * mesh.nodes[:, 0], -mesh.nodes[:, 1], mat
    )
    lam, mu = mat.lame_lambda, mat.lame_mu
    np.testing.assert_allclose(sxx, lam * 1.0 + 2 * mu * 2.0, atol=1e-12)
    np.testing.assert_allclose(syy, lam * 1.0 - 2 * mu * 1.0, atol=1e-12)
    np.testing.assert_allclose(sxy, 0.0, atol=1e-12)


def test_sample_to_grid_hits_center_nodes(mat, domain):
    """4x4 grid cell centers coincide with crisscross center nodes exactly."""
    mesh = build_coarse_mesh(domain, 41)
    sol = assemble_and_solve(mesh, mat, LoadCase(q=2.0), domain)
    grid = sample_to_grid(mesh, sol, 4, domain)
    assert grid.resolution == (4, 4)
    assert grid.q == 2.0
    centers = mesh.nodes[25:]  # corner grid first, then the 16 cell centers
    X, Y = grid.node_coords()
    for k in range(16):
        i = np.argmin(np.abs(centers[k, 0] - X[0]))
        j = np.argmin(np.abs(centers[k, 1] - Y[:, 0]))
        assert np.isclose(grid.channel("ux")[j, i], sol.ux[25 + k], atol=1e-13)


def test_sample_to_grid_reproduces_linear_fields(mat, domain):
    mesh = build_coarse_mesh(domain, 41)
    nodes = mesh.nodes
    sol = NodalSolution(
        ux=1.0 + 2.0 * nodes[:, 0],
        uy=nodes[:, 1] - nodes[:, 0],
        sxx=np.full(mesh.num_nodes, 3.0),
        syy=nodes[:, 0] + nodes[:, 1],
        sxy=np.zeros(mesh.num_nodes),
        q=0.0,
    )
    grid = sample_to_grid(mesh, sol, 8, domain)
    X, Y = grid.node_coords()
    np.testing.assert_allclose(grid.channel("ux"), 1.0 + 2.0 * X, atol=1e-13)
    np.testing.assert_allclose(grid.channel("uy"), Y - X, atol=1e-13)
    np.testing.assert_allclose(grid.channel("sxx"), 3.0, atol=1e-13)
    np.testing.assert_allclose(grid.channel("syy"), X + Y, atol=1e-13)


def test_sample_to_grid_rejects_outside_points(mat, domain):
    mesh = build_coarse_mesh(domain, 41)
    sol = assemble_and_solve(mesh, mat, LoadCase(q=0.0), domain)
    wide = DomainSpec(width=2.0, height=1.0)
    with pytest.raises(MeshError, match=r"outside"):
        sample_to_grid(mesh, sol, 8, wide)
