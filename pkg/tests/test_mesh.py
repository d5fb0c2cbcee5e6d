import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.errors import MeshError
from twoscale.mesh import (DIRICHLET, GAS, SOLID, Mesh, build_cell_mesh, build_macro_mesh,
                           build_strip_cell_mesh, mesh_quality, periodic_partner, signed_areas,
                           validate_mesh)


def polygon_area(r, n):
    return 0.5 * n * r * r * math.sin(2 * math.pi / n)


def polygon_perimeter(r, n):
    return 2 * n * r * math.sin(math.pi / n)


@pytest.fixture(scope="module")
def cell():
    return build_cell_mesh(0.4, 64, 0.05)


def test_macro_mesh_small():
    m = build_macro_mesh(5.0, 2.5, 2, 1)
    assert m.n_nodes == 6
    assert m.n_triangles == 4
    assert m.total_area == pytest.approx(12.5, rel=1e-14)
    assert len(m.dirichlet_nodes()) == 2
    assert np.all(m.nodes[m.dirichlet_nodes(), 0] == 0.0)


def test_macro_mesh_tags():
    m = build_macro_mesh(1.0, 1.0, 4, 3)
    tags = np.asarray(m.boundary_tags)
    left = m.nodes[m.boundary_edges][:, :, 0].max(axis=1) == 0.0
    assert np.all(tags[left] == "dirichlet")
    assert np.all(tags[~left] == "neumann")
    assert np.count_nonzero(m.node_tags == DIRICHLET) == 4


@pytest.mark.parametrize("args", [(0, 1, 2, 2), (1, 1, 0, 2), (1, 1, 2.5, 2)])
def test_macro_mesh_rejects(args):
    with pytest.raises(ValueError):
        build_macro_mesh(*args)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.integers(1, 12), st.integers(1, 12))
def test_macro_mesh_area_and_orientation(Lx, Ly, nx, ny):
    m = build_macro_mesh(Lx, Ly, nx, ny)
    assert np.all(signed_areas(m.nodes, m.triangles) > 0)
    assert m.total_area == pytest.approx(Lx * Ly, rel=1e-12)
    assert m.lumped_mass.sum() == pytest.approx(Lx * Ly, rel=1e-12)


def test_cell_mesh_counts(cell):
    assert cell.n_nodes == 657
    assert cell.n_triangles == 1232
    assert len(cell.interface_edges) == 64


def test_cell_areas_match_polygon(cell):
    assert cell.solid_area == pytest.approx(polygon_area(0.4, 64), rel=1e-12)
    assert cell.gas_area + cell.solid_area == pytest.approx(1.0, abs=1e-12)
    # inscribed n-gon: area defect 1 - sin(x)/x <= x^2/6 with x = 2 pi / n
    rel = abs(cell.solid_area - math.pi * 0.16) / (math.pi * 0.16)
    x = 2 * math.pi / 64
    assert rel <= x * x / 6


def test_interface_length_matches_perimeter(cell):
    assert cell.interface_length == pytest.approx(polygon_perimeter(0.4, 64), rel=1e-12)


def test_interface_orientation(cell):
    # normals from solid into gas point away from the centre
    e = cell.interface_edges
    mid = 0.5 * (cell.nodes[e[:, 0]] + cell.nodes[e[:, 1]]) - 0.5
    assert np.all(np.einsum("ij,ij->i", cell.interface_normals, mid) > 0)


def test_cell_periodic_pairs(cell):
    for axis in (0, 1):
        p = periodic_partner(cell, axis)
        moved = p != np.arange(cell.n_nodes)
        d = cell.nodes[p[moved]] - cell.nodes[moved]
        assert np.allclose(np.abs(d[:, axis]), 1.0, atol=1e-12)
        assert np.allclose(d[:, 1 - axis], 0.0, atol=1e-12)
    corners = np.flatnonzero(np.all(np.isin(cell.nodes, (0.0, 1.0)), axis=1))
    assert len(corners) == 4
    assert len(set(cell.master[corners].tolist())) == 1


def test_cell_symmetry(cell):
    # mirror image of every node is a node
    from scipy.spatial import cKDTree
    tree = cKDTree(cell.nodes)
    for img in (np.column_stack([1 - cell.nodes[:, 0], cell.nodes[:, 1]]),
                cell.nodes[:, ::-1]):
        d, _ = tree.query(img)
        assert d.max() < 1e-12


def test_area_error_decreases_quadratically():
    errs = []
    for n, h in ((16, 0.1), (32, 0.05), (64, 0.025)):
        m = build_cell_mesh(0.4, n, h)
        errs.append(abs(m.solid_area - math.pi * 0.16))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(3.5 < q < 4.5 for q in ratios)


@pytest.mark.parametrize("r,n,h", [(0.5, 64, 0.05), (0.0, 64, 0.05), (0.4, 12, 0.05), (0.4, 64, 0)])
def test_cell_mesh_rejects(r, n, h):
    with pytest.raises(ValueError):
        build_cell_mesh(r, n, h)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 0.45), st.sampled_from([8, 16, 32, 48]))
def test_cell_mesh_valid_for_radii(r, n):
    m = build_cell_mesh(r, n, 0.08)
    validate_mesh(m, expected_area=1.0)
    assert m.solid_area == pytest.approx(polygon_area(r, n), rel=1e-10)
    assert np.all(signed_areas(m.nodes, m.triangles) > 0)


def test_strip_cell():
    m = build_strip_cell_mesh(8)
    assert m.gas_area == pytest.approx(0.5, rel=1e-14)
    assert np.all(m.region[m.centroids[:, 0] < 0.5] == GAS)
    assert np.all(m.region[m.centroids[:, 0] > 0.5] == SOLID)
    full = build_strip_cell_mesh(4, 1.0)
    assert len(full.interface_edges) == 0
    assert full.gas_area == pytest.approx(1.0)


def test_validate_rejects_inverted_triangle():
    nodes = np.array([[0, 0], [1, 0], [0, 1.0]])
    m = Mesh(nodes, np.array([[0, 2, 1]]), np.zeros((0, 2), int), (), np.zeros(3, np.int8))
    with pytest.raises(MeshError):
        validate_mesh(m)


def test_mesh_quality_structured():
    q = mesh_quality(build_macro_mesh(1.0, 1.0, 4, 4))
    assert q.min_angle == pytest.approx(45.0)
    assert q.h_max == pytest.approx(math.sqrt(2) / 4)
    assert q.h_max >= q.h_min > 0


def test_mesh_arrays_read_only(cell):
    with pytest.raises(ValueError):
        cell.nodes[0, 0] = 1.0
