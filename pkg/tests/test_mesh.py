import os

import numpy as np
import pytest

from polyhho.mesh import (MeshError, PolyMesh, build_mesh, subtriangulate,
                          gen_cartesian, gen_hexagonal, gen_kershaw,
                          regularity_report, save_mesh, load_mesh)

UNIT_SQUARE = (np.array([[0.0, 0.0], [1, 0], [1, 1], [0, 1]]),
               [[0, 1, 2, 3]])


def regular_polygon(m, r=1.0):
    t = np.linspace(0, 2 * np.pi, m + 1)[:-1]
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def test_cartesian_counts():
    m = gen_cartesian(2)
    assert m.n_cells == 4
    assert m.n_faces == 12
    assert m.n_vertices == 9
    assert np.isclose(m.cell_area.sum(), 1.0, atol=1e-14)


def test_single_triangle():
    m = build_mesh(np.array([[0.0, 0], [1, 0], [0, 1]]), [[0, 1, 2]])
    sub = subtriangulate(m)
    assert len(sub.simplices[0]) == 1
    assert len(sub.interior_subfaces[0]) == 0
    assert np.isclose(m.cell_area[0], 0.5)


def test_square_fan():
    m = build_mesh(*UNIT_SQUARE)
    sub = subtriangulate(m)
    assert sub.fan_vertex[0] == 0
    assert len(sub.simplices[0]) == 2
    assert len(sub.interior_subfaces[0]) == 1
    a, b, t1, t2 = sub.interior_subfaces[0][0]
    assert (a, b) == (0, 2) and (t1, t2) == (0, 1)


def test_hexagon_fan():
    m = build_mesh(regular_polygon(6), [list(range(6))])
    sub = subtriangulate(m)
    assert len(sub.simplices[0]) == 4
    assert len(sub.interior_subfaces[0]) == 3
    assert all(sub.fan_vertex[0] in tri for tri in sub.simplices[0])
    # fan triangles are positively oriented and tile the hexagon
    areas = []
    for tri in sub.simplices[0]:
        p = m.vertices[tri]
        u, v = p[1] - p[0], p[2] - p[0]
        a = 0.5 * (u[0] * v[1] - u[1] * v[0])
        assert a > 0
        areas.append(a)
    assert np.isclose(sum(areas), m.cell_area[0], rtol=1e-13)


def test_cell_orientation_normalized():
    # clockwise input is flipped, loop starts at its smallest vertex index
    m = build_mesh(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]),
                   [[3, 2, 1, 0]])
    assert m.cells[0][0] == 0
    assert m.cell_area[0] > 0


def test_face_orientation_and_sides():
    m = gen_cartesian(2)
    for f in range(m.n_faces):
        a, b = m.faces[f]
        assert a < b
        t = m.vertices[b] - m.vertices[a]
        t = t / np.hypot(*t)
        assert np.allclose(m.face_normal[f], [t[1], -t[0]])
        cp, cm = m.face_cells[f]
        if m.boundary_faces[f]:
            assert (cp == -1) != (cm == -1)
        else:
            assert cp != -1 and cm != -1
            # the normal points from plus cell to minus cell
            d = m.cell_centroid[cm] - m.cell_centroid[cp]
            assert d @ m.face_normal[f] > 0


def test_interior_face_count_formula():
    for n in (2, 3, 4):
        m = gen_cartesian(n)
        n_int = int(np.sum(~m.boundary_faces))
        assert n_int == 2 * n * (n - 1)


def test_vertex_out_of_range():
    with pytest.raises(MeshError):
        build_mesh(np.zeros((3, 2)), [[0, 1, 999]])


def test_empty_cells():
    with pytest.raises(MeshError):
        build_mesh(np.zeros((3, 2)), [])


def test_degenerate_cell():
    pts = np.array([[0.0, 0], [1, 0], [2, 0]])
    with pytest.raises(MeshError):
        build_mesh(pts, [[0, 1, 2]])


def test_repeated_vertex():
    with pytest.raises(MeshError):
        build_mesh(np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]),
                   [[0, 1, 1, 2]])


def test_overlapping_cells_rejected():
    # a duplicated cell traverses every edge twice in the same direction
    pts = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
    with pytest.raises(MeshError):
        build_mesh(pts, [[0, 1, 2, 3], [0, 1, 2, 3]])


def test_nonstar_cell_fails():
    # a spiral-like simple polygon not star-shaped from any vertex
    pts = np.array([
        [0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [1.0, 4.0], [1.0, 3.0],
        [3.0, 3.0], [3.0, 1.0], [0.5, 1.0], [0.5, 2.2], [0.0, 2.2],
    ])
    m = PolyMesh(pts, [list(range(10))])
    with pytest.raises(MeshError):
        subtriangulate(m)


@pytest.mark.parametrize("gen,args", [
    (gen_cartesian, (4,)),
    (gen_kershaw, (4, 0.3)),
    (gen_hexagonal, (4,)),
])
def test_family_tiles_unit_square(gen, args):
    m = gen(*args)
    assert np.isclose(m.cell_area.sum(), 1.0, atol=1e-12)
    # conforming: interior faces shared by exactly two cells
    inner = ~m.boundary_faces
    assert np.all(m.face_cells[inner] >= 0)
    # all cells admit a fan with positive simplices
    sub = subtriangulate(m)
    for ci, tris in enumerate(sub.simplices):
        tot = 0.0
        for tri in tris:
            p = m.vertices[tri]
            u, v = p[1] - p[0], p[2] - p[0]
            a = 0.5 * (u[0] * v[1] - u[1] * v[0])
            assert a > 0
            tot += a
        assert np.isclose(tot, m.cell_area[ci], rtol=1e-12)


def test_hexagonal_interior_cells_are_hexagons():
    m = gen_hexagonal(5)
    rep = regularity_report(m)
    assert rep["max_cell_faces"] <= 6
    for ci in range(m.n_cells):
        ids, _ = m.cell_faces[ci]
        if not m.boundary_faces[ids].any():
            assert len(m.cells[ci]) == 6


def test_cartesian_regularity():
    rep = regularity_report(gen_cartesian(4))
    assert rep["max_submesh_cards"] == 2
    assert rep["max_cell_faces"] == 4
    assert rep["h_ratio"] == pytest.approx(1.0)


def test_kershaw_regularity_positive():
    rep = regularity_report(gen_kershaw(8, 0.3))
    assert rep["min_simplex_quality"] > 0
    assert rep["min_face_diameter_ratio"] > 0


def test_kershaw_zero_is_cartesian():
    k = gen_kershaw(5, 0.0)
    c = gen_cartesian(5)
    assert np.array_equal(k.vertices, c.vertices)
    assert all(np.array_equal(a, b) for a, b in zip(k.cells, c.cells))


def test_kershaw_distortion_range():
    with pytest.raises(MeshError):
        gen_kershaw(4, 1.0)


def test_generators_deterministic():
    for gen, args in [(gen_cartesian, (3,)), (gen_kershaw, (3, 0.4)),
                      (gen_hexagonal, (3,))]:
        m1, m2 = gen(*args), gen(*args)
        assert np.array_equal(m1.vertices, m2.vertices)
        assert all(np.array_equal(a, b) for a, b in zip(m1.cells, m2.cells))


def test_save_load_roundtrip(tmp_path):
    for mesh in (gen_kershaw(3, 0.25), gen_hexagonal(3)):
        path = os.path.join(tmp_path, "m.txt")
        save_mesh(mesh, path)
        back = load_mesh(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert all(np.array_equal(a, b)
                   for a, b in zip(back.cells, mesh.cells))


def test_load_rejects_garbage(tmp_path):
    path = os.path.join(tmp_path, "bad.txt")
    with open(path, "w") as fh:
        fh.write("not a mesh\n")
    with pytest.raises(MeshError):
        load_mesh(path)


def test_load_skips_comments(tmp_path):
    path = os.path.join(tmp_path, "c.txt")
    with open(path, "w") as fh:
        fh.write("# comment\npolymesh 1 2\nV 3\n0 0\n1 0\n# mid\n0 1\n"
                 "C 1\n3 0 1 2\n")
    m = load_mesh(path)
    assert m.n_cells == 1 and m.n_vertices == 3


def test_cartesian_box_rescale():
    m = gen_cartesian(2, box=((-0.5, 0.0), (1.5, 2.0)))
    assert np.isclose(m.vertices[:, 0].min(), -0.5)
    assert np.isclose(m.vertices[:, 0].max(), 1.5)
    assert np.isclose(m.vertices[:, 1].max(), 2.0)
    assert np.isclose(m.cell_area.sum(), 4.0)
