"""Polygonal meshes of planar domains and their simplicial submeshes.

A mesh is a conforming partition of a polygon into convex polygonal cells.
Each cell carries a fan subtriangulation rooted at one of its vertices; all
simplices of a cell share that vertex and no internal nodes are introduced,
so the subfaces lying on the cell boundary coincide with the parent faces.
"""

import numpy as np

__all__ = [
    "MeshError", "PolyMesh", "SubTriangulation", "build_mesh", "subtriangulate",
    "gen_cartesian", "gen_hexagonal", "gen_kershaw", "gen_family",
    "regularity_report", "save_mesh", "load_mesh",
]


class MeshError(Exception):
    """Raised for invalid mesh input or failed subtriangulation."""


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _polygon_centroid(pts):
    x, y = pts[:, 0], pts[:, 1]
    xr, yr = np.roll(x, -1), np.roll(y, -1)
    cross = x * yr - xr * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + xr) * cross) / (6.0 * a)
    cy = np.sum((y + yr) * cross) / (6.0 * a)
    return np.array([cx, cy])


class PolyMesh:
    """Conforming polygonal mesh.

    Parameters
    ----------
    vertices : (nv, 2) float array
    cells : sequence of integer index sequences, one closed loop per cell.
        Loops may be given in either orientation; they are stored
        counter-clockwise, rolled so the smallest vertex index comes first.

    Attributes
    ----------
    faces : (nf, 2) int array, each row (a, b) with a < b.  The unit normal
        of a face points from a to b rotated clockwise, i.e. for tangent
        t = (p_b - p_a)/|..| the normal is (t_y, -t_x).
    face_cells : (nf, 2) int array [plus, minus]; the plus cell sees the face
        normal as outward.  -1 marks a missing neighbour (boundary).
    cell_faces : list of (face_ids, signs) pairs per cell, in loop order;
        sign +1 when the face normal is outward for that cell.
    """

    def __init__(self, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if len(cells) == 0:
            raise MeshError("mesh has no cells")
        self.vertices = vertices
        nv = len(vertices)

        self.cells = []
        for ci, loop in enumerate(cells):
            loop = np.asarray(loop, dtype=int)
            if loop.size < 3:
                raise MeshError(f"cell {ci} has fewer than 3 vertices")
            if loop.min() < 0 or loop.max() >= nv:
                raise MeshError(f"cell {ci} references vertex out of range")
            if len(np.unique(loop)) != loop.size:
                raise MeshError(f"cell {ci} repeats a vertex")
            pts = vertices[loop]
            area = _signed_area(pts)
            if abs(area) < 1e-14:
                raise MeshError(f"cell {ci} is degenerate (zero area)")
            if area < 0:
                loop = loop[::-1]
            k = int(np.argmin(loop))
            loop = np.roll(loop, -k)
            self.cells.append(loop)

        self._build_faces()
        self._build_geometry()
        self._subtri = None

    def _build_faces(self):
        face_index = {}
        faces = []
        face_cells = []
        cell_faces = []
        for ci, loop in enumerate(self.cells):
            ids = np.empty(loop.size, dtype=int)
            sgn = np.empty(loop.size, dtype=int)
            for e in range(loop.size):
                a, b = int(loop[e]), int(loop[(e + 1) % loop.size])
                key = (min(a, b), max(a, b))
                if key not in face_index:
                    face_index[key] = len(faces)
                    faces.append(key)
                    face_cells.append([-1, -1])
                f = face_index[key]
                side = 0 if a < b else 1  # traversal low->high means plus side
                if face_cells[f][side] != -1:
                    raise MeshError(
                        f"face {key} traversed twice in the same direction "
                        f"(cells {face_cells[f][side]} and {ci})")
                face_cells[f][side] = ci
                ids[e] = f
                sgn[e] = 1 if side == 0 else -1
            cell_faces.append((ids, sgn))
        self.faces = np.array(faces, dtype=int)
        self.face_cells = np.array(face_cells, dtype=int)
        self.cell_faces = cell_faces
        self.boundary_faces = np.any(self.face_cells == -1, axis=1)

    def _build_geometry(self):
        pa = self.vertices[self.faces[:, 0]]
        pb = self.vertices[self.faces[:, 1]]
        tv = pb - pa
        self.face_length = np.hypot(tv[:, 0], tv[:, 1])
        if np.any(self.face_length < 1e-14):
            raise MeshError("mesh contains a zero-length face")
        th = tv / self.face_length[:, None]
        self.face_normal = np.column_stack([th[:, 1], -th[:, 0]])
        self.face_midpoint = 0.5 * (pa + pb)

        nc = len(self.cells)
        self.cell_area = np.empty(nc)
        self.cell_centroid = np.empty((nc, 2))
        self.cell_diameter = np.empty(nc)
        for ci, loop in enumerate(self.cells):
            pts = self.vertices[loop]
            self.cell_area[ci] = _signed_area(pts)
            self.cell_centroid[ci] = _polygon_centroid(pts)
            d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
            self.cell_diameter[ci] = np.sqrt(d2.max())

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_faces(self):
        return len(self.faces)

    def h_max(self):
        return float(self.cell_diameter.max())

    def cell_points(self, ci):
        return self.vertices[self.cells[ci]]


def build_mesh(vertices, cells):
    """Validate raw arrays and return a PolyMesh."""
    return PolyMesh(vertices, cells)


class SubTriangulation:
    """Per-cell fan subtriangulations of a PolyMesh.

    Attributes
    ----------
    fan_vertex : (nc,) int array, the common vertex of each cell's simplices
        (the lowest-index vertex of the cell whenever the fan from it is
        valid, otherwise the first vertex that works).
    simplices : list of (nt, 3) int arrays of vertex ids, positively oriented.
    interior_subfaces : list of (ns, 4) int arrays, rows (a, b, t1, t2):
        subface with endpoints a < b shared by simplices t1 < t2 of the fan;
        its jump normal is outward for t1.
    face_simplex : list of (n_faces_of_cell,) int arrays mapping each parent
        face (in cell_faces order) to the simplex it bounds.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.fan_vertex = np.empty(mesh.n_cells, dtype=int)
        self.simplices = []
        self.interior_subfaces = []
        self.face_simplex = []
        for ci, loop in enumerate(mesh.cells):
            start, tris = self._find_fan(mesh, ci, loop)
            m = loop.size
            self.fan_vertex[ci] = loop[start]
            self.simplices.append(tris)
            rolled = np.roll(loop, -start)
            ns = m - 3
            sub = np.empty((max(ns, 0), 4), dtype=int)
            for t in range(ns):
                a, b = int(rolled[0]), int(rolled[t + 2])
                sub[t] = (min(a, b), max(a, b), t, t + 1)
            self.interior_subfaces.append(sub)
            # parent face e joins loop[e], loop[e+1]; in rolled coordinates
            # the fan triangle (0, j, j+1) carries the edge (j, j+1) plus,
            # for the first/last triangle, the edges touching the fan vertex.
            fmap = np.empty(m, dtype=int)
            for e in range(m):
                j = (e - start) % m  # edge joins rolled j -> j+1
                if j == 0:
                    fmap[e] = 0
                elif j == m - 1:
                    fmap[e] = m - 3
                else:
                    fmap[e] = j - 1
            self.face_simplex.append(fmap)

    @staticmethod
    def _find_fan(mesh, ci, loop):
        pts = mesh.vertices[loop]
        m = loop.size
        area = mesh.cell_area[ci]
        for start in range(m):
            rolled = np.roll(np.arange(m), -start)
            p0 = pts[rolled[0]]
            tri_areas = []
            ok = True
            for t in range(m - 2):
                p1, p2 = pts[rolled[t + 1]], pts[rolled[t + 2]]
                a = 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1])
                           - (p2[0] - p0[0]) * (p1[1] - p0[1]))
                if a <= 1e-14 * mesh.cell_diameter[ci] ** 2:
                    ok = False
                    break
                tri_areas.append(a)
            if ok and abs(sum(tri_areas) - area) <= 1e-10 * area:
                tris = np.array([
                    [loop[rolled[0]], loop[rolled[t + 1]], loop[rolled[t + 2]]]
                    for t in range(m - 2)], dtype=int)
                return start, tris
        raise MeshError(f"cell {ci} admits no vertex fan (not star-shaped "
                        "from any vertex)")


def subtriangulate(mesh):
    """Return the (cached) fan subtriangulation of every cell."""
    if mesh._subtri is None:
        mesh._subtri = SubTriangulation(mesh)
    return mesh._subtri


def gen_cartesian(n, box=None):
    """n-by-n grid of squares on the unit square, or on `box` ((x0,y0),(x1,y1))."""
    if n < 1:
        raise MeshError("n must be positive")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    if box is not None:
        (x0, y0), (x1, y1) = box
        vertices[:, 0] = x0 + (x1 - x0) * vertices[:, 0]
        vertices[:, 1] = y0 + (y1 - y0) * vertices[:, 1]

    def vid(ix, iy):
        return iy * (n + 1) + ix

    cells = []
    for iy in range(n):
        for ix in range(n):
            cells.append([vid(ix, iy), vid(ix + 1, iy),
                          vid(ix + 1, iy + 1), vid(ix, iy + 1)])
    return PolyMesh(vertices, cells)


def gen_kershaw(n, distortion, box=None):
    """Cartesian grid sheared vertically by a layered piecewise-linear wave.

    Vertical mesh lines stay vertical and every column of vertices stays
    monotone for distortion in [0, 1), which keeps all cells convex.
    distortion = 0 reproduces gen_cartesian(n) exactly.
    """
    if not 0.0 <= distortion < 1.0:
        raise MeshError("distortion must lie in [0, 1)")
    mesh = gen_cartesian(n)
    v = mesh.vertices
    x, y = v[:, 0], v[:, 1]
    z = 1.0 - np.abs(2.0 * x - 1.0)
    # two opposite-signed triangular bands stacked in y, zero on the boundary
    s = np.where(y < 0.5,
                 1.0 - np.abs(4.0 * y - 1.0),
                 -(1.0 - np.abs(4.0 * y - 3.0)))
    ynew = y + 0.25 * distortion * z * s
    vertices = np.column_stack([x, ynew])
    if box is not None:
        (x0, y0), (x1, y1) = box
        vertices[:, 0] = x0 + (x1 - x0) * vertices[:, 0]
        vertices[:, 1] = y0 + (y1 - y0) * vertices[:, 1]
    return PolyMesh(vertices, [list(c) for c in mesh.cells])


def _mirror_seeds(seeds):
    refl = [seeds]
    for axis, val in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)):
        m = seeds.copy()
        m[:, axis] = 2.0 * val - m[:, axis]
        refl.append(m)
    for vx in (0.0, 1.0):
        for vy in (0.0, 1.0):
            m = seeds.copy()
            m[:, 0] = 2.0 * vx - m[:, 0]
            m[:, 1] = 2.0 * vy - m[:, 1]
            refl.append(m)
    return np.vstack(refl)


def gen_hexagonal(n):
    """Honeycomb of the unit square: interior cells are hexagons, boundary
    cells are the honeycomb cells cut by the square (at most 6 faces each).

    Built as the Voronoi diagram of a triangular seed lattice mirrored across
    the four sides, so cell boundaries land exactly on the square.
    """
    from scipy.spatial import Voronoi

    if n < 2:
        raise MeshError("n must be at least 2")
    a = 1.0 / n
    m = max(2, round(2.0 * n / np.sqrt(3.0)))  # rows
    b = 1.0 / m
    rows = []
    for i in range(m):
        y = (i + 0.5) * b
        if i % 2 == 0:
            xs = (np.arange(n) + 0.5) * a
        else:
            xs = np.concatenate([[0.25 * a], np.arange(1, n) * a,
                                 [1.0 - 0.25 * a]])
        rows.append(np.column_stack([xs, np.full(xs.size, y)]))
    seeds = np.vstack(rows)
    n_real = len(seeds)
    vor = Voronoi(_mirror_seeds(seeds))

    key_to_id = {}
    vertices = []
    cells = []
    for si in range(n_real):
        region = vor.regions[vor.point_region[si]]
        if -1 in region or len(region) < 3:
            raise MeshError("open honeycomb cell; mirroring failed")
        pts = vor.vertices[region]
        pts = np.clip(pts, 0.0, 1.0)  # kill 1e-16 spill outside the square
        ctr = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - ctr[1], pts[:, 0] - ctr[0]))
        loop = []
        for j in order:
            key = (round(pts[j, 0], 10), round(pts[j, 1], 10))
            if key not in key_to_id:
                key_to_id[key] = len(vertices)
                vertices.append([key[0], key[1]])
            vid = key_to_id[key]
            if not loop or (vid != loop[-1] and vid != loop[0]):
                loop.append(vid)
        if len(loop) < 3:
            raise MeshError("degenerate honeycomb cell")
        cells.append(loop)
    mesh = PolyMesh(np.array(vertices), cells)
    if abs(mesh.cell_area.sum() - 1.0) > 1e-9:
        raise MeshError("honeycomb does not tile the unit square")
    return mesh


def gen_family(family, n, box=None, distortion=0.3):
    """Generate a mesh of one of the named families at resolution n.

    ``cartesian`` and ``kershaw`` tile `box` directly; ``hexagonal`` tiles
    the unit square and is then mapped affinely onto `box`.
    """
    if family == "cartesian":
        return gen_cartesian(n, box=box)
    if family == "kershaw":
        return gen_kershaw(n, distortion, box=box)
    if family == "hexagonal":
        mesh = gen_hexagonal(n)
        if box is None:
            return mesh
        (x0, y0), (x1, y1) = box
        v = mesh.vertices.copy()
        v[:, 0] = x0 + (x1 - x0) * v[:, 0]
        v[:, 1] = y0 + (y1 - y0) * v[:, 1]
        return PolyMesh(v, [list(c) for c in mesh.cells])
    raise MeshError(f"unknown mesh family {family!r}; expected one of "
                    "'cartesian', 'hexagonal', 'kershaw'")


def regularity_report(mesh):
    """Shape statistics used to monitor mesh-regularity assumptions."""
    sub = subtriangulate(mesh)
    n_faces_max = max(len(ids) for ids, _ in mesh.cell_faces)
    n_sub_max = max(len(t) for t in sub.simplices)
    worst_quality = np.inf
    min_face_ratio = np.inf
    for ci in range(mesh.n_cells):
        for tri in sub.simplices[ci]:
            p = mesh.vertices[tri]
            e2 = [np.sum((p[i] - p[(i + 1) % 3]) ** 2) for i in range(3)]
            area = abs(_signed_area(p))
            worst_quality = min(worst_quality,
                                4.0 * np.sqrt(3.0) * area / sum(e2))
        ids, _ = mesh.cell_faces[ci]
        min_face_ratio = min(min_face_ratio,
                             mesh.face_length[ids].min()
                             / mesh.cell_diameter[ci])
    return {
        "n_cells": mesh.n_cells,
        "n_faces": mesh.n_faces,
        "h_min": float(mesh.cell_diameter.min()),
        "h_max": float(mesh.cell_diameter.max()),
        "h_ratio": float(mesh.cell_diameter.min() / mesh.cell_diameter.max()),
        "max_cell_faces": int(n_faces_max),
        "max_submesh_cards": int(n_sub_max),
        "min_simplex_quality": float(worst_quality),
        "min_face_diameter_ratio": float(min_face_ratio),
    }


def save_mesh(mesh, path):
    """Write a mesh in the plain-text polymesh format (17 significant digits)."""
    with open(path, "w") as fh:
        fh.write("polymesh 1 2\n")
        fh.write(f"V {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"C {mesh.n_cells}\n")
        for loop in mesh.cells:
            fh.write(" ".join([str(loop.size)] + [str(int(v)) for v in loop])
                     + "\n")


def load_mesh(path):
    """Read a mesh written by save_mesh.  Lines starting with # are comments."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh
                 if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("polymesh"):
        raise MeshError("not a polymesh file")
    head = lines[0].split()
    if head[1:3] != ["1", "2"]:
        raise MeshError(f"unsupported polymesh version/dimension: {lines[0]}")
    pos = 1
    tag, nv = lines[pos].split()
    if tag != "V":
        raise MeshError("expected vertex section")
    nv = int(nv)
    pos += 1
    vertices = np.array([[float(t) for t in lines[pos + i].split()]
                         for i in range(nv)])
    pos += nv
    tag, nc = lines[pos].split()
    if tag != "C":
        raise MeshError("expected cell section")
    nc = int(nc)
    pos += 1
    cells = []
    for i in range(nc):
        toks = [int(t) for t in lines[pos + i].split()]
        if toks[0] != len(toks) - 1:
            raise MeshError(f"cell record {i} has inconsistent length")
        cells.append(toks[1:])
    return PolyMesh(vertices, cells)
