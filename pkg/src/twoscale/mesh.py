"""Triangular meshes for the macroscopic rectangle and the periodic unit cell.

The macro mesh is a structured grid of right triangles whose diagonals
alternate in a checkerboard pattern.  The cell mesh is built on one eighth
of the square (the wedge between the rays at 0 and 45 degrees seen from the
cell centre) and reflected through the eight symmetries of the square, so
it is exactly symmetric and its boundary nodes are periodic by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import MeshError, MeshGenerationError

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
GAS, SOLID = 0, 1

PERIODIC_TOL = 1e-10
AREA_RTOL = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def signed_areas(nodes, triangles):
    p0, p1, p2 = (nodes[triangles[:, k]] for k in range(3))
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _triangle_edges(triangles):
    """All directed edges (a, b) in triangle order, shape (3*ne, 2)."""
    t = np.asarray(triangles)
    return np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)


def find_boundary_edges(triangles):
    """Edges owned by exactly one triangle, oriented as in that triangle."""
    edges = _triangle_edges(triangles)
    keys = np.sort(edges, axis=1)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return edges[counts[inv.ravel()] == 1]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation with boundary and node tags.

    ``boundary_tags`` names each row of ``boundary_edges``; ``node_tags``
    is one of INTERIOR, DIRICHLET, NEUMANN per node.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    node_tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes, float))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64))
        object.__setattr__(self, "boundary_edges", _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "boundary_tags", tuple(self.boundary_tags))
        object.__setattr__(self, "node_tags", _frozen(self.node_tags, np.int8))

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        a = signed_areas(self.nodes, self.triangles)
        a.setflags(write=False)
        return a

    @cached_property
    def centroids(self):
        c = self.nodes[self.triangles].mean(axis=1)
        c.setflags(write=False)
        return c

    @property
    def total_area(self):
        return float(math.fsum(self.areas))

    @cached_property
    def lumped_mass(self):
        """Nodal weights area/3 summed over incident triangles."""
        m = np.bincount(self.triangles.ravel(), weights=np.repeat(self.areas / 3.0, 3),
                        minlength=self.n_nodes)
        m.setflags(write=False)
        return m

    def dirichlet_nodes(self):
        return np.flatnonzero(self.node_tags == DIRICHLET)


@dataclass(frozen=True, eq=False)
class CellMesh(Mesh):
    """Periodic unit-cell mesh with gas/solid regions and the interface polygon.

    ``interface_edges`` are oriented counter-clockwise around the solid, so
    the right-hand normal of each edge points from solid into gas.
    ``periodic_pairs`` lists (i, j) with node j the translate of node i by
    e_1 or e_2.  ``master`` maps every node to the representative of its
    periodic class (corners collapse to a single node).
    """

    region: np.ndarray = None
    interface_edges: np.ndarray = None
    periodic_pairs: np.ndarray = None
    radius: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "region", _frozen(self.region, np.int8))
        object.__setattr__(self, "interface_edges", _frozen(self.interface_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "periodic_pairs", _frozen(self.periodic_pairs, np.int64).reshape(-1, 2))

    @cached_property
    def master(self):
        n = self.n_nodes
        p = self.periodic_pairs
        g = coo_matrix((np.ones(len(p)), (p[:, 0], p[:, 1])), shape=(n, n))
        _, labels = connected_components(g, directed=False)
        rep = np.full(labels.max() + 1, n, dtype=np.int64)
        np.minimum.at(rep, labels, np.arange(n))
        out = rep[labels]
        out.setflags(write=False)
        return out

    @cached_property
    def gas_nodes(self):
        """Boolean mask of nodes touching at least one gas triangle."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.triangles[self.region == GAS].ravel()] = True
        mask.setflags(write=False)
        return mask

    @property
    def gas_area(self):
        return float(math.fsum(self.areas[self.region == GAS]))

    @property
    def solid_area(self):
        return float(math.fsum(self.areas[self.region == SOLID]))

    @property
    def interface_length(self):
        e = self.interface_edges
        if len(e) == 0:
            return 0.0
        d = self.nodes[e[:, 1]] - self.nodes[e[:, 0]]
        return float(math.fsum(np.hypot(d[:, 0], d[:, 1])))

    @property
    def interface_normals(self):
        """Unit normals of the interface edges, pointing from solid into gas."""
        e = self.interface_edges
        d = self.nodes[e[:, 1]] - self.nodes[e[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]


def validate_mesh(mesh, expected_area=None):
    """Raise MeshError unless ``mesh`` satisfies the structural invariants."""
    if mesh.n_nodes == 0 or mesh.n_triangles == 0:
        raise MeshError("empty mesh")
    tri = mesh.triangles
    if tri.min() < 0 or tri.max() >= mesh.n_nodes:
        raise MeshError("triangle references a missing node")
    areas = signed_areas(mesh.nodes, tri)
    bad = np.flatnonzero(~(areas > 0))
    if bad.size:
        raise MeshError(f"{bad.size} triangle(s) with non-positive area, first is #{bad[0]}")
    edges = _triangle_edges(tri)
    keys = np.sort(edges, axis=1)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    if counts.max() > 2:
        raise MeshError("non-manifold edge shared by more than two triangles")
    if len(mesh.boundary_edges):
        bkeys = np.sort(mesh.boundary_edges, axis=1)
        lookup = {tuple(k): c for k, c in zip(uniq.tolist(), counts.tolist())}
        for k in bkeys.tolist():
            if lookup.get(tuple(k)) != 1:
                raise MeshError(f"boundary edge {k} does not belong to exactly one triangle")
    if expected_area is not None:
        total = math.fsum(areas)
        if abs(total - expected_area) > AREA_RTOL * expected_area:
            raise MeshError(f"triangle areas sum to {total!r}, expected {expected_area!r}")
    if isinstance(mesh, CellMesh):
        if len(mesh.region) != mesh.n_triangles:
            raise MeshError("region array does not match triangle count")
        if abs(mesh.gas_area + mesh.solid_area - 1.0) > AREA_RTOL:
            raise MeshError("gas and solid areas do not partition the unit cell")
        d = mesh.nodes[mesh.periodic_pairs[:, 1]] - mesh.nodes[mesh.periodic_pairs[:, 0]]
        ok = (np.abs(np.abs(d) - [1.0, 0.0]).max(axis=1) <= PERIODIC_TOL) | \
             (np.abs(np.abs(d) - [0.0, 1.0]).max(axis=1) <= PERIODIC_TOL)
        if not ok.all():
            raise MeshError("periodic pair is not a unit translation")


# ---------------------------------------------------------------------------
# macroscopic rectangle

def build_macro_mesh(Lx, Ly, nx, ny):
    """Structured mesh of [0, Lx] x [0, Ly] with alternating diagonals.

    Nodes on x_1 = 0 are tagged DIRICHLET, the remaining boundary nodes
    NEUMANN.  Boundary edges on x_1 = 0 carry the tag ``"dirichlet"``, the
    rest ``"neumann"``.

    Parameters
    ----------
    Lx, Ly : float
        Side lengths, both positive.
    nx, ny : int
        Number of grid cells in each direction, both at least 1.

    Returns
    -------
    Mesh
    """
    if not (Lx > 0 and Ly > 0):
        raise ValueError(f"domain lengths must be positive, got Lx={Lx}, Ly={Ly}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be integers >= 1, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j, column i
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    a, b, c, d = idx(I, J), idx(I + 1, J), idx(I + 1, J + 1), idx(I, J + 1)
    even = (I + J) % 2 == 0
    # even cells split along a-c, odd cells along b-d
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    triangles = np.empty((2 * len(I), 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2

    bedges = find_boundary_edges(triangles)
    on_left = (nodes[bedges[:, 0], 0] == 0.0) & (nodes[bedges[:, 1], 0] == 0.0)
    tags = tuple("dirichlet" if left else "neumann" for left in on_left)

    node_tags = np.full(len(nodes), INTERIOR, dtype=np.int8)
    node_tags[np.unique(bedges)] = NEUMANN
    node_tags[nodes[:, 0] == 0.0] = DIRICHLET

    mesh = Mesh(nodes, triangles, bedges, tags, node_tags)
    validate_mesh(mesh, expected_area=Lx * Ly)
    return mesh


# ---------------------------------------------------------------------------
# periodic unit cell

def _zipper(inner, outer, inner_ang, outer_ang, offset_in, offset_out):
    """Triangulate the strip between two angle-sorted polylines."""
    tris = []
    i = j = 0
    p, q = len(inner) - 1, len(outer) - 1
    while i < p or j < q:
        if i == p or (j < q and outer_ang[j + 1] <= inner_ang[i + 1]):
            tris.append((offset_in + i, offset_out + j, offset_out + j + 1))
            j += 1
        else:
            tris.append((offset_in + i, offset_out + j, offset_in + i + 1))
            i += 1
    return tris


def _wedge(r, n_circle, h):
    """Nodes (relative to the cell centre) and triangles of one eighth of the cell."""
    m = n_circle // 8
    seg = 2.0 * math.pi / n_circle
    apothem = r * math.cos(math.pi / n_circle)

    def rho_poly(theta):
        k = np.minimum(np.floor(theta / seg), m - 1)
        return apothem / np.cos(theta - (k + 0.5) * seg)

    rings = []  # (points, angles)

    def add_ring(theta, rho):
        pts = np.column_stack([rho * np.cos(theta), rho * np.sin(theta)])
        pts[0, 1] = 0.0
        pts[-1, 1] = pts[-1, 0]
        rings.append((pts, theta))

    rings.append((np.zeros((1, 2)), np.zeros(1)))
    n_solid = max(1, math.ceil(apothem / h)) if r > 0 else 0
    for layer in range(1, n_solid):
        k = max(1, round(m * layer / n_solid))
        theta = np.linspace(0.0, math.pi / 4, k + 1)
        add_ring(theta, layer / n_solid * rho_poly(theta))
    theta = seg * np.arange(m + 1)
    add_ring(theta, np.full(m + 1, r))
    n_solid_rings = len(rings)

    thickness = 0.5 * ((0.5 - r) + (math.sqrt(0.5) - r))
    n_gas = max(1, math.ceil(thickness / h))
    m_out = max(m, math.ceil(0.5 / h))
    for layer in range(1, n_gas + 1):
        t = layer / n_gas
        k = round(m + (m_out - m) * t)
        xi = np.linspace(0.0, 1.0, k + 1)
        if layer == n_gas:
            pts = np.column_stack([np.full(k + 1, 0.5), 0.5 * xi])
            rings.append((pts, np.arctan(xi)))
            continue
        theta = (1 - t) * xi * math.pi / 4 + t * np.arctan(xi)
        add_ring(theta, (1 - t) * rho_poly(theta) + t * 0.5 / np.cos(theta))

    offsets = np.cumsum([0] + [len(p) for p, _ in rings])
    tris, tags = [], []
    for k in range(len(rings) - 1):
        (pa, aa), (pb, ab) = rings[k], rings[k + 1]
        new = _zipper(pa, pb, aa, ab, offsets[k], offsets[k + 1])
        tris.extend(new)
        tags.extend([SOLID if k + 1 < n_solid_rings else GAS] * len(new))
    nodes = np.vstack([p for p, _ in rings])
    tris = np.array(tris, dtype=np.int64)
    area = signed_areas(nodes, tris)
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return nodes, tris, np.array(tags, dtype=np.int8)


def _square_symmetries(X, Y):
    """Yield (x, y, orientation_preserved) for the 8 symmetries of [0,1]^2.

    Coordinates are mapped as c or 1 - c, which is exact for c in [0.5, 1].
    """
    for swap in (False, True):
        a, b = (Y, X) if swap else (X, Y)
        for sx in (1, -1):
            for sy in (1, -1):
                xx = a if sx > 0 else 1.0 - a
                yy = b if sy > 0 else 1.0 - b
                yield xx, yy, (sx * sy * (-1 if swap else 1)) > 0


def _match_faces(nodes, axis):
    """Pairs (low face node, high face node) across ``axis``."""
    other = 1 - axis
    low = np.flatnonzero(np.abs(nodes[:, axis]) <= PERIODIC_TOL)
    high = np.flatnonzero(np.abs(nodes[:, axis] - 1.0) <= PERIODIC_TOL)
    if len(low) != len(high):
        raise MeshGenerationError(
            f"{len(low)} nodes on face {axis}=0 but {len(high)} on face {axis}=1")
    low = low[np.argsort(nodes[low, other], kind="stable")]
    high = high[np.argsort(nodes[high, other], kind="stable")]
    gap = np.abs(nodes[low, other] - nodes[high, other])
    if len(gap) and gap.max() > PERIODIC_TOL:
        k = int(np.argmax(gap))
        raise MeshGenerationError(f"unmatched periodic node at {nodes[low[k]].tolist()}")
    return np.column_stack([low, high])


def _interface_edges(triangles, region, master):
    """Edges between gas and solid triangles, periodic images identified."""
    edges = _triangle_edges(triangles)
    owner = np.repeat(np.arange(len(triangles)), 3)
    keys = np.sort(master[edges], axis=1)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    starts = np.flatnonzero(np.r_[True, inv_sorted[1:] != inv_sorted[:-1]])
    result = []
    for s in starts:
        if s + 1 < len(order) and inv_sorted[s + 1] == inv_sorted[s]:
            e1, e2 = order[s], order[s + 1]
            r1, r2 = region[owner[e1]], region[owner[e2]]
            if r1 != r2:
                result.append(edges[e1] if r1 == SOLID else edges[e2])
    return np.array(result, dtype=np.int64).reshape(-1, 2)


def _finish_cell_mesh(nodes, triangles, region, radius):
    pairs = np.vstack([_match_faces(nodes, 0), _match_faces(nodes, 1)])
    bedges = find_boundary_edges(triangles)
    mid = 0.5 * (nodes[bedges[:, 0]] + nodes[bedges[:, 1]])
    names = np.where(np.abs(mid[:, 0]) <= PERIODIC_TOL, "left",
                     np.where(np.abs(mid[:, 0] - 1) <= PERIODIC_TOL, "right",
                              np.where(np.abs(mid[:, 1]) <= PERIODIC_TOL, "bottom", "top")))
    node_tags = np.zeros(len(nodes), dtype=np.int8)
    mesh = CellMesh(nodes, triangles, bedges, tuple(names.tolist()), node_tags,
                    region=region, interface_edges=np.zeros((0, 2)),
                    periodic_pairs=pairs, radius=radius)
    iface = _interface_edges(mesh.triangles, mesh.region, mesh.master)
    mesh = CellMesh(nodes, triangles, bedges, tuple(names.tolist()), node_tags,
                    region=region, interface_edges=iface, periodic_pairs=pairs, radius=radius)
    validate_mesh(mesh, expected_area=1.0)
    return mesh


def _polygon_contains(points, r, n_circle):
    """Centroid test against the regular n-gon of circumradius r centred at (0.5, 0.5)."""
    ang = 2.0 * math.pi * np.arange(n_circle) / n_circle
    vx, vy = 0.5 + r * np.cos(ang), 0.5 + r * np.sin(ang)
    wx, wy = np.roll(vx, -1), np.roll(vy, -1)
    px, py = points[:, 0:1], points[:, 1:2]
    cross = (wx - vx) * (py - vy) - (wy - vy) * (px - vx)
    return (cross > 0).all(axis=1)


def build_cell_mesh(r, n_circle, h):
    """Periodic mesh of [0,1]^2 with a polygonal inclusion of circumradius r.

    The inclusion is the regular ``n_circle``-gon centred at (0.5, 0.5) with
    a vertex on the ray y = 0.5.  Triangles are labelled SOLID when their
    centroid lies inside the polygon.

    Parameters
    ----------
    r : float
        Inclusion radius, 0 < r < 0.5.
    n_circle : int
        Polygon vertex count; a multiple of 8 so the mesh keeps the full
        symmetry of the square.
    h : float
        Target edge length away from the interface.
    """
    if not (0.0 < r < 0.5):
        raise ValueError(f"inclusion radius must lie in (0, 0.5), got r={r}")
    if int(n_circle) != n_circle or n_circle < 8 or n_circle % 8:
        raise ValueError(f"n_circle must be a multiple of 8 and >= 8, got {n_circle}")
    if not h > 0:
        raise ValueError(f"target edge length must be positive, got h={h}")
    n_circle = int(n_circle)
    d, wtri, wtags = _wedge(r, n_circle, h)
    X, Y = 0.5 + d[:, 0], 0.5 + d[:, 1]
    all_nodes, all_tris = [], []
    offset = 0
    for xx, yy, keeps in _square_symmetries(X, Y):
        all_nodes.append(np.column_stack([xx, yy]))
        t = wtri + offset
        all_tris.append(t if keeps else t[:, [0, 2, 1]])
        offset += len(X)
    nodes, inv = np.unique(np.vstack(all_nodes), axis=0, return_inverse=True)
    tris = inv.ravel()[np.vstack(all_tris)]
    close = cKDTree(nodes).query_pairs(1e-9)
    if close:
        raise MeshGenerationError(f"{len(close)} near-duplicate node pair(s) after reflection")
    centroids = nodes[tris].mean(axis=1)
    region = np.where(_polygon_contains(centroids, r, n_circle), SOLID, GAS).astype(np.int8)
    if (np.sort(region) != np.sort(np.tile(wtags, 8))).any():
        raise MeshGenerationError("centroid classification disagrees with the mesher")
    mesh = _finish_cell_mesh(nodes, tris, region, r)
    _check_interface_loop(mesh, n_circle)
    return mesh


def _check_interface_loop(mesh, n_edges):
    e = mesh.interface_edges
    if len(e) != n_edges:
        raise MeshGenerationError(f"interface has {len(e)} edges, expected {n_edges}")
    nxt = dict(zip(e[:, 0].tolist(), e[:, 1].tolist()))
    if len(nxt) != n_edges:
        raise MeshGenerationError("interface is not a simple loop")
    start = int(e[0, 0])
    node, steps = start, 0
    while True:
        node = nxt.get(node)
        steps += 1
        if node is None or steps > n_edges:
            raise MeshGenerationError("interface loop is open")
        if node == start:
            break
    if steps != n_edges:
        raise MeshGenerationError("interface splits into several loops")


def build_strip_cell_mesh(n, gas_fraction=0.5):
    """Periodic n x n structured cell with gas for x < gas_fraction, solid beyond.

    ``gas_fraction = 1`` gives a homogeneous all-gas cell with no interface.
    ``gas_fraction * n`` must be an integer so the material jump is resolved.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n}")
    if not (0.0 < gas_fraction <= 1.0):
        raise ValueError(f"gas_fraction must lie in (0, 1], got {gas_fraction}")
    k = gas_fraction * n
    if abs(k - round(k)) > 1e-12:
        raise ValueError("gas_fraction * n must be an integer")
    n = int(n)
    base = build_macro_mesh(1.0, 1.0, n, n)
    cent = base.centroids
    region = np.where(cent[:, 0] < gas_fraction, GAS, SOLID).astype(np.int8)
    return _finish_cell_mesh(np.array(base.nodes), np.array(base.triangles), region, 0.0)


def periodic_partner(mesh, axis):
    """Node translated by e_axis (or back); nodes off the two faces map to themselves."""
    out = np.arange(mesh.n_nodes)
    pairs = mesh.periodic_pairs
    d = mesh.nodes[pairs[:, 1], axis] - mesh.nodes[pairs[:, 0], axis]
    sel = np.abs(np.abs(d) - 1.0) <= PERIODIC_TOL
    a, b = pairs[sel, 0], pairs[sel, 1]
    out[a] = b
    out[b] = a
    return out


# ---------------------------------------------------------------------------
# quality

@dataclass(frozen=True)
class MeshQuality:
    min_angle: float
    max_aspect: float
    h_max: float
    h_min: float


def mesh_quality(mesh):
    """Minimum interior angle (degrees), worst aspect ratio and edge-length range.

    The aspect ratio is normalised so an equilateral triangle scores 1.
    Raises MeshError on an invalid mesh instead of reporting on it.
    """
    validate_mesh(mesh)
    p = mesh.nodes[mesh.triangles]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    angles = []
    for k in range(3):
        u, v = -e[:, k - 1], e[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (lengths[:, k - 1] * lengths[:, k])
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    areas = signed_areas(mesh.nodes, mesh.triangles)
    aspect = lengths.max(axis=1) * lengths.sum(axis=1) / (4.0 * math.sqrt(3.0) * areas)
    return MeshQuality(
        min_angle=float(np.min(angles)),
        max_aspect=float(aspect.max()),
        h_max=float(lengths.max()),
        h_min=float(lengths.min()),
    )
