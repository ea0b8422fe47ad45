"""Structured quadrilateral meshes for the fracture benchmarks.

Two geometries are provided:

* the notched unit square, with a geometric slit along ``y = 0.5`` for
  ``0 <= x < 0.5`` realised by duplicating the slit nodes, and
* the L-shaped panel (500 mm x 500 mm with the lower-right 250 mm x 250 mm
  quadrant removed).

Both are built on a coarse mesh and uniformly refined.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

# local edge k joins local vertices (k, k+1 mod 4); counterclockwise ordering
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])


class BoundaryTag(enum.IntEnum):
    BOTTOM = 0
    TOP = 1
    LEFT = 2
    RIGHT = 3
    SLIT_LOWER = 4
    SLIT_UPPER = 5
    LSHAPE_LOAD = 6
    LSHAPE_FIXED = 7
    FREE = 8


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable quadrilateral mesh.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array [mm]
    elements : (n_elements, 4) int array, counterclockwise connectivity
    boundary_faces : (n_faces, 3) int array of ``(element, local_edge, tag)``
    slit_pairs : (n_pairs, 2) int array of ``(lower node, upper node)``
    h : largest element diameter [mm]
    h_min : smallest element diameter [mm]
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_faces: np.ndarray
    slit_pairs: np.ndarray
    h: float
    h_min: float
    name: str = "mesh"

    def __post_init__(self):
        for arr in (self.nodes, self.elements, self.boundary_faces, self.slit_pairs):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Rows of ``boundary_faces`` carrying ``tag``."""
        return self.boundary_faces[self.boundary_faces[:, 2] == int(tag)]

    def face_nodes(self, faces: np.ndarray) -> np.ndarray:
        """Global node ids ``(n_faces, 2)`` of the given boundary faces."""
        return self.elements[faces[:, 0][:, None], LOCAL_EDGES[faces[:, 1]]]

    def nodes_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Sorted unique node ids lying on faces with ``tag``."""
        faces = self.faces_with_tag(tag)
        if len(faces) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.face_nodes(faces))

    def has_tag(self, tag: BoundaryTag) -> bool:
        return bool(np.any(self.boundary_faces[:, 2] == int(tag)))


def element_diameters(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    xy = nodes[elements]
    d = np.zeros(len(elements))
    for a, b in combinations(range(4), 2):
        d = np.maximum(d, np.linalg.norm(xy[:, a] - xy[:, b], axis=1))
    return d


def _make_mesh(nodes, elements, faces, pairs, name) -> Mesh:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    diam = element_diameters(nodes, elements)
    return Mesh(nodes, elements, faces, pairs, float(diam.max()), float(diam.min()), name)


def _tensor_grid(xs, ys, keep=None):
    """Quads of the tensor grid ``xs x ys``; ``keep(xc, yc)`` filters cells."""
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    elems = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            if keep is not None and not keep(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])):
                continue
            n0 = j * nx + i
            elems.append([n0, n0 + 1, n0 + nx + 1, n0 + nx])
    elems = np.array(elems, dtype=np.int64)
    used = np.unique(elems)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return nodes[used], remap[elems]


def _boundary_edges(elements):
    """``(element, local_edge)`` for edges referenced by exactly one element."""
    edge_nodes = elements[:, LOCAL_EDGES]  # (ne, 4, 2)
    keys = np.sort(edge_nodes, axis=2).reshape(-1, 2)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    boundary = np.nonzero(counts[inv] == 1)[0]
    return np.column_stack([boundary // 4, boundary % 4])


def _tag_faces(nodes, elements, face_index, classify):
    faces = []
    for e, k in face_index:
        a, b = elements[e, LOCAL_EDGES[k]]
        tag = classify(nodes[a], nodes[b])
        faces.append((e, k, int(tag)))
    return np.array(faces, dtype=np.int64)


def _notched_coarse() -> Mesh:
    nodes, elems = _tensor_grid(np.linspace(0.0, 1.0, 3), np.linspace(0.0, 1.0, 3))
    # 3x3 node grid, node (x=0, y=0.5) has id 3; the tip (0.5, 0.5) is id 4
    slit_node = 3
    upper = len(nodes)
    nodes = np.vstack([nodes, nodes[slit_node]])
    centers = nodes[elems].mean(axis=1)
    above = centers[:, 1] > 0.5
    elems = elems.copy()
    elems[above[:, None] & (elems == slit_node)] = upper
    tol = 1e-9

    def classify(p, q):
        mid = 0.5 * (p + q)
        if abs(p[1] - q[1]) < tol:
            y = p[1]
            if abs(y) < tol:
                return BoundaryTag.BOTTOM
            if abs(y - 1.0) < tol:
                return BoundaryTag.TOP
            if abs(y - 0.5) < tol and mid[0] < 0.5 + tol:
                return None  # resolved per adjacent element below
        else:
            if abs(p[0]) < tol:
                return BoundaryTag.LEFT
            if abs(p[0] - 1.0) < tol:
                return BoundaryTag.RIGHT
        raise MeshError(f"untagged boundary face {p} - {q}")

    faces = []
    for e, k in _boundary_edges(elems):
        a, b = elems[e, LOCAL_EDGES[k]]
        tag = classify(nodes[a], nodes[b])
        if tag is None:
            tag = BoundaryTag.SLIT_UPPER if centers[e, 1] > 0.5 else BoundaryTag.SLIT_LOWER
        faces.append((e, k, int(tag)))
    return _make_mesh(nodes, elems, faces, [[slit_node, upper]], "notched_square")


def _lshape_coarse() -> Mesh:
    # x lines put a vertex at x = 470 so the loaded section is resolved;
    # the narrow 30 x 50 column sets the smallest cell diameter sqrt(30^2 + 50^2).
    xs = np.array([0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 305.0, 360.0, 415.0, 470.0, 500.0])
    ys = np.linspace(0.0, 500.0, 11)
    nodes, elems = _tensor_grid(xs, ys, keep=lambda xc, yc: not (xc > 250.0 and yc < 250.0))
    tol = 1e-9 * 500.0

    def classify(p, q):
        mid = 0.5 * (p + q)
        if abs(p[1]) < tol and abs(q[1]) < tol and mid[0] < 250.0:
            return BoundaryTag.LSHAPE_FIXED
        if (
            abs(p[1] - 250.0) < tol
            and abs(q[1] - 250.0) < tol
            and min(p[0], q[0]) > 470.0 - tol
        ):
            return BoundaryTag.LSHAPE_LOAD
        return BoundaryTag.FREE

    faces = _tag_faces(nodes, elems, _boundary_edges(elems), classify)
    return _make_mesh(nodes, elems, faces, [], "lshape")


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every quadrilateral into four.

    New nodes are the edge midpoints and the cell centres; parent nodes keep
    their ids.  Edges on the slit are distinct on both sides (their end nodes
    differ), so their midpoints become new duplicated slit pairs.
    """
    nodes, elems = mesh.nodes, mesh.elements
    ne, nn = len(elems), len(nodes)
    edge_nodes = elems[:, LOCAL_EDGES]
    keys = np.sort(edge_nodes, axis=2).reshape(-1, 2)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel().reshape(ne, 4)
    mid_ids = nn + np.arange(len(uniq))
    mids = 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])
    center_ids = nn + len(uniq) + np.arange(ne)
    centers = nodes[elems].mean(axis=1)
    new_nodes = np.vstack([nodes, mids, centers])

    m = mid_ids[inv]  # (ne, 4): midpoint of local edge k
    c = center_ids
    v = elems
    children = np.stack(
        [
            np.column_stack([v[:, 0], m[:, 0], c, m[:, 3]]),
            np.column_stack([m[:, 0], v[:, 1], m[:, 1], c]),
            np.column_stack([c, m[:, 1], v[:, 2], m[:, 2]]),
            np.column_stack([m[:, 3], c, m[:, 2], v[:, 3]]),
        ],
        axis=1,
    )  # (ne, 4 children, 4)
    new_elems = children.reshape(-1, 4)

    # child i of parent e touches parent edge k through (child, local edge):
    # edge k=0 -> children 0,1 edge 0; k=1 -> children 1,2 edge 1; etc.
    child_of_edge = {0: (0, 1), 1: (1, 2), 2: (2, 3), 3: (3, 0)}
    faces = []
    for e, k, tag in mesh.boundary_faces:
        for ch in child_of_edge[int(k)]:
            faces.append((4 * e + ch, k, tag))
    faces = np.array(faces, dtype=np.int64)

    pairs = [tuple(p) for p in mesh.slit_pairs]
    if len(mesh.slit_pairs):
        lower = mesh.faces_with_tag(BoundaryTag.SLIT_LOWER)
        upper = mesh.faces_with_tag(BoundaryTag.SLIT_UPPER)
        lo_mid = m[lower[:, 0], lower[:, 1]]
        up_mid = m[upper[:, 0], upper[:, 1]]
        up_by_coord = {tuple(new_nodes[i]): i for i in up_mid}
        for i in lo_mid:
            j = up_by_coord[tuple(new_nodes[i])]
            pairs.append((int(i), int(j)))
    pairs = sorted(pairs, key=lambda p: (new_nodes[p[0], 0], new_nodes[p[0], 1]))
    return _make_mesh(new_nodes, new_elems, faces, pairs, mesh.name)


def build_notched_square(n_refine: int) -> Mesh:
    """Unit square with an edge slit, refined ``n_refine`` times from a 2x2 grid.

    ``n_refine = 4`` gives 1024 elements and 1105 nodes.
    """
    if n_refine < 1:
        raise MeshError("n_refine must be >= 1 for the slit to be resolved")
    mesh = _notched_coarse()
    for _ in range(n_refine):
        mesh = refine_uniform(mesh)
    return mesh


def build_lshape(n_refine: int) -> Mesh:
    """L-shaped panel; 75 coarse cells so levels 1, 2, 3 give 300, 1200, 4800 elements."""
    if n_refine < 0:
        raise MeshError("n_refine must be >= 0")
    mesh = _lshape_coarse()
    for _ in range(n_refine):
        mesh = refine_uniform(mesh)
    return mesh


def build_unit_square(n_refine: int) -> Mesh:
    """Unbroken unit square, ``2**(n_refine+1)`` cells per side."""
    n = 2 ** (n_refine + 1)
    nodes, elems = _tensor_grid(np.linspace(0.0, 1.0, n + 1), np.linspace(0.0, 1.0, n + 1))
    tol = 1e-9

    def classify(p, q):
        if abs(p[1] - q[1]) < tol:
            return BoundaryTag.BOTTOM if abs(p[1]) < tol else BoundaryTag.TOP
        return BoundaryTag.LEFT if abs(p[0]) < tol else BoundaryTag.RIGHT

    faces = _tag_faces(nodes, elems, _boundary_edges(elems), classify)
    return _make_mesh(nodes, elems, faces, [], "unit_square")


def jacobian_dets(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Jacobian determinants ``(n_elements, n_points)`` at reference points."""
    xi, eta = points[:, 0], points[:, 1]
    dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    xy = mesh.nodes[mesh.elements]  # (ne, 4, 2)
    J00 = np.einsum("ap,ea->ep", dxi, xy[:, :, 0])
    J01 = np.einsum("ap,ea->ep", deta, xy[:, :, 0])
    J10 = np.einsum("ap,ea->ep", dxi, xy[:, :, 1])
    J11 = np.einsum("ap,ea->ep", deta, xy[:, :, 1])
    return J00 * J11 - J01 * J10


def check_mesh(mesh: Mesh) -> None:
    """Raise ``MeshError`` if a structural invariant is violated."""
    g = np.polynomial.legendre.leggauss(2)[0]
    pts = np.array([[a, b] for b in g for a in g])
    if np.any(jacobian_dets(mesh, pts) <= 0.0):
        raise MeshError("degenerate or clockwise element")
    for lo, up in mesh.slit_pairs:
        if lo == up or not np.array_equal(mesh.nodes[lo], mesh.nodes[up]):
            raise MeshError(f"slit pair ({lo}, {up}) not coincident")
        both = np.isin(mesh.elements, [lo, up]).sum(axis=1)
        if np.any(both > 1):
            raise MeshError(f"element references both nodes of slit pair ({lo}, {up})")


def write_vtk(path, mesh: Mesh, point_vectors=None, point_scalars=None, title="phasefrac") -> Path:
    """Legacy ASCII VTK unstructured grid with quads (cell type 9).

    Duplicated slit nodes are written as distinct points.
    """
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes)
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {5 * ne}")
    lines.extend("4 " + " ".join(str(int(i)) for i in el) for el in mesh.elements)
    lines.append(f"CELL_TYPES {ne}")
    lines.extend(["9"] * ne)
    point_vectors = point_vectors or {}
    point_scalars = point_scalars or {}
    if point_vectors or point_scalars:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, vec in point_vectors.items():
        vec = np.asarray(vec, dtype=float).reshape(mesh.n_nodes, 2)
        lines.append(f"VECTORS {name} double")
        lines.extend(f"{a:.17g} {b:.17g} 0" for a, b in vec)
    for name, val in point_scalars.items():
        val = np.asarray(val, dtype=float).reshape(mesh.n_nodes)
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{a:.17g}" for a in val)
    path.write_text("\n".join(lines) + "\n")
    return path
