"""Conforming simplicial meshes of plane domains.

A mesh is a list of vertices and a list of positively oriented
triangles.  Validation enforces the usual conformity rules: no inverted
or degenerate triangle, every edge shared by at most two triangles, and
no vertex sitting in the interior of another triangle's edge (hanging
node).  Boundary vertices are exactly those lying on an edge that
belongs to a single triangle.

The text format is line oriented and round-trips exactly::

    mesh v=<n_vertices> s=<n_simplices>
    <x> <y>          one line per vertex
    <i> <j> <k>      one line per triangle, 0-based vertex indices

Floats are written with ``repr`` (shortest round-trip form), so
``load_mesh(dump_mesh(m))`` reproduces ``m`` bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

# A triangle whose area falls below this fraction of the mesh mean is
# treated as degenerate.
DEGENERATE_AREA_FRACTION = 1e-14


class MeshError(ValueError):
    """Raised for malformed, non-conforming, or degenerate meshes."""


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    Fields
    ------
    vertices : (nv, 2) float array
    simplices : (ns, 3) int array, counterclockwise vertex triples
    boundary_vertex_flags : (nv,) bool array, True on the boundary
    """

    vertices: np.ndarray
    simplices: np.ndarray
    boundary_vertex_flags: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]


def _signed_areas(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    p0 = vertices[simplices[:, 0]]
    p1 = vertices[simplices[:, 1]]
    p2 = vertices[simplices[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_counts(simplices: np.ndarray) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for tri in simplices:
        a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            counts[key] = counts.get(key, 0) + 1
    return counts


def make_mesh(vertices, simplices) -> Mesh:
    """Validate raw arrays and build a Mesh with boundary flags."""
    vertices = np.ascontiguousarray(np.asarray(vertices, dtype=float))
    simplices = np.ascontiguousarray(np.asarray(simplices, dtype=np.int64))
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError(f"vertices must be (nv, 2), got {vertices.shape}")
    if simplices.ndim != 2 or simplices.shape[1] != 3:
        raise MeshError(f"simplices must be (ns, 3), got {simplices.shape}")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinates")
    nv = vertices.shape[0]
    if simplices.size and (simplices.min() < 0 or simplices.max() >= nv):
        raise MeshError("vertex index out of range")
    if nv == 0 or simplices.shape[0] == 0:
        raise MeshError("mesh must contain at least one vertex and one simplex")
    for j, tri in enumerate(simplices):
        if len({int(tri[0]), int(tri[1]), int(tri[2])}) != 3:
            raise MeshError(f"simplex {j} has repeated vertices")

    areas = _signed_areas(vertices, simplices)
    bad = np.where(areas <= 0.0)[0]
    if bad.size:
        raise MeshError(f"inverted simplex {int(bad[0])} (nonpositive signed area)")
    if np.any(areas < DEGENERATE_AREA_FRACTION * float(areas.mean())):
        j = int(np.argmin(areas))
        raise MeshError(f"degenerate simplex {j} (area below tolerance)")

    # Distinct vertices must be geometrically distinct as well; two
    # coincident points break the shared-vertex conformity rule.
    if np.unique(vertices, axis=0).shape[0] != nv:
        raise MeshError("two vertices share the same coordinates")

    counts = _edge_counts(simplices)
    boundary = np.zeros(nv, dtype=bool)
    single_edges = []
    for (u, v), c in counts.items():
        if c > 2:
            raise MeshError(f"edge ({u}, {v}) shared by {c} simplices")
        if c == 1:
            boundary[u] = True
            boundary[v] = True
            single_edges.append((u, v))

    # Hanging-node check: a T-junction leaves the long edge counted once
    # with a foreign vertex strictly inside it.
    for u, v in single_edges:
        a = vertices[u]
        d = vertices[v] - a
        ll = float(d @ d)
        rel = vertices - a
        cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
        dot = rel @ d
        onseg = (np.abs(cross) <= 1e-12 * ll) & (dot > 1e-12 * ll) & (dot < (1.0 - 1e-12) * ll)
        onseg[u] = onseg[v] = False
        if np.any(onseg):
            k = int(np.where(onseg)[0][0])
            raise MeshError(f"vertex {k} hangs on edge ({u}, {v})")

    return Mesh(vertices=vertices, simplices=simplices, boundary_vertex_flags=boundary)


def generate_unit_square(n: int) -> Mesh:
    """Uniform triangulation of the unit square.

    Splits an n-by-n grid of squares along the lower-left to upper-right
    diagonal, giving (n+1)**2 vertices and 2*n**2 right triangles with
    longest edge sqrt(2)/n.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    idx = np.arange(n + 1)
    xs, ys = np.meshgrid(idx / n, idx / n, indexing="xy")
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i = i.ravel()
    j = j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    simplices = np.empty((2 * n * n, 3), dtype=np.int64)
    simplices[0::2] = lower
    simplices[1::2] = upper
    return make_mesh(vertices, simplices)


def nondegeneracy(mesh: Mesh) -> float:
    """Max over simplices of diameter / inradius (shape-regularity)."""
    v = mesh.vertices
    t = mesh.simplices
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    l0 = np.linalg.norm(p1 - p0, axis=1)
    l1 = np.linalg.norm(p2 - p1, axis=1)
    l2 = np.linalg.norm(p0 - p2, axis=1)
    diam = np.maximum(np.maximum(l0, l1), l2)
    areas = _signed_areas(v, t)
    if np.any(areas < DEGENERATE_AREA_FRACTION * float(np.abs(areas).mean())):
        raise MeshError("degenerate simplex in nondegeneracy computation")
    inradius = 2.0 * areas / (l0 + l1 + l2)
    return float(np.max(diam / inradius))


def mesh_size(mesh: Mesh) -> float:
    """Largest simplex diameter h."""
    v = mesh.vertices
    t = mesh.simplices
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    l0 = np.linalg.norm(p1 - p0, axis=1)
    l1 = np.linalg.norm(p2 - p1, axis=1)
    l2 = np.linalg.norm(p0 - p2, axis=1)
    return float(np.max(np.maximum(np.maximum(l0, l1), l2)))


def _decode(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def load_mesh(source) -> Mesh:
    """Parse the text format from bytes, a string, or a readable stream."""
    text = _decode(source)
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MeshError("empty mesh file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "mesh":
        raise MeshError(f"bad header line: {lines[0]!r}")
    try:
        kv = dict(part.split("=", 1) for part in head[1:])
        nv = int(kv["v"])
        ns = int(kv["s"])
    except (ValueError, KeyError) as exc:
        raise MeshError(f"bad header line: {lines[0]!r}") from exc
    if nv < 1 or ns < 1:
        raise MeshError(f"header declares v={nv} s={ns}")
    if len(lines) != 1 + nv + ns:
        raise MeshError(f"expected {1 + nv + ns} lines, found {len(lines)}")

    vertices = np.empty((nv, 2), dtype=float)
    for k in range(nv):
        parts = lines[1 + k].split()
        if len(parts) != 2:
            raise MeshError(f"vertex line {k}: expected 2 fields, got {len(parts)}")
        try:
            vertices[k, 0] = float(parts[0])
            vertices[k, 1] = float(parts[1])
        except ValueError as exc:
            raise MeshError(f"vertex line {k}: bad float") from exc

    simplices = np.empty((ns, 3), dtype=np.int64)
    for k in range(ns):
        parts = lines[1 + nv + k].split()
        if len(parts) != 3:
            raise MeshError(f"simplex line {k}: expected 3 fields, got {len(parts)}")
        try:
            simplices[k] = [int(p) for p in parts]
        except ValueError as exc:
            raise MeshError(f"simplex line {k}: bad index") from exc

    return make_mesh(vertices, simplices)


def dump_mesh(mesh: Mesh) -> bytes:
    """Serialize to the text format (UTF-8, LF line endings)."""
    out = io.StringIO()
    out.write(f"mesh v={mesh.n_vertices} s={mesh.n_simplices}\n")
    for x, y in mesh.vertices:
        out.write(f"{float(x)!r} {float(y)!r}\n")
    for a, b, c in mesh.simplices:
        out.write(f"{int(a)} {int(b)} {int(c)}\n")
    return out.getvalue().encode("utf-8")
