"""Quasi-uniform triangulations of the unit square and the L-shaped domain.

Meshes are immutable after construction and safe to share across threads.
The text file format is documented in `save_mesh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Longest-edge / inradius ratio of a right isosceles triangle; normalizes
# quasi_uniformity_ratio to 1 on the uniform square grid.
_RIGHT_ISOSCELES_RATIO = 2.0 + 2.0 * math.sqrt(2.0)

DOMAIN_AREAS = {"square": 1.0, "lshape": 0.75}


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MeshParseError(MeshError):
    """Malformed mesh file; carries the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray        # (nv, 2) float
    triangles: np.ndarray       # (nt, 3) int, counter-clockwise
    boundary_vertex: np.ndarray  # (nv,) bool
    domain_tag: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "boundary_vertex", np.ascontiguousarray(self.boundary_vertex, dtype=bool))
        for a in ("vertices", "triangles", "boundary_vertex"):
            getattr(self, a).setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_corners(self) -> np.ndarray:
        """Corner coordinates, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def signed_areas(self) -> np.ndarray:
        c = self.triangle_corners()
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and their triangle multiplicity.

        Returns (edges (ne, 2) with sorted vertex pairs, counts (ne,)).
        """
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        raw = np.sort(raw, axis=1)
        edges, counts = np.unique(raw, axis=0, return_counts=True)
        return edges, counts

    def boundary_edges(self) -> np.ndarray:
        edges, counts = self.edges()
        return edges[counts == 1]


def generate_square_mesh(n: int) -> Mesh:
    """Uniform triangulation of [0,1]^2 with n subdivisions per side.

    Each grid cell is split along its lower-left/upper-right diagonal, giving
    2*n^2 congruent right isosceles triangles with longest edge sqrt(2)/n.
    """
    if n < 1:
        raise MeshError(f"square mesh needs n >= 1, got {n}")
    verts, tris = _grid_triangulation(n)
    x, y = verts[:, 0], verts[:, 1]
    on_boundary = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
    return Mesh(verts, tris, on_boundary, domain_tag="square")


def generate_lshape_mesh(n: int) -> Mesh:
    """Triangulation of the L-shaped domain [0,1]^2 minus [1/2,1]^2 (area 3/4).

    Built by masking the uniform square grid, so refinement commutes with
    generation; n must be even for the cut corner to land on grid lines.
    """
    if n < 1:
        raise MeshError(f"L-shape mesh needs n >= 1, got {n}")
    if n % 2 != 0:
        raise MeshError(f"L-shape mesh needs even n so the cut at 1/2 lies on grid lines, got {n}")
    verts, tris = _grid_triangulation(n)
    centers = verts[tris].mean(axis=1)
    keep = ~((centers[:, 0] > 0.5) & (centers[:, 1] > 0.5))
    tris = tris[keep]
    used = np.unique(tris)
    remap = -np.ones(verts.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    verts = verts[used]
    tris = remap[tris]
    mesh = Mesh(verts, tris, np.zeros(verts.shape[0], dtype=bool), domain_tag="lshape")
    flags = _boundary_flags_from_edges(mesh)
    return Mesh(verts, tris, flags, domain_tag="lshape")


def _grid_triangulation(n: int) -> tuple[np.ndarray, np.ndarray]:
    coords = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return verts, np.array(tris, dtype=np.int64)


def _boundary_flags_from_edges(mesh: Mesh) -> np.ndarray:
    flags = np.zeros(mesh.num_vertices, dtype=bool)
    be = mesh.boundary_edges()
    if be.size:
        flags[np.unique(be)] = True
    return flags


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into 4 congruent children via edge midpoints."""
    validate_mesh(mesh)
    edges, _ = mesh.edges()
    edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    nv = mesh.num_vertices
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, midpoints])

    boundary = np.concatenate([mesh.boundary_vertex, np.zeros(edges.shape[0], dtype=bool)])
    be = mesh.boundary_edges()
    for a, b in be:
        boundary[nv + edge_index[(int(a), int(b))]] = True

    def mid(a, b):
        return nv + edge_index[(min(int(a), int(b)), max(int(a), int(b)))]

    tris = []
    for v0, v1, v2 in mesh.triangles:
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        tris.extend([(v0, m01, m20), (m01, v1, m12), (m20, m12, v2), (m01, m12, m20)])
    return Mesh(verts, np.array(tris, dtype=np.int64), boundary, domain_tag=mesh.domain_tag)


def mesh_size(mesh: Mesh) -> float:
    """h = maximum over triangles of the longest edge."""
    return float(_edge_lengths(mesh).max(axis=1).max())


def quasi_uniformity_ratio(mesh: Mesh) -> float:
    """(max longest edge) / (min inradius), scaled so the uniform square grid gives 1."""
    lengths = _edge_lengths(mesh)
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise MeshError("degenerate or misoriented triangle (non-positive area)")
    inradius = 2.0 * areas / lengths.sum(axis=1)
    return float(lengths.max() / inradius.min() / _RIGHT_ISOSCELES_RATIO)


def _edge_lengths(mesh: Mesh) -> np.ndarray:
    c = mesh.triangle_corners()
    return np.stack(
        [
            np.linalg.norm(c[:, 1] - c[:, 0], axis=1),
            np.linalg.norm(c[:, 2] - c[:, 1], axis=1),
            np.linalg.norm(c[:, 0] - c[:, 2], axis=1),
        ],
        axis=1,
    )


def validate_mesh(mesh: Mesh, area: float | None = None) -> None:
    """Check orientation, edge sharing, boundary flags, and total area.

    `area` defaults to the known area of the mesh's domain tag, if any.
    Raises MeshError on the first violation.
    """
    t = mesh.triangles
    if t.size and (t.min() < 0 or t.max() >= mesh.num_vertices):
        raise MeshError("triangle references a vertex index out of range")
    sa = mesh.signed_areas()
    if np.any(sa <= 0):
        bad = int(np.argmax(sa <= 0))
        raise MeshError(f"triangle {bad} has non-positive signed area {sa[bad]:.3e}")

    edges, counts = mesh.edges()
    if np.any(counts > 2):
        bad = edges[np.argmax(counts > 2)]
        raise MeshError(f"edge {tuple(bad)} shared by more than 2 triangles")

    flags = np.zeros(mesh.num_vertices, dtype=bool)
    be = edges[counts == 1]
    if be.size:
        flags[np.unique(be)] = True
    if not np.array_equal(flags, mesh.boundary_vertex):
        bad = int(np.argmax(flags != mesh.boundary_vertex))
        raise MeshError(
            f"vertex {bad} boundary flag is {bool(mesh.boundary_vertex[bad])} "
            f"but it lies on {'a' if flags[bad] else 'no'} boundary edge"
        )

    if area is None:
        area = DOMAIN_AREAS.get(mesh.domain_tag)
    if area is not None:
        total = float(sa.sum())
        if abs(total - area) > 1e-12 * area:
            raise MeshError(f"total area {total!r} differs from |domain| = {area!r}")


def save_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text mesh format:

        nodes <N>
        x y b          (N lines, b in {0,1}, >= 15 significant digits)
        triangles <T>
        i j k          (T lines, 0-based, counter-clockwise)

    '#' starts a comment; blank lines are ignored.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"nodes {mesh.num_vertices}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary_vertex):
            f.write(f"{x:.17g} {y:.17g} {int(b)}\n")
        f.write(f"triangles {mesh.num_triangles}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def load_mesh(path, domain_tag: str = "custom", validate: bool = True) -> Mesh:
    """Parse a mesh file written by `save_mesh`; inverse of it on all fields."""
    with open(path, "r", encoding="utf-8") as f:
        raw = f.readlines()

    lines = []  # (line_number, content)
    for ln, text in enumerate(raw, start=1):
        content = text.split("#", 1)[0].strip()
        if content:
            lines.append((ln, content))

    pos = 0

    def take(what: str) -> tuple[int, str]:
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshParseError(last + 1, f"unexpected end of file, expected {what}")
        item = lines[pos]
        pos += 1
        return item

    ln, header = take("'nodes <N>'")
    parts = header.split()
    if len(parts) != 2 or parts[0] != "nodes" or not parts[1].isdigit():
        raise MeshParseError(ln, f"expected 'nodes <N>', got {header!r}")
    n_nodes = int(parts[1])

    verts = np.empty((n_nodes, 2), dtype=float)
    flags = np.empty(n_nodes, dtype=bool)
    for i in range(n_nodes):
        ln, row = take("a node line 'x y b'")
        parts = row.split()
        if len(parts) != 3:
            raise MeshParseError(ln, f"expected 'x y b', got {row!r}")
        try:
            verts[i, 0], verts[i, 1] = float(parts[0]), float(parts[1])
        except ValueError:
            raise MeshParseError(ln, f"bad coordinate in {row!r}") from None
        if parts[2] not in ("0", "1"):
            raise MeshParseError(ln, f"boundary flag must be 0 or 1, got {parts[2]!r}")
        flags[i] = parts[2] == "1"

    ln, header = take("'triangles <T>'")
    parts = header.split()
    if len(parts) != 2 or parts[0] != "triangles" or not parts[1].isdigit():
        raise MeshParseError(ln, f"expected 'triangles <T>', got {header!r}")
    n_tris = int(parts[1])

    tris = np.empty((n_tris, 3), dtype=np.int64)
    for i in range(n_tris):
        ln, row = take("a triangle line 'i j k'")
        parts = row.split()
        if len(parts) != 3:
            raise MeshParseError(ln, f"expected 'i j k', got {row!r}")
        try:
            tris[i] = [int(p) for p in parts]
        except ValueError:
            raise MeshParseError(ln, f"bad vertex index in {row!r}") from None

    if pos != len(lines):
        raise MeshParseError(lines[pos][0], f"trailing content {lines[pos][1]!r}")

    mesh = Mesh(verts, tris, flags, domain_tag=domain_tag)
    if validate:
        validate_mesh(mesh, area=float(mesh.signed_areas().sum()) if domain_tag == "custom" else None)
    return mesh
