"""Triangle meshes with tagged boundaries for the benchmark domains.

Meshes are plain conforming triangulations.  Triangles are stored with
counter-clockwise vertex order and every topological boundary edge carries an
integer tag (1-based, contiguous).  Tag conventions used by the generators:

* rectangle: 1=bottom, 2=right, 3=top, 4=left
* channel with step: 1=bottom wall and step perimeter, 2=outflow, 3=top wall, 4=inflow
* offset-circles asset: 1=outer circle, 2=inner circle
"""

from __future__ import annotations

import io
import os

import numpy as np

__all__ = [
    "MeshError",
    "GmshParseError",
    "TriMesh",
    "generate_rect_mesh",
    "generate_channel_step_mesh",
    "parse_gmsh",
    "load_gmsh",
    "write_gmsh",
    "boundary_dofs",
]


class MeshError(ValueError):
    """A mesh violates a structural invariant."""


class GmshParseError(MeshError):
    """Malformed MSH input.  ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"MSH parse error at line {line}: {message}")
        self.line = line


class TriMesh:
    """Immutable conforming triangulation with tagged boundary edges.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    boundary_edges : (nb, 2) int array of vertex pairs
    boundary_tags : (nb,) int array, tags start at 1 and are contiguous

    The constructor builds the unique-edge table (used for P2 midpoint
    numbering) and validates all invariants; it raises MeshError otherwise.
    """

    def __init__(self, vertices, triangles, boundary_edges, boundary_tags):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.ascontiguousarray(boundary_tags, dtype=np.int64).ravel()
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if len(self.boundary_edges) != len(self.boundary_tags):
            raise MeshError("boundary_edges and boundary_tags lengths differ")
        self._build_edge_table()
        self._validate()

    # -- derived structure ------------------------------------------------

    def _build_edge_table(self):
        tri = self.triangles
        nt = len(tri)
        pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        self.edges = edges
        self.tri_edges = inverse.reshape(3, nt).T  # local order: (0,1), (1,2), (2,0)
        self._edge_counts = counts
        self._edge_lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}

    def _validate(self):
        nv = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= nv):
            raise MeshError("triangle vertex index out of range")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} is degenerate or clockwise (area {areas[bad]:g})")
        if np.any(self._edge_counts > 2):
            raise MeshError("non-manifold edge shared by more than two triangles")
        topo = {tuple(e) for e in self.edges[self._edge_counts == 1]}
        tagged = {tuple(sorted(map(int, e))) for e in self.boundary_edges}
        if len(tagged) != len(self.boundary_edges):
            raise MeshError("duplicate boundary edge")
        if topo != tagged:
            missing = topo - tagged
            extra = tagged - topo
            raise MeshError(
                f"boundary edge mismatch: {len(missing)} untagged, {len(extra)} not on boundary"
            )
        if len(self.boundary_tags):
            present = np.unique(self.boundary_tags)
            if present[0] < 1 or not np.array_equal(present, np.arange(1, present[-1] + 1)):
                raise MeshError(f"boundary tags not contiguous from 1: {present.tolist()}")

    # -- queries -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edge_id(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        return self._edge_lookup[key]

    def edges_with_tags(self, tags) -> np.ndarray:
        """Indices into boundary_edges whose tag is in ``tags``."""
        tags = set(int(t) for t in tags)
        return np.array([i for i, t in enumerate(self.boundary_tags) if int(t) in tags], dtype=np.int64)


# -- generators -------------------------------------------------------------


def generate_rect_mesh(x_range, y_range, nx: int, ny: int) -> TriMesh:
    """Structured rectangle mesh, each cell split along its lower-left to
    upper-right diagonal.  Boundary tags: 1=bottom, 2=right, 3=top, 4=left."""
    x0, x1 = map(float, x_range)
    y0, y1 = map(float, y_range)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate extent")
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row index = j (y), col index = i (x)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    a = j * (nx + 1) + i
    b = a + 1
    c = b + (nx + 1)
    d = a + (nx + 1)
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])

    bottom = [(i, i + 1) for i in range(nx)]
    right = [(j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx) for j in range(ny)]
    top = [(ny * (nx + 1) + i, ny * (nx + 1) + i + 1) for i in range(nx)]
    left = [(j * (nx + 1), (j + 1) * (nx + 1)) for j in range(ny)]
    edges = bottom + right + top + left
    tags = [1] * nx + [2] * ny + [3] * nx + [4] * ny
    return TriMesh(vertices, tris, np.array(edges), np.array(tags))


def generate_channel_step_mesh(nx: int, ny: int, step_x0: float = 5.0) -> TriMesh:
    """Channel [0,40]x[0,10] with a 1x1 step removed at [step_x0, step_x0+1]x[0,1].

    The step must align with the structured grid.  Boundary tags follow the
    rectangle convention: 1=bottom wall plus the step perimeter, 2=outflow
    (x=40), 3=top wall, 4=inflow (x=0).
    """
    LX, LY = 40.0, 10.0
    dx = LX / nx
    dy = LY / ny
    for name, val in (("step_x0", step_x0 / dx), ("step_x0+1", (step_x0 + 1.0) / dx), ("step top", 1.0 / dy)):
        if abs(val - round(val)) > 1e-9:
            raise ValueError(f"step not aligned with grid: {name} does not land on a grid line")
    if not (0.0 < step_x0 and step_x0 + 1.0 < LX):
        raise ValueError("step must be strictly inside the channel")

    xs = np.linspace(0.0, LX, nx + 1)
    ys = np.linspace(0.0, LY, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    cx = (i + 0.5) * dx
    cy = (j + 0.5) * dy
    keep = ~((cx > step_x0) & (cx < step_x0 + 1.0) & (cy < 1.0))
    i, j = i[keep], j[keep]
    a = j * (nx + 1) + i
    b = a + 1
    c = b + (nx + 1)
    d = a + (nx + 1)
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])

    # drop vertices that only belonged to removed cells
    used = np.zeros(len(vertices), dtype=bool)
    used[tris.ravel()] = True
    renum = -np.ones(len(vertices), dtype=np.int64)
    renum[used] = np.arange(used.sum())
    vertices = vertices[used]
    tris = renum[tris]

    # topological boundary, tagged by geometry
    pairs = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    edges, counts = np.unique(pairs, axis=0, return_counts=True)
    bnd = edges[counts == 1]
    mid = 0.5 * (vertices[bnd[:, 0]] + vertices[bnd[:, 1]])
    tol = 1e-9 * LX
    tags = np.ones(len(bnd), dtype=np.int64)
    tags[np.abs(mid[:, 1] - LY) < tol] = 3
    tags[np.abs(mid[:, 0] - LX) < tol] = 2
    tags[np.abs(mid[:, 0]) < tol] = 4
    return TriMesh(vertices, tris, bnd, tags)


# -- Gmsh MSH 2.2 ASCII subset ----------------------------------------------


def parse_gmsh(data) -> TriMesh:
    """Parse the MSH 2.2 ASCII subset: $MeshFormat, $Nodes, $Elements with
    2-node lines (type 1, physical tag = boundary tag) and 3-node triangles
    (type 2).  Anything else is a GmshParseError carrying a 1-based line
    number.  Unreferenced nodes are dropped; clockwise triangles are flipped.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    n = len(lines)
    pos = 0

    def expect_section(name):
        nonlocal pos
        while pos < n and not lines[pos].strip():
            pos += 1
        if pos >= n:
            raise GmshParseError(f"missing ${name} section", n)
        if lines[pos].strip() != f"${name}":
            raise GmshParseError(f"expected ${name}, found {lines[pos].strip()!r}", pos + 1)
        pos += 1

    expect_section("MeshFormat")
    fmt = lines[pos].split() if pos < n else []
    if len(fmt) < 3 or not fmt[0].startswith("2.2") or fmt[1] != "0":
        raise GmshParseError("unsupported format, need '2.2 0 8' ASCII", pos + 1)
    pos += 1
    expect_section("EndMeshFormat")

    expect_section("Nodes")
    try:
        n_nodes = int(lines[pos].split()[0])
    except (IndexError, ValueError):
        raise GmshParseError("bad node count", pos + 1)
    pos += 1
    ids = np.empty(n_nodes, dtype=np.int64)
    xy = np.empty((n_nodes, 2), dtype=np.float64)
    for k in range(n_nodes):
        if pos >= n or lines[pos].strip().startswith("$"):
            raise GmshParseError(f"$Nodes count mismatch: expected {n_nodes} nodes", pos + 1)
        parts = lines[pos].split()
        try:
            ids[k] = int(parts[0])
            xy[k, 0] = float(parts[1])
            xy[k, 1] = float(parts[2])
        except (IndexError, ValueError):
            raise GmshParseError("malformed node line", pos + 1)
        pos += 1
    expect_section("EndNodes")
    id_map = {int(i): k for k, i in enumerate(ids)}
    if len(id_map) != n_nodes:
        raise GmshParseError("duplicate node id in $Nodes", pos)

    expect_section("Elements")
    try:
        n_elem = int(lines[pos].split()[0])
    except (IndexError, ValueError):
        raise GmshParseError("bad element count", pos + 1)
    pos += 1
    tris = []
    bedges = []
    btags = []
    for k in range(n_elem):
        if pos >= n or lines[pos].strip().startswith("$"):
            raise GmshParseError(f"$Elements count mismatch: expected {n_elem} elements", pos + 1)
        parts = lines[pos].split()
        try:
            etype = int(parts[1])
            ntags = int(parts[2])
            tags = [int(t) for t in parts[3:3 + ntags]]
            nodes = [int(v) for v in parts[3 + ntags:]]
        except (IndexError, ValueError):
            raise GmshParseError("malformed element line", pos + 1)
        if etype == 1:
            if len(nodes) != 2:
                raise GmshParseError("line element needs exactly 2 nodes", pos + 1)
            if ntags < 1 or tags[0] < 1:
                raise GmshParseError("boundary line element without positive physical tag", pos + 1)
            try:
                bedges.append((id_map[nodes[0]], id_map[nodes[1]]))
            except KeyError as e:
                raise GmshParseError(f"element references unknown node {e.args[0]}", pos + 1)
            btags.append(tags[0])
        elif etype == 2:
            if len(nodes) != 3:
                raise GmshParseError("triangle element needs exactly 3 nodes", pos + 1)
            try:
                tris.append([id_map[v] for v in nodes])
            except KeyError as e:
                raise GmshParseError(f"element references unknown node {e.args[0]}", pos + 1)
        else:
            raise GmshParseError(f"unsupported element type {etype} (only 1=line, 2=triangle)", pos + 1)
        pos += 1
    elements_end_line = pos + 1
    expect_section("EndElements")

    if not tris:
        raise GmshParseError("no triangles in $Elements", elements_end_line)
    tris = np.asarray(tris, dtype=np.int64)

    # orient counter-clockwise
    p = xy[tris]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    # drop nodes never referenced by a triangle
    used = np.zeros(n_nodes, dtype=bool)
    used[tris.ravel()] = True
    renum = -np.ones(n_nodes, dtype=np.int64)
    renum[used] = np.arange(used.sum())
    bedges = np.asarray(bedges, dtype=np.int64).reshape(-1, 2)
    if bedges.size and not used[bedges.ravel()].all():
        raise GmshParseError("boundary line element not attached to any triangle", elements_end_line)
    try:
        return TriMesh(xy[used], renum[tris], renum[bedges], np.asarray(btags, dtype=np.int64))
    except MeshError as e:
        raise GmshParseError(str(e), elements_end_line)


def load_gmsh(path) -> TriMesh:
    with io.open(os.fspath(path), "r", encoding="utf-8") as fh:
        return parse_gmsh(fh.read())


def write_gmsh(mesh: TriMesh) -> str:
    """Serialize to the same MSH 2.2 ASCII subset parse_gmsh reads."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    for k, (x, y) in enumerate(mesh.vertices, start=1):
        out.append(f"{k} {float(x)!r} {float(y)!r} 0")
    out.append("$EndNodes")
    out.append("$Elements")
    out.append(str(len(mesh.boundary_edges) + mesh.n_triangles))
    eid = 1
    for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        out.append(f"{eid} 1 2 {t} {t} {a + 1} {b + 1}")
        eid += 1
    for a, b, c in mesh.triangles:
        out.append(f"{eid} 2 2 1 1 {a + 1} {b + 1} {c + 1}")
        eid += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


# -- boundary degrees of freedom --------------------------------------------


def boundary_dofs(mesh: TriMesh, dofmap, tags) -> np.ndarray:
    """Velocity dof indices (both components) of all P2 nodes lying on
    boundary edges with the given tags, ascending and duplicate-free."""
    tags = sorted(set(int(t) for t in tags))
    if not tags:
        raise ValueError("tags must be non-empty")
    present = set(int(t) for t in np.unique(mesh.boundary_tags))
    unknown = [t for t in tags if t not in present]
    if unknown:
        raise ValueError(f"unknown boundary tags {unknown}; mesh has {sorted(present)}")
    scalar = set()
    want = set(tags)
    for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        if int(t) in want:
            scalar.add(int(a))
            scalar.add(int(b))
            scalar.add(dofmap.n_vertices + mesh.edge_id(int(a), int(b)))
    scalar = np.array(sorted(scalar), dtype=np.int64)
    return np.concatenate([scalar, scalar + dofmap.n_scalar])
