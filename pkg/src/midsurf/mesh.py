"""Triangle mesh container, adjacency, normals, sampling and file I/O.

Vertices live in normalized [-1, 1] coordinates.  Meshes are immutable after
construction; construction compacts away unreferenced vertices.  All
reductions (normal accumulation, adjoint scatter) run in a fixed order so
results are reproducible bit for bit.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

DEGENERATE_AREA = 1e-12


class TriMesh:
    """Triangular surface mesh with counter-clockwise outward faces."""

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if faces.shape[0] < 1:
            raise ValueError("mesh needs at least one face")
        if not np.isfinite(vertices).all():
            raise ValueError("mesh vertices contain NaN/Inf")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise ValueError("face index out of range")
        if (np.diff(np.sort(faces, axis=1), axis=1) == 0).any():
            raise ValueError("degenerate face (repeated vertex index)")
        used = np.zeros(len(vertices), dtype=bool)
        used[faces] = True
        if not used.all():
            remap = np.cumsum(used) - 1
            vertices = vertices[used]
            faces = remap[faces]
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        """Same connectivity, new vertex positions."""
        out = TriMesh.__new__(TriMesh)
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        if vertices.shape != self.vertices.shape:
            raise ValueError("vertex array shape mismatch")
        if not np.isfinite(vertices).all():
            raise ValueError("mesh vertices contain NaN/Inf")
        vertices.setflags(write=False)
        out.vertices = vertices
        out.faces = self.faces
        return out


class MeshAdjacency:
    """Precomputed incidence structures for a fixed connectivity.

    CSR layouts: ``vert_face_idx[vert_face_ptr[v]:vert_face_ptr[v+1]]`` are
    the faces incident to vertex v, and likewise for vertex neighbors.
    ``edge_faces`` holds the (at most two) faces per unique undirected edge,
    padded with -1; extra faces on non-manifold edges are only counted.
    """

    __slots__ = ("faces", "vert_face_ptr", "vert_face_idx", "vert_nbr_ptr",
                 "vert_nbr_idx", "edges", "edge_faces", "num_nonmanifold_edges",
                 "num_vertices")

    def __init__(self, mesh: TriMesh):
        faces = mesh.faces
        nv = mesh.num_vertices
        nf = len(faces)
        self.faces = faces
        self.num_vertices = nv

        # vertex -> incident faces (sorted by vertex, stable in face order)
        vf_vert = faces.ravel()
        vf_face = np.repeat(np.arange(nf, dtype=np.int64), 3)
        order = np.argsort(vf_vert, kind="stable")
        self.vert_face_idx = vf_face[order]
        counts = np.bincount(vf_vert, minlength=nv)
        self.vert_face_ptr = np.concatenate(([0], np.cumsum(counts)))

        # unique undirected edges and their faces
        sides = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        side_face = np.tile(np.arange(nf, dtype=np.int64), 3)
        sides_sorted = np.sort(sides, axis=1)
        edges, inverse = np.unique(sides_sorted, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        ne = len(edges)
        self.edges = edges
        per_edge = np.bincount(inverse, minlength=ne)
        self.num_nonmanifold_edges = int((per_edge > 2).sum())
        eorder = np.argsort(inverse, kind="stable")
        ptr = np.concatenate(([0], np.cumsum(per_edge)))
        edge_faces = np.full((ne, 2), -1, dtype=np.int64)
        sorted_faces = side_face[eorder]
        edge_faces[:, 0] = sorted_faces[ptr[:-1]]
        second = per_edge >= 2
        edge_faces[second, 1] = sorted_faces[ptr[:-1][second] + 1]
        self.edge_faces = edge_faces

        # vertex -> neighboring vertices (symmetric by construction)
        nbr_src = np.concatenate([edges[:, 0], edges[:, 1]])
        nbr_dst = np.concatenate([edges[:, 1], edges[:, 0]])
        norder = np.argsort(nbr_src, kind="stable")
        self.vert_nbr_idx = nbr_dst[norder]
        ncounts = np.bincount(nbr_src, minlength=nv)
        self.vert_nbr_ptr = np.concatenate(([0], np.cumsum(ncounts)))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def boundary_edges(self) -> np.ndarray:
        return self.edge_faces[:, 1] < 0

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) covering q in N(p) for every vertex p."""
        counts = np.diff(self.vert_nbr_ptr)
        src = np.repeat(np.arange(self.num_vertices, dtype=np.int64), counts)
        return src, self.vert_nbr_idx


def build_adjacency(mesh: TriMesh) -> MeshAdjacency:
    return MeshAdjacency(mesh)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def face_cross(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalized face normals (cross products, twice the face area)."""
    p0 = vertices[faces[:, 0]]
    a = vertices[faces[:, 1]] - p0
    b = vertices[faces[:, 2]] - p0
    return np.cross(a, b)


def _scatter_rows(idx: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, 3))
    for c in range(3):
        out[:, c] = np.bincount(idx, weights=rows[:, c], minlength=n)
    return out


def vertex_normals(mesh: TriMesh, adjacency: MeshAdjacency | None = None,
                   with_adjoint: bool = False):
    """Unit vertex normals from accumulated incident face cross products.

    The unnormalized cross products carry the area weighting.  With
    ``with_adjoint=True`` also returns ``vjp(nbar) -> dvertices``
    differentiating through the cross products and the normalization.
    """
    adj = adjacency if adjacency is not None else build_adjacency(mesh)
    verts = mesh.vertices
    cross = face_cross(verts, mesh.faces)
    s = np.add.reduceat(cross[adj.vert_face_idx], adj.vert_face_ptr[:-1], axis=0)
    norm = np.linalg.norm(s, axis=1)
    bad = norm < 2.0 * DEGENERATE_AREA
    if bad.any():
        raise ValueError(
            f"vertex {int(np.flatnonzero(bad)[0])} has no valid normal "
            "(all incident faces degenerate)")
    normals = s / norm[:, None]
    if not with_adjoint:
        return normals

    faces = mesh.faces

    def vjp(nbar: np.ndarray) -> np.ndarray:
        sbar = (nbar - normals * (normals * nbar).sum(axis=1, keepdims=True)) / norm[:, None]
        cbar = sbar[faces].sum(axis=1)
        p0 = verts[faces[:, 0]]
        a = verts[faces[:, 1]] - p0
        b = verts[faces[:, 2]] - p0
        abar = np.cross(b, cbar)
        bbar = np.cross(cbar, a)
        grads = np.concatenate([-abar - bbar, abar, bbar])
        idx = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
        return _scatter_rows(idx, grads, len(verts))

    return normals, vjp


def sample_points_uniform(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    """n points sampled uniformly by area (deterministic for a given seed)."""
    if n < 1:
        raise ValueError("need n >= 1 sample points")
    cross = face_cross(mesh.vertices, mesh.faces)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    fidx = np.searchsorted(cdf, rng.random(n) * total, side="right")
    fidx = np.minimum(fidx, len(areas) - 1)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[fidx]]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def midpoint_subdivide(mesh: TriMesh, rounds: int = 1) -> TriMesh:
    """Refine connectivity: each round splits every face into four at edge
    midpoints (midpoints are deduplicated by edge, not by coordinate)."""
    verts, faces = mesh.vertices, mesh.faces
    for _ in range(rounds):
        sides = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        edges, inverse = np.unique(np.sort(sides, axis=1), axis=0, return_inverse=True)
        inverse = inverse.ravel()
        mid = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
        m01, m12, m20 = np.split(inverse.reshape(3, -1) + len(verts), 3)
        m01, m12, m20 = m01[0], m12[0], m20[0]
        v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
        faces = np.concatenate([
            np.stack([v0, m01, m20], axis=1),
            np.stack([v1, m12, m01], axis=1),
            np.stack([v2, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ])
        verts = np.concatenate([verts, mid])
    return TriMesh(verts, faces)


# ---------------------------------------------------------------------------
# OFF / PLY file formats
# ---------------------------------------------------------------------------

def save_off(path, mesh: TriMesh) -> None:
    verts = mesh.vertices.astype(np.float32)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.num_vertices} {mesh.num_faces} 0\n")
        for x, y, z in verts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


def load_off(path) -> TriMesh:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise FormatError(f"{path}: bad magic (expected OFF)")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise FormatError(f"{path}: only triangular faces supported")
            faces.append([int(t) for t in tokens[pos + 1:pos + 4]])
            pos += 1 + k
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed OFF file") from exc
    return TriMesh(verts, np.array(faces, dtype=np.int64))


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {nv}
property float x
property float y
property float z
element face {nf}
property list uchar uint vertex_indices
end_header
"""


def save_ply(path, mesh: TriMesh) -> None:
    with open(path, "wb") as fh:
        fh.write(_PLY_HEADER.format(nv=mesh.num_vertices, nf=mesh.num_faces).encode())
        fh.write(mesh.vertices.astype("<f4").tobytes())
        face_block = np.empty((mesh.num_faces, 13), dtype=np.uint8)
        face_block[:, 0] = 3
        face_block[:, 1:] = mesh.faces.astype("<u4").view(np.uint8).reshape(-1, 12)
        fh.write(face_block.tobytes())


def load_ply(path) -> TriMesh:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"ply"):
        raise FormatError(f"{path}: bad magic (expected ply)")
    end = blob.find(b"end_header\n")
    if end < 0:
        raise FormatError(f"{path}: missing end_header")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    nv = nf = None
    fmt_ok = False
    for line in header:
        parts = line.split()
        if parts[:2] == ["format", "binary_little_endian"]:
            fmt_ok = True
        elif parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
    if not fmt_ok or nv is None or nf is None:
        raise FormatError(f"{path}: unsupported PLY header")
    body = blob[end + len(b"end_header\n"):]
    need = 12 * nv + 13 * nf
    if len(body) != need:
        raise FormatError(f"{path}: payload size mismatch")
    verts = np.frombuffer(body[:12 * nv], dtype="<f4").astype(np.float64).reshape(nv, 3)
    face_block = np.frombuffer(body[12 * nv:], dtype=np.uint8).reshape(nf, 13)
    if (face_block[:, 0] != 3).any():
        raise FormatError(f"{path}: only triangular faces supported")
    faces = face_block[:, 1:].copy().view("<u4").astype(np.int64).reshape(nf, 3)
    return TriMesh(verts, faces)


def save_mesh(path, mesh: TriMesh) -> None:
    """Dispatch on extension: .off or .ply."""
    p = str(path)
    if p.endswith(".off"):
        save_off(path, mesh)
    elif p.endswith(".ply"):
        save_ply(path, mesh)
    else:
        raise ValueError(f"unknown mesh format for {path} (use .off or .ply)")


def load_mesh(path) -> TriMesh:
    p = str(path)
    if p.endswith(".off"):
        return load_off(path)
    if p.endswith(".ply"):
        return load_ply(path)
    raise ValueError(f"unknown mesh format for {path} (use .off or .ply)")
