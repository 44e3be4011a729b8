"""Triangle mesh container, OBJ/PLY ingestion, normalization, and adjacency."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse


class MeshLoadError(ValueError):
    """Raised when a mesh file cannot be parsed into a valid triangle mesh."""


# Area threshold (relative to total surface area) below which a face is dropped.
DEGENERATE_AREA_FRACTION = 1e-12


class Mesh:
    """An immutable triangle mesh.

    Parameters
    ----------
    vertices : (V, 3) float array-like
        Vertex positions, arbitrary scale.
    faces : (F, 3) int array-like
        Vertex-index triples. Every index must be in ``[0, V)`` and no face
        may repeat a vertex index.
    id : str
        Opaque label carried through the pipeline (used to key oracle truth
        and run artifacts).
    """

    def __init__(self, vertices, faces, id: str = ""):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if v.shape[0] == 0:
            raise ValueError("mesh has no vertices")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            bad = f[(f < 0).any(axis=1) | (f >= v.shape[0]).any(axis=1)][0]
            raise ValueError(f"face index out of range: {bad.tolist()} with {v.shape[0]} vertices")
        if f.size:
            repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if repeated.any():
                raise ValueError(f"face {np.flatnonzero(repeated)[0]} repeats a vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f
        self.id = id

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices, id: str | None = None) -> "Mesh":
        """New mesh with the same faces and replaced vertex positions."""
        return Mesh(vertices, self.faces, self.id if id is None else id)

    @cached_property
    def face_corner_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        f = self.faces
        return v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]

    @cached_property
    def face_cross(self) -> np.ndarray:
        e1, e2 = self.face_corner_vectors
        return np.cross(e1, e2)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit face normals; degenerate faces get a zero normal."""
        cross = self.face_cross
        norms = np.linalg.norm(cross, axis=1)
        out = np.zeros_like(cross)
        ok = norms > 0
        out[ok] = cross[ok] / norms[ok, None]
        return out

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    @cached_property
    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs, shape (E, 2)."""
        f = self.faces
        halfedges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        halfedges.sort(axis=1)
        return np.unique(halfedges, axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    @cached_property
    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse graph of edges weighted by Euclidean length."""
        e = self.edges
        w = self.edge_lengths
        n = self.n_vertices
        g = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
            shape=(n, n),
        )
        return g.tocsr()

    @cached_property
    def vertex_face_incidence(self) -> sparse.csr_matrix:
        """Boolean (V, F) incidence matrix: vertex i lies on face j."""
        f = self.faces
        rows = f.ravel()
        cols = np.repeat(np.arange(self.n_faces), 3)
        data = np.ones(rows.size, dtype=np.int8)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, self.n_faces))

    @cached_property
    def face_adjacency(self) -> sparse.csr_matrix:
        """Boolean (F, F) adjacency: faces sharing an edge are adjacent."""
        f = self.faces
        halfedges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        halfedges.sort(axis=1)
        face_of = np.tile(np.arange(self.n_faces), 3)
        order = np.lexsort((halfedges[:, 1], halfedges[:, 0]))
        he = halfedges[order]
        fo = face_of[order]
        same = (he[1:] == he[:-1]).all(axis=1)
        # group runs of identical edges; pair all faces within a run
        rows, cols = [], []
        start = 0
        for i in range(len(he)):
            if i == len(he) - 1 or not same[i]:
                group = fo[start : i + 1]
                if len(group) > 1:
                    a, b = np.meshgrid(group, group)
                    keep = a != b
                    rows.append(a[keep])
                    cols.append(b[keep])
                start = i + 1
        if not rows:
            return sparse.csr_matrix((self.n_faces, self.n_faces), dtype=np.int8)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        adj = sparse.coo_matrix((np.ones(r.size, dtype=np.int8), (r, c)), shape=(self.n_faces, self.n_faces))
        adj.sum_duplicates()
        adj.data[:] = 1
        return adj.tocsr()

    def __repr__(self):
        tag = f" id={self.id!r}" if self.id else ""
        return f"Mesh(|V|={self.n_vertices}, |F|={self.n_faces}{tag})"


@dataclass
class LoadReport:
    """What happened while ingesting a mesh file."""

    path: str
    n_vertices: int
    n_faces: int
    dropped_degenerate: int
    split_polygons: int


def normalize_unit_sphere(mesh: Mesh) -> Mesh:
    """Center the vertex centroid at the origin and scale the max vertex norm to 1.

    Faces are unchanged. Raises ValueError when all vertices coincide.
    """
    v = mesh.vertices - mesh.vertices.mean(axis=0)
    r = float(np.linalg.norm(v, axis=1).max())
    if r <= 0.0:
        raise ValueError("cannot normalize: all vertices coincident (zero extent)")
    return mesh.with_vertices(v / r)


def _triangulate_fan(polygon: list[int]) -> list[tuple[int, int, int]]:
    return [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]


def _parse_obj(path: Path) -> tuple[np.ndarray, list[tuple[int, int, int]], int]:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    split = 0
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshLoadError(f"{path}:{lineno}: vertex record with fewer than 3 coordinates")
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    # OBJ indices are 1-based; negative indices count back from the
                    # current end of the vertex list.
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise MeshLoadError(f"{path}:{lineno}: face with fewer than 3 vertices cannot be triangulated")
                if len(idx) > 3:
                    split += 1
                faces.extend(_triangulate_fan(idx))
            # vt / vn / usemtl / g / o / s records are irrelevant here
    if not vertices:
        raise MeshLoadError(f"{path}: no vertices found")
    return np.asarray(vertices, dtype=np.float64), faces, split


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply(path: Path) -> tuple[np.ndarray, list[tuple[int, int, int]], int]:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshLoadError(f"{path}: not a PLY file")
        fmt = None
        elements: list[tuple[str, int, list]] = []  # (name, count, [(kind, ...)])
        while True:
            line = fh.readline()
            if not line:
                raise MeshLoadError(f"{path}: unexpected end of PLY header")
            tokens = line.decode("ascii", errors="replace").strip().split()
            if not tokens:
                continue
            if tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise MeshLoadError(f"{path}: property before any element")
                if tokens[1] == "list":
                    elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
                else:
                    elements[-1][2].append(("scalar", tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break
        if fmt is None:
            raise MeshLoadError(f"{path}: PLY header missing format directive")
        if fmt == "ascii":
            return _parse_ply_ascii(path, fh, elements)
        if fmt in ("binary_little_endian", "binary_big_endian"):
            endian = "<" if fmt == "binary_little_endian" else ">"
            return _parse_ply_binary(path, fh, elements, endian)
        raise MeshLoadError(f"{path}: unsupported PLY format {fmt!r}")


def _parse_ply_ascii(path, fh, elements):
    vertices = None
    faces: list[tuple[int, int, int]] = []
    split = 0
    for name, count, props in elements:
        rows = [fh.readline().decode("ascii", errors="replace").split() for _ in range(count)]
        if name == "vertex":
            names = [p[2] for p in props if p[0] == "scalar"]
            try:
                ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
            except ValueError:
                raise MeshLoadError(f"{path}: PLY vertex element lacks x/y/z properties") from None
            vertices = np.array([[float(r[ix]), float(r[iy]), float(r[iz])] for r in rows], dtype=np.float64)
        elif name == "face":
            for r in rows:
                n = int(r[0])
                idx = [int(t) for t in r[1 : 1 + n]]
                if n < 3:
                    raise MeshLoadError(f"{path}: PLY face with fewer than 3 vertices")
                if n > 3:
                    split += 1
                faces.extend(_triangulate_fan(idx))
    if vertices is None or len(vertices) == 0:
        raise MeshLoadError(f"{path}: no vertices found")
    return vertices, faces, split


def _parse_ply_binary(path, fh, elements, endian):
    vertices = None
    faces: list[tuple[int, int, int]] = []
    split = 0
    for name, count, props in elements:
        if all(p[0] == "scalar" for p in props):
            dtype = np.dtype([(p[2], endian + _PLY_TYPES[p[1]]) for p in props])
            data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            if name == "vertex":
                try:
                    vertices = np.stack(
                        [data["x"].astype(np.float64), data["y"].astype(np.float64), data["z"].astype(np.float64)],
                        axis=1,
                    )
                except KeyError:
                    raise MeshLoadError(f"{path}: PLY vertex element lacks x/y/z properties") from None
        else:
            # variable-length rows: read sequentially
            for _ in range(count):
                row_vals = []
                for p in props:
                    if p[0] == "list":
                        cnt_dt = np.dtype(endian + _PLY_TYPES[p[1]])
                        idx_dt = np.dtype(endian + _PLY_TYPES[p[2]])
                        n = int(np.frombuffer(fh.read(cnt_dt.itemsize), dtype=cnt_dt, count=1)[0])
                        vals = np.frombuffer(fh.read(idx_dt.itemsize * n), dtype=idx_dt, count=n)
                        row_vals.append(("list", p[3], vals))
                    else:
                        dt = np.dtype(endian + _PLY_TYPES[p[1]])
                        val = np.frombuffer(fh.read(dt.itemsize), dtype=dt, count=1)[0]
                        row_vals.append(("scalar", p[2], val))
                if name == "face":
                    for kind, pname, vals in row_vals:
                        if kind == "list" and pname in ("vertex_indices", "vertex_index"):
                            idx = [int(x) for x in vals]
                            if len(idx) < 3:
                                raise MeshLoadError(f"{path}: PLY face with fewer than 3 vertices")
                            if len(idx) > 3:
                                split += 1
                            faces.extend(_triangulate_fan(idx))
    if vertices is None or len(vertices) == 0:
        raise MeshLoadError(f"{path}: no vertices found")
    return vertices, faces, split


def load_mesh_with_report(path) -> tuple[Mesh, LoadReport]:
    """Load an OBJ or PLY triangle mesh, dropping degenerate faces.

    Polygons are fan-triangulated. Faces whose area is below
    ``DEGENERATE_AREA_FRACTION`` of the total surface area (or that repeat a
    vertex index) are dropped and counted in the report.
    """
    p = Path(path)
    if not p.exists():
        raise MeshLoadError(f"{p}: file not found")
    suffix = p.suffix.lower()
    if suffix == ".obj":
        vertices, face_list, split = _parse_obj(p)
    elif suffix == ".ply":
        vertices, face_list, split = _parse_ply(p)
    else:
        raise MeshLoadError(f"{p}: unsupported mesh format {suffix!r} (expected .obj or .ply)")
    if not face_list:
        raise MeshLoadError(f"{p}: mesh has no faces")
    faces = np.asarray(face_list, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(vertices):
        bad = faces[(faces < 0).any(axis=1) | (faces >= len(vertices)).any(axis=1)][0]
        raise MeshLoadError(f"{p}: face index out of range: {bad.tolist()} with {len(vertices)} vertices")

    repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    total = float(areas.sum())
    degenerate = repeated | (areas < DEGENERATE_AREA_FRACTION * max(total, np.finfo(float).tiny))
    kept = faces[~degenerate]
    if kept.shape[0] == 0:
        raise MeshLoadError(f"{p}: all faces degenerate")
    mesh = Mesh(vertices, kept, id=p.stem)
    report = LoadReport(
        path=str(p),
        n_vertices=mesh.n_vertices,
        n_faces=mesh.n_faces,
        dropped_degenerate=int(degenerate.sum()),
        split_polygons=split,
    )
    return mesh, report


def load_mesh(path) -> Mesh:
    """Load an OBJ or PLY triangle mesh (see :func:`load_mesh_with_report`)."""
    return load_mesh_with_report(path)[0]


def save_obj(path, mesh: Mesh, vertex_colors: np.ndarray | None = None) -> None:
    """Write an OBJ file; optional per-vertex RGB is appended to each v record.

    ``vertex_colors`` may be float in [0, 1] or uint8 in [0, 255].
    """
    lines = []
    if vertex_colors is not None:
        colors = np.asarray(vertex_colors, dtype=np.float64)
        if colors.max(initial=0.0) > 1.0:
            colors = colors / 255.0
        if colors.shape != (mesh.n_vertices, 3):
            raise ValueError(f"vertex_colors must be ({mesh.n_vertices}, 3), got {colors.shape}")
        for v, c in zip(mesh.vertices, colors):
            lines.append(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f} {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}")
    else:
        for v in mesh.vertices:
            lines.append(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")
