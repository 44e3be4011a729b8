"""Procedural meshes used by the synthetic oracle and the test suite."""
from __future__ import annotations

import numpy as np

from .mesh import Mesh, normalize_unit_sphere


def icosphere(subdivisions: int = 3, id: str = "icosphere") -> Mesh:
    """Icosahedron subdivided ``subdivisions`` times, vertices on the unit sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )

    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            cached = midpoint_cache.get(key)
            if cached is not None:
                return cached
            m = verts_list[a] + verts_list[b]
            m = m / np.linalg.norm(m)
            verts_list.append(m)
            idx = len(verts_list) - 1
            midpoint_cache[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)

    return Mesh(verts, faces, id=id)


def bumpy_sphere(subdivisions: int = 3, amplitude: float = 0.25, id: str = "bumpy") -> Mesh:
    """Asymmetric radial deformation of an icosphere.

    The smooth but symmetry-free bump pattern gives a non-repeating Laplacian
    spectrum, which keeps eigenfunctions stable across solves.
    """
    base = icosphere(subdivisions, id=id)
    x, y, z = base.vertices.T
    r = (
        1.0
        + amplitude * np.sin(2.3 * x + 0.7) * np.sin(1.7 * y - 0.4)
        + 0.6 * amplitude * np.sin(3.1 * z + 1.3)
        + 0.3 * amplitude * np.cos(1.9 * x - 2.2 * z + 0.5)
    )
    return normalize_unit_sphere(base.with_vertices(base.vertices * r[:, None]))


def quadrant_face_labels(mesh: Mesh, names=("front", "left", "back", "right")) -> list[str]:
    """Partition faces into azimuthal sectors around +Y; returns one name per face.

    Sector 0 is centered on azimuth 0 (the +Z axis), matching the default
    camera direction, with subsequent sectors at increasing azimuth.
    """
    c = mesh.face_centroids
    azimuth = np.arctan2(c[:, 0], c[:, 2])  # matches the camera convention
    n = len(names)
    sector = np.floor((azimuth + np.pi / n) % (2 * np.pi) / (2 * np.pi) * n).astype(int) % n
    return [names[s] for s in sector]


def hemisphere_face_labels(mesh: Mesh, names=("top", "bottom")) -> list[str]:
    """Two-region split by the sign of the face centroid's Y coordinate."""
    c = mesh.face_centroids
    return [names[0] if y >= 0 else names[1] for y in c[:, 1]]


def interior_vertices(mesh: Mesh, face_labels: list[str]) -> np.ndarray:
    """Vertices whose incident faces all carry the same label (away from seams)."""
    labels = np.asarray(face_labels)
    incidence = mesh.vertex_face_incidence
    keep = np.zeros(mesh.n_vertices, dtype=bool)
    for v in range(mesh.n_vertices):
        inc = incidence.indices[incidence.indptr[v] : incidence.indptr[v + 1]]
        if inc.size and len(set(labels[inc])) == 1:
            keep[v] = True
    return np.flatnonzero(keep)
