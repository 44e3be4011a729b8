"""Graph geodesics: Dijkstra on the mesh edge graph with Euclidean weights."""
from __future__ import annotations

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .mesh import Mesh


def geodesic_distances(mesh: Mesh, source: int) -> np.ndarray:
    """Shortest-path distance from ``source`` to every vertex.

    Distances are along mesh edges weighted by Euclidean length; vertices not
    edge-connected to the source are +inf.
    """
    if not 0 <= source < mesh.n_vertices:
        raise IndexError(f"source vertex {source} out of range for |V|={mesh.n_vertices}")
    return dijkstra(mesh.edge_graph, directed=False, indices=source)


def geodesic_distances_multi(mesh: Mesh, sources) -> np.ndarray:
    """Row s of the result holds distances from sources[s]; shape (S, V)."""
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size and (sources.min() < 0 or sources.max() >= mesh.n_vertices):
        raise IndexError(f"source vertex out of range for |V|={mesh.n_vertices}")
    return np.atleast_2d(dijkstra(mesh.edge_graph, directed=False, indices=sources))
