"""Spectral densification: region descriptors, functional-map solve, point maps.

The coarse region correspondence becomes a set of paired indicator-style
descriptor functions; a regularized least-squares solve produces the spectral
map matrix, which converts to a dense vertex-to-vertex map and is refined by
spectral ICP.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .mesh import Mesh
from .segment3d import CoarseCorrespondence, FaceLabels
from .spectral import SpectralBasis, cotangent_laplacian, heat_smooth, spectral_basis

DEFAULT_COMMUTATIVITY_WEIGHT = 1e-2
DEFAULT_ORTHOGONALITY_WEIGHT = 0.5
DEFAULT_SMOOTHING_STEPS = 3


@dataclass
class DescriptorSet:
    """Per-vertex descriptor functions, one column per region component.

    ``provenance[c]`` is (mapping pair index, component rank by area) for
    column c; ranks pair components across the two shapes.
    """

    functions: np.ndarray  # (V, d)
    provenance: tuple[tuple[int, int], ...]

    @property
    def n_columns(self) -> int:
        return self.functions.shape[1]


@dataclass
class FunctionalMap:
    """Spectral map matrix: coefficients on shape 1 -> coefficients on shape 2."""

    c: np.ndarray  # (k2, k1)


@dataclass
class PointMap:
    """Total map from every shape-2 vertex to a shape-1 vertex."""

    target_to_source: np.ndarray  # (V2,) int64
    n_source: int

    def __post_init__(self):
        t = np.asarray(self.target_to_source, dtype=np.int64)
        if t.size and (t.min() < 0 or t.max() >= self.n_source):
            raise ValueError("point map index out of range")
        self.target_to_source = t

    def __len__(self):
        return len(self.target_to_source)


def _face_components(mesh: Mesh, face_ids: np.ndarray) -> list[np.ndarray]:
    """Edge-connected components of a face subset, ordered by descending area."""
    if face_ids.size == 0:
        return []
    sub = mesh.face_adjacency[face_ids][:, face_ids]
    n, labels = connected_components(sub, directed=False)
    areas = mesh.face_areas[face_ids]
    comps = []
    for c in range(n):
        members = face_ids[labels == c]
        comps.append((float(areas[labels == c].sum()), members))
    comps.sort(key=lambda t: (-t[0], t[1][0]))
    return [members for _, members in comps]


def _component_indicator(mesh: Mesh, faces: np.ndarray) -> np.ndarray:
    ind = np.zeros(mesh.n_vertices)
    ind[np.unique(mesh.faces[faces])] = 1.0
    return ind


def region_descriptors(
    mesh: Mesh,
    fl: FaceLabels,
    corr: CoarseCorrespondence,
    basis: SpectralBasis,
    side: str = "source",
    smoothing_steps: int = DEFAULT_SMOOTHING_STEPS,
) -> DescriptorSet:
    """Descriptor functions for one shape from the matched region pairs.

    Each matched region's face set is split into edge-connected components;
    every component yields a vertex indicator, smoothed by a few implicit heat
    steps and normalized to unit mass integral. Raw indicators project poorly
    onto a truncated basis, hence the smoothing.
    """
    if side not in ("source", "target"):
        raise ValueError("side must be 'source' or 'target'")
    if not corr.pairs:
        raise ValueError("coarse correspondence has no matched pairs")
    stiffness, masses = cotangent_laplacian(mesh)
    time_step = float(mesh.edge_lengths.mean()) ** 2

    columns = []
    provenance = []
    for pair_idx, pair in enumerate(corr.pairs):
        faces = pair.source_faces if side == "source" else pair.target_faces
        if faces.size == 0:
            warnings.warn(f"mapping pair {pair_idx} has no {side} faces; skipped", stacklevel=2)
            continue
        for rank, comp in enumerate(_face_components(mesh, faces)):
            ind = _component_indicator(mesh, comp)
            if smoothing_steps > 0:
                ind = heat_smooth(ind, stiffness, masses, steps=smoothing_steps, time_step=time_step)
            integral = float(masses @ ind)
            if integral <= 0:
                continue
            columns.append(ind / integral)
            provenance.append((pair_idx, rank))
    if not columns:
        raise ValueError(f"no usable descriptor components on the {side} shape (all matched pairs empty)")
    return DescriptorSet(functions=np.stack(columns, axis=1), provenance=tuple(provenance))


def align_descriptors(desc_a: DescriptorSet, desc_b: DescriptorSet) -> tuple[DescriptorSet, DescriptorSet]:
    """Keep columns whose (pair, component rank) exists on both shapes, same order.

    Surplus components on one side have no counterpart and are dropped with a
    warning.
    """
    common = [p for p in desc_a.provenance if p in set(desc_b.provenance)]
    dropped = (desc_a.n_columns - len(common)) + (desc_b.n_columns - len(common))
    if dropped:
        warnings.warn(f"dropped {dropped} unpaired descriptor component(s)", stacklevel=2)
    if not common:
        raise ValueError("no descriptor components are paired across the shapes")
    ia = [desc_a.provenance.index(p) for p in common]
    ib = [desc_b.provenance.index(p) for p in common]
    return (
        DescriptorSet(functions=desc_a.functions[:, ia], provenance=tuple(common)),
        DescriptorSet(functions=desc_b.functions[:, ib], provenance=tuple(common)),
    )


def _proper_orthogonal(c: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix with determinant +1 (square input)."""
    u, _, vt = np.linalg.svd(c)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def solve_fmap(
    desc_a: DescriptorSet,
    desc_b: DescriptorSet,
    basis_a: SpectralBasis,
    basis_b: SpectralBasis,
    w_comm: float = DEFAULT_COMMUTATIVITY_WEIGHT,
    w_orth: float = DEFAULT_ORTHOGONALITY_WEIGHT,
) -> FunctionalMap:
    """Least-squares functional map with Laplacian commutativity regularization.

    Minimizes ||C A_hat - B_hat||^2 + w_comm ||C L1 - L2 C||^2 row by row (the
    commutativity penalty is diagonal per row), then blends C toward its
    nearest proper-orthogonal matrix with weight ``w_orth`` when the bases have
    equal size.
    """
    if desc_a.n_columns != desc_b.n_columns:
        raise ValueError("descriptor sets must have matching column counts (align first)")
    if desc_a.n_columns == 0:
        raise ValueError("cannot solve a functional map with no descriptors")
    a_hat = basis_a.project(desc_a.functions)  # (k1, d)
    b_hat = basis_b.project(desc_b.functions)  # (k2, d)
    k1 = basis_a.k
    k2 = basis_b.k
    ev1 = basis_a.eigenvalues
    ev2 = basis_b.eigenvalues

    gram = a_hat @ a_hat.T  # (k1, k1)
    c = np.zeros((k2, k1))
    for i in range(k2):
        penalty = w_comm * (ev1 - ev2[i]) ** 2
        system = gram + np.diag(penalty)
        rhs = a_hat @ b_hat[i]
        try:
            c[i] = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            warnings.warn(f"rank-deficient system for row {i}; using minimum-norm solution", stacklevel=2)
            c[i] = np.linalg.lstsq(system, rhs, rcond=None)[0]

    if w_orth > 0 and k1 == k2:
        c = (1.0 - w_orth) * c + w_orth * _proper_orthogonal(c)
    return FunctionalMap(c=c)


def fmap_to_pointmap(fmap: FunctionalMap, basis_a: SpectralBasis, basis_b: SpectralBasis) -> PointMap:
    """Nearest-neighbor conversion: shape-2 vertex -> nearest row of Phi1 C^T."""
    emb_a = basis_a.eigenfunctions @ fmap.c.T  # (V1, k2)
    emb_b = basis_b.eigenfunctions  # (V2, k2)
    if emb_a.shape[1] != emb_b.shape[1]:
        raise ValueError("functional map dimensions do not match the bases")
    n2 = emb_b.shape[0]
    out = np.empty(n2, dtype=np.int64)
    norms_a = (emb_a * emb_a).sum(axis=1)
    chunk = max(1, 2_000_000 // max(1, emb_a.shape[0]))
    for start in range(0, n2, chunk):
        block = emb_b[start : start + chunk]
        d2 = norms_a[None, :] - 2.0 * (block @ emb_a.T)
        out[start : start + chunk] = np.argmin(d2, axis=1)  # lowest index wins ties
    return PointMap(target_to_source=out, n_source=emb_a.shape[0])


def pointmap_to_fmap(pm: PointMap, basis_a: SpectralBasis, basis_b: SpectralBasis) -> FunctionalMap:
    """Spectral coefficients of the pullback: C = Phi2^T A2 Phi1[T]."""
    pulled = basis_a.eigenfunctions[pm.target_to_source]  # (V2, k1)
    return FunctionalMap(c=basis_b.eigenfunctions.T @ (basis_b.vertex_masses[:, None] * pulled))


def icp_refine(
    fmap: FunctionalMap,
    basis_a: SpectralBasis,
    basis_b: SpectralBasis,
    iters: int = 10,
    callback=None,
) -> tuple[FunctionalMap, PointMap]:
    """Spectral ICP: alternate point-map extraction and orthogonal re-fitting.

    Stops after ``iters`` iterations or as soon as the point map stops
    changing. ``callback(iteration, fmap, pointmap)`` is invoked after the
    initial conversion and after each iteration.
    """
    current = fmap
    pm = fmap_to_pointmap(current, basis_a, basis_b)
    if callback is not None:
        callback(0, current, pm)
    for it in range(1, iters + 1):
        fitted = pointmap_to_fmap(pm, basis_a, basis_b)
        if fitted.c.shape[0] == fitted.c.shape[1]:
            fitted = FunctionalMap(c=_proper_orthogonal(fitted.c))
        new_pm = fmap_to_pointmap(fitted, basis_a, basis_b)
        current = fitted
        unchanged = np.array_equal(new_pm.target_to_source, pm.target_to_source)
        pm = new_pm
        if callback is not None:
            callback(it, current, pm)
        if unchanged:
            break
    return current, pm


def dense_correspondence(
    mesh1: Mesh,
    mesh2: Mesh,
    corr: CoarseCorrespondence,
    fl1: FaceLabels,
    fl2: FaceLabels,
    k: int = 60,
    w_comm: float = DEFAULT_COMMUTATIVITY_WEIGHT,
    w_orth: float = DEFAULT_ORTHOGONALITY_WEIGHT,
    icp_iters: int = 10,
    smoothing_steps: int = DEFAULT_SMOOTHING_STEPS,
) -> tuple[PointMap, FunctionalMap]:
    """Full densification: bases, descriptors, solve, ICP, point map.

    ``k`` is clamped below the smaller vertex count when necessary.
    """
    if not corr.pairs:
        raise ValueError("empty coarse correspondence; cannot densify")
    k_eff = min(k, mesh1.n_vertices - 2, mesh2.n_vertices - 2)
    if k_eff < k:
        warnings.warn(f"basis size clamped from {k} to {k_eff} for small meshes", stacklevel=2)
    if k_eff < 1:
        raise ValueError("meshes too small for a spectral basis")
    basis1 = spectral_basis(mesh1, k_eff)
    basis2 = spectral_basis(mesh2, k_eff)
    desc1 = region_descriptors(mesh1, fl1, corr, basis1, side="source", smoothing_steps=smoothing_steps)
    desc2 = region_descriptors(mesh2, fl2, corr, basis2, side="target", smoothing_steps=smoothing_steps)
    desc1, desc2 = align_descriptors(desc1, desc2)
    fmap = solve_fmap(desc1, desc2, basis1, basis2, w_comm=w_comm, w_orth=w_orth)
    refined, pm = icp_refine(fmap, basis1, basis2, iters=icp_iters)
    return pm, refined


def transfer_colors(pm: PointMap, source_colors: np.ndarray) -> np.ndarray:
    """Pull per-vertex colors from shape 1 onto shape 2 through the point map."""
    return np.asarray(source_colors)[pm.target_to_source]


def coordinate_colors(mesh: Mesh) -> np.ndarray:
    """Smooth vertex coloring from normalized coordinates (for transfer exports)."""
    v = mesh.vertices
    lo = v.min(axis=0)
    span = np.maximum(v.max(axis=0) - lo, 1e-12)
    return np.clip(((v - lo) / span * 255.0), 0, 255).astype(np.uint8)
