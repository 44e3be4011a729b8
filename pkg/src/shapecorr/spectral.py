"""Cotangent Laplacian, lumped vertex masses, and the truncated eigenbasis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu

from .mesh import Mesh

# Guard against near-degenerate triangles blowing up edge weights.
COT_CLAMP = 1e4

# Below this vertex count a dense solve is cheaper and more robust than ARPACK.
_DENSE_EIG_LIMIT = 512


class EigensolverError(RuntimeError):
    """Raised when the generalized eigensolve fails to converge."""


def cotangent_laplacian(mesh: Mesh) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Cotangent stiffness matrix and barycentric lumped vertex masses.

    The off-diagonal stiffness entry for edge (i, j) is -(cot a + cot b) / 2
    over the angles opposite the edge (a single term on boundary edges);
    diagonals make every row sum to zero. Vertex mass is one third of the
    incident triangle areas. The stiffness matrix is positive semidefinite.
    """
    if mesh.n_faces == 0:
        raise ValueError("mesh has no faces")
    v = mesh.vertices
    f = mesh.faces
    areas = mesh.face_areas
    if not (areas > 0).any():
        raise ValueError("mesh has no non-degenerate faces")

    rows, cols, vals = [], [], []
    for corner in range(3):
        i = f[:, (corner + 1) % 3]
        j = f[:, (corner + 2) % 3]
        k = f[:, corner]
        # cot of the angle at k, opposite edge (i, j)
        u = v[i] - v[k]
        w = v[j] - v[k]
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        cross = np.maximum(cross, np.finfo(float).tiny)
        cot = np.clip((u * w).sum(axis=1) / cross, -COT_CLAMP, COT_CLAMP)
        half = 0.5 * cot
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([-half, -half])

    n = mesh.n_vertices
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    stiffness = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    stiffness = stiffness + sparse.diags(-np.asarray(stiffness.sum(axis=1)).ravel())

    masses = np.zeros(n)
    third = areas / 3.0
    for corner in range(3):
        np.add.at(masses, f[:, corner], third)
    # isolated vertices get a tiny positive mass so the mass matrix stays SPD
    masses[masses <= 0] = np.finfo(float).tiny
    return stiffness.tocsr(), masses


@dataclass
class SpectralBasis:
    """Truncated generalized eigenbasis of (stiffness, mass).

    ``eigenvalues`` ascend and are nonnegative; ``eigenfunctions`` (V, k) are
    mass-orthonormal; ``vertex_masses`` is the diagonal of the lumped mass
    matrix.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    vertex_masses: np.ndarray

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def project(self, functions: np.ndarray) -> np.ndarray:
        """Spectral coefficients of per-vertex functions: Phi^T A f, shape (k, d)."""
        funcs = np.atleast_2d(functions.T).T  # (V, d)
        return self.eigenfunctions.T @ (self.vertex_masses[:, None] * funcs)


def _fix_signs(eigenfunctions: np.ndarray) -> np.ndarray:
    """First entry of non-negligible magnitude of each eigenfunction is made positive."""
    fixed = eigenfunctions.copy()
    for c in range(fixed.shape[1]):
        col = fixed[:, c]
        tol = 1e-10 * np.abs(col).max()
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            fixed[:, c] = -col
    return fixed


def spectral_basis(mesh: Mesh, k: int) -> SpectralBasis:
    """First k generalized eigenpairs of the cotangent Laplacian, ascending.

    Deterministic: the ARPACK starting vector is fixed and the sign of each
    eigenfunction follows the first-nonzero-positive convention.
    """
    n = mesh.n_vertices
    if k >= n:
        raise ValueError(f"basis size k={k} must be smaller than |V|={n}")
    if k < 1:
        raise ValueError("basis size must be >= 1")
    stiffness, masses = cotangent_laplacian(mesh)

    if n <= _DENSE_EIG_LIMIT:
        evals, evecs = eigh(
            stiffness.toarray(),
            np.diag(masses),
            subset_by_index=[0, k - 1],
        )
    else:
        mass_mat = sparse.diags(masses).tocsc()
        last_err: Exception | None = None
        eps = 0.0
        for _ in range(4):
            try:
                evals, evecs = eigsh(
                    (stiffness + eps * sparse.eye(n)).tocsc() if eps else stiffness.tocsc(),
                    k,
                    M=mass_mat,
                    sigma=-1e-8,
                    which="LM",
                    v0=np.full(n, 1.0 / n),
                )
                break
            except (ArpackNoConvergence, RuntimeError) as err:  # pragma: no cover - rare
                last_err = err
                eps = 1e-8 if eps == 0.0 else eps * 100.0
        else:  # pragma: no cover - rare
            detail = getattr(last_err, "eigenvalues", None)
            raise EigensolverError(f"eigensolver failed to converge (partial spectrum: {detail}): {last_err}")

    order = np.argsort(evals, kind="stable")
    evals = np.asarray(evals)[order][:k]
    evecs = np.asarray(evecs)[:, order][:, :k]
    evals = np.where(np.abs(evals) < 1e-8, 0.0, evals)
    evals = np.maximum(evals, 0.0)
    # the kernel of a connected mesh is exactly the constants: snap it
    if evals[0] == 0.0 and (k == 1 or evals[1] > 0.0):
        evecs[:, 0] = 1.0 / np.sqrt(masses.sum())
    evecs = _fix_signs(evecs)

    residual = np.abs(evecs.T @ (masses[:, None] * evecs) - np.eye(k)).max()
    if residual > 1e-6:
        raise EigensolverError(f"mass-orthonormality residual {residual:.2e} exceeds 1e-6")
    return SpectralBasis(eigenvalues=evals, eigenfunctions=evecs, vertex_masses=masses)


def heat_smooth(
    functions: np.ndarray,
    stiffness: sparse.spmatrix,
    masses: np.ndarray,
    steps: int = 3,
    time_step: float | None = None,
    mesh: Mesh | None = None,
) -> np.ndarray:
    """Implicit heat diffusion of per-vertex functions: repeated (A + tS) f' = A f.

    The mass-weighted integral of each column is preserved exactly (rows of S
    sum to zero). ``time_step`` defaults to the squared mean edge length of
    ``mesh``.
    """
    if time_step is None:
        if mesh is None:
            raise ValueError("either time_step or mesh must be given")
        time_step = float(mesh.edge_lengths.mean()) ** 2
    funcs = np.atleast_2d(functions.T).T.astype(np.float64)
    n = funcs.shape[0]
    mass = sparse.diags(masses)
    solver = splu((mass + time_step * stiffness).tocsc())
    out = funcs
    for _ in range(steps):
        out = solver.solve(mass @ out)
    return out.reshape(functions.shape)
