import numpy as np
import pytest

from shapecorr.mesh import Mesh, normalize_unit_sphere
from shapecorr.shapes import bumpy_sphere, icosphere
from shapecorr.spectral import cotangent_laplacian, heat_smooth, spectral_basis


class TestCotangentLaplacian:
    def test_equilateral_triangle_edge_weights(self, triangle_mesh):
        # hand-evaluated: every angle is 60 deg, one opposite angle per
        # boundary edge, so w_ij = -cot(60)/2 = -1/(2*sqrt(3))
        stiffness, _ = cotangent_laplacian(triangle_mesh)
        expected = -np.cos(np.pi / 3) / np.sin(np.pi / 3) / 2
        dense = stiffness.toarray()
        for i, j in ((0, 1), (1, 2), (0, 2)):
            assert dense[i, j] == pytest.approx(expected, abs=1e-12)
            assert dense[i, j] == pytest.approx(-0.28868, abs=1e-5)

    def test_equilateral_triangle_masses(self, triangle_mesh):
        # hand-evaluated: area sqrt(3)/4 split evenly across the 3 corners
        _, masses = cotangent_laplacian(triangle_mesh)
        np.testing.assert_allclose(masses, np.sqrt(3) / 4 / 3, atol=1e-12)
        assert masses[0] == pytest.approx(0.14434, abs=1e-5)

    def test_rows_sum_to_zero(self, sphere2):
        stiffness, _ = cotangent_laplacian(sphere2)
        rows = np.asarray(stiffness.sum(axis=1)).ravel()
        assert np.abs(rows).max() < 1e-9

    def test_symmetry(self, sphere2):
        stiffness, _ = cotangent_laplacian(sphere2)
        asym = (stiffness - stiffness.T)
        assert np.abs(asym.toarray()).max() < 1e-12

    def test_masses_positive_and_total_area(self, sphere2):
        _, masses = cotangent_laplacian(sphere2)
        assert (masses > 0).all()
        assert masses.sum() == pytest.approx(sphere2.surface_area, rel=1e-12)

    def test_no_faces_rejected(self):
        mesh = Mesh(np.eye(3), np.zeros((0, 3), dtype=int))
        with pytest.raises(ValueError, match="no faces"):
            cotangent_laplacian(mesh)


class TestSpectralBasis:
    def test_kernel_of_laplacian(self, sphere2):
        basis = spectral_basis(sphere2, 6)
        assert basis.eigenvalues[0] <= 1e-6
        first = basis.eigenfunctions[:, 0]
        assert first.std() / np.abs(first).max() < 1e-6  # constant eigenfunction

    def test_eigenvalues_sorted_nonnegative(self, sphere2):
        basis = spectral_basis(sphere2, 12)
        assert (basis.eigenvalues >= 0).all()
        assert (np.diff(basis.eigenvalues) >= -1e-12).all()

    def test_mass_orthonormality(self, sphere2):
        basis = spectral_basis(sphere2, 12)
        gram = basis.eigenfunctions.T @ (basis.vertex_masses[:, None] * basis.eigenfunctions)
        assert np.abs(gram - np.eye(12)).max() < 1e-6

    def test_sphere_spectrum_matches_analytic(self):
        # Laplace-Beltrami on the unit sphere: eigenvalue l(l+1) with
        # multiplicity 2l+1 -> {0, 2,2,2, 6,6,6,6,6}
        mesh = normalize_unit_sphere(icosphere(3))
        basis = spectral_basis(mesh, 9)
        expected = np.array([0.0, 2, 2, 2, 6, 6, 6, 6, 6])
        np.testing.assert_allclose(basis.eigenvalues[1:], expected[1:], rtol=0.05)
        assert basis.eigenvalues[0] <= 1e-6

    def test_sign_convention(self, sphere2):
        basis = spectral_basis(sphere2, 8)
        for c in range(8):
            col = basis.eigenfunctions[:, c]
            tol = 1e-10 * np.abs(col).max()
            nz = col[np.abs(col) > tol]
            assert nz[0] > 0

    def test_deterministic_across_solves(self):
        mesh = normalize_unit_sphere(bumpy_sphere(3))  # > dense limit: ARPACK path
        a = spectral_basis(mesh, 10)
        b = spectral_basis(mesh, 10)
        np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
        np.testing.assert_array_equal(a.eigenfunctions, b.eigenfunctions)

    def test_k_too_large(self, triangle_mesh):
        with pytest.raises(ValueError, match="smaller than"):
            spectral_basis(triangle_mesh, 3)

    def test_project_shape(self, sphere2):
        basis = spectral_basis(sphere2, 5)
        coeffs = basis.project(np.ones((sphere2.n_vertices, 2)))
        assert coeffs.shape == (5, 2)


class TestHeatSmooth:
    def test_preserves_mass_integral(self, sphere2):
        stiffness, masses = cotangent_laplacian(sphere2)
        f = np.zeros(sphere2.n_vertices)
        f[:10] = 1.0
        before = masses @ f
        smoothed = heat_smooth(f, stiffness, masses, steps=3, mesh=sphere2)
        assert masses @ smoothed == pytest.approx(before, rel=1e-9)

    def test_smooths_toward_mean(self, sphere2):
        stiffness, masses = cotangent_laplacian(sphere2)
        f = np.zeros(sphere2.n_vertices)
        f[0] = 1.0
        smoothed = heat_smooth(f, stiffness, masses, steps=5, mesh=sphere2)
        assert smoothed.max() < f.max()
        assert smoothed.min() > -1e-9  # heat diffusion stays near nonnegative
