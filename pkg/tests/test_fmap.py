import numpy as np
import pytest

from shapecorr.fmap import (
    FunctionalMap,
    PointMap,
    align_descriptors,
    dense_correspondence,
    fmap_to_pointmap,
    icp_refine,
    pointmap_to_fmap,
    region_descriptors,
    solve_fmap,
)
from shapecorr.geodesic import geodesic_distances_multi
from shapecorr.mesh import Mesh, normalize_unit_sphere
from shapecorr.regions import RegionSet, SemanticMapping
from shapecorr.segment3d import FaceLabels, coarse_correspondence
from shapecorr.shapes import bumpy_sphere, hemisphere_face_labels, icosphere, quadrant_face_labels
from shapecorr.spectral import spectral_basis

QUAD = ("front", "left", "back", "right")


def labels_for(mesh, names, labeler):
    index = {n: i for i, n in enumerate(names)}
    return FaceLabels(
        labels=np.array([index[l] for l in labeler(mesh, names)], dtype=np.int64),
        region_order=tuple(names),
    )


def identity_coarse(mesh1, mesh2, names=QUAD, labeler=quadrant_face_labels):
    fl1 = labels_for(mesh1, names, labeler)
    fl2 = labels_for(mesh2, names, labeler)
    r1 = RegionSet("c1", tuple(names))
    r2 = RegionSet("c2", tuple(names))
    mapping = SemanticMapping(tuple((n, n) for n in names))
    return fl1, fl2, coarse_correspondence(fl1, fl2, mapping, r1, r2)


def self_map_error(mesh, pm, n_keypoints=34, seed=0):
    """Mean normalized geodesic distance between mapped and true locations."""
    rng = np.random.default_rng(seed)
    kp = rng.choice(mesh.n_vertices, size=n_keypoints, replace=False)
    dists = geodesic_distances_multi(mesh, kp)
    errors = dists[np.arange(n_keypoints), pm.target_to_source[kp]]
    return float(errors.mean() / np.sqrt(mesh.surface_area))


@pytest.fixture(scope="module")
def blobmesh():
    return normalize_unit_sphere(bumpy_sphere(2, id="blob"))


@pytest.fixture(scope="module")
def blobbasis(blobmesh):
    return spectral_basis(blobmesh, 20)


class TestRegionDescriptors:
    def test_single_component_unit_integral(self, blobmesh, blobbasis):
        fl1, fl2, corr = identity_coarse(blobmesh, blobmesh, ("top", "bottom"), hemisphere_face_labels)
        desc = region_descriptors(blobmesh, fl1, corr, blobbasis, side="source")
        assert desc.n_columns == 2  # one component per hemisphere
        _, masses = np.ones(1), blobbasis.vertex_masses
        for c in range(desc.n_columns):
            integral = masses @ desc.functions[:, c]
            assert integral == pytest.approx(1.0, abs=1e-6)

    def test_split_region_yields_two_components(self):
        # region "spot": two well-separated caps around +Z and -Z of a sphere
        sphere = normalize_unit_sphere(icosphere(2, id="s"))
        basis = spectral_basis(sphere, 10)
        z = sphere.face_centroids[:, 2]
        labels = np.where(np.abs(z) > 0.6, 0, 1)
        fl = FaceLabels(labels, ("spot", "rest"))
        r = RegionSet("c", ("spot", "rest"))
        mapping = SemanticMapping((("spot", "spot"), ("rest", "rest")))
        corr = coarse_correspondence(fl, fl, mapping, r, r)
        desc = region_descriptors(sphere, fl, corr, basis, side="source")
        spot_cols = [p for p in desc.provenance if p[0] == 0]
        assert spot_cols == [(0, 0), (0, 1)]

    def test_area_rank_pairing_drops_surplus(self):
        sphere = normalize_unit_sphere(icosphere(2, id="s"))
        basis = spectral_basis(sphere, 10)
        z = sphere.face_centroids[:, 2]
        y = sphere.face_centroids[:, 1]
        # source: 2 spots; target: the same 2 plus a separated cap around +Y
        src_labels = np.where(np.abs(z) > 0.75, 0, 1)
        tgt_labels = np.where((np.abs(z) > 0.75) | (y > 0.9), 0, 1)
        r = RegionSet("c", ("spot", "rest"))
        mapping = SemanticMapping((("spot", "spot"), ("rest", "rest")))
        fl_src = FaceLabels(src_labels, r.regions)
        fl_tgt = FaceLabels(tgt_labels, r.regions)
        corr = coarse_correspondence(fl_src, fl_tgt, mapping, r, r)
        desc_a = region_descriptors(sphere, fl_src, corr, basis, side="source")
        desc_b = region_descriptors(sphere, fl_tgt, corr, basis, side="target")
        assert desc_a.n_columns == 3  # 2 spots + 1 rest
        assert desc_b.n_columns >= 4  # 3 spots + rest component(s)
        with pytest.warns(UserWarning, match="unpaired"):
            aligned_a, aligned_b = align_descriptors(desc_a, desc_b)
        assert aligned_a.provenance == aligned_b.provenance
        assert (0, 2) not in aligned_a.provenance  # third spot dropped

    def test_empty_pairs_error(self, blobmesh, blobbasis):
        fl = FaceLabels(np.zeros(blobmesh.n_faces, dtype=np.int64), ("all", "nothing"))
        r = RegionSet("c", ("all", "nothing"))
        mapping = SemanticMapping((("nothing", "nothing"),))
        corr = coarse_correspondence(fl, fl, mapping, r, r)
        with pytest.warns(UserWarning, match="skipped"):
            with pytest.raises(ValueError, match="no usable"):
                region_descriptors(blobmesh, fl, corr, blobbasis, side="source")


class TestSolveFmap:
    def test_identity_on_same_shape(self, blobmesh, blobbasis):
        fl1, fl2, corr = identity_coarse(blobmesh, blobmesh)
        desc = region_descriptors(blobmesh, fl1, corr, blobbasis, side="source")
        fmap = solve_fmap(desc, desc, blobbasis, blobbasis, w_orth=0.0)
        k = blobbasis.k
        assert np.linalg.norm(fmap.c - np.eye(k)) / np.sqrt(k) < 0.05

    def test_joint_descriptor_scaling_invariance(self, blobmesh, blobbasis):
        from shapecorr.fmap import DescriptorSet

        fl1, fl2, corr = identity_coarse(blobmesh, blobmesh)
        desc = region_descriptors(blobmesh, fl1, corr, blobbasis, side="source")
        doubled = DescriptorSet(functions=2.0 * desc.functions, provenance=desc.provenance)
        base = solve_fmap(desc, desc, blobbasis, blobbasis, w_comm=1e-2)
        scaled = solve_fmap(doubled, doubled, blobbasis, blobbasis, w_comm=4e-2)
        np.testing.assert_allclose(scaled.c, base.c, atol=1e-8)

    def test_residual_monotone_in_commutativity_weight(self, blob_pair):
        mesh1, mesh2, _ = blob_pair
        fl1, fl2, corr = identity_coarse(mesh1, mesh2)
        b1 = spectral_basis(mesh1, 16)
        b2 = spectral_basis(mesh2, 16)
        d1 = region_descriptors(mesh1, fl1, corr, b1, side="source")
        d2 = region_descriptors(mesh2, fl2, corr, b2, side="target")
        d1, d2 = align_descriptors(d1, d2)

        def residual(w):
            fmap = solve_fmap(d1, d2, b1, b2, w_comm=w, w_orth=0.0)
            return np.linalg.norm(fmap.c @ b1.project(d1.functions) - b2.project(d2.functions))

        res = [residual(w) for w in (1e-1, 1e-2, 1e-3)]
        assert res[0] >= res[1] >= res[2] - 1e-12

    def test_column_mismatch_rejected(self, blobmesh, blobbasis):
        from shapecorr.fmap import DescriptorSet

        a = DescriptorSet(np.ones((blobmesh.n_vertices, 2)), ((0, 0), (0, 1)))
        b = DescriptorSet(np.ones((blobmesh.n_vertices, 1)), ((0, 0),))
        with pytest.raises(ValueError, match="matching column counts"):
            solve_fmap(a, b, blobbasis, blobbasis)


class TestPointMap:
    def test_identity_fmap_identity_map(self, blobmesh, blobbasis):
        fmap = FunctionalMap(c=np.eye(blobbasis.k))
        pm = fmap_to_pointmap(fmap, blobbasis, blobbasis)
        np.testing.assert_array_equal(pm.target_to_source, np.arange(blobmesh.n_vertices))

    def test_sign_flip_degrades_map(self, blobmesh):
        # at small k each coordinate carries weight: one wrong sign wrecks the map
        from shapecorr.spectral import SpectralBasis

        basis = spectral_basis(blobmesh, 6)
        identity_pm = fmap_to_pointmap(FunctionalMap(np.eye(6)), basis, basis)
        assert (identity_pm.target_to_source == np.arange(blobmesh.n_vertices)).all()
        flipped_funcs = basis.eigenfunctions.copy()
        flipped_funcs[:, 1] = -flipped_funcs[:, 1]
        flipped = SpectralBasis(basis.eigenvalues, flipped_funcs, basis.vertex_masses)
        pm = fmap_to_pointmap(FunctionalMap(np.eye(6)), basis, flipped)
        self_fraction = (pm.target_to_source == np.arange(blobmesh.n_vertices)).mean()
        assert self_fraction < 0.5

    def test_k1_degenerate_single_target(self, blobmesh):
        basis1 = spectral_basis(blobmesh, 1)
        pm = fmap_to_pointmap(FunctionalMap(np.eye(1)), basis1, basis1)
        assert len(np.unique(pm.target_to_source)) == 1

    def test_orthogonal_conjugation_invariance(self, blobmesh, blobbasis):
        from shapecorr.spectral import SpectralBasis

        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.normal(size=(blobbasis.k, blobbasis.k)))
        rot = lambda b: SpectralBasis(b.eigenvalues, b.eigenfunctions @ q, b.vertex_masses)
        c = rng.normal(size=(blobbasis.k, blobbasis.k))
        base = fmap_to_pointmap(FunctionalMap(c), blobbasis, blobbasis)
        conj = fmap_to_pointmap(FunctionalMap(q.T @ c @ q), rot(blobbasis), rot(blobbasis))
        agree = (base.target_to_source == conj.target_to_source).mean()
        assert agree >= 0.999

    def test_pointmap_range_validation(self):
        with pytest.raises(ValueError, match="out of range"):
            PointMap(target_to_source=np.array([0, 5]), n_source=3)


class TestIcpRefine:
    def test_identity_converges_in_one_iteration(self, blobbasis):
        iterations = []
        fmap = FunctionalMap(np.eye(blobbasis.k))
        refined, pm = icp_refine(fmap, blobbasis, blobbasis, iters=10,
                                 callback=lambda i, c, p: iterations.append(i))
        assert iterations[-1] == 1  # fixed point: one pass, then stop
        np.testing.assert_array_equal(pm.target_to_source, np.arange(len(pm)))
        np.testing.assert_allclose(refined.c, np.eye(blobbasis.k), atol=1e-9)

    def test_zero_iterations_returns_input(self, blobbasis):
        c = np.eye(blobbasis.k) + 0.01
        refined, pm = icp_refine(FunctionalMap(c), blobbasis, blobbasis, iters=0)
        np.testing.assert_array_equal(refined.c, c)

    def test_perturbed_identity_improves(self, blobmesh, blobbasis):
        rng = np.random.default_rng(1)
        noisy = FunctionalMap(np.eye(blobbasis.k) + rng.normal(0, 0.05, (blobbasis.k, blobbasis.k)))
        pm_before = fmap_to_pointmap(noisy, blobbasis, blobbasis)
        _, pm_after = icp_refine(noisy, blobbasis, blobbasis, iters=10)
        err_before = self_map_error(blobmesh, pm_before)
        err_after = self_map_error(blobmesh, pm_after)
        assert err_after <= err_before

    def test_pointmap_to_fmap_roundtrip(self, blobmesh, blobbasis):
        identity = PointMap(np.arange(blobmesh.n_vertices), blobmesh.n_vertices)
        fmap = pointmap_to_fmap(identity, blobbasis, blobbasis)
        np.testing.assert_allclose(fmap.c, np.eye(blobbasis.k), atol=1e-9)


class TestDenseCorrespondence:
    def test_self_map_error_small(self, blobmesh):
        fl1, fl2, corr = identity_coarse(blobmesh, blobmesh)
        pm, _ = dense_correspondence(blobmesh, blobmesh, corr, fl1, fl2, k=30)
        assert self_map_error(blobmesh, pm) < 0.05

    def test_rotation_invariance(self, blobmesh):
        theta = np.deg2rad(30)
        rot = np.array([
            [np.cos(theta), 0, np.sin(theta)],
            [0, 1, 0],
            [-np.sin(theta), 0, np.cos(theta)],
        ])
        rotated = blobmesh.with_vertices(blobmesh.vertices @ rot.T, id="rot")
        fl1, fl2, corr = identity_coarse(blobmesh, blobmesh)  # same topology: labels carry over
        pm, _ = dense_correspondence(blobmesh, rotated, corr, fl1, fl2, k=30)
        assert self_map_error(blobmesh, pm) < 0.05

    def test_empty_coarse_rejected(self, blobmesh):
        from shapecorr.segment3d import CoarseCorrespondence

        empty = CoarseCorrespondence(pairs=[], unmatched_source=np.array([]), unmatched_target=np.array([]))
        fl = FaceLabels(np.zeros(blobmesh.n_faces, dtype=np.int64), ("a",))
        with pytest.raises(ValueError, match="empty coarse"):
            dense_correspondence(blobmesh, blobmesh, empty, fl, fl)

    def test_basis_clamp_warning(self):
        small = normalize_unit_sphere(icosphere(0, id="tiny"))  # 12 vertices
        fl1, fl2, corr = identity_coarse(small, small, ("top", "bottom"), hemisphere_face_labels)
        with pytest.warns(UserWarning, match="clamped"):
            pm, _ = dense_correspondence(small, small, corr, fl1, fl2, k=60)
        assert len(pm) == small.n_vertices
