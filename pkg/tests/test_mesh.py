import numpy as np
import pytest

from shapecorr.mesh import (
    Mesh,
    MeshLoadError,
    load_mesh,
    load_mesh_with_report,
    normalize_unit_sphere,
    save_obj,
)
from shapecorr.shapes import icosphere


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadObj:
    def test_single_triangle(self, tmp_path):
        path = write(tmp_path, "tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh(path)
        assert mesh.n_vertices == 3
        assert mesh.n_faces == 1
        assert mesh.id == "tri"

    def test_quad_fan_split(self, tmp_path):
        path = write(tmp_path, "quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh, report = load_mesh_with_report(path)
        assert mesh.n_faces == 2
        assert report.split_polygons == 1
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_face_index_out_of_range(self, tmp_path):
        path = write(tmp_path, "bad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n")
        with pytest.raises(MeshLoadError, match="out of range"):
            load_mesh(path)

    def test_slash_face_forms_and_negative_indices(self, tmp_path):
        path = write(
            tmp_path, "forms.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\nf -3 -2 -1\n",
        )
        mesh = load_mesh(path)
        assert mesh.n_faces == 2
        np.testing.assert_array_equal(mesh.faces[0], mesh.faces[1])

    def test_degenerate_faces_dropped_and_counted(self, tmp_path):
        path = write(
            tmp_path, "degen.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 2\nf 1 2 2\n",
        )
        mesh, report = load_mesh_with_report(path)
        assert mesh.n_faces == 1
        assert report.dropped_degenerate == 2

    def test_zero_area_sliver_dropped(self, tmp_path):
        # three collinear vertices give a zero-area face
        path = write(
            tmp_path, "sliver.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n",
        )
        mesh, report = load_mesh_with_report(path)
        assert mesh.n_faces == 1
        assert report.dropped_degenerate == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshLoadError, match="not found"):
            load_mesh(tmp_path / "nope.obj")

    def test_empty_mesh(self, tmp_path):
        path = write(tmp_path, "empty.obj", "v 0 0 0\n")
        with pytest.raises(MeshLoadError, match="no faces"):
            load_mesh(path)

    def test_two_vertex_face_rejected(self, tmp_path):
        path = write(tmp_path, "line.obj", "v 0 0 0\nv 1 0 0\nf 1 2\n")
        with pytest.raises(MeshLoadError, match="triangulated"):
            load_mesh(path)


class TestLoadPly:
    def test_ascii_ply(self, tmp_path):
        text = (
            "ply\nformat ascii 1.0\n"
            "element vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        )
        path = write(tmp_path, "tri.ply", text)
        mesh = load_mesh(path)
        assert mesh.n_vertices == 3 and mesh.n_faces == 1

    @pytest.mark.parametrize("byte_order,fmt", [("<", "binary_little_endian"), (">", "binary_big_endian")])
    def test_binary_ply(self, tmp_path, byte_order, fmt):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=byte_order + "f4")
        header = (
            f"ply\nformat {fmt} 1.0\n"
            "element vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 2\nproperty list uchar int vertex_indices\nend_header\n"
        ).encode()
        body = verts.tobytes()
        for face in ([0, 1, 2], [1, 3, 2]):
            body += np.array([3], dtype="u1").tobytes()
            body += np.array(face, dtype=byte_order + "i4").tobytes()
        path = tmp_path / "mesh.ply"
        path.write_bytes(header + body)
        mesh = load_mesh(path)
        assert mesh.n_vertices == 4 and mesh.n_faces == 2
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [1, 3, 2]])

    def test_quad_ply_fan_split(self, tmp_path):
        text = (
            "ply\nformat ascii 1.0\n"
            "element vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        )
        mesh = load_mesh(write(tmp_path, "quad.ply", text))
        assert mesh.n_faces == 2

    def test_not_a_ply(self, tmp_path):
        path = tmp_path / "junk.ply"
        path.write_bytes(b"not a ply header\n")
        with pytest.raises(MeshLoadError, match="not a PLY"):
            load_mesh(path)


class TestMeshInvariants:
    def test_face_index_validation(self):
        with pytest.raises(ValueError, match="out of range"):
            Mesh(np.zeros((3, 3)), [[0, 1, 5]])

    def test_repeated_vertex_in_face(self):
        with pytest.raises(ValueError, match="repeats"):
            Mesh(np.eye(3), [[0, 1, 1]])

    def test_vertices_immutable(self, triangle_mesh):
        with pytest.raises(ValueError):
            triangle_mesh.vertices[0] = 0.0

    def test_edges_and_area(self, triangle_mesh):
        assert triangle_mesh.edges.shape == (3, 2)
        np.testing.assert_allclose(triangle_mesh.edge_lengths, 1.0, atol=1e-12)
        assert triangle_mesh.surface_area == pytest.approx(np.sqrt(3) / 4)

    def test_face_adjacency(self):
        verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
        mesh = Mesh(verts, [[0, 1, 2], [1, 3, 2]])
        adj = mesh.face_adjacency.toarray()
        assert adj[0, 1] == 1 and adj[1, 0] == 1
        assert adj[0, 0] == 0


class TestNormalize:
    def test_cube_scale(self):
        corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
        mesh = Mesh(corners, [[0, 1, 2]])
        out = normalize_unit_sphere(mesh)
        norms = np.linalg.norm(out.vertices, axis=1)
        assert norms.max() == pytest.approx(1.0, abs=1e-12)
        # uniform scale by 1/sqrt(3) for symmetric corners
        np.testing.assert_allclose(out.vertices, corners / np.sqrt(3), atol=1e-12)

    def test_idempotent(self, sphere2):
        once = normalize_unit_sphere(sphere2)
        twice = normalize_unit_sphere(once)
        np.testing.assert_allclose(once.vertices, twice.vertices, atol=1e-12)

    def test_translation_invariance(self, sphere2):
        shifted = sphere2.with_vertices(sphere2.vertices + np.array([5.0, 5.0, 5.0]))
        a = normalize_unit_sphere(sphere2)
        b = normalize_unit_sphere(shifted)
        np.testing.assert_allclose(a.vertices, b.vertices, atol=1e-9)

    def test_scale_invariance(self, sphere2):
        scaled = sphere2.with_vertices(sphere2.vertices * 37.5)
        a = normalize_unit_sphere(sphere2)
        b = normalize_unit_sphere(scaled)
        np.testing.assert_allclose(a.vertices, b.vertices, atol=1e-9)

    def test_centroid_at_origin(self, sphere2):
        out = normalize_unit_sphere(sphere2.with_vertices(sphere2.vertices + 3.0))
        np.testing.assert_allclose(out.vertices.mean(axis=0), 0.0, atol=1e-9)

    def test_zero_extent(self):
        # all vertices coincident: zero extent (faces omitted, they would be degenerate)
        verts = np.ones((3, 3))
        with pytest.raises(ValueError, match="coincident"):
            normalize_unit_sphere(Mesh(verts, np.zeros((0, 3), dtype=int)))


class TestColoredObjExport:
    def test_roundtrip_with_colors(self, tmp_path):
        mesh = icosphere(0, id="ico")
        colors = np.linspace(0, 255, mesh.n_vertices * 3).reshape(-1, 3).astype(np.uint8)
        path = tmp_path / "colored.obj"
        save_obj(path, mesh, colors)
        first = path.read_text().splitlines()[0].split()
        assert len(first) == 7  # v x y z r g b
        again = load_mesh(path)  # color components are ignored on re-import
        assert again.n_vertices == mesh.n_vertices
        assert again.n_faces == mesh.n_faces

    def test_color_shape_mismatch(self, tmp_path):
        mesh = icosphere(0)
        with pytest.raises(ValueError, match="vertex_colors"):
            save_obj(tmp_path / "x.obj", mesh, np.zeros((2, 3)))
