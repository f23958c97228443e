import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from edeqmap.errors import BeltramiOutOfRange, ValidationError
from edeqmap.mesh import EllipsoidRadii, normalize_rows
from edeqmap.quasiconformal import (
    PlanarMap,
    beltrami_of_planar_map,
    beltrami_of_surface_map,
    compose_beltrami,
    count_flipped_faces,
    inverted_faces,
    lbs_reconstruct,
    overlap_correction_ellipsoid,
    overlap_correction_sphere,
    truncate_beltrami,
)


def grid(n):
    """n×n vertex grid on the unit square as complex points, plus boundary ids."""
    x, y = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
    points = (x + 1j * y).ravel()
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            faces += [[a, b, c], [a, c, d]]
    boundary = np.flatnonzero(
        (np.abs(x.ravel() - 0.5) == 0.5) | (np.abs(y.ravel() - 0.5) == 0.5)
    )
    return points, np.array(faces), boundary


def smooth_map(z):
    return z + 0.08 * np.sin(3 * z.imag) + 0.1j * np.cos(2 * z.real) + 0.05 * np.conj(z) ** 2


class TestBeltrami:
    def test_affine_map(self):
        z, faces, _ = grid(6)
        mu = beltrami_of_planar_map(PlanarMap(faces, z, z + 0.3j * np.conj(z)))
        np.testing.assert_allclose(mu, 0.3j, atol=1e-12)

    def test_conformal_map_has_zero_mu(self):
        z, faces, _ = grid(6)
        mu = beltrami_of_planar_map(PlanarMap(faces, z, (1 + 2j) * z + 3))
        assert np.abs(mu).max() < 1e-12

    def test_corner_order_does_not_matter(self):
        z, faces, _ = grid(5)
        w = z + 0.2 * np.conj(z) + 0.1 * z**2
        forward = beltrami_of_planar_map(PlanarMap(faces, z, w))
        backward = beltrami_of_planar_map(PlanarMap(faces[:, ::-1], z, w))
        np.testing.assert_allclose(forward, backward, atol=1e-12)

    def test_surface_map_invariant_under_rigid_motion(self, elongated_mesh):
        rotated = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).apply(elongated_mesh.vertices)
        target = elongated_mesh.vertices * np.array([1.0, 1.3, 0.8])
        mu = beltrami_of_surface_map(elongated_mesh.faces, elongated_mesh.vertices, target)
        moved = beltrami_of_surface_map(
            elongated_mesh.faces, rotated, Rotation.from_euler("z", 0.7).apply(target)
        )
        np.testing.assert_allclose(np.abs(mu), np.abs(moved), atol=1e-10)

    def test_identity_surface_map(self, elongated_mesh):
        mu = beltrami_of_surface_map(
            elongated_mesh.faces, elongated_mesh.vertices, elongated_mesh.vertices
        )
        assert np.abs(mu).max() < 1e-12

    def test_truncation(self):
        mu = np.array([0.95, 0.5j, -0.99j, 0.2])
        truncated = truncate_beltrami(mu, bound=0.9)
        assert np.abs(truncated).max() == pytest.approx(0.9)
        assert truncated[1] == 0.5j
        masked = truncate_beltrami(mu, mask=np.array([True, False, False, False]), bound=0.9)
        assert masked[2] == -0.99j and abs(masked[0]) == pytest.approx(0.9)


class TestComposition:
    def test_matches_direct_evaluation(self):
        z, faces, _ = grid(5)
        w = z + 0.3 * np.conj(z) + 0.05 * z**2
        f = PlanarMap(faces, z, w)
        g_of_w = w + 0.2j * np.conj(w)
        mu_f = beltrami_of_planar_map(f)
        mu_g = beltrami_of_planar_map(PlanarMap(faces, w, g_of_w))
        direct = beltrami_of_planar_map(PlanarMap(faces, z, g_of_w))
        np.testing.assert_allclose(compose_beltrami(mu_f, f, mu_g), direct, atol=1e-10)


class TestLinearBeltramiSolver:
    def test_affine_map_reproduced(self):
        z, faces, boundary = grid(12)
        w = (1 + 0.5j) * z + 0.4 * np.conj(z)
        mu = np.full(len(faces), 0.4 / (1 + 0.5j))
        solved = lbs_reconstruct(faces, z, mu, boundary, w[boundary])
        assert np.abs(solved - w).max() < 1e-9

    def test_zero_mu_with_identity_boundary(self):
        z, faces, boundary = grid(10)
        solved = lbs_reconstruct(faces, z, np.zeros(len(faces)), boundary, z[boundary])
        assert np.abs(solved - z).max() < 1e-10

    @pytest.mark.parametrize("n", [32, 64])
    def test_round_trip_of_a_smooth_map(self, n):
        z, faces, boundary = grid(n)
        w = smooth_map(z)
        mu = beltrami_of_planar_map(PlanarMap(faces, z, w))
        assert np.abs(mu).max() < 0.5
        solved = lbs_reconstruct(faces, z, mu, boundary, w[boundary])
        recovered = beltrami_of_planar_map(PlanarMap(faces, z, solved))
        assert np.abs(recovered - mu).max() < 0.05
        assert np.abs(solved - w).max() < 1e-8

    @pytest.mark.parametrize("pins", [[0, 11, 132, 143], [0, 143]])
    def test_affine_map_from_point_constraints(self, pins):
        z, faces, _ = grid(12)
        w = 2 * z.real + 1j * z.imag
        mu = np.full(len(faces), 1 / 3)
        pins = np.array(pins)
        solved = lbs_reconstruct(faces, z, mu, pins, w[pins])
        assert np.abs(solved - w).max() < 1e-8

    def test_out_of_range_mu(self):
        z, faces, boundary = grid(5)
        mu = np.zeros(len(faces), dtype=complex)
        mu[10] = 1.0
        with pytest.raises(BeltramiOutOfRange):
            lbs_reconstruct(faces, z, mu, boundary, z[boundary])

    def test_needs_two_constraints(self):
        z, faces, _ = grid(5)
        with pytest.raises(ValidationError):
            lbs_reconstruct(faces, z, np.zeros(len(faces)), np.array([0]), z[:1])


def fold(mesh, vertex=0, amount=1.3):
    """Push one vertex past its first neighbour so the faces around it fold over."""
    positions = np.array(mesh.vertices)
    neighbour = mesh.vertex_adjacency[vertex].indices[0]
    positions[vertex] = positions[vertex] + amount * (positions[neighbour] - positions[vertex])
    return normalize_rows(positions)


class TestOverlapCorrection:
    def test_reference_sphere_has_no_inverted_faces(self, fine_sphere_mesh):
        assert not inverted_faces(fine_sphere_mesh.vertices, fine_sphere_mesh.faces).any()

    def test_mirror_flips_every_face(self, sphere_mesh):
        mirrored = sphere_mesh.vertices * np.array([-1.0, 1.0, 1.0])
        assert count_flipped_faces(
            sphere_mesh.vertices, mirrored, sphere_mesh.faces
        ) == sphere_mesh.n_faces

    def test_flip_free_input_is_unchanged(self, sphere_mesh):
        corrected = overlap_correction_sphere(
            sphere_mesh.vertices, sphere_mesh.vertices, sphere_mesh.faces
        )
        np.testing.assert_array_equal(corrected, sphere_mesh.vertices)

    def test_local_fold_removed(self, fine_sphere_mesh):
        folded = fold(fine_sphere_mesh)
        faces = fine_sphere_mesh.faces
        assert inverted_faces(folded, faces).any()
        corrected = overlap_correction_sphere(fine_sphere_mesh.vertices, folded, faces)
        assert not inverted_faces(corrected, faces).any()
        np.testing.assert_allclose(np.linalg.norm(corrected, axis=1), 1.0, atol=1e-12)

    def test_local_fold_removed_on_ellipsoid(self, fine_sphere_mesh, ellipsoid_radii):
        faces = fine_sphere_mesh.faces
        reference = ellipsoid_radii.from_sphere(fine_sphere_mesh.vertices)
        folded = ellipsoid_radii.from_sphere(fold(fine_sphere_mesh, vertex=5))
        assert inverted_faces(folded, faces, ellipsoid_radii).any()
        corrected = overlap_correction_ellipsoid(reference, folded, ellipsoid_radii, faces)
        assert not inverted_faces(corrected, faces, ellipsoid_radii).any()
        assert ellipsoid_radii.residual(corrected).max() < 1e-12

    def test_correction_is_idempotent(self, fine_sphere_mesh):
        faces = fine_sphere_mesh.faces
        corrected = overlap_correction_sphere(
            fine_sphere_mesh.vertices, fold(fine_sphere_mesh), faces
        )
        again = overlap_correction_sphere(fine_sphere_mesh.vertices, corrected, faces)
        np.testing.assert_array_equal(again, corrected)

    def test_unit_radii_match_the_sphere_correction(self, fine_sphere_mesh):
        faces = fine_sphere_mesh.faces
        folded = fold(fine_sphere_mesh, vertex=5)
        on_sphere = overlap_correction_sphere(fine_sphere_mesh.vertices, folded, faces)
        on_ellipsoid = overlap_correction_ellipsoid(
            fine_sphere_mesh.vertices, folded, EllipsoidRadii(1.0, 1.0, 1.0), faces
        )
        np.testing.assert_allclose(on_ellipsoid, on_sphere, atol=1e-12)

    @pytest.mark.filterwarnings("error::RuntimeWarning")
    def test_vertices_on_the_poles(self, fine_sphere_mesh):
        # turn one original icosahedron vertex onto the north pole, its antipode onto the south
        top = fine_sphere_mesh.vertices[0]
        axis = normalize_rows(np.cross(top, [0.0, 0.0, 1.0])[None])[0]
        angle = np.arccos(top[2])
        positions = Rotation.from_rotvec(angle * axis).apply(fine_sphere_mesh.vertices)
        positions[0] = [0.0, 0.0, 1.0]
        positions[np.argmin(positions[:, 2])] = [0.0, 0.0, -1.0]
        mesh = fine_sphere_mesh.with_vertices(normalize_rows(positions))

        vertex = int(np.argmin(np.abs(positions[:12, 2] + 1 / np.sqrt(5))))
        folded = fold(mesh, vertex=vertex)
        assert inverted_faces(folded, mesh.faces).any()
        corrected = overlap_correction_sphere(mesh.vertices, folded, mesh.faces)
        assert not inverted_faces(corrected, mesh.faces).any()
        assert np.all(np.isfinite(corrected))
