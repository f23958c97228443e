import numpy as np
import pytest

from edeqmap.conformal import (
    UNIT_SPHERE,
    ParamMap,
    fecm,
    inverse_ellipsoidal_stereographic,
    inverse_stereographic,
    mobius_center,
    mobius_normalize,
    principal_poles,
    rescale_distribution,
    spherical_conformal_map,
    stereographic,
    weighted_quantile,
)
from edeqmap.errors import CoincidentPolesError, PoleError
from edeqmap.mesh import EllipsoidRadii
from edeqmap.operators import lumped_mass
from edeqmap.quasiconformal import beltrami_of_surface_map, inverted_faces


def mean_mu(mesh, positions):
    return np.abs(
        beltrami_of_surface_map(mesh.faces, mesh.vertices, positions, strict=False)
    ).mean()


@pytest.fixture(scope="module")
def elongated_scm():
    """Spherical map of a bumpy elongated surface, shared by the slower tests."""
    from edeqmap.mesh import validate_mesh
    from edeqmap.remesh import icosphere

    sphere = icosphere(3)
    p = sphere.vertices
    bump = 1.0 + 0.25 * p[:, 0] * p[:, 1] + 0.15 * p[:, 2] ** 3
    mesh = validate_mesh(p * bump[:, None] * np.array([1.0, 1.1, 1.8]), sphere.faces)
    return mesh, spherical_conformal_map(mesh)


class TestStereographic:
    @pytest.mark.parametrize("pole", ["north", "south"])
    def test_round_trip(self, sphere_mesh, pole):
        points = sphere_mesh.vertices
        pole_z = 1.0 if pole == "north" else -1.0
        keep = np.abs(points[:, 2] - pole_z) > 1e-9
        back = inverse_stereographic(stereographic(points[keep], pole), pole)
        np.testing.assert_allclose(back, points[keep], atol=1e-12)

    def test_projection_of_the_pole_fails(self):
        with pytest.raises(PoleError):
            stereographic(np.array([[0.0, 0.0, 1.0]]), "north")

    def test_origin_maps_to_the_opposite_pole(self):
        np.testing.assert_allclose(inverse_stereographic(0j), [0.0, 0.0, -1.0])

    def test_ellipsoidal_inverse_lands_on_ellipsoid(self):
        radii = EllipsoidRadii(1.0, 2.0, 3.0)
        w = np.random.default_rng(6).normal(size=30) + 1j * np.random.default_rng(7).normal(size=30)
        points = inverse_ellipsoidal_stereographic(w, radii)
        assert radii.residual(points).max() < 1e-12


class TestPlanarNormalization:
    def test_poles_sent_to_zero_and_the_largest_modulus(self):
        z = np.array([1 + 1j, 2.0, -1j, 3 + 0.5j, 0.2])
        out = mobius_normalize(z, p0=1, pinf=3)
        assert out[1] == 0
        others = np.delete(out, 3)
        assert out[3] == others[np.argmax(np.abs(others))]
        rest = np.delete(z, 3)
        np.testing.assert_allclose(others, (rest - z[1]) / (rest - z[3]))

    def test_infinite_pole_means_translation(self):
        z = np.array([1 + 1j, 2.0, np.inf, 0.5j])
        out = mobius_normalize(z, p0=0, pinf=2)
        np.testing.assert_allclose(np.delete(out, 2), np.delete(z - z[0], 2))

    def test_coincident_poles(self):
        with pytest.raises(CoincidentPolesError):
            mobius_normalize(np.array([1.0, 2.0, 3.0]), p0=1, pinf=1)
        with pytest.raises(CoincidentPolesError):
            mobius_normalize(np.array([1.0, 2.0, 2.0]), p0=1, pinf=2)

    def test_weighted_quantile_of_uniform_weights(self):
        values = np.arange(1.0, 6.0)
        assert weighted_quantile(values, np.ones(5), 0.5) == pytest.approx(3.0)

    def test_rescaled_median_modulus_is_one(self, sphere_mesh):
        rng = np.random.default_rng(8)
        z = 5.0 * (rng.normal(size=sphere_mesh.n_vertices) + 1j * rng.normal(size=sphere_mesh.n_vertices))
        out = rescale_distribution(z, sphere_mesh)
        median = weighted_quantile(np.log(np.abs(out)), lumped_mass(sphere_mesh), 0.5)
        assert abs(median) < 1e-2
        # arguments are untouched
        np.testing.assert_allclose(np.angle(out), np.angle(z), atol=1e-12)


class TestSphericalConformalMap:
    def test_sphere_maps_almost_isometrically(self, sphere_mesh):
        result = spherical_conformal_map(sphere_mesh)
        assert result.flips == 0
        assert mean_mu(sphere_mesh, result.positions) < 0.05

    def test_regular_icosahedron_is_symmetric(self, icosahedron):
        result = spherical_conformal_map(icosahedron)
        mu = np.abs(
            beltrami_of_surface_map(icosahedron.faces, icosahedron.vertices, result.positions)
        )
        assert np.ptp(mu) < 1e-6
        assert result.flips == 0

    def test_central_projection_skipped_for_elongated_surfaces(self, elongated_scm):
        mesh, result = elongated_scm
        centered = mesh.vertices - (lumped_mass(mesh) @ mesh.vertices) / lumped_mass(mesh).sum()
        radial = centered / np.linalg.norm(centered, axis=1)[:, None]
        assert mean_mu(mesh, result.positions) < mean_mu(mesh, radial)

    def test_elongated_surface(self, elongated_scm):
        mesh, result = elongated_scm
        assert result.radii == UNIT_SPHERE
        assert result.flips == 0
        np.testing.assert_allclose(np.linalg.norm(result.positions, axis=1), 1.0, atol=1e-12)
        assert mean_mu(mesh, result.positions) < 0.3

    def test_area_centroid_at_origin(self, elongated_scm):
        mesh, result = elongated_scm
        weights = lumped_mass(mesh) / lumped_mass(mesh).sum()
        assert np.linalg.norm(weights @ result.positions) < 1e-6

    def test_mobius_centering(self, sphere_mesh):
        shifted = sphere_mesh.vertices + np.array([0.0, 0.0, 0.6])
        shifted /= np.linalg.norm(shifted, axis=1)[:, None]
        weights = np.ones(sphere_mesh.n_vertices)
        centered = mobius_center(shifted, weights)
        assert np.linalg.norm(centered.mean(axis=0)) < 1e-8
        assert not inverted_faces(centered, sphere_mesh.faces).any()


class TestEllipsoidalConformalMap:
    def test_principal_poles_follow_the_long_axis(self, elongated_mesh):
        low, high = principal_poles(elongated_mesh)
        z = elongated_mesh.vertices[:, 2]
        assert low == int(np.argmin(z)) and high == int(np.argmax(z))

    def test_map_lies_on_the_ellipsoid_without_overlaps(self, elongated_scm):
        mesh, sphere = elongated_scm
        radii = EllipsoidRadii(1.0, 1.1, 1.8)
        result = fecm(mesh, radii, sphere=sphere)
        assert result.radii == radii
        assert radii.residual(result.positions).max() < 1e-10
        assert result.flips == 0
        assert mean_mu(mesh, result.positions) < 0.5

    def test_rescaled_map_moves_between_ellipsoids(self, elongated_scm):
        mesh, sphere = elongated_scm
        target = EllipsoidRadii(1.0, 2.0, 3.0)
        moved = sphere.rescaled(target)
        assert target.residual(moved.positions).max() < 1e-12
        back = moved.rescaled(UNIT_SPHERE)
        np.testing.assert_allclose(back.positions, sphere.positions, atol=1e-12)
        assert moved.flips == 0

    def test_param_map_is_read_only(self, elongated_scm):
        _, sphere = elongated_scm
        with pytest.raises(ValueError):
            sphere.positions[0, 0] = 0.0
        assert isinstance(sphere, ParamMap)
