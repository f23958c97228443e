import numpy as np
import pytest

from edeqmap.config import EdemConfig
from edeqmap.conformal import UNIT_SPHERE, ParamMap, fecm
from edeqmap.edem import (
    EdemState,
    edem_step,
    project_velocity,
    resolve_population,
    run_edem,
    velocity_field,
)
from edeqmap.errors import NonpositiveDensityError, PopulationError
from edeqmap.mesh import EllipsoidRadii, face_areas, face_centroids, vertex_normals_ellipsoid
from edeqmap.metrics import build_distortion_report
from edeqmap.operators import DensityField
from edeqmap.quasiconformal import inverted_faces

ELONGATED_RADII = EllipsoidRadii(1.0, 1.1, 1.8)


@pytest.fixture
def elongated_start(elongated_mesh):
    return elongated_mesh, fecm(elongated_mesh, ELONGATED_RADII)


class TestPopulation:
    def test_presets(self, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        np.testing.assert_allclose(
            resolve_population("area", sphere_mesh, initial), face_areas(sphere_mesh)
        )
        np.testing.assert_array_equal(
            resolve_population("uniform", sphere_mesh, initial), 1.0
        )

    def test_two_region(self, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        population = resolve_population("tworegion:z:3", sphere_mesh, initial)
        ratio = population / face_areas(sphere_mesh, initial.positions)
        assert set(np.round(ratio, 12)) == {1.0, 3.0}

    def test_smooth_ramp(self, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        population = resolve_population("smooth:x:2", sphere_mesh, initial)
        ratio = population / face_areas(sphere_mesh, initial.positions)
        assert ratio.min() == pytest.approx(1.0)
        assert ratio.max() == pytest.approx(3.0)

    def test_csv(self, tmp_path, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        values = np.arange(1.0, sphere_mesh.n_faces + 1)
        path = tmp_path / "population.csv"
        path.write_text("\n".join(map(str, values)) + "\n")
        population = resolve_population(f"csv:{path}", sphere_mesh, initial)
        np.testing.assert_array_equal(population, values)

    def test_csv_with_wrong_length(self, tmp_path, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        path = tmp_path / "population.csv"
        path.write_text("1\n2\n3\n")
        with pytest.raises(PopulationError, match="3 values, mesh has 320 faces"):
            resolve_population(f"csv:{path}", sphere_mesh, initial)

    def test_nonpositive_population(self, tmp_path, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        values = np.ones(sphere_mesh.n_faces)
        values[7] = 0.0
        path = tmp_path / "population.csv"
        path.write_text("\n".join(map(str, values)) + "\n")
        with pytest.raises(PopulationError, match="population must be positive"):
            resolve_population(f"csv:{path}", sphere_mesh, initial)

    @pytest.mark.parametrize("spec", ["tworegion:w:2", "smooth:x:abc", "gaussian"])
    def test_bad_specs(self, spec, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        with pytest.raises(PopulationError):
            resolve_population(spec, sphere_mesh, initial)


class TestVelocity:
    def test_velocity_points_down_the_gradient(self):
        rho = np.array([2.0, 4.0])
        grad = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        np.testing.assert_allclose(
            velocity_field(rho, grad), [[-0.5, 0.0, 0.0], [0.0, -0.5, 0.0]]
        )

    def test_nonpositive_density(self):
        with pytest.raises(NonpositiveDensityError):
            velocity_field(np.array([1.0, -1.0]), np.zeros((2, 3)))

    def test_projection_is_tangential(self, sphere_mesh, ellipsoid_radii):
        positions = ellipsoid_radii.from_sphere(sphere_mesh.vertices)
        normals = vertex_normals_ellipsoid(positions, ellipsoid_radii)
        velocity = np.random.default_rng(9).normal(size=positions.shape)
        tangential = project_velocity(velocity, normals)
        assert np.abs(np.einsum("ij,ij->i", tangential, normals)).max() < 1e-12


class TestStep:
    def test_step_stays_on_the_ellipsoid_without_flips(self, elongated_start):
        mesh, initial = elongated_start
        density = DensityField.couple(mesh, initial.positions, face_areas(mesh))
        state, record = edem_step(
            mesh,
            EdemState(np.array(initial.positions), density),
            ELONGATED_RADII,
            0.1,
            initial.positions,
            iteration=1,
        )
        assert ELONGATED_RADII.residual(state.positions).max() < 1e-10
        assert record.flips_post == 0
        assert not inverted_faces(state.positions, mesh.faces, ELONGATED_RADII).any()
        assert record.sd_over_mean < density.sd_over_mean
        assert 0 < record.max_displacement < ELONGATED_RADII.max_radius

    def test_uniform_density_is_a_fixed_point(self, sphere_mesh, ellipsoid_radii):
        positions = ellipsoid_radii.from_sphere(sphere_mesh.vertices)
        density = DensityField.couple(
            sphere_mesh, positions, face_areas(sphere_mesh, positions)
        )
        state, record = edem_step(
            sphere_mesh, EdemState(positions, density), ellipsoid_radii, 0.1, positions
        )
        assert np.abs(state.positions - positions).max() < 1e-12
        assert record.flips_post == 0

    def test_high_density_region_grows(self, fine_sphere_mesh, ellipsoid_radii):
        mesh = fine_sphere_mesh
        positions = ellipsoid_radii.from_sphere(mesh.vertices)
        areas = face_areas(mesh, positions)
        high = face_centroids(mesh, positions)[:, 2] > 0
        population = np.where(high, 3.0, 1.0) * areas
        state, _ = edem_step(
            mesh,
            EdemState(positions, DensityField.couple(mesh, positions, population)),
            ellipsoid_radii,
            0.1,
            positions,
        )
        assert face_areas(mesh, state.positions)[high].mean() > areas[high].mean()


class TestRun:
    @pytest.mark.slow
    def test_density_is_equalized(self, elongated_start):
        mesh, initial = elongated_start
        config = EdemConfig(radii=ELONGATED_RADII, n_max=20)
        result = run_edem(mesh, config, initial=initial)

        assert result.density.sd_over_mean < result.initial_density.sd_over_mean
        assert result.param.flips == 0
        assert ELONGATED_RADII.residual(result.param.positions).max() < 1e-10
        assert 1 <= result.iterations <= 20
        assert len(result.trace) == result.iterations

        before = build_distortion_report(mesh, initial.positions, ELONGATED_RADII)
        after = build_distortion_report(mesh, result.param.positions, ELONGATED_RADII)
        assert after.mean_abs_d_area < before.mean_abs_d_area

    def test_population_scale_does_not_change_the_trajectory(self, sphere_mesh):
        radii = EllipsoidRadii(1.0, 1.0, 1.6)
        initial = ParamMap(sphere_mesh, radii.from_sphere(sphere_mesh.vertices), radii)
        areas = face_areas(sphere_mesh, initial.positions)
        population = np.where(face_centroids(sphere_mesh)[:, 2] > 0, 3.0, 1.0) * areas
        config = EdemConfig(radii=radii, n_max=3)
        base = run_edem(sphere_mesh, config, population=population, initial=initial)
        scaled = run_edem(sphere_mesh, config, population=1000.0 * population, initial=initial)
        assert base.iterations == scaled.iterations == 3
        np.testing.assert_allclose(
            scaled.param.positions, base.param.positions, rtol=0, atol=1e-10
        )

    @pytest.mark.slow
    def test_area_population_removes_most_area_distortion(self, elongated_start):
        mesh, initial = elongated_start
        result = run_edem(mesh, EdemConfig(radii=ELONGATED_RADII), initial=initial)
        before = build_distortion_report(mesh, initial.positions, ELONGATED_RADII)
        after = build_distortion_report(mesh, result.param.positions, ELONGATED_RADII)
        assert after.mean_abs_d_area <= 0.1 * before.mean_abs_d_area
        assert result.param.flips == 0

    def test_uniform_start_converges_immediately(self, sphere_mesh):
        initial = fecm(sphere_mesh, UNIT_SPHERE)
        population = face_areas(sphere_mesh, initial.positions)
        result = run_edem(
            sphere_mesh, EdemConfig(radii=UNIT_SPHERE), population=population, initial=initial
        )
        assert result.converged
        assert result.iterations == 0
        np.testing.assert_array_equal(result.param.positions, initial.positions)

    def test_population_array_checked(self, sphere_mesh):
        population = np.ones(sphere_mesh.n_faces)
        population[4] = -1.0
        with pytest.raises(PopulationError):
            run_edem(sphere_mesh, EdemConfig(radii=UNIT_SPHERE), population=population)

    def test_decisions_are_recorded(self, sphere_mesh):
        result = run_edem(sphere_mesh, EdemConfig(radii=UNIT_SPHERE, n_max=2))
        decisions = result.decisions
        assert decisions["update_sign"] == "+v"
        assert decisions["mu_truncation"] == 0.9
        assert decisions["stalled"] is result.stalled
