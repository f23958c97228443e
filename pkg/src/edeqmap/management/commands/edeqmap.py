"""
Django management command for ellipsoidal density-equalizing maps.

Usage:
    python manage.py edeqmap edem --input pig.obj --radii 1,1,1.2 --population area
    python manage.py edeqmap edeq --input duck.obj --alpha 1.0 --radii sphere
    python manage.py edeqmap remesh --input pig.obj --method edeq --target-vertices 8500
    python manage.py edeqmap metrics --input pig.obj --param out/param.obj
    python manage.py edeqmap edem --config out/config.json   # reproduce a run

Exit codes: 0 success, 1 invalid input, 2 numerical failure (partial outputs
are still written).
"""

import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from edeqmap.config import load_config
from edeqmap.constants import REMESH_METHODS
from edeqmap.edem import run_edem
from edeqmap.edeq import run_edeq
from edeqmap.errors import (
    ConnectivityMismatch,
    ConvergenceError,
    EdeqMapError,
    NumericalError,
    ValidationError,
)
from edeqmap.mesh import EllipsoidRadii, fit_radii, load_mesh
from edeqmap.metrics import build_distortion_report
from edeqmap.quasiconformal import beltrami_of_surface_map
from edeqmap.remesh import parameterize, remesh_quality, remesh_surface
from edeqmap.reports import (
    write_energy,
    write_faces,
    write_json,
    write_mesh,
    write_mu,
    write_trace,
)

logger = logging.getLogger(__name__)


def _verbosity_argument(parser):
    parser.add_argument(
        "-v",
        "--verbosity",
        type=int,
        choices=[0, 1, 2, 3],
        default=1,
        help="Verbosity level; 0=warnings, 1=progress, 2=debug, 3=debug",
    )


def _common_arguments(parser, mesh_help="Input mesh (OBJ or OFF)"):
    parser.add_argument("--input", help=mesh_help)
    parser.add_argument("--output", help="Output directory (default: current directory)")
    parser.add_argument("--config", help="JSON config file; flags take precedence")
    parser.add_argument(
        "--radii", help='Ellipsoid radii "a,b,c" or "sphere" (default: 1,1,1)'
    )
    _verbosity_argument(parser)


def _iteration_arguments(parser):
    parser.add_argument(
        "--population",
        help="area, uniform, csv:<path>, tworegion:<axis>:<ratio> or smooth:<axis>:<amplitude>",
    )
    parser.add_argument("--dt", type=float, help="Time step")
    parser.add_argument("--epsilon", type=float, help="Stopping threshold")
    parser.add_argument("--n-max", dest="n_max", type=int, help="Iteration cap")
    parser.add_argument(
        "--log-every", dest="log_every", type=int, help="Progress line interval"
    )
    parser.add_argument(
        "--dump-mu",
        dest="dump_mu",
        action="store_const",
        const=True,
        help="Write the per-face Beltrami coefficient of the final map to mu.csv",
    )


def _shape_arguments(parser):
    parser.add_argument("--alpha", type=float, help="Weight of the Beltrami energy")
    parser.add_argument("--K", dest="K", type=int, help="Iterations between radius updates")
    parser.add_argument("--db", type=float, help="Initial step for radius b")
    parser.add_argument("--dc", type=float, help="Initial step for radius c")


class Command(BaseCommand):
    help = "Compute ellipsoidal density-equalizing parameterizations and remesh surfaces"

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", help="Pipelines")

        # edem subcommand
        edem_parser = subparsers.add_parser(
            "edem", help="Density-equalizing map onto a fixed ellipsoid"
        )
        _common_arguments(edem_parser)
        _iteration_arguments(edem_parser)

        # edeq subcommand
        edeq_parser = subparsers.add_parser(
            "edeq", help="Density-equalizing quasi-conformal map with radius optimization"
        )
        _common_arguments(edeq_parser)
        _iteration_arguments(edeq_parser)
        _shape_arguments(edeq_parser)

        # remesh subcommand
        remesh_parser = subparsers.add_parser(
            "remesh", help="Remesh a surface through a parameterization"
        )
        _common_arguments(remesh_parser)
        _iteration_arguments(remesh_parser)
        _shape_arguments(remesh_parser)
        remesh_parser.add_argument(
            "--method", choices=REMESH_METHODS, help="Parameterization backend"
        )
        remesh_parser.add_argument(
            "--target-vertices",
            dest="target_vertices",
            type=int,
            help="Vertex count of the remeshed surface",
        )
        remesh_parser.add_argument(
            "--seed", type=int, help="Seed for tie-breaks in mesh generation"
        )

        # metrics subcommand
        metrics_parser = subparsers.add_parser(
            "metrics", help="Distortion of an existing parameterization"
        )
        _common_arguments(metrics_parser, mesh_help="Source mesh (OBJ or OFF)")
        metrics_parser.add_argument(
            "--param", help="Parameterization mesh with the source's connectivity"
        )
        metrics_parser.add_argument(
            "--dump-mu",
            dest="dump_mu",
            action="store_const",
            const=True,
            help="Write the per-face Beltrami coefficient to mu.csv",
        )

    def handle(self, *args, **options):
        subcommand = options.get("subcommand")
        handlers = {
            "edem": self.handle_edem,
            "edeq": self.handle_edeq,
            "remesh": self.handle_remesh,
            "metrics": self.handle_metrics,
        }
        if subcommand not in handlers:
            raise CommandError(
                f"Unknown subcommand: {subcommand}; use one of {', '.join(handlers)}"
            )

        self._setup_logging(options)
        self.run_state = None
        try:
            return handlers[subcommand](**options)
        except ConvergenceError as e:
            logger.error(f"{subcommand} failed: {e}")
            self._write_partial(e)
            raise CommandError(str(e), returncode=2) from e
        except NumericalError as e:
            logger.error(f"{subcommand} failed: {e}")
            raise CommandError(str(e), returncode=2) from e
        except EdeqMapError as e:
            raise CommandError(str(e), returncode=1) from e
        except OSError as e:
            raise CommandError(f"I/O error: {e}", returncode=1) from e

    def _setup_logging(self, options):
        """Configure logging based on verbosity level."""
        verbosity = options.get("verbosity", 1)
        if verbosity == 0:
            log_level = logging.WARNING
        elif verbosity == 1:
            log_level = logging.INFO
        else:
            log_level = logging.DEBUG

        logging.basicConfig(
            level=log_level,
            format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        logging.getLogger("edeqmap").setLevel(log_level)

        # Reduce noise from third-party libraries
        logging.getLogger("meshio").setLevel(logging.WARNING)

    # -------------------------------------------------------------------------
    # Shared plumbing
    # -------------------------------------------------------------------------

    def _prepare(self, command, options):
        """Load config and mesh, create the output directory, write config.json."""
        config = load_config(command, options)
        mesh = load_mesh(config.input)
        output = Path(config.output)
        output.mkdir(parents=True, exist_ok=True)
        config.write(output / "config.json")
        self.run_state = (config, mesh, output)
        logger.info(
            f"{command}: {config.input} ({mesh.n_vertices} vertices, "
            f"{mesh.n_faces} faces) -> {output}"
        )
        return config, mesh, output

    def _write_partial(self, error: ConvergenceError):
        if self.run_state is None:
            return
        _config, mesh, output = self.run_state
        report = {"converged": False, "error": str(error)}
        if error.partial_map is not None:
            write_mesh(output / "param.obj", error.partial_map.mesh)
            report["radii"] = list(error.partial_map.radii.as_tuple())
        trace = error.trace
        if trace is not None and hasattr(trace, "history"):
            write_energy(output / "energy.csv", trace)
        elif trace is not None:
            write_trace(output / "trace.csv", trace)
        write_json(output / "report.json", report)
        self.stderr.write(
            self.style.WARNING(f"Partial outputs written to {output} ({mesh.n_vertices} vertices)")
        )

    def _write_distortion(self, output, mesh, report, positions, dump_mu):
        write_faces(output / "faces.csv", report)
        if dump_mu:
            mu = beltrami_of_surface_map(mesh.faces, mesh.vertices, positions, strict=False)
            write_mu(output / "mu.csv", mu)

    def _map_summary(self, result, mesh, radii):
        """Final and initial distortion of an EDEM or EDEQ result."""
        final = build_distortion_report(
            mesh, result.param.positions, radii, result.density.rho_vertex
        )
        initial = build_distortion_report(
            mesh,
            result.initial.positions,
            result.initial.radii,
            result.initial_density.rho_vertex,
        )
        summary = final.to_dict()
        summary.update(
            {
                "initial": initial.to_dict(),
                "converged": result.converged,
                "iterations": result.iterations,
                "runtime": result.runtime,
                "radii": list(radii.as_tuple()),
                "decisions": result.decisions,
            }
        )
        return final, summary

    # -------------------------------------------------------------------------
    # Subcommands
    # -------------------------------------------------------------------------

    def handle_edem(self, **options):
        """Handle edem subcommand."""
        config, mesh, output = self._prepare("edem", options)
        result = run_edem(mesh, config.edem_config(), config.population)
        radii = config.radii_value()

        write_mesh(output / "param.obj", result.param.mesh)
        write_trace(output / "trace.csv", result.trace)
        final, summary = self._map_summary(result, mesh, radii)
        summary["stalled"] = result.stalled
        write_json(output / "report.json", summary)
        self._write_distortion(output, mesh, final, result.param.positions, config.dump_mu)

        self.stdout.write(
            self.style.SUCCESS(
                f"EDEM finished in {result.iterations} iterations: "
                f"mean |d_area| {summary['initial']['mean_abs_d_area']:.4f} -> "
                f"{final.mean_abs_d_area:.4f}, overlaps {final.flips}"
            )
        )
        if not result.converged:
            self.stdout.write(self.style.WARNING("Stopping threshold was not reached"))

    def handle_edeq(self, **options):
        """Handle edeq subcommand."""
        config, mesh, output = self._prepare("edeq", options)
        result = run_edeq(mesh, config.edeq_config(), config.population)

        write_mesh(output / "param.obj", result.param.mesh)
        write_trace(output / "trace.csv", result.trace)
        write_energy(output / "energy.csv", result.energy)
        final, summary = self._map_summary(result, mesh, result.radii)
        summary.update(
            {
                "initial_radii": list(config.radii_value().as_tuple()),
                "alpha": config.alpha,
                "E_edem": result.energy.e_edem,
                "E_bc": result.energy.e_bc,
                "E": result.energy.energy,
                "step_scales": result.step_scales,
            }
        )
        write_json(output / "report.json", summary)
        self._write_distortion(output, mesh, final, result.param.positions, config.dump_mu)

        a, b, c = result.radii.as_tuple()
        self.stdout.write(
            self.style.SUCCESS(
                f"EDEQ finished in {result.iterations} iterations: radii "
                f"({a:.4f}, {b:.4f}, {c:.4f}), mean |mu| {final.mean_abs_mu:.4f}, "
                f"overlaps {final.flips}"
            )
        )
        if not result.converged:
            self.stdout.write(self.style.WARNING("Stopping threshold was not reached"))

    def handle_remesh(self, **options):
        """Handle remesh subcommand."""
        config, mesh, output = self._prepare("remesh", options)
        remesh_config = config.remesh_config()
        backend = parameterize(mesh, remesh_config.method, config)
        param = backend.param
        write_mesh(output / "param.obj", param.mesh)

        remeshed, report = remesh_surface(
            param, remesh_config.target_vertices, remesh_config.seed
        )
        stem = Path(config.input).stem
        remeshed_path = write_mesh(
            output / f"{stem}_remeshed_{remesh_config.method}.obj", remeshed
        )
        report.extra.update(
            {
                "method": remesh_config.method,
                "target_vertices": remesh_config.target_vertices,
                "seed": remesh_config.seed,
                "radii": list(param.radii.as_tuple()),
                "parameterization": build_distortion_report(
                    mesh, param.positions, param.radii
                ).to_dict(),
                "source_quality": {
                    key: value
                    for key, value in remesh_quality(mesh).to_dict().items()
                    if key.startswith("delta")
                },
            }
        )
        write_json(output / "remesh_report.json", report.to_dict())

        self.stdout.write(
            self.style.SUCCESS(
                f"Remeshed with {remesh_config.method}: {remeshed.n_vertices} vertices, "
                f"delta_size {report.delta_size:.4f}, delta_shape {report.delta_shape:.4f} "
                f"-> {remeshed_path}"
            )
        )

    def handle_metrics(self, **options):
        """Handle metrics subcommand."""
        config, mesh, output = self._prepare("metrics", options)
        param_mesh = load_mesh(config.param)
        if not mesh.same_connectivity(param_mesh):
            raise ConnectivityMismatch(
                f"{config.param} does not share the connectivity of {config.input}"
            )

        radii = self._metrics_radii(options, param_mesh)
        report = build_distortion_report(mesh, param_mesh.vertices, radii)
        summary = report.to_dict()
        summary["radii"] = None if radii is None else list(radii.as_tuple())
        write_json(output / "report.json", summary)
        self._write_distortion(output, mesh, report, param_mesh.vertices, config.dump_mu)

        self.stdout.write(
            self.style.SUCCESS(
                f"mean |d_area| {report.mean_abs_d_area:.6f}, "
                f"mean |mu| {report.mean_abs_mu:.6f}, overlaps {report.flips}"
            )
        )

    def _metrics_radii(self, options, param_mesh) -> EllipsoidRadii | None:
        """Explicit --radii, else radii fitted to the parameterization."""
        if options.get("radii"):
            return EllipsoidRadii.parse(options["radii"])
        try:
            return fit_radii(param_mesh.vertices)
        except ValidationError:
            logger.warning(
                "Parameterization does not lie on an ellipsoid; "
                "overlaps are counted against the origin"
            )
            return None

