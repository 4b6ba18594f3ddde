import argparse
import logging
import os

from django.core.management import BaseCommand, CommandError
from django.test.utils import override_settings

from ..conf import ExperimentConfig
from ..exceptions import TrimaskError
from ..utils import ArtifactWriter, dumps, provenance

logger = logging.getLogger("trimask.commands")

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.INFO, 3: logging.DEBUG}

# Output directories default to <root>/<command>-<config hash prefix>.
DEFAULT_OUTPUT_ROOT = "runs"


class ExperimentCommand(BaseCommand):
    """
    Base for the experiment subcommands. Resolves the ExperimentConfig from a
    preset, an optional file and ``--set`` overrides, runs ``run()`` under the
    experiment's settings and turns trimask errors into exit codes.
    """

    requires_system_checks = []
    label = None

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--config",
            action="store",
            dest="config_file",
            default=None,
            help="Experiment file with [section] key = value entries.",
        )
        parser.add_argument(
            "--preset",
            action="store",
            dest="preset",
            default="desk",
            help="Configuration preset the file and overrides apply to.",
        )
        parser.add_argument(
            "--set",
            action="append",
            dest="overrides",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="Override one configuration value; may be repeated.",
        )
        parser.add_argument(
            "--seed", action="store", dest="seed", type=int, default=None, help="Run seed."
        )
        parser.add_argument(
            "--output",
            action="store",
            dest="output",
            default=None,
            help="Directory the artifacts are written to.",
        )

    def load_config(self, options):
        config = ExperimentConfig.preset(options["preset"])
        if options["config_file"]:
            config = ExperimentConfig.from_file(options["config_file"], base=config)
        config = config.override(options["overrides"])
        if options["seed"] is not None:
            config = config.set("run", "seed", options["seed"])
        return config

    def output_directory(self, config, options):
        if options["output"]:
            return options["output"]
        if config.run.output:
            return config.run.output
        return os.path.join(DEFAULT_OUTPUT_ROOT, "%s-%s" % (self.label, config.hash[:12]))

    def handle(self, *args, **options):
        self.verbosity = options.get("verbosity", 1)
        logging.getLogger("trimask").setLevel(VERBOSITY_LEVELS.get(self.verbosity, logging.DEBUG))
        try:
            config = self.load_config(options)
            output = self.output_directory(config, options)
            logger.info("Running %s with config %s", self.label, config.hash[:12])
            with override_settings(**config.as_settings()):
                with ArtifactWriter(output, provenance(config)) as writer:
                    self.run(config, writer, **options)
        except TrimaskError as error:
            raise CommandError(str(error), returncode=error.exit_code)
        except OSError as error:
            raise CommandError(str(error), returncode=TrimaskError.exit_code)
        if self.verbosity:
            for path in writer.written:
                self.stdout.write("Wrote %s" % path)

    def run(self, config, writer, **options):
        raise NotImplementedError("Subclasses of ExperimentCommand must provide run()")

    def emit(self, payload):
        """
        Prints a JSON document on stdout.
        """
        self.stdout.write(dumps(payload))


def float_list(value):
    """
    argparse type for comma-separated floats.
    """
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers, got %r" % value)


def int_list(value):
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers, got %r" % value)
