"""
The ``trimask`` command line: ``trimask <subcommand> [options]``.

Subcommands are the Django management commands in
``trimask.management.commands``; hyphens in their names are accepted. Without
``DJANGO_SETTINGS_MODULE`` a minimal settings object is configured so the
commands run outside any Django project.
"""

import os
import sys

import django
import torch
from django.conf import settings
from django.core.management import execute_from_command_line

from . import __version__

SUBCOMMANDS = (
    "corrupt",
    "train",
    "generate",
    "probe_variance",
    "sde_rescale",
    "bcrit_scan",
    "gamma_sweep",
    "fit_scaling",
    "frontier",
    "antimask_ablate",
)

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        "trimask": {"handlers": ["console"], "level": "INFO", "propagate": False},
    },
}


def usage():
    return "usage: trimask <subcommand> [options]\n\nsubcommands:\n%s\n" % "\n".join(
        "  " + name.replace("_", "-") for name in SUBCOMMANDS
    )


def configure():
    if not os.environ.get("DJANGO_SETTINGS_MODULE") and not settings.configured:
        settings.configure(
            INSTALLED_APPS=["trimask"],
            DENOISERS={},
            LOGGING=LOGGING,
            USE_TZ=True,
        )
    threads = os.environ.get("TRIMASK_NUM_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    django.setup()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(usage())
        return 0
    if argv[0] == "--version":
        sys.stdout.write("trimask %s\n" % __version__)
        return 0
    subcommand = argv[0].replace("-", "_")
    if subcommand not in SUBCOMMANDS and subcommand != "help":
        sys.stderr.write("Unknown subcommand %r\n\n%s" % (argv[0], usage()))
        return 2
    configure()
    try:
        execute_from_command_line(["trimask", subcommand] + argv[1:])
    except SystemExit as error:
        return error.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
