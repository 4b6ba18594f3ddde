import json
import logging
import os
import platform
from importlib import metadata

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder
from django.utils import timezone

from . import __version__

logger = logging.getLogger("trimask.artifacts")

VERSIONED_MODULES = ("django", "asgiref", "numpy", "scipy", "pandas", "torch")


class ArtifactEncoder(DjangoJSONEncoder):
    """
    JSON encoder that also understands numpy and torch values and objects
    exposing ``as_dict()``.
    """

    def default(self, o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, "as_dict"):
            return o.as_dict()
        if hasattr(o, "tolist"):
            return o.tolist()
        if isinstance(o, os.PathLike):
            return os.fspath(o)
        return super().default(o)


def dumps(payload):
    return json.dumps(payload, cls=ArtifactEncoder, sort_keys=True, indent=2)


def module_versions():
    versions = {"trimask": __version__, "python": platform.python_version()}
    for name in VERSIONED_MODULES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def provenance(config, seed=None):
    return {
        "config_hash": config.hash,
        "seed": config.run.seed if seed is None else seed,
        "versions": module_versions(),
    }


class ArtifactWriter:
    """
    Writes a command's output files into one directory. Every file carries
    the run's provenance; if the block raises, every file written so far is
    removed again.
    """

    def __init__(self, directory, provenance):
        self.directory = os.fspath(directory)
        self.provenance = provenance
        self.written = []
        self._created_directory = False

    def __enter__(self):
        if not os.path.isdir(self.directory):
            os.makedirs(self.directory)
            self._created_directory = True
        return self

    def __exit__(self, exc_type, exc, traceback):
        if exc_type is not None:
            self.cleanup()
        return False

    def cleanup(self):
        for path in reversed(self.written):
            try:
                os.remove(path)
            except FileNotFoundError:
                pass
        if self._created_directory:
            try:
                os.rmdir(self.directory)
            except OSError:
                pass
        if self.written:
            logger.warning("Removed %d partial artifacts", len(self.written))
        self.written = []

    def path(self, name):
        """
        Reserves a file name for a writer outside this class (checkpoints).
        """
        path = os.path.join(self.directory, name)
        self.written.append(path)
        return path

    def write_json(self, name, payload):
        document = {"provenance": self.provenance, "created_at": timezone.now()}
        document.update(payload)
        path = self.path(name)
        with open(path, "w") as handle:
            handle.write(dumps(document) + "\n")
        return path

    def write_jsonl(self, name, rows):
        path = self.path(name)
        with open(path, "w") as handle:
            for row in rows:
                row = dict(row, config_hash=self.provenance["config_hash"])
                handle.write(json.dumps(row, cls=ArtifactEncoder, sort_keys=True) + "\n")
        return path

    def write_csv(self, name, frame):
        """
        Writes a table with the provenance as leading ``#`` comment lines;
        read it back with ``pandas.read_csv(path, comment="#")``.
        """
        path = self.path(name)
        with open(path, "w") as handle:
            for key in ("config_hash", "seed"):
                handle.write("# %s: %s\n" % (key, self.provenance[key]))
            handle.write(
                "# versions: %s\n"
                % json.dumps(self.provenance["versions"], sort_keys=True)
            )
            frame.to_csv(handle, index=False)
        return path
