#
# trimask documentation build configuration file.
#
# This file is execfile()d with the current directory set to its containing
# dir.

import os
import sys

# If extensions (or modules to document with autodoc) are in another directory,
# add these directories to sys.path here.
sys.path.insert(0, os.path.abspath(".."))

from trimask import __version__  # noqa

# -- General configuration ------------------------------------------------

extensions = []

templates_path = ["_templates"]

source_suffix = ".rst"

master_doc = "index"

project = "trimask"
copyright = "2026, the trimask authors"

version = __version__
release = __version__

exclude_patterns = ["_build"]

pygments_style = "sphinx"

# -- Options for HTML output ----------------------------------------------

html_theme = "sphinx_rtd_theme"

htmlhelp_basename = "trimaskdoc"

# -- Options for manual page output ---------------------------------------

man_pages = [("commands", "trimask", "trimask command line", ["the trimask authors"], 1)]
