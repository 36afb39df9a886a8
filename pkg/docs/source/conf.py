# Sphinx configuration of the peer-valuation docs.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

import setuptools_scm

sys.path.insert(0, os.path.abspath("../.."))

project = "peer-valuation"
copyright = "2024, Peer Valuation Developers"
author = "Peer Valuation Developers"
try:
    release = setuptools_scm.get_version(root="../..", relative_to=__file__)
    if "+" in release:
        release = release.split("+")[0]
except LookupError:
    # no git metadata, e.g. a source tarball
    release = "0.0.0"

extensions = [
    "sphinx.ext.napoleon",
    "sphinx.ext.autodoc",
    "sphinx_autodoc_typehints",
    "sphinx.ext.autosummary",
    "sphinx.ext.viewcode",
    "myst_parser",
]

myst_heading_anchors = 3

templates_path = ["_templates"]

autosummary_generate = True
autodoc_default_flags = ["members"]

exclude_patterns = ["**.ipynb_checkpoints", "api_generated/**"]

html_theme = "pydata_sphinx_theme"
html_title = "peer-valuation"
html_theme_options = {
    "logo": {
        "text": f"{project} v{release}",
    },
}
