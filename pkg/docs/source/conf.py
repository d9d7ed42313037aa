# Sphinx configuration for the wavestyle docs.

import os
import sys
from importlib import import_module

sys.path.insert(0, os.path.dirname(os.path.abspath("..")))
wavestyle = import_module("wavestyle")

# -- Project information -----------------------------------------------------

project = "Wavestyle"
copyright = "2021, The Wavestyle Developers"
author = "The Wavestyle Developers"

version = ".".join(wavestyle.__version__.split(".")[:2])
release = wavestyle.__version__

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.coverage",
    "sphinx.ext.viewcode",
    "sphinx.ext.autosummary",
    "sphinx.ext.intersphinx",
    "sphinx.ext.autosectionlabel",
    "sphinx.ext.mathjax",
    "sphinx.ext.napoleon",  # load napolean before type hints ext
    "sphinx_autodoc_typehints",
]

source_suffix = ".rst"
master_doc = "index"
exclude_patterns: list = []
pygments_style = "manni"
autosectionlabel_prefix_document = True

# -- Options for Inter-Sphinx Mapping ----------------------------------------

intersphinx_mapping = {
    "py3": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
}

# -- Options for Autodoc -----------------------------------------------------

autodoc_default_options = {"show-inheritance": True, "member-order": "bysource"}

# -- Options for HTML output -------------------------------------------------

html_theme = "furo"
htmlhelp_basename = "wavestyledoc"

# -- Options for other builders ----------------------------------------------

latex_documents = [
    (master_doc, "wavestyle.tex", "Wavestyle Documentation", author, "manual")
]
man_pages = [(master_doc, "wavestyle", "Wavestyle Documentation", [author], 1)]
