"""
SpoofBox: synthetic speech detection with warped-cepstral features and GMM countermeasures
"""

import logging

try:
    from _version import __version__  # pyright: ignore[reportMissingImports, reportUnknownVariableType]
except ImportError:
    __version__ = "0.0.0.dev0"

# silent until the CLI configures handlers
logging.getLogger("spoofbox").addHandler(logging.NullHandler())
