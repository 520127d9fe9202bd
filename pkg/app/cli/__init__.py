"""
Command-line interface: mesh tools, Bessel roots, experiments and sweeps.
"""

from .commands import main  # noqa: F401
