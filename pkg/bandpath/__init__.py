"""bandpath: Monte Carlo verification of integration by parts on paths between two curves."""

__version__ = "0.1.0"
