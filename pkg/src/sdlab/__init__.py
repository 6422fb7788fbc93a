"""Numerical laboratory for SDEs with singular drifts.

Subpackages cover localized Sobolev norms on periodic space-time grids,
a catalog of singular drift fields, a monotone parabolic solver with
level-set (De Giorgi) diagnostics, a vectorized Euler-Maruyama engine
with statistical verifiers, and a config-driven experiment runner.
"""

from sdlab.grids import GridSpec, SpaceTimeField, read_field, write_field

__all__ = ["GridSpec", "SpaceTimeField", "read_field", "write_field"]

__version__ = "0.1.0"
