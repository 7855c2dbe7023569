"""Phase-bounded finite-element solver for 2D incompressible two-fluid flow."""

__version__ = "0.1.0"
