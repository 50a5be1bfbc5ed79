"""Numerical laboratory for the Anderson model on graphs of polynomial growth."""
from __future__ import annotations

__version__ = "0.1.0"
