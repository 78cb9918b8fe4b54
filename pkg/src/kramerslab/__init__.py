"""Numerical laboratory for slow barrier crossing in a tilted double well."""

__version__ = "0.1.0"
