"""Offline tool turning images plus scene annotations into PFV1 feature files."""

__version__ = "0.1.0"
