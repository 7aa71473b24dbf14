"""Joint text + visual-context word embedding trainer and evaluation harness."""

__version__ = "0.1.0"
