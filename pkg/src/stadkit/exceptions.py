"""Exception types that map onto the command-line exit codes."""

from __future__ import annotations


class ConfigError(Exception):
    """Invalid configuration or command usage (exit code 2)."""


class NumericalDivergenceError(Exception):
    """Training produced non-finite loss or gradients (exit code 3)."""


class AnnotationParseError(ConfigError):
    """An annotation file could not be parsed; message carries the line number."""
