"""Toolkit exception types, mapped to CLI exit codes."""


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class NumericalError(Exception):
    """A numerical procedure failed to produce a usable result (exit code 4)."""
