"""Exceptions that map to CLI exit codes (config -> 2, data -> 3)."""


class ConfigError(Exception):
    """Invalid configuration value or malformed config document."""


class DataError(Exception):
    """Missing, malformed, or insufficient dataset content."""
