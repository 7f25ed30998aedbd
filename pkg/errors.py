#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Exception types shared by the simulation, the analysis and the CLI.
Each carries the exit code cqed.py returns when it escapes a subcommand.
"""


class CqedError(Exception):
    exit_code = 1


class ValidationError(CqedError):
    """Bad parameter value or precondition on an input."""
    exit_code = 2


class ConfigError(ValidationError):
    """Unknown or unparsable key in a config file."""

    def __init__(self, key: str, message: str = ""):
        self.key = key
        super().__init__(f"config key '{key}': {message}" if message else f"config key '{key}'")


class ClickFileError(CqedError):
    """Malformed click-stream file (bad header, version or row)."""
    exit_code = 3

    def __init__(self, message: str, line_number: int = 0):
        self.line_number = line_number
        if line_number:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class IntegrationError(CqedError):
    """The master-equation integrator failed to converge."""
    exit_code = 4


class CalibrationError(CqedError):
    exit_code = 5


class AnalysisError(CqedError):
    """Statistics cannot be formed from the given data (empty stream, zero rates...)."""
    exit_code = 6
