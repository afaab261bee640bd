"""
Exception hierarchy shared by the library and the CLI
"""
from vstree.constants import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE


class VstreeError(Exception):
    """Base class for all vstree errors"""

    exit_code = 1


class InvalidArgumentError(VstreeError, ValueError):
    """Bad shapes, out-of-range indices or invalid hyperparameters"""

    exit_code = EXIT_USAGE


class DataError(VstreeError):
    """Unreadable tables, missing columns or incompatible model files"""

    exit_code = EXIT_DATA


class NumericError(VstreeError, ArithmeticError):
    """Non-finite intermediates, failed factorizations and divergence"""

    exit_code = EXIT_NUMERIC
