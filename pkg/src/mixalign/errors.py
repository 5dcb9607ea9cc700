"""Exception hierarchy shared by all mixalign modules.

The CLI maps these onto exit codes: config/contract errors exit 2,
refusing to overwrite exits 3, method preconditions exit 4.
"""

from __future__ import annotations


class MixAlignError(Exception):
    """Base class for all errors raised by mixalign."""


class ConfigError(MixAlignError):
    """Invalid configuration value, file, or missing/unknown key."""


class ContractError(MixAlignError):
    """An operation was called outside its documented contract."""


class InputError(ContractError):
    """Malformed data input (e.g. token outside the vocabulary)."""


class NumericalError(MixAlignError):
    """Non-finite values or unresolvable ill-conditioning during computation."""


class OverwriteError(MixAlignError):
    """Output already exists and --force was not given."""


class MethodPreconditionError(MixAlignError):
    """A training/estimation method was requested without its prerequisites."""
