"""Exception types shared across the simulator."""


class PssimError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PssimError):
    """A config field, architecture, or input shape is invalid."""


class IngestionError(PssimError):
    """A dataset file is malformed or inconsistent."""


class CodecError(PssimError):
    """An encoded update is truncated or violates the wire format."""


class LedgerError(PssimError):
    """The update ledger was driven outside its contract (timestamp gap, future query)."""


class StalenessUnavailableError(LedgerError):
    """A staleness window was partially evicted; the ledger capacity is misconfigured."""


class NumericFault(PssimError):
    """A gradient or parameter update produced non-finite values."""
