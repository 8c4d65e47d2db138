"""Exception types shared across the pipeline stages."""


class AsrCurateError(Exception):
    pass


class ConfigError(AsrCurateError):
    """Invalid or inconsistent configuration (CLI exit status 2)."""


class DataError(AsrCurateError):
    """Input data violates a contract (CLI exit status 1)."""


class EmptyReferenceError(DataError, ValueError):
    """A metric was asked to score against a reference with no tokens."""


class ManifestError(DataError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class DuplicateDocumentError(ManifestError):
    pass


class PlanOverflowError(DataError):
    """The transcript alone does not fit in the target length."""


class SchemaError(AsrCurateError):
    """A remote service answered with a body that does not match the contract."""
