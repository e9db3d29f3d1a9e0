class BtlnerError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(BtlnerError, ValueError):
    """Invalid user-supplied parameter or configuration."""


class CorpusError(BtlnerError, ValueError):
    """Malformed or inconsistent corpus data."""


class BratParseError(CorpusError):
    def __init__(self, lineno, line, reason="malformed T-line"):
        self.lineno = lineno
        self.line = line
        super().__init__(f"line {lineno}: {reason}: {line!r}")


class SpanRangeError(CorpusError, IndexError):
    """An annotation span falls outside the text it refers to."""


class TrainingError(BtlnerError, RuntimeError):
    """Training diverged (non-finite loss)."""
