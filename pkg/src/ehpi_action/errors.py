"""Exception hierarchy shared by all pipeline stages."""


class EhpiError(Exception):
    """Base class for every error raised by this package."""


class NoValidJoints(EhpiError):
    pass


class ImageSizeMismatch(EhpiError):
    pass


class TooManyLevels(EhpiError):
    pass


class TooFewFrames(EhpiError):
    pass


class NoPresentJoints(EhpiError):
    pass


class ShapeMismatch(EhpiError):
    pass


class BatchTooSmall(EhpiError):
    pass


class EmptyClass(EhpiError):
    pass


class EmptyHistory(EhpiError):
    pass


class ConfigError(EhpiError):
    pass


class FormatError(EhpiError):
    """Problems reading one of the on-disk formats."""


class ParseError(FormatError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass
