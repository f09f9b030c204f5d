"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Invalid input data (malformed files, inconsistent collections)."""


class FormatError(DataError):
    """A record in an on-disk file could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")
