"""
Error kinds shared across the lab
Every public failure raises one of these so the CLI can map it to an exit code
"""


class AdvLabError(Exception):
    """Base class for all advlab errors"""

    kind = "error"


class InvalidArgumentError(AdvLabError, ValueError):
    kind = "invalid-argument"


class ParseError(AdvLabError):
    """Malformed dataset bytes; `offset` is the byte position of the problem"""

    kind = "parse"

    def __init__(self, message, offset, source=None):
        self.offset = offset
        self.source = source
        where = f"{source} " if source else ""
        super().__init__(f"{message} ({where}at byte offset {offset})")


class CheckpointError(AdvLabError):
    kind = "checkpoint"

    def __init__(self, message, array_name=None):
        self.array_name = array_name
        if array_name:
            message = f"{message} [array '{array_name}']"
        super().__init__(message)


class TrainingError(AdvLabError):
    kind = "training"

    def __init__(self, message, epoch):
        self.epoch = epoch
        super().__init__(f"{message} (epoch {epoch})")


class ConfigError(AdvLabError):
    kind = "config"


class DataError(AdvLabError):
    kind = "data"
