class LinewinError(ValueError):
    """Base class for every error raised by the toolkit services"""


class ArgumentError(LinewinError):
    pass


class PGMParseError(LinewinError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DegenerateObservationError(LinewinError):
    pass


class DegenerateGeometryError(LinewinError):
    pass


class DegenerateLineError(LinewinError):
    pass


class LineAtInfinityError(LinewinError):
    pass


class CheiralityError(LinewinError):
    pass


class UnderconstrainedError(LinewinError):
    def __init__(self, block: str, detail: str = ""):
        message = f"unconstrained block {block}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.block = block


class SceneGenerationError(LinewinError):
    pass


class ConfigError(LinewinError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
