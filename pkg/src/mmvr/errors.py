class InputError(ValueError):
    """Bad user input: malformed files, violated preconditions, bad parameters."""


class BVHSyntaxError(InputError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = "" if line is None else f" (line {line}, column {column})"
        super().__init__(message + where)


class ChannelSpecError(InputError):
    pass


class FrameCountError(InputError):
    pass


class MissingJointError(InputError):
    pass


class DegenerateOrientationError(InputError):
    pass


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""


class TrainingDivergedError(RuntimeError):
    pass
