"""Exception hierarchy shared by every module of the lab.

Each class carries the process exit code the CLI reports for it, so the
command-line layer never has to know which module raised what.
"""


class LabError(Exception):
    """Base class for all expected failures"""

    exit_code = 1


class UsageError(LabError):
    """Bad command line: unknown flag or subcommand, missing or mistyped value"""

    exit_code = 2


class ParameterDomainError(LabError, ValueError):
    """A parameter lies outside its admissible domain"""

    exit_code = 3

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyRequestError(LabError, ValueError):
    exit_code = 4


class InsufficientDataError(LabError, ValueError):
    exit_code = 4


class DegenerateInputError(LabError, ValueError):
    exit_code = 4


class IdxFormatError(LabError, ValueError):
    """Malformed IDX container; `offset` is the byte position of the fault"""

    exit_code = 5

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class DatasetFormatError(LabError, ValueError):
    exit_code = 5


class SimulationBlowUpError(LabError, ArithmeticError):
    """The integrator produced a non-finite state"""

    exit_code = 6

    def __init__(self, step, last_state):
        self.step = step
        self.last_state = last_state
        super().__init__(f"non-finite state at step {step}; last finite state {last_state!r}")


class TrainingDivergedError(LabError, ArithmeticError):
    exit_code = 6

    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"training loss became {loss!r} at iteration {iteration}")


class IllPosedLandscapeError(LabError, ValueError):
    exit_code = 7


class SampleRangeError(LabError, OverflowError):
    """A stable draw is not representable as a finite float64"""

    exit_code = 8


EXIT_CODES = {
    0: 'success',
    1: 'unexpected failure',
    UsageError.exit_code: 'usage error',
    ParameterDomainError.exit_code: 'parameter-domain error',
    InsufficientDataError.exit_code: 'insufficient, empty or degenerate data',
    IdxFormatError.exit_code: 'input format error',
    SimulationBlowUpError.exit_code: 'numerical blow-up or training divergence',
    IllPosedLandscapeError.exit_code: 'ill-posed landscape',
    SampleRangeError.exit_code: 'sample not representable as float64',
}


def require(condition, field, message):
    """Raise ParameterDomainError for `field` unless condition holds"""
    if not condition:
        raise ParameterDomainError(field, message)
