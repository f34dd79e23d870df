"""Exception types shared across the package."""


class CargrowthError(Exception):
    """Base class for all package-specific errors."""


class DataParseError(CargrowthError):
    """A row of an input file could not be parsed; message carries the line number."""


class DataValidationError(CargrowthError):
    """Structurally parseable input that violates a dataset invariant."""


class ConfigError(CargrowthError):
    """Inconsistent model or run configuration."""


class InitializationError(CargrowthError):
    """The sampler cannot construct a valid starting state for this dataset."""


class GenerationError(CargrowthError):
    """A synthetic-data template is infeasible."""


class ChainAbort(CargrowthError):
    """A Markov chain hit a non-finite sufficient statistic and was stopped.

    Carries the chain index, the sweep at which the problem was detected and a
    snapshot of the scalar state for post-mortem inspection.
    """

    def __init__(self, chain_index: int, iteration: int, reason: str, snapshot: dict):
        self.chain_index = chain_index
        self.iteration = iteration
        self.reason = reason
        self.snapshot = snapshot
        super().__init__(
            f"chain {chain_index} aborted at iteration {iteration}: {reason}"
        )
