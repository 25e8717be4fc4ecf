"""Exception hierarchy shared across the simulator.

The CLI maps these onto process exit codes: configuration/validation
problems exit 1, solver/runtime failures exit 2, I/O failures exit 3.
"""


class VitactipError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(VitactipError, ValueError):
    """A spec, protocol, or config file violates an invariant.

    The message names the offending field.
    """


class ContractError(VitactipError, ValueError):
    """Mismatched inputs to an operation (e.g. frame size disagreement)."""


class SolverError(VitactipError, RuntimeError):
    """Contact solve failed to converge within the iteration budget."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InfeasiblePoseError(VitactipError, ValueError):
    """Stimulus pose initially intersects more than half of the skin nodes."""


class GenerationError(VitactipError, RuntimeError):
    """A dataset sample could not be produced after the retry budget."""


class IncompletePairingError(VitactipError, ValueError):
    """Pair export found sample ids missing a source or target render."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        super().__init__(
            "missing counterpart renders for ids: " + ", ".join(self.missing_ids)
        )


class StratificationError(VitactipError, ValueError):
    """A class is too small to be split at the requested granularity."""


class RankDeficiencyError(VitactipError, ValueError):
    """Normal equations are singular; regularization required."""
