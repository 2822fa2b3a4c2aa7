"""
Exception hierarchy for the Hamiltonian simulation engine.

Every error class carries the process exit code the command-line front end
uses when the error escapes a run.
"""
from typing import Optional


class HamSimError(Exception):
    """Base class for simulation errors."""
    exit_code = 1


class UsageError(HamSimError):
    """Invalid arguments, flag conflicts or unknown names."""
    exit_code = 2


class HamiltonianFileError(HamSimError):
    """A Hamiltonian or state file could not be read."""
    exit_code = 3


class ParseError(HamiltonianFileError):
    """A malformed line in a COO Hamiltonian or state file."""

    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}"
        if line_number is not None:
            location += f":{line_number}"
        super().__init__(f"{location}: {message}" if location else message)


class SymmetryError(HamSimError):
    """Entry pair (i, j), (j, i) is not Hermitian-conjugate within tolerance."""
    exit_code = 4


class DomainError(HamSimError):
    """Input outside the mathematical domain of an operation (e.g. non-PSD in PSD mode)."""
    exit_code = 5


class SamplingError(HamSimError):
    """Base class for row-sampling failures."""
    exit_code = 6


class DegenerateWeightError(SamplingError):
    """Total sampling weight is not positive."""
    pass


class OracleFaultError(SamplingError):
    """A marginal returned NaN or a negative value."""
    pass


class NumericalError(HamSimError):
    """Non-finite values or a failed decomposition."""
    exit_code = 7

    def __init__(self, message: str, stage: Optional[int] = None):
        self.stage = stage
        super().__init__(f"{message} (stage {stage})" if stage is not None else message)


class ResourceError(HamSimError):
    """Memory budget exceeded or a dense operation requested beyond its size limit."""
    exit_code = 8
