"""Exception hierarchy shared by the lake bloom modules.

Validation problems subclass ValueError and map to exit status 1 in the CLI.
Model and runtime failures subclass RuntimeError and map to exit status 2.
"""

from typing import Optional, Sequence


class ParameterValidationError(ValueError):
    """Invalid parameter value or unknown parameter name"""


class StateValidationError(ValueError):
    """Lake state violating non-negativity or quota bounds"""


class DomainError(ValueError):
    """Argument outside the domain of an empirical formula"""


class ConfigValidationError(ValueError):
    """Run configuration that fails schema or unit checks"""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class DataParseError(ValueError):
    """Malformed forcing or observation file"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path:
            location = f"{path}"
        if line is not None:
            location = f"{location}:{line}" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class UnitError(DataParseError):
    """Unit not present in the unit table for a variable"""


class CoverageError(ValueError):
    """Requested time outside the range covered by forcing or trajectory"""


class LakeModelError(RuntimeError):
    """Failure while evaluating or integrating the lake model"""

    def __init__(self, message: str, time: Optional[float] = None):
        self.time = time
        if time is not None:
            message = f"{message} (t={time:.4f} d)"
        super().__init__(message)


class NonFiniteDerivativeError(LakeModelError):
    """NaN or infinity in a derivative component"""

    def __init__(self, component: str, value: float, time: Optional[float] = None):
        self.component = component
        self.value = value
        super().__init__(f"non-finite derivative for '{component}': {value}", time)


class DivergenceError(LakeModelError):
    """Non-finite state after an integration step"""


class StiffnessError(LakeModelError):
    """State component driven below the clamp tolerance; retry with a smaller dt"""

    def __init__(self, component: str, value: float, time: Optional[float] = None):
        self.component = component
        self.value = value
        super().__init__(
            f"'{component}' went negative ({value:.3e}); the step is too stiff, try a smaller dt",
            time,
        )


class SensitivityAbortError(LakeModelError):
    """Too many failed model evaluations in a Sobol design"""

    def __init__(self, failed_rows: Sequence[int], budget: int):
        self.failed_rows = list(failed_rows)
        self.budget = budget
        shown = ", ".join(str(r) for r in self.failed_rows[:20])
        more = "..." if len(self.failed_rows) > 20 else ""
        super().__init__(
            f"{len(self.failed_rows)} design rows failed (budget {budget}): {shown}{more}"
        )


class OutputWriteError(RuntimeError):
    """Failure while writing result files"""
