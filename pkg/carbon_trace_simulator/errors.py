"""
Exception hierarchy shared by every module.

Each error carries the process exit code the CLI maps it to:
1 for bad input, 2 for numerical or modeling failures.
"""


class CarbonTraceError(Exception):
    exit_code = 2


class InputError(CarbonTraceError):
    exit_code = 1


class NetworkParseError(InputError):
    pass


class NetworkValidationError(InputError):
    """Raised with the full list of violations, never just the first one."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"  - [{v.kind}] {v.element}: {v.message}" for v in self.violations]
        super().__init__(
            f"network has {len(self.violations)} violation(s):\n" + "\n".join(lines)
        )

    def __reduce__(self):
        return (type(self), (self.violations,))


class UnknownGeneratorError(InputError):
    pass


class FlowFileError(InputError):
    pass


class InfeasiblePenetrationError(InputError):
    pass


class NumericalError(CarbonTraceError):
    pass


class ModelingError(CarbonTraceError):
    pass


class InfeasibleDispatchError(CarbonTraceError):
    pass


class StalePartitionError(CarbonTraceError):
    pass


class EquivalenceError(CarbonTraceError):
    pass


class ScenarioError(CarbonTraceError):
    """Wraps a failure of one Monte Carlo scenario with its index."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
        super().__init__(f"scenario {index} failed: {cause}")

    def __reduce__(self):
        return (type(self), (self.index, self.cause))
