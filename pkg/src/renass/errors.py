class RenassError(Exception):
    pass


class UnknownAgentError(RenassError, KeyError):
    def __str__(self) -> str:
        return f"unknown agent {self.args[0]}"


class UnknownServiceError(RenassError, KeyError):
    def __str__(self) -> str:
        return f"unknown service {self.args[0]}"


class RuleMissingError(RenassError, KeyError):
    def __str__(self) -> str:
        return f"no reconfiguration rule for {self.args[0]}"


class ValidationError(RenassError, ValueError):
    """Raised when a model fails validation; ``report`` lists the violations."""

    def __init__(self, report):
        self.report = list(report)
        lines = "\n".join(f"  {v}" for v in self.report)
        super().__init__(f"invalid model ({len(self.report)} violation(s)):\n{lines}")


class ParseError(RenassError, ValueError):
    pass


class HorizonError(RenassError, RuntimeError):
    pass


class UndefinedMetricError(RenassError, ValueError):
    pass


class ShapeError(RenassError, ValueError):
    pass


class UnsupportedConfigurationError(RenassError, ValueError):
    pass


class DomainSizeError(RenassError, ValueError):
    pass


class GenerationError(RenassError, ValueError):
    pass
