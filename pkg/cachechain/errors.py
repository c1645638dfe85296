"""Domain errors. Each carries the CLI exit code it maps to."""

EXIT_USAGE = 1
EXIT_ACCEPTANCE = 2
EXIT_INTERNAL = 3


class CacheChainError(Exception):
    exit_code = EXIT_USAGE

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(CacheChainError):
    pass


class StateSpaceTooLarge(CacheChainError):
    pass


class InvalidState(CacheChainError):
    pass


class ContentAlreadyCached(CacheChainError):
    pass


class TruncationError(CacheChainError):
    pass


class InfeasibleTarget(CacheChainError):
    exit_code = EXIT_INTERNAL


class LimitInfeasible(CacheChainError):
    exit_code = EXIT_INTERNAL


class DisconnectedSupport(CacheChainError):
    exit_code = EXIT_INTERNAL

    def __init__(self, detail: str, unreachable: list[tuple[int, ...]]):
        super().__init__(detail)
        self.unreachable = unreachable


class InconsistentPolicy(CacheChainError):
    exit_code = EXIT_INTERNAL


class AcceptanceFailure(CacheChainError):
    exit_code = EXIT_ACCEPTANCE

    def __init__(self, detail: str, violations: list[str]):
        super().__init__(detail)
        self.violations = violations
