from __future__ import annotations


class WarpKitError(Exception):
    """Base exception for warpkit errors."""

    exit_code: int = 1


class ConfigError(WarpKitError):
    """Exception for invalid configuration values or schema mismatches."""

    exit_code = 2


class ParamError(ConfigError):
    """Exception for invalid operation or scene parameters."""


class WiringError(ConfigError):
    """Exception for adapters that do not fit the model they are attached to."""


class InputError(ConfigError):
    """Exception for unusable inputs such as an empty reference set."""


class NumericError(WarpKitError):
    """Exception for non-finite values in tensors, losses or latents."""

    exit_code = 3

    def __init__(self, message: str, *, step: int | None = None, layer: int | None = None) -> None:
        where = []
        if step is not None:
            where.append(f"step {step}")
        if layer is not None:
            where.append(f"layer {layer}")
        if where:
            message = f"{message} (at {', '.join(where)})"
        super().__init__(message)
        self.step = step
        self.layer = layer


class StorageError(WarpKitError):
    """Exception for file-related errors."""

    exit_code = 4


class InvariantError(WarpKitError):
    """Base for internal invariant failures, exit code 1.

    Raised when internal shapes or contracts do not line up. Problems a user can
    fix through the config or the inputs raise :class:`ConfigError` instead.
    """

    exit_code = 1


class ShapeError(InvariantError):
    """Exception for dimension mismatches."""


class DomainError(InvariantError):
    """Exception for arguments outside an operation's domain."""


class ContractError(InvariantError):
    """Exception for misuse of the gradient tape."""


class InjectionError(InvariantError):
    """Exception for invalid attention overrides."""


class TraceError(InvariantError):
    """Exception for reading descriptors from a pass that captured no trace."""


class BranchError(InvariantError):
    """Exception for generation/reference branches that do not line up."""


class MetricError(InvariantError):
    """Exception for metrics that are undefined on the given input."""


class UsageError(InvariantError):
    """Exception for calls that mix up flow directions or similar contracts."""
