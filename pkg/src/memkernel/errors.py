"""Exception types shared across the package."""


class MemKernelError(Exception):
    """Base class for package errors."""


class DomainError(MemKernelError, ValueError):
    """Argument outside the domain of an operation (bad shape, range, label)."""


class SizeError(MemKernelError):
    """A dense object would exceed the configured memory or leg budget."""


class NumericError(MemKernelError, ArithmeticError):
    """A numerical procedure failed to converge or produced non-finite values."""
