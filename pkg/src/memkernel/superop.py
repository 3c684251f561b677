"""Superoperators on d x d operators and the vectorization convention.

Operators are vectorized by column stacking throughout the package::

    A = [[a, b],
         [c, d]]   ->   vec(A) = (a, c, b, d)

so that ``vec(A X B) = (B.T kron A) vec(X)``. Every reshuffle between the
superoperator and Choi pictures relies on this single convention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stack a matrix into a 1-d vector."""
    return np.asarray(matrix).reshape(-1, order="F")


def unvec(vector: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec` for square matrices."""
    vector = np.asarray(vector).reshape(-1)
    if dim is None:
        dim = int(round(np.sqrt(vector.size)))
    return vector.reshape((dim, dim), order="F")


def left_right(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Matrix of X -> left @ X @ right."""
    return np.kron(np.asarray(right).T, np.asarray(left))


def apply_on_first(sop: np.ndarray, rho: np.ndarray, d: int) -> np.ndarray:
    """Apply a d^2 x d^2 superoperator to the first factor of a d*D matrix."""
    big = rho.shape[0] // d
    s4 = sop.reshape(d, d, d, d)  # [row', row, col', col]
    r4 = rho.reshape(d, big, d, big)
    return np.einsum("YyXx,xeXf->yeYf", s4, r4).reshape(rho.shape)


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Linear map on ``dim x dim`` operators, stored as a dim^2 x dim^2 matrix."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.dim**2, self.dim**2):
            raise DomainError(
                f"superoperator on dim {self.dim} needs shape "
                f"{(self.dim**2, self.dim**2)}, got {m.shape}"
            )
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, dim: int) -> "Superoperator":
        return cls(dim, np.eye(dim**2, dtype=complex))

    @classmethod
    def from_kraus(cls, kraus: list[np.ndarray]) -> "Superoperator":
        dim = kraus[0].shape[0]
        return cls(dim, sum(left_right(k, k.conj().T) for k in kraus))

    @classmethod
    def left(cls, op: np.ndarray) -> "Superoperator":
        """X -> op @ X."""
        op = np.asarray(op)
        return cls(op.shape[0], left_right(op, np.eye(op.shape[0])))

    @classmethod
    def conjugation(cls, op: np.ndarray) -> "Superoperator":
        """X -> op @ X @ op^dagger."""
        op = np.asarray(op)
        return cls(op.shape[0], left_right(op, op.conj().T))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.dim)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.apply(rho)

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        if other.dim != self.dim:
            raise DomainError("cannot compose superoperators of different dims")
        return Superoperator(self.dim, self.matrix @ other.matrix)

    def dual_effect(self) -> np.ndarray:
        """Effect E with tr[self(X)] = tr[E X]."""
        row = vec(np.eye(self.dim)) @ self.matrix
        return unvec(row, self.dim).T

    def trace_defect(self) -> float:
        """max |tr[self(X)] - tr[X]| over matrix units; zero for a TP map."""
        row = vec(np.eye(self.dim)) @ self.matrix
        return float(np.max(np.abs(row - vec(np.eye(self.dim)))))

    def is_trace_preserving(self, atol: float = 1e-10) -> bool:
        return self.trace_defect() <= atol
