"""Labeled-leg Choi tensors.

A :class:`LegTensor` is a dense matrix over an ordered list of system copies
("legs"). Each leg is tagged with the timestep it belongs to and whether it
is an *output* of the process (``S_t``, role ``"out"``) or an *input* into it
(``R_t``, role ``"in"``). Rows are kets, columns are bras, and the first leg
is the most significant index, matching ``np.kron`` ordering.

Choi convention: for a map ``Phi`` with output leg ``S`` and input leg ``R``,

    C = sum_ab Phi(|a><b|)_S (x) |a><b|_R,   Phi(rho) = tr_R[(1 (x) rho^T) C].

Link (star) contractions feed the ket/bra indices of an output leg directly
into the ket/bra indices of an input leg. This is the contraction
``tr_{RS}[Psi_{RS} (A (x) B)]`` with no partial transpose; it reproduces
ordinary composition of maps (checked in the test suite).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, SizeError
from .superop import Superoperator

IN = "in"
OUT = "out"

#: default cap on the number of legs of a dense tensor
MAX_LEGS = 12


class Leg(NamedTuple):
    timestep: int
    role: str
    dim: int

    @property
    def label(self) -> tuple[int, str]:
        return (self.timestep, self.role)


def _leg(t: int, role: str, dim: int) -> Leg:
    if role not in (IN, OUT):
        raise DomainError(f"leg role must be 'in' or 'out', got {role!r}")
    return Leg(int(t), role, int(dim))


@dataclass(frozen=True, eq=False)
class LegTensor:
    legs: tuple[Leg, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        legs = tuple(_leg(*leg) for leg in self.legs)
        labels = [leg.label for leg in legs]
        if len(set(labels)) != len(labels):
            raise DomainError(f"duplicate leg labels in {labels}")
        side = int(np.prod([leg.dim for leg in legs], dtype=np.int64))
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (side, side):
            raise DomainError(f"matrix shape {m.shape} does not match legs (side {side})")
        m.flags.writeable = False
        object.__setattr__(self, "legs", legs)
        object.__setattr__(self, "matrix", m)

    # -- views ---------------------------------------------------------
    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(leg.dim for leg in self.legs)

    @property
    def labels(self) -> tuple[tuple[int, str], ...]:
        return tuple(leg.label for leg in self.legs)

    def index(self, label: tuple[int, str]) -> int:
        try:
            return self.labels.index(tuple(label))
        except ValueError:
            raise DomainError(f"no leg {label} in {self.labels}") from None

    def tensor(self) -> np.ndarray:
        """Matrix reshaped to ``dims + dims`` (ket axes, then bra axes)."""
        return self.matrix.reshape(self.dims + self.dims)

    @classmethod
    def from_tensor(cls, legs: Sequence, tensor: np.ndarray) -> "LegTensor":
        legs = tuple(_leg(*leg) for leg in legs)
        side = int(np.prod([leg.dim for leg in legs], dtype=np.int64))
        return cls(legs, np.asarray(tensor).reshape(side, side))

    @classmethod
    def scalar(cls, value: complex = 1.0) -> "LegTensor":
        return cls((), np.array([[value]], dtype=complex))

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0))

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    # -- relabeling ----------------------------------------------------
    def shift(self, delta: int) -> "LegTensor":
        legs = tuple(Leg(leg.timestep + delta, leg.role, leg.dim) for leg in self.legs)
        return LegTensor(legs, self.matrix)

    def relabel(self, mapping: dict) -> "LegTensor":
        """Rename legs; ``mapping`` sends old labels to new labels."""
        legs = []
        for leg in self.legs:
            t, role = mapping.get(leg.label, leg.label)
            legs.append(Leg(t, role, leg.dim))
        return LegTensor(tuple(legs), self.matrix)

    def permute(self, labels: Sequence[tuple[int, str]]) -> "LegTensor":
        """Reorder legs to the given label order."""
        order = [self.index(lab) for lab in labels]
        if sorted(order) != list(range(len(self.legs))):
            raise DomainError("permutation must name every leg exactly once")
        n = len(order)
        t = self.tensor().transpose(order + [n + i for i in order])
        return LegTensor.from_tensor([self.legs[i] for i in order], t)

    def __add__(self, other: "LegTensor") -> "LegTensor":
        other = _aligned(other, self)
        return LegTensor(self.legs, self.matrix + other.matrix)

    def __sub__(self, other: "LegTensor") -> "LegTensor":
        other = _aligned(other, self)
        return LegTensor(self.legs, self.matrix - other.matrix)

    def __mul__(self, factor: complex) -> "LegTensor":
        return LegTensor(self.legs, self.matrix * factor)

    __rmul__ = __mul__

    def __matmul__(self, other: "LegTensor") -> "LegTensor":
        return tensor_product(self, other)

    def __repr__(self) -> str:
        legs = ", ".join(f"{'S' if r == OUT else 'R'}{t}" for t, r, _ in self.legs)
        return f"LegTensor([{legs}], side={self.matrix.shape[0]})"


def _aligned(other: LegTensor, ref: LegTensor) -> LegTensor:
    if other.labels == ref.labels:
        if other.dims != ref.dims:
            raise DomainError("leg dimensions differ")
        return other
    if set(other.labels) != set(ref.labels):
        raise DomainError(f"leg sets differ: {ref.labels} vs {other.labels}")
    return other.permute(ref.labels)


def check_leg_budget(num_legs: int, max_legs: int = MAX_LEGS) -> None:
    if num_legs > max_legs:
        raise SizeError(
            f"{num_legs} legs exceed the leg budget of {max_legs}; "
            "use projected two-/three-time families for long times"
        )


def max_entangled(d: int, out_t: int = 1, in_t: int = 0) -> LegTensor:
    """Unnormalized maximally entangled pair Psi = sum_ab |aa><bb| on (S_out, R_in)."""
    if d < 2:
        raise DomainError("Psi needs d >= 2")
    v = np.eye(d, dtype=complex).reshape(-1)
    return LegTensor((Leg(out_t, OUT, d), Leg(in_t, IN, d)), np.outer(v, v))


def identity_leg(d: int, t: int) -> LegTensor:
    """Identity operator on a single output leg (the trivial final effect)."""
    return LegTensor((Leg(t, OUT, d),), np.eye(d, dtype=complex))


def tensor_product(a: LegTensor, b: LegTensor) -> LegTensor:
    clash = set(a.labels) & set(b.labels)
    if clash:
        raise DomainError(f"leg label collision: {sorted(clash)}")
    return LegTensor(a.legs + b.legs, np.kron(a.matrix, b.matrix))


def partial_trace(a: LegTensor, labels: Iterable[tuple[int, str]]) -> LegTensor:
    """Trace out the named legs; remaining legs keep their order."""
    drop = {a.index(tuple(lab)) for lab in labels}
    n = len(a.legs)
    ket = list(range(n))
    bra = [i if i in drop else n + i for i in range(n)]
    keep = [i for i in range(n) if i not in drop]
    out = np.einsum(a.tensor(), ket + bra, keep + [n + i for i in keep])
    return LegTensor.from_tensor([a.legs[i] for i in keep], out)


def contract(a: LegTensor, o: LegTensor) -> LegTensor:
    """Partial spatio-temporal Born rule: tr_{legs of o}[(o^T (x) 1) a].

    ``o`` lives on a subset of ``a``'s legs; the result lives on the rest.
    """
    n = len(a.legs)
    pos = [a.index(lab) for lab in o.labels]
    for i, leg in zip(pos, o.legs):
        if a.legs[i].dim != leg.dim:
            raise DomainError(f"dimension mismatch on leg {leg.label}")
    keep = [i for i in range(n) if i not in pos]
    o_ids = pos + [n + i for i in pos]
    out = np.einsum(a.tensor(), list(range(2 * n)), o.tensor(), o_ids,
                    keep + [n + i for i in keep])
    return LegTensor.from_tensor([a.legs[i] for i in keep], out)


def born_rule(upsilon: LegTensor, o: LegTensor) -> complex:
    """tr[O^T Upsilon]; O must cover exactly the legs of Upsilon.

    Returns a complex number so that non-positive insertions (W-functions,
    ladder operators) are supported; for physical measurement sequences the
    imaginary part vanishes.
    """
    if set(o.labels) != set(upsilon.labels):
        raise DomainError(f"leg mismatch: {upsilon.labels} vs {o.labels}")
    o = _aligned(o, upsilon)
    return complex(np.sum(o.matrix * upsilon.matrix))


def star_contract(a: LegTensor, b: LegTensor, boundary: int | None = None) -> LegTensor:
    """Link ``a``'s input leg ``R_t`` to ``b``'s output leg ``S_t``.

    Result legs: ``a``'s legs without ``R_t`` followed by ``b``'s legs
    without ``S_t``. For two-leg Choi states this is Choi(A o B).
    """
    if boundary is None:
        common = {t for t, r in a.labels if r == IN} & {t for t, r in b.labels if r == OUT}
        if len(common) != 1:
            raise DomainError(f"ambiguous or missing star boundary: {sorted(common)}")
        boundary = common.pop()
    ia = a.index((boundary, IN))
    ib = b.index((boundary, OUT))
    if a.legs[ia].dim != b.legs[ib].dim:
        raise DomainError("boundary legs have different dimensions")
    na, nb = len(a.legs), len(b.legs)
    a_ket = list(range(na))
    a_bra = list(range(na, 2 * na))
    b_ket = list(range(2 * na, 2 * na + nb))
    b_bra = list(range(2 * na + nb, 2 * na + 2 * nb))
    b_ket[ib] = a_ket[ia]
    b_bra[ib] = a_bra[ia]
    keep_a = [i for i in range(na) if i != ia]
    keep_b = [i for i in range(nb) if i != ib]
    legs = [a.legs[i] for i in keep_a] + [b.legs[i] for i in keep_b]
    labels = [leg.label for leg in legs]
    if len(set(labels)) != len(labels):
        raise DomainError(f"star contraction produces duplicate legs {labels}")
    out_ids = ([a_ket[i] for i in keep_a] + [b_ket[i] for i in keep_b]
               + [a_bra[i] for i in keep_a] + [b_bra[i] for i in keep_b])
    out = np.einsum(a.tensor(), a_ket + a_bra, b.tensor(), b_ket + b_bra, out_ids)
    return LegTensor.from_tensor(legs, out)


# -- Choi <-> superoperator ------------------------------------------------
def choi_to_superop(a: LegTensor) -> Superoperator:
    """Reshuffle a one-input one-output Choi state into a superoperator."""
    outs = [leg for leg in a.legs if leg.role == OUT]
    ins = [leg for leg in a.legs if leg.role == IN]
    if len(outs) != 1 or len(ins) != 1:
        raise DomainError(f"need exactly one input and one output leg, got {a.labels}")
    c = a.permute([outs[0].label, ins[0].label])
    d = outs[0].dim
    if ins[0].dim != d:
        raise DomainError("input and output dimensions differ")
    c4 = c.tensor()  # [s, r, s', r']
    return Superoperator(d, c4.transpose(2, 0, 3, 1).reshape(d * d, d * d))


def superop_to_choi(s: Superoperator | np.ndarray, out_t: int = 1, in_t: int = 0) -> LegTensor:
    """Choi state of a superoperator with legs ``[S_out_t, R_in_t]``."""
    m = s.matrix if isinstance(s, Superoperator) else np.asarray(s)
    d = int(round(np.sqrt(m.shape[0])))
    c4 = m.reshape(d, d, d, d).transpose(1, 3, 0, 2)
    return LegTensor.from_tensor([Leg(out_t, OUT, d), Leg(in_t, IN, d)], c4)


def operation_choi(op: Superoperator, t: int) -> LegTensor:
    """Choi state of an instantaneous operation at timestep t.

    The operation takes the process output ``S_t`` and returns into the
    process input ``R_t``; legs are ordered ``[R_t, S_t]``.
    """
    c = superop_to_choi(op, out_t=t, in_t=t)  # legs [(t, out)=op output, (t, in)=op input]
    d = op.dim
    return LegTensor.from_tensor([Leg(t, IN, d), Leg(t, OUT, d)], c.tensor())


def measurement_sequence(ops: dict, n: int, d: int, effect: np.ndarray | None = None) -> LegTensor:
    """Choi state O of a sequence of operations at timesteps 0..n-1.

    ``ops`` maps timestep -> :class:`Superoperator` (missing entries are the
    identity); ``effect`` is the final effect E at timestep n (default the
    identity), entering as E^T so that ``born_rule(Upsilon, O)`` equals
    tr[E O_{n-1}(... O_0(Pi_0))].
    """
    if effect is None:
        effect = np.eye(d)
    o = LegTensor((Leg(n, OUT, d),), np.asarray(effect).T)
    for t in range(n - 1, -1, -1):
        op = ops.get(t, Superoperator.identity(d))
        o = tensor_product(o, operation_choi(op, t))
    return o


# -- norms and entropies ---------------------------------------------------
def frobenius_norm(a: LegTensor | np.ndarray) -> float:
    m = a.matrix if isinstance(a, LegTensor) else np.asarray(a)
    return float(np.linalg.norm(m))


#: eigenvalue floor defining the numerical support in relative entropies
SUPPORT_FLOOR = 1e-12


def relative_entropy(a: LegTensor | np.ndarray, b: LegTensor | np.ndarray,
                     floor: float = SUPPORT_FLOOR, leak_tol: float = 1e-9) -> float:
    """Quantum relative entropy tr[A (ln A - ln B)] of PSD operators.

    Eigenvalues below ``floor`` are treated as zero. If A places more than
    ``leak_tol`` of weight outside the support of B the result is ``inf``.
    """
    if isinstance(a, LegTensor) and isinstance(b, LegTensor):
        b = _aligned(b, a)
    ma = a.matrix if isinstance(a, LegTensor) else np.asarray(a)
    mb = b.matrix if isinstance(b, LegTensor) else np.asarray(b)
    if ma.shape != mb.shape:
        raise DomainError("relative entropy needs operators of equal shape")
    wa, va = np.linalg.eigh(0.5 * (ma + ma.conj().T))
    wb, vb = np.linalg.eigh(0.5 * (mb + mb.conj().T))
    wa = np.where(wa > floor, wa, 0.0)
    supp = wb > floor
    overlap = np.abs(va.conj().T @ vb) ** 2  # |<a_i|b_j>|^2
    leak = float(wa @ overlap[:, ~supp].sum(axis=1))
    if leak > leak_tol * max(1.0, float(wa.sum())):
        return float("inf")
    pos = wa > 0
    first = float(np.sum(wa[pos] * np.log(wa[pos])))
    second = float(wa @ (overlap[:, supp] @ np.log(wb[supp])))
    return first - second


# -- translation-invariant stores -----------------------------------------
@dataclass(frozen=True, eq=False)
class TensorSet:
    """Family of LegTensors keyed by duration tuples.

    Keys are tuples of positive integers: ``(n,)`` for two-time and
    multi-time durations, ``(n - m, m - k)`` for three-time objects.
    ``meta`` is a JSON-serializable manifest (dt, d, cutoffs, ...).
    """

    entries: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        entries = {tuple(int(x) for x in k): v for k, v in self.entries.items()}
        dims = {leg.dim for t in entries.values() for leg in t.legs}
        if len(dims) > 1:
            raise DomainError(f"entries mix leg dimensions {sorted(dims)}")
        object.__setattr__(self, "entries", dict(sorted(entries.items())))

    @property
    def d(self) -> int:
        first = next(iter(self.entries.values()))
        return first.legs[0].dim

    @property
    def horizon(self) -> int:
        return max((sum(k) for k in self.entries), default=0)

    def check_contiguous(self) -> None:
        """Single-duration keys must run 1..horizon without gaps."""
        singles = sorted(k[0] for k in self.entries if len(k) == 1)
        if singles != list(range(1, len(singles) + 1)):
            raise DomainError(f"durations are not contiguous from 1: {singles}")

    def __getitem__(self, key) -> LegTensor:
        if isinstance(key, int):
            key = (key,)
        return self.entries[tuple(key)]

    def __contains__(self, key) -> bool:
        if isinstance(key, int):
            key = (key,)
        return tuple(key) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self):
        return self.entries.keys()

    def items(self):
        return self.entries.items()
