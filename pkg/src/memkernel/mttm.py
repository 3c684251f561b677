"""Multi-time transfer tensors.

Two families of objects live here.

*Full dynamical tensors* E_{n:k} (legs ``[S_n, R_{n-1}, S_{n-1}, ..., R_k]``)
and their generalized transfer tensors T_{n:k}. Translation invariance lets
us store both by duration ``D = n - k`` with canonical labels k = 0. The leg
count grows linearly with D, so these are for validation-scale durations.

*Projected three-time objects* E_{n,m,k} and T_{n,m,k} with legs
``[S_n, R_m, S_m, R_k]``, keyed by the gap pair ``(n - m, m - k)`` and stored
with k = 0. Together with the two-time maps and kernels they obey a closed
relation, which is what long-time correlation functions are propagated with.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError
from .superop import Superoperator, unvec, vec
from .tensornet import (
    IN, MAX_LEGS, OUT, LegTensor, TensorSet, check_leg_budget, choi_to_superop, contract,
    operation_choi, partial_trace, star_contract, superop_to_choi,
)
from .ttm import KernelFamily, MapFamily, error_bound, find_steady_state, reconstruct_kernels


def worker_count() -> int:
    """Thread cap from MEMKERNEL_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("MEMKERNEL_THREADS", "1")))
    except ValueError:
        return 1


# -- full multi-time tensors ---------------------------------------------------
def canonical_labels(duration: int) -> list[tuple[int, str]]:
    labels = []
    for t in range(duration, 0, -1):
        labels += [(t, OUT), (t - 1, IN)]
    return labels


def _check_family(family: dict, upto: int, what: str) -> None:
    missing = [D for D in range(1, upto + 1) if D not in family]
    if missing:
        raise DomainError(f"{what} missing durations {missing}")


def causality_defect(family: dict) -> float:
    """max_D || tr_{S_D R_{D-1}} E_D - d E_{D-1} ||_max over the family."""
    worst = 0.0
    for D in sorted(family):
        if D - 1 not in family:
            continue
        e = family[D]
        d = e.legs[0].dim
        marg = partial_trace(e, [(D, OUT), (D - 1, IN)])
        worst = max(worst, float(np.max(np.abs(marg.matrix - d * family[D - 1].matrix))))
    return worst


def early_marginal(e: LegTensor, j: int) -> LegTensor:
    """E_{j:k} recovered from E_{n:k} by tracing every leg after S_j.

    Causality makes tr over (S_n, R_{n-1}, ..., S_{j+1}, R_j) equal to
    d^{n-j} E_{j:k}.
    """
    d = e.legs[0].dim
    drop = [lab for lab in e.labels if (lab[1] == OUT and lab[0] > j) or (lab[1] == IN and lab[0] >= j)]
    n_pairs = len(drop) // 2
    return partial_trace(e, drop) * (1.0 / d**n_pairs)


def project_P(e: LegTensor, j: int, later: LegTensor) -> LegTensor:
    """P_j E_{n:k} = E_{n:j} (x) E_{j:k}.

    ``e`` is E_{n:k} with its actual labels and ``later`` is E_{n:j}, which by
    translation invariance is the duration-(n-j) member of the family; the
    early factor is the causal marginal of ``e`` itself. Q_j is ``e`` minus
    the result.
    """
    outs = sorted(t for t, r in e.labels if r == OUT)
    ins = sorted(t for t, r in e.labels if r == IN)
    n, k = outs[-1], ins[0]
    if not k < j < n:
        raise DomainError(f"projection time {j} outside ({k}, {n})")
    early = early_marginal(e, j)
    late = later.shift(j - min(t for t, r in later.labels if r == IN))
    return (late @ early).permute(e.labels)


def general_kernels(family: dict, l: int | None = None) -> dict[int, LegTensor]:
    """T_{n:k} = E_{n:k} - sum_{j=k+1}^{n-1} T_{n:j} (x) E_{j:k}, by duration."""
    l = max(family) if l is None else l
    _check_family(family, l, "dynamical tensors")
    T: dict[int, LegTensor] = {}
    for D in range(1, l + 1):
        acc = family[D].matrix.copy()
        for jp in range(1, D):
            acc -= np.kron(T[D - jp].matrix, family[jp].matrix)
        T[D] = LegTensor(family[D].legs, acc)
    return T


def truncated_propagate(kernels: dict, seeds: dict, l: int, horizon: int,
                        max_legs: int = MAX_LEGS) -> dict[int, LegTensor]:
    """E^(l)_{n:0} = sum_{k=1}^{l} T_{n:n-k} (x) E^(l)_{n-k:0} for n > l.

    Seeds (exact tensors) are used for durations <= l.
    """
    check_leg_budget(2 * horizon, max_legs)
    _check_family(kernels, l, "kernels")
    _check_family(seeds, min(l, horizon), "seeds")
    out = {D: seeds[D] for D in range(1, min(l, horizon) + 1)}
    for n in range(l + 1, horizon + 1):
        acc = None
        for k in range(1, l + 1):
            term = np.kron(kernels[k].matrix, out[n - k].matrix) if n - k > 0 else kernels[k].matrix
            acc = term if acc is None else acc + term
        d = kernels[1].legs[0].dim
        legs = [(t, r, d) for t, r in canonical_labels(n)]
        out[n] = LegTensor(tuple(legs), acc)
    return out


def kernel_norms(kernels: dict) -> np.ndarray:
    """||T_{D:0}||_F for D = 1..max."""
    _check_family(kernels, max(kernels), "kernels")
    return np.array([np.linalg.norm(kernels[D].matrix) for D in range(1, max(kernels) + 1)])


def multitime_error_bound(kernels: dict, n: int, l: int) -> float:
    """The two-time truncation bound evaluated with generalized kernel norms."""
    return error_bound(kernel_norms(kernels), n, l)


def project(e: LegTensor, keep: set[int] = frozenset()) -> LegTensor:
    """Close every intermediate output-input pair (R_j, S_j), j not in ``keep``.

    Each closed pair is contracted with Psi, i.e. the identity operation is
    inserted at that time.
    """
    out = e
    for t in sorted({t for t, r in e.labels if r == OUT} & {t for t, r in e.labels if r == IN}):
        if t in keep:
            continue
        d = e.legs[e.index((t, OUT))].dim
        out = contract(out, operation_choi(Superoperator.identity(d), t))
    return out


def project_two_time(e: LegTensor) -> LegTensor:
    """E_{n,k} from E_{n:k}, or Upsilon_{n,0} from Upsilon_{n:0} (keeps R_0 S_0)."""
    return project(e, keep={min(t for t, _ in e.labels)})


def two_time_kernels(e2: dict) -> dict[int, LegTensor]:
    """T_{n,m} = E_{n,m} - sum_{k=m+1}^{n-1} T_{n,k} * E_{k,m} in the Choi picture.

    ``e2`` maps duration n to E_{n,0} with legs [S_n, R_0].
    """
    _check_family(e2, max(e2), "two-time maps")
    T: dict[int, LegTensor] = {}
    for n in range(1, max(e2) + 1):
        acc = e2[n]
        for k in range(1, n):
            acc = acc - star_contract(T[n - k].shift(k), e2[k])
        T[n] = acc
    return T


# -- three-time objects ------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ThreeTimeFamily:
    """Three-time tensors keyed by (n - m, m - k), labelled with k = 0.

    ``kind`` is ``"maps"`` (E_{n,m,k}), ``"kernels"`` (T_{n,m,k}) or
    ``"regression"`` (T^reg_{n,m,k}); ``cutoff`` is the largest total
    duration n - k held.
    """

    dt: float
    entries: dict
    kind: str = "maps"

    @property
    def cutoff(self) -> int:
        return max(a + b for a, b in self.entries)

    @property
    def d(self) -> int:
        return next(iter(self.entries.values())).legs[0].dim

    def __getitem__(self, key: tuple[int, int]) -> LegTensor:
        return self.entries[key]

    def truncated(self, cutoff: int) -> "ThreeTimeFamily":
        return ThreeTimeFamily(self.dt, {k: v for k, v in self.entries.items() if sum(k) <= cutoff},
                               self.kind)

    def to_tensor_set(self, **meta) -> TensorSet:
        head = {"kind": f"three_time_{self.kind}", "dt": self.dt, "d": self.d,
                "cutoff": self.cutoff, "count": len(self.entries)}
        return TensorSet(self.entries, {**head, **meta})

    @classmethod
    def from_tensor_set(cls, ts: TensorSet) -> "ThreeTimeFamily":
        kind = str(ts.meta.get("kind", "three_time_maps")).removeprefix("three_time_")
        return cls(float(ts.meta["dt"]), dict(ts.items()), kind)


def three_time_tensors(oracle, max_total: int) -> ThreeTimeFamily:
    """Oracle E_{n,m,k} for every gap pair with n - k <= max_total."""
    return ThreeTimeFamily(oracle.dt, oracle.three_time_family(max_total), "maps")


def _choi_family(maps: MapFamily | KernelFamily, upto: int) -> dict[int, LegTensor]:
    arr = maps.maps if isinstance(maps, MapFamily) else maps.kernels
    if arr.shape[0] < upto:
        raise DomainError(f"two-time family covers {arr.shape[0]} steps, need {upto}")
    return {n: superop_to_choi(arr[n - 1], out_t=n, in_t=0) for n in range(1, upto + 1)}


def three_time_kernels(e3: ThreeTimeFamily, e2: MapFamily, t2: KernelFamily,
                       regression: bool = False) -> ThreeTimeFamily:
    """Transfer tensors of the closed three-time relation.

    T_{n,m,k} = E_{n,m,k} - sum_{j=k+1}^{m-1} T_{n,m,j} * E_{j,k}
                - T_{n,m} (x) E_{m,k} - sum_{j=m+1}^{n-1} T_{n,j} E_{j,m,k}

    With ``regression=True`` the first sum (memory carried across the
    inserted operation) is omitted, giving T^reg.
    """
    L = e3.cutoff
    E2 = _choi_family(e2, L)
    T2 = _choi_family(t2, L)
    missing = [(a, b) for a in range(1, L) for b in range(1, L - a + 1) if (a, b) not in e3.entries]
    if missing:
        raise DomainError(f"three-time tensors missing gap pairs {missing[:5]}...")
    T3: dict[tuple[int, int], LegTensor] = {}

    def one(a: int, b: int) -> LegTensor:
        n, m = a + b, b
        acc = e3[(a, b)].matrix.copy()
        if not regression:
            for j in range(1, m):
                # T_{n,m,j} has gaps (a, m - j); shift its k-label from 0 to j
                acc -= star_contract(T3[(a, m - j)].shift(j), E2[j]).matrix
        acc -= np.kron(T2[a].shift(m).matrix, E2[m].matrix)
        for j in range(m + 1, n):
            acc -= star_contract(T2[n - j].shift(j), e3[(j - m, b)]).matrix
        return LegTensor(e3[(a, b)].legs, acc)

    workers = worker_count()
    # pairs sharing b depend only on smaller b, so each level is independent
    for b in range(1, L):
        gaps = range(1, L - b + 1)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                level = list(pool.map(lambda a: one(a, b), gaps))
        else:
            level = [one(a, b) for a in gaps]
        T3.update({(a, b): t for a, t in zip(gaps, level)})
    return ThreeTimeFamily(e3.dt, T3, "regression" if regression else "kernels")


def rebuild_three_time(t3: ThreeTimeFamily, e2: MapFamily, t2: KernelFamily) -> ThreeTimeFamily:
    """Inverse of :func:`three_time_kernels` (full kernels): E_{n,m,k} from kernels."""
    if t3.kind != "kernels":
        raise DomainError("rebuild needs full three-time kernels")
    L = t3.cutoff
    E2 = _choi_family(e2, L)
    T2 = _choi_family(t2, L)
    E3: dict[tuple[int, int], LegTensor] = {}
    for a in range(1, L):
        for b in range(1, L - a + 1):
            n, m = a + b, b
            acc = t3[(a, b)].matrix.copy()
            for j in range(1, m):
                acc += star_contract(t3[(a, m - j)].shift(j), E2[j]).matrix
            acc += np.kron(T2[a].shift(m).matrix, E2[m].matrix)
            for j in range(m + 1, n):
                acc += star_contract(T2[n - j].shift(j), E3[(j - m, b)]).matrix
            E3[(a, b)] = LegTensor(t3[(a, b)].legs, acc)
    return ThreeTimeFamily(t3.dt, E3, "maps")


def regression_kernels(e3: ThreeTimeFamily, e2: MapFamily, t2: KernelFamily) -> ThreeTimeFamily:
    """T^reg: the closed relation without memory across the operation."""
    return three_time_kernels(e3, e2, t2, regression=True)


def insertion_superops(t3: ThreeTimeFamily, op: Superoperator) -> dict[tuple[int, int], np.ndarray]:
    """Close the (R_m, S_m) pair of every tensor with ``op``; superoperators R_0 -> S_n."""
    out = {}
    for (a, b), t in t3.entries.items():
        two = contract(t, operation_choi(op, b))
        out[(a, b)] = choi_to_superop(two).matrix
    return out


# -- correlation propagation ---------------------------------------------------
def propagate_correlation(t2: KernelFamily, t3: ThreeTimeFamily, history, op: Superoperator,
                          readout: np.ndarray, n_after: int,
                          l2: int | None = None, l3: int | None = None) -> np.ndarray:
    """tr[A X_{m+a}] for a = 0..n_after after inserting ``op`` at time m.

    ``history`` holds rho_0 .. rho_m (the operation acts on rho_m). The
    conditional operator after the insertion is propagated with

        X_n = sum_j K_{n-m, m-j}[op] rho_j + T_{n-m}(op rho_m)
              + sum_{j=m+1}^{n-1} T_{n-j} X_j,

    where K[op] closes the three-time kernels with ``op``. For full kernels
    j runs over m-1 ... max(0, n - l3); for regression kernels only the
    origin j = 0 contributes (and only while n <= l3), so once m exceeds the
    memory cutoff nothing is carried across the operation.
    """
    d = t2.d
    l2 = t2.cutoff if l2 is None else l2
    l3 = t3.cutoff if l3 is None else l3
    hist = [vec(np.asarray(r)) for r in history]
    m = len(hist) - 1
    K = insertion_superops(t3.truncated(l3), op)
    T = t2.kernels
    X = {m: op.matrix @ hist[m]}
    out = [complex(np.trace(readout @ unvec(X[m], d)))]
    for a in range(1, n_after + 1):
        n = m + a
        acc = np.zeros(d * d, dtype=complex)
        if t3.kind == "regression":
            if (a, m) in K:
                acc += K[(a, m)] @ hist[0]
        else:
            for j in range(max(0, n - l3), m):
                acc += K[(a, m - j)] @ hist[j]
        for j in range(max(m, n - l2), n):
            acc += T[n - j - 1] @ X[j]
        X[n] = acc
        out.append(complex(np.trace(readout @ unvec(acc, d))))
    values = np.array(out)
    if not np.all(np.isfinite(values)):
        raise NumericError("correlation propagation diverged")
    return values


@dataclass(frozen=True)
class Correlation:
    taus: np.ndarray
    values: np.ndarray
    rho_ss: np.ndarray
    steady_steps: int


def steady_state_correlation(t2: KernelFamily, t3: ThreeTimeFamily, insert_op: Superoperator,
                             tau_max: float, readout: np.ndarray | None = None,
                             rho0: np.ndarray | None = None,
                             tol: float = 1e-9, consecutive: int = 10,
                             max_steps: int = 200_000) -> Correlation:
    """Steady-state two-point function g(tau) = tr[A e^{tau L}(op Pi_ss)].

    The system is driven into its steady state with the two-time kernels,
    the operation is inserted, and the conditional state is propagated with
    two- and three-time kernels. The pre-insertion history is the
    (stationary) steady state itself, placed far enough in the past that
    regression kernels carry no memory across the insertion. ``readout``
    defaults to the identity (so g is then a trace).
    """
    d = t2.d
    rho0 = np.eye(d) / d if rho0 is None else rho0
    readout = np.eye(d) if readout is None else np.asarray(readout)
    ss = find_steady_state(t2, rho0, tol=tol, consecutive=consecutive, max_steps=max_steps)
    n_tau = int(round(tau_max / t2.dt))
    depth = max(t3.cutoff, t2.cutoff) + 1
    history = [ss.rho] * depth
    if t3.kind == "regression":
        history = [ss.rho] * (depth + t3.cutoff)
    values = propagate_correlation(t2, t3, history, insert_op, readout, n_tau)
    return Correlation(np.arange(n_tau + 1) * t2.dt, values, ss.rho, ss.steps)


@dataclass(frozen=True)
class Families:
    """Everything needed to propagate one- and two-point quantities."""

    maps: MapFamily
    kernels: KernelFamily
    three_time: ThreeTimeFamily
    three_time_kernels: ThreeTimeFamily


def families_from_oracle(oracle, cutoff: int, regression: bool = False) -> Families:
    """Maps, kernels and three-time kernels up to total duration ``cutoff``."""
    if cutoff < 1:
        raise DomainError("memory cutoff must be >= 1")
    maps = MapFamily(oracle.dt, oracle.maps(cutoff))
    kernels = reconstruct_kernels(maps)
    if cutoff < 2:
        raise DomainError("three-time kernels need a cutoff of at least 2 steps")
    e3 = three_time_tensors(oracle, cutoff)
    return Families(maps, kernels, e3, three_time_kernels(e3, maps, kernels, regression))
