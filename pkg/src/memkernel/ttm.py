"""Two-time transfer-tensor method.

Dynamical maps E_n and transfer tensors T_n are stored as superoperator
matrices (column-stacking convention) in arrays of shape ``(N, d^2, d^2)``,
index ``n - 1`` holding step ``n``; composition is a matrix product. The Choi
picture (:mod:`memkernel.tensornet`) is used only at the serialization
boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError
from .superop import unvec, vec
from .tensornet import TensorSet, choi_to_superop, superop_to_choi


def _stack(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=complex)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise DomainError(f"{name} must have shape (N, d^2, d^2)")
    d = int(round(np.sqrt(arr.shape[1])))
    if d * d != arr.shape[1]:
        raise DomainError(f"{name}: {arr.shape[1]} is not a square dimension")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MapFamily:
    """Dynamical maps E_1 .. E_N on a grid of spacing ``dt``."""

    dt: float
    maps: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "maps", _stack(self.maps, "maps"))

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.maps.shape[1])))

    @property
    def horizon(self) -> int:
        return self.maps.shape[0]

    def superop(self, n: int) -> np.ndarray:
        if n == 0:
            return np.eye(self.d**2, dtype=complex)
        return self.maps[n - 1]

    def apply(self, n: int, rho: np.ndarray) -> np.ndarray:
        return unvec(self.superop(n) @ vec(rho), self.d)

    def cptp_defects(self) -> tuple[float, float]:
        """Worst trace-preservation defect and most negative Choi eigenvalue."""
        one = vec(np.eye(self.d))
        tp = max(float(np.max(np.abs(one @ m - one))) for m in self.maps)
        neg = min(superop_to_choi(m).min_eigenvalue() for m in self.maps)
        return tp, neg

    def to_tensor_set(self, **meta) -> TensorSet:
        entries = {(n,): superop_to_choi(self.maps[n - 1], out_t=n, in_t=0)
                   for n in range(1, self.horizon + 1)}
        head = {"kind": "maps", "dt": self.dt, "d": self.d, "count": self.horizon}
        return TensorSet(entries, {**head, **meta})

    @classmethod
    def from_tensor_set(cls, ts: TensorSet) -> "MapFamily":
        ts.check_contiguous()
        return cls(float(ts.meta["dt"]), [choi_to_superop(ts[n]).matrix for n in range(1, len(ts) + 1)])


@dataclass(frozen=True, eq=False)
class KernelFamily:
    """Transfer tensors T_1 .. T_N; propagation uses the first ``cutoff``."""

    dt: float
    kernels: np.ndarray
    cutoff: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernels", _stack(self.kernels, "kernels"))
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", self.kernels.shape[0])
        if not 1 <= self.cutoff <= self.kernels.shape[0]:
            raise DomainError(f"cutoff {self.cutoff} outside 1..{self.kernels.shape[0]}")

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.kernels.shape[1])))

    @property
    def horizon(self) -> int:
        return self.kernels.shape[0]

    def with_cutoff(self, cutoff: int) -> "KernelFamily":
        """Same kernels, neglecting every T_n with n > cutoff."""
        return KernelFamily(self.dt, self.kernels, cutoff)

    def norms(self) -> np.ndarray:
        """Frobenius norms ||T_n||_F, n = 1..N (picture independent)."""
        return np.linalg.norm(self.kernels, axis=(1, 2))

    def to_tensor_set(self, **meta) -> TensorSet:
        entries = {(n,): superop_to_choi(self.kernels[n - 1], out_t=n, in_t=0)
                   for n in range(1, self.horizon + 1)}
        head = {"kind": "kernels", "dt": self.dt, "d": self.d, "cutoff": self.cutoff,
                "count": self.horizon}
        return TensorSet(entries, {**head, **meta})

    @classmethod
    def from_tensor_set(cls, ts: TensorSet) -> "KernelFamily":
        ts.check_contiguous()
        kernels = [choi_to_superop(ts[n]).matrix for n in range(1, len(ts) + 1)]
        return cls(float(ts.meta["dt"]), kernels, ts.meta.get("cutoff"))


def reconstruct_kernels(maps: MapFamily) -> KernelFamily:
    """T_n = E_n - sum_{j=1}^{n-1} T_j E_{n-j}."""
    E = maps.maps
    T = np.empty_like(E)
    for n in range(1, maps.horizon + 1):
        acc = E[n - 1].copy()
        for j in range(1, n):
            acc -= T[j - 1] @ E[n - j - 1]
        T[n - 1] = acc
    return KernelFamily(maps.dt, T)


def propagate(kernels: KernelFamily, horizon: int, seeds: MapFamily | None = None) -> MapFamily:
    """Truncated maps E^(l)_n = sum_{k=1}^{min(l, n)} T_k E^(l)_{n-k}, E_0 = 1.

    ``l`` is ``kernels.cutoff``. Seed maps, when given, are used verbatim for
    n <= l (they coincide with the recursion for exact kernels). With
    ``horizon <= l`` and seeds supplied the seeds are returned unchanged.
    """
    l = kernels.cutoff
    D2 = kernels.d**2
    if seeds is not None:
        if seeds.horizon < min(l, horizon):
            raise DomainError(f"seeds cover {seeds.horizon} steps, need {min(l, horizon)}")
        if horizon <= l:
            return MapFamily(seeds.dt, seeds.maps[:horizon])
    E = np.empty((horizon + 1, D2, D2), dtype=complex)
    E[0] = np.eye(D2)
    T = kernels.kernels
    for n in range(1, horizon + 1):
        if seeds is not None and n <= l:
            E[n] = seeds.maps[n - 1]
            continue
        acc = np.zeros((D2, D2), dtype=complex)
        for k in range(1, min(l, n) + 1):
            acc += T[k - 1] @ E[n - k]
        E[n] = acc
    if not np.all(np.isfinite(E)):
        raise NumericError("propagation produced non-finite maps")
    return MapFamily(kernels.dt, E[1:])


def error_bound(kernels: KernelFamily | np.ndarray, n: int, l: int) -> float:
    """sum_{k=l+1}^{n} (n + 1 - k) ||T_k||_F, bounding ||E_n - E^(l)_n||_F.

    ``kernels`` may also be a plain sequence of kernel norms (index k - 1).
    """
    norms = kernels.norms() if isinstance(kernels, KernelFamily) else np.asarray(kernels, float)
    if n > len(norms):
        raise DomainError(f"kernels known to {len(norms)} steps, bound needs {n}")
    return float(sum((n + 1 - k) * norms[k - 1] for k in range(l + 1, n + 1)))


def monotone_beyond(norms: np.ndarray, l: int, rtol: float = 0.0) -> bool:
    """Whether ||T_n|| is non-increasing for n >= l + 1 (TTM applicability)."""
    tail = np.asarray(norms)[l:]
    return bool(np.all(np.diff(tail) <= rtol * tail[:-1]))


@dataclass(frozen=True)
class Inhomogeneous:
    terms: list
    norms: np.ndarray
    settled_at: int | None
    tolerance: float


def infer_inhomogeneous(exact_traj, maps: MapFamily, rho0: np.ndarray,
                        tolerance: float = 1e-6) -> Inhomogeneous:
    """J_n = rho_n^exact - E_n(rho_0) for n = 0..N.

    ``exact_traj`` holds rho_0 .. rho_N from a method that handles the
    correlated initial state. ``settled_at`` is the first n from which
    ||J_n||_F stays below ``tolerance`` for the rest of the record.
    """
    traj = [np.asarray(r) for r in exact_traj]
    N = len(traj) - 1
    if N > maps.horizon:
        raise DomainError(f"trajectory has {N} steps but maps cover {maps.horizon}")
    terms = [traj[n] - maps.apply(n, rho0) for n in range(N + 1)]
    norms = np.array([np.linalg.norm(j) for j in terms])
    settled = None
    for n in range(N, -1, -1):
        if norms[n] >= tolerance:
            break
        settled = n
    return Inhomogeneous(terms, norms, settled, tolerance)


def coarse_grain(maps: MapFamily, s: int) -> MapFamily:
    """Maps on the grid s*dt: E'_k = E_{s k}."""
    if s < 1:
        raise DomainError("coarse factor must be >= 1")
    count = maps.horizon // s
    if count < 1:
        raise DomainError(f"maps cover {maps.horizon} steps, fewer than s = {s}")
    return MapFamily(maps.dt * s, maps.maps[s - 1:s * count:s])


# -- state propagation ----------------------------------------------------
def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.asarray(a) - np.asarray(b)
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def propagate_states(kernels: KernelFamily, rho0: np.ndarray, n_steps: int) -> np.ndarray:
    """rho_n = sum_{k=1}^{min(l, n)} T_k rho_{n-k}; returns rho_0..rho_n_steps."""
    d = kernels.d
    l = kernels.cutoff
    T = kernels.kernels
    v = np.zeros((n_steps + 1, d * d), dtype=complex)
    v[0] = vec(rho0)
    for n in range(1, n_steps + 1):
        k = min(l, n)
        # sum_k T_k v_{n-k}
        v[n] = np.einsum("kij,kj->i", T[:k], v[n - 1::-1][:k])
    return np.array([unvec(x, d) for x in v])


@dataclass(frozen=True)
class SteadyState:
    rho: np.ndarray
    history: np.ndarray  # last ``cutoff`` states, oldest first, ending at rho
    steps: int


def find_steady_state(kernels: KernelFamily, rho0: np.ndarray, tol: float = 1e-9,
                      consecutive: int = 10, max_steps: int = 200_000) -> SteadyState:
    """Propagate until ||rho_{n+1} - rho_n||_1 < tol for ``consecutive`` steps."""
    d = kernels.d
    l = kernels.cutoff
    T = kernels.kernels[:l]
    buf = np.zeros((l, d * d), dtype=complex)  # buf[0] newest
    buf[0] = vec(rho0)
    filled = 1
    quiet = 0
    prev = unvec(buf[0], d)
    for n in range(1, max_steps + 1):
        k = min(l, filled)
        new = np.einsum("kij,kj->i", T[:k], buf[:k])
        buf = np.roll(buf, 1, axis=0)
        buf[0] = new
        filled = min(filled + 1, l)
        rho = unvec(new, d)
        if not np.all(np.isfinite(new)):
            raise NumericError("state propagation diverged")
        quiet = quiet + 1 if trace_distance(rho, prev) < tol else 0
        prev = rho
        if quiet >= consecutive and filled == l:
            history = np.array([unvec(x, d) for x in buf[::-1]])
            return SteadyState(rho, history, n)
    raise NumericError(f"no steady state within {max_steps} steps")
