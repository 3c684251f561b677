"""Exact spin-boson oracle on a truncated, discretized environment.

The bath is replaced by ``num_modes`` harmonic modes on a uniform frequency
grid over (0, omega_max] with midpoint couplings g_j^2 = J(omega_j) d_omega,
each truncated to ``fock_cutoff`` levels. Everything downstream (dynamical
maps, dynamical tensors, process tensors, multi-time probabilities) is
computed by brute-force evolution of the composite system-environment state
and serves as ground truth for the memory-kernel machinery.

Composite ordering is always system first: ``H`` acts on S (x) E_1 (x) ... .
Optionally each mode can be given a thermal Lindblad damping rate
(``mode_damping``), turning the environment into a set of damped pseudomodes
with a genuinely finite memory time. With zero damping the dynamics is
unitary and propagators come from an eigendecomposition of ``H``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DomainError, SizeError
from .superop import Superoperator, apply_on_first, left_right, unvec, vec
from .tensornet import IN, OUT, Leg, LegTensor, MAX_LEGS, check_leg_budget

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = 0.5 * (SIGMA_X + 1j * SIGMA_Y)
SIGMA_MINUS = 0.5 * (SIGMA_X - 1j * SIGMA_Y)

#: largest composite Hilbert-space dimension the oracle will build
MAX_DIM = 512
#: largest composite dimension for the damped (superoperator) path
MAX_DAMPED_DIM = 64


@dataclass(frozen=True)
class ModelSpec:
    """Spin-boson parameters in units of the splitting epsilon."""

    epsilon: float = 1.0
    alpha: float = 0.3
    omega_c: float = 10.0
    ohmicity: float = 1.0
    kT: float = 0.1
    num_modes: int = 1
    fock_cutoff: int = 4
    omega_max: float = 20.0
    mode_damping: float = 0.0

    def __post_init__(self) -> None:
        problems = []
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if self.omega_c <= 0:
            problems.append("omega_c must be > 0")
        if self.kT < 0:
            problems.append("kT must be >= 0")
        if self.num_modes < 1:
            problems.append("num_modes must be >= 1")
        if self.fock_cutoff < 2:
            problems.append("fock_cutoff must be >= 2")
        if self.omega_max <= 0:
            problems.append("omega_max must be > 0")
        if self.mode_damping < 0:
            problems.append("mode_damping must be >= 0")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def env_dim(self) -> int:
        return self.fock_cutoff**self.num_modes


@dataclass(frozen=True, eq=False)
class FullState:
    """Density operator on a composite space; sub-normalized states allowed."""

    matrix: np.ndarray
    dims: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        dims = tuple(self.dims) or (m.shape[0],)
        if m.shape != (int(np.prod(dims)),) * 2:
            raise DomainError(f"state shape {m.shape} does not match dims {dims}")
        if np.max(np.abs(m - m.conj().T)) > 1e-12 * max(1.0, np.abs(m).max()):
            raise DomainError("state is not Hermitian")
        if np.trace(m).real > 1 + 1e-10:
            raise DomainError("state trace exceeds 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0] < -1e-10:
            raise DomainError("state is not positive semidefinite")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", dims)


def spectral_density(omega, spec: ModelSpec):
    """J(omega) = alpha omega_c (omega/omega_c)^s exp(-omega/omega_c)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density needs omega >= 0")
    x = w / spec.omega_c
    out = spec.alpha * spec.omega_c * x**spec.ohmicity * np.exp(-x)
    return float(out) if out.ndim == 0 else out


def mode_grid(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Mode frequencies (cell midpoints of (0, omega_max]) and couplings."""
    dw = spec.omega_max / spec.num_modes
    omegas = (np.arange(spec.num_modes) + 0.5) * dw
    return omegas, np.sqrt(spectral_density(omegas, spec) * dw)


def _annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff)), 1).astype(complex)


def _embed(op: np.ndarray, site: int, dims: Sequence[int]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for i, d in enumerate(dims):
        out = np.kron(out, op if i == site else np.eye(d))
    return out


def _check_dim(spec: ModelSpec, max_dim: int) -> None:
    total = 2 * spec.env_dim
    if total > max_dim:
        raise SizeError(f"composite dimension {total} exceeds budget {max_dim}")
    if spec.mode_damping > 0 and total > MAX_DAMPED_DIM:
        raise SizeError(
            f"damped modes need a {total**2}-dim superoperator; "
            f"composite dimension must be <= {MAX_DAMPED_DIM}"
        )


def environment_hamiltonian(spec: ModelSpec) -> np.ndarray:
    omegas, _ = mode_grid(spec)
    dims = [spec.fock_cutoff] * spec.num_modes
    a = _annihilation(spec.fock_cutoff)
    num = a.conj().T @ a
    h = np.zeros((spec.env_dim,) * 2, dtype=complex)
    for j, w in enumerate(omegas):
        h += w * _embed(num, j, dims)
    return h


def build_spin_boson(spec: ModelSpec, max_dim: int = MAX_DIM) -> tuple[np.ndarray, list[int]]:
    """H = (eps/2) sx + sz sum_j g_j (a_j + a_j^+) + sum_j w_j a_j^+ a_j."""
    _check_dim(spec, max_dim)
    omegas, couplings = mode_grid(spec)
    dims = [2] + [spec.fock_cutoff] * spec.num_modes
    a = _annihilation(spec.fock_cutoff)
    h = 0.5 * spec.epsilon * _embed(SIGMA_X, 0, dims)
    sz = _embed(SIGMA_Z, 0, dims)
    for j, (w, g) in enumerate(zip(omegas, couplings)):
        aj = _embed(a, j + 1, dims)
        h += g * sz @ (aj + aj.conj().T) + w * aj.conj().T @ aj
    return 0.5 * (h + h.conj().T), dims


def _check_hermitian(h: np.ndarray, what: str = "Hamiltonian") -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DomainError(f"{what} must be a square matrix")
    if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-12 * max(1.0, np.abs(h).max()):
        raise DomainError(f"{what} is not Hermitian")
    return h


def liouvillian(h: np.ndarray) -> Superoperator:
    """Matrix of L(X) = -i[H, X] in the column-stacking convention."""
    h = _check_hermitian(h)
    eye = np.eye(h.shape[0])
    return Superoperator(h.shape[0], -1j * (left_right(h, eye) - left_right(eye, h)))


def dissipator(op: np.ndarray) -> np.ndarray:
    """Matrix of D[A](X) = A X A^+ - {A^+ A, X}/2."""
    op = np.asarray(op, dtype=complex)
    eye = np.eye(op.shape[0])
    ada = op.conj().T @ op
    return left_right(op, op.conj().T) - 0.5 * (left_right(ada, eye) + left_right(eye, ada))


def _unitary(h: np.ndarray, t: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def step_propagator(L: Superoperator, dt: float, hamiltonian: np.ndarray | None = None) -> Superoperator:
    """exp(dt L).

    If the generating Hamiltonian is supplied the propagator is built from
    its eigendecomposition as conj(U) (x) U, which is exactly unitary;
    otherwise scaling-and-squaring is used on the superoperator.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    if hamiltonian is not None:
        u = _unitary(_check_hermitian(hamiltonian), dt)
        return Superoperator(L.dim, left_right(u, u.conj().T))
    return Superoperator(L.dim, scipy.linalg.expm(dt * L.matrix))


def thermal_state(h: np.ndarray, kT: float) -> FullState:
    """Gibbs state exp(-H/kT)/Z.

    ``kT = 0`` gives the (maximally mixed) ground space projector and
    ``kT = inf`` the maximally mixed state.
    """
    if kT < 0:
        raise DomainError("kT must be >= 0")
    h = _check_hermitian(h)
    n = h.shape[0]
    if math.isinf(kT):
        return FullState(np.eye(n) / n)
    w, v = np.linalg.eigh(h)
    if kT == 0:
        p = (w - w[0] < 1e-10 * max(1.0, abs(w[0]))).astype(float)
    else:
        p = np.exp(-(w - w[0]) / kT)
    p /= p.sum()
    rho = (v * p) @ v.conj().T
    return FullState(0.5 * (rho + rho.conj().T))


def bose_occupation(omega: float, kT: float) -> float:
    if kT == 0:
        return 0.0
    return 1.0 / math.expm1(omega / kT)


class _Dilation:
    """Ancilla-extended system-environment state used to build Choi tensors.

    Leg axes come first (most recent output first), the environment last.
    The unitary path stores weighted pure vectors ``(K, *legs, D)``; the
    damped path stores a density tensor ``(*legs, D, *legs, D)``.
    """

    def __init__(self, oracle: "Oracle", legs: list[Leg], data: np.ndarray) -> None:
        self.oracle = oracle
        self.legs = legs
        self.data = data

    @classmethod
    def from_state(cls, oracle: "Oracle", state: np.ndarray, with_system: bool) -> "_Dilation":
        d, D = oracle.d, oracle.env_dim
        legs = [Leg(0, OUT, d)] if with_system else []
        shape = ([d] if with_system else []) + [D]
        if oracle.unitary:
            w, v = np.linalg.eigh(state)
            keep = w > 1e-14 * max(1.0, w.max())
            vecs = (v[:, keep] * np.sqrt(w[keep])).T
            return cls(oracle, legs, vecs.reshape([-1] + shape))
        return cls(oracle, legs, np.asarray(state, dtype=complex).reshape(shape + shape))

    def add_slot(self, out_t: int, in_t: int) -> None:
        d = self.oracle.d
        eye = np.eye(d)
        if self.oracle.unitary:
            self.data = np.einsum("sr,k...->ksr...", eye, self.data)
        else:
            half = self.data.ndim // 2
            t = np.einsum("sr,SR->srSR", eye, eye)
            full = np.multiply.outer(t, self.data)  # s r S R ket... bra...
            order = [0, 1] + list(range(4, 4 + half)) + [2, 3] + list(range(4 + half, 4 + 2 * half))
            self.data = full.transpose(order)
        self.legs = [Leg(out_t, OUT, d), Leg(in_t, IN, d)] + self.legs
        check_leg_budget(len(self.legs), self.oracle.max_legs)

    def evolve(self, steps: int = 1) -> None:
        for _ in range(steps):
            self.data = self.oracle._step_dilated(self.data)

    def choi(self) -> LegTensor:
        D = self.oracle.env_dim
        if self.oracle.unitary:
            k = self.data.shape[0]
            side = self.data[0].size // D
            m = np.moveaxis(self.data, 0, -1).reshape(side, D * k)
            return LegTensor(tuple(self.legs), m @ m.conj().T)
        half = self.data.ndim // 2
        side = int(np.prod([leg.dim for leg in self.legs], dtype=np.int64))
        ids = list(range(2 * half))
        ids[2 * half - 1] = ids[half - 1]
        out = [i for i in range(2 * half) if i not in (half - 1, 2 * half - 1)]
        m = np.einsum(self.data, ids, out)
        return LegTensor(tuple(self.legs), m.reshape(side, side))


class Oracle:
    """Exact reference dynamics for one model and timestep.

    Immutable after construction; all methods are pure.
    """

    def __init__(self, spec: ModelSpec, dt: float, max_dim: int = MAX_DIM,
                 max_legs: int = MAX_LEGS) -> None:
        if dt <= 0:
            raise DomainError("dt must be positive")
        self.spec = spec
        self.dt = float(dt)
        self.max_legs = max_legs
        self.hamiltonian, self.dims = build_spin_boson(spec, max_dim)
        self.d = 2
        self.env_dim = spec.env_dim
        self.unitary = spec.mode_damping == 0

    @cached_property
    def tau_env(self) -> np.ndarray:
        """Environment reference state: thermal state of the bare modes."""
        return thermal_state(environment_hamiltonian(self.spec), self.spec.kT).matrix

    @cached_property
    def step_unitary(self) -> np.ndarray:
        return _unitary(self.hamiltonian, self.dt)

    @cached_property
    def generator(self) -> Superoperator:
        """Full system-environment generator, Liouvillian plus mode damping."""
        L = liouvillian(self.hamiltonian).matrix
        gamma = self.spec.mode_damping
        if gamma > 0:
            omegas, _ = mode_grid(self.spec)
            a = _annihilation(self.spec.fock_cutoff)
            for j, w in enumerate(omegas):
                aj = _embed(a, j + 1, self.dims)
                nbar = bose_occupation(w, self.spec.kT)
                L = L + gamma * (nbar + 1) * dissipator(aj)
                if nbar > 0:
                    L = L + gamma * nbar * dissipator(aj.conj().T)
        return Superoperator(self.hamiltonian.shape[0], L)

    @cached_property
    def step_channel(self) -> Superoperator:
        if self.unitary:
            u = self.step_unitary
            return Superoperator(u.shape[0], left_right(u, u.conj().T))
        return step_propagator(self.generator, self.dt)

    # -- full-state evolution ---------------------------------------------
    def product_state(self, rho0: np.ndarray) -> FullState:
        return FullState(np.kron(rho0, self.tau_env), tuple(self.dims))

    def evolve_full(self, pi: np.ndarray, steps: int = 1) -> np.ndarray:
        pi = np.asarray(pi, dtype=complex)
        for _ in range(steps):
            if self.unitary:
                u = self.step_unitary
                pi = u @ pi @ u.conj().T
            else:
                pi = unvec(self.step_channel.matrix @ vec(pi), pi.shape[0])
        return pi

    def reduce(self, pi: np.ndarray) -> np.ndarray:
        D = self.env_dim
        return np.einsum("aebe->ab", np.asarray(pi).reshape(self.d, D, self.d, D))

    def apply_system_op(self, op: Superoperator, pi: np.ndarray) -> np.ndarray:
        if op.dim != self.d:
            raise DomainError(f"system operation has dim {op.dim}, system has {self.d}")
        return apply_on_first(op.matrix, np.asarray(pi), self.d)

    def trajectory(self, pi0: FullState | np.ndarray, n_max: int) -> list[np.ndarray]:
        """Exact reduced states rho_0 ... rho_{n_max}."""
        pi = pi0.matrix if isinstance(pi0, FullState) else np.asarray(pi0)
        out = [self.reduce(pi)]
        for _ in range(n_max):
            pi = self.evolve_full(pi)
            out.append(self.reduce(pi))
        return out

    def multitime(self, ops: Sequence[tuple[Superoperator, int]], pi0: FullState | np.ndarray,
                  n_steps: int) -> complex:
        """tr[O_{x_n} e^{dt L} ... O_{x_0}(Pi_0)] with identity where no op is given."""
        times = [t for _, t in ops]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("operation timesteps must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > n_steps):
            raise DomainError("operation timesteps must lie in [0, n_steps]")
        by_time = {t: op for op, t in ops}
        pi = pi0.matrix if isinstance(pi0, FullState) else np.asarray(pi0, dtype=complex)
        for t in range(n_steps + 1):
            if t in by_time:
                pi = self.apply_system_op(by_time[t], pi)
            if t < n_steps:
                pi = self.evolve_full(pi)
        return complex(np.trace(pi))

    # -- Choi tensors -----------------------------------------------------
    def _step_dilated(self, data: np.ndarray) -> np.ndarray:
        d, D = self.d, self.env_dim
        if self.unitary:
            u4 = self.step_unitary.reshape(d, D, d, D)
            out = np.tensordot(u4, data, axes=([2, 3], [1, data.ndim - 1]))
            # out: (s', e', K, rest...) -> (K, s', rest..., e')
            out = np.moveaxis(out, 2, 0)
            return np.moveaxis(out, 2, -1)
        L = data.ndim // 2
        s8 = self.step_channel.matrix.reshape(d, D, d, D, d, D, d, D)
        out = np.tensordot(s8, data, axes=([6, 7, 4, 5], [0, L - 1, L, 2 * L - 1]))
        r = L - 2
        order = ([2] + list(range(4, 4 + r)) + [3]
                 + [0] + list(range(4 + r, 4 + 2 * r)) + [1])
        return out.transpose(order)

    def comb(self, gaps: Sequence[int], start: int = 0) -> LegTensor:
        """Choi tensor of consecutive slots separated by ``gaps`` steps.

        Starting at timestep ``start`` with the product reference state, slot
        j opens an input leg R_{t_{j-1}}, evolves ``gaps[j]`` steps and leaves
        an output leg S_{t_j}. ``gaps = [1]*n`` gives the dynamical tensor
        E_{n+start:start}; ``gaps = [m-k, n-m]`` the three-time tensor.
        """
        dil = _Dilation.from_state(self, self.tau_env, with_system=False)
        t = start
        for g in gaps:
            if g < 1:
                raise DomainError("gaps must be >= 1")
            dil.add_slot(t + g, t)
            dil.evolve(g)
            t += g
        return dil.choi()

    def dynamical_tensor(self, n: int, k: int = 0) -> LegTensor:
        """E_{n:k} with legs [S_n, R_{n-1}, S_{n-1}, ..., R_k]."""
        if not n > k >= 0:
            raise DomainError("need n > k >= 0")
        check_leg_budget(2 * (n - k), self.max_legs)
        return self.comb([1] * (n - k), start=k)

    def dynamical_family(self, max_duration: int) -> dict[int, LegTensor]:
        """E_{D:0} for D = 1..max_duration from a single dilation chain."""
        check_leg_budget(2 * max_duration, self.max_legs)
        dil = _Dilation.from_state(self, self.tau_env, with_system=False)
        out = {}
        for D in range(1, max_duration + 1):
            dil.add_slot(D, D - 1)
            dil.evolve(1)
            out[D] = dil.choi()
        return out

    def process_tensor(self, pi0: FullState | np.ndarray, n: int) -> LegTensor:
        """Upsilon_{n:0} with legs [S_n, R_{n-1}, S_{n-1}, ..., R_0, S_0]."""
        check_leg_budget(2 * n + 1, self.max_legs)
        pi = pi0.matrix if isinstance(pi0, FullState) else np.asarray(pi0)
        dil = _Dilation.from_state(self, pi, with_system=True)
        for t in range(1, n + 1):
            dil.add_slot(t, t - 1)
            dil.evolve(1)
        return dil.choi()

    def maps(self, n_max: int) -> np.ndarray:
        """Superoperators of the dynamical maps E_1 .. E_{n_max}, shape (n, d^2, d^2)."""
        from .tensornet import choi_to_superop

        dil = _Dilation.from_state(self, self.tau_env, with_system=False)
        dil.add_slot(1, 0)
        out = []
        for n in range(1, n_max + 1):
            dil.evolve(1)
            c = dil.choi().relabel({(1, OUT): (n, OUT)})
            out.append(choi_to_superop(c).matrix)
        return np.array(out)

    def three_time_family(self, max_total: int) -> dict[tuple[int, int], LegTensor]:
        """E_{n,m,k} for all gap pairs (n-m, m-k) with n - k <= max_total.

        Keys are ``(n - m, m - k)``; legs are labelled with k = 0 as
        [S_{a+b}, R_b, S_b, R_0].
        """
        out = {}
        first = _Dilation.from_state(self, self.tau_env, with_system=False)
        first.add_slot(1, 0)
        for b in range(1, max_total):
            first.evolve(1)
            second = _Dilation(self, [Leg(b, OUT, self.d), Leg(0, IN, self.d)],
                               first.data.copy())
            second.add_slot(b + 1, b)
            for a in range(1, max_total - b + 1):
                second.evolve(1)
                out[(a, b)] = second.choi().relabel({(b + 1, OUT): (a + b, OUT)})
        return out


# -- functional entry points ------------------------------------------------
def exact_multitime(spec: ModelSpec, dt: float, ops: Sequence[tuple[Superoperator, int]],
                    pi0: FullState | np.ndarray, n_steps: int) -> complex:
    return Oracle(spec, dt).multitime(ops, pi0, n_steps)


def exact_dynamical_tensor(spec: ModelSpec, dt: float, n: int, k: int = 0) -> LegTensor:
    return Oracle(spec, dt).dynamical_tensor(n, k)


def exact_process_tensor(spec: ModelSpec, dt: float, pi0: FullState | np.ndarray, n: int) -> LegTensor:
    return Oracle(spec, dt).process_tensor(pi0, n)
