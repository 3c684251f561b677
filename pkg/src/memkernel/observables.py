"""Physical outputs: expectation values, two-point functions, emission
spectra and the relative-entropy non-Markovianity measure."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DomainError
from .mttm import Families, ThreeTimeFamily, propagate_correlation, steady_state_correlation
from .superop import Superoperator
from .sysenv import SIGMA_MINUS, SIGMA_PLUS, FullState, Oracle
from .tensornet import OUT, LegTensor, Leg, relative_entropy, superop_to_choi
from .ttm import KernelFamily, MapFamily, propagate_states

HERMITIAN_TOL = 1e-12


def _hermitian(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"{what} must be a square matrix")
    if np.max(np.abs(a - a.conj().T)) > HERMITIAN_TOL * max(1.0, np.abs(a).max()):
        raise DomainError(f"{what} is not Hermitian")
    return a


def expectation(A: np.ndarray, rho: np.ndarray) -> float:
    """tr[A rho] for Hermitian A (the outcome-weighted mean of a measurement of A)."""
    A = _hermitian(A, "observable")
    return float(np.real(np.trace(A @ np.asarray(rho))))


def eigenprojectors(A: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """(eigenvalue, projector) pairs of a Hermitian matrix, degenerate values merged."""
    w, v = np.linalg.eigh(_hermitian(A, "operator"))
    out: list[tuple[float, np.ndarray]] = []
    for val, vec_ in zip(w, v.T):
        p = np.outer(vec_, vec_.conj())
        if out and abs(out[-1][0] - val) < 1e-10:
            out[-1] = (out[-1][0], out[-1][1] + p)
        else:
            out.append((float(val), p))
    return out


# -- engines ---------------------------------------------------------------
class Engine(Protocol):
    def correlation(self, op: Superoperator, readout: np.ndarray, m: int, n: int) -> complex: ...


@dataclass(frozen=True)
class OracleEngine:
    """Exact evaluation by sequential propagation of the full state."""

    oracle: Oracle
    pi0: FullState | np.ndarray

    def correlation(self, op: Superoperator, readout: np.ndarray, m: int, n: int) -> complex:
        late = Superoperator.left(readout)
        if n == m:
            return self.oracle.multitime([(late @ op, m)], self.pi0, n)
        return self.oracle.multitime([(op, m), (late, n)], self.pi0, n)


@dataclass(frozen=True)
class KernelEngine:
    """Evaluation through two- and three-time transfer tensors.

    Exact as long as the kernels cover n (and the initial state is a product
    state), otherwise truncated at the families' cutoffs.
    """

    kernels: KernelFamily
    three_time: ThreeTimeFamily
    rho0: np.ndarray

    def correlation(self, op: Superoperator, readout: np.ndarray, m: int, n: int) -> complex:
        history = propagate_states(self.kernels, self.rho0, m)
        return propagate_correlation(self.kernels, self.three_time, history, op, readout, n - m)[-1]


def two_time_W(A: np.ndarray, B: np.ndarray, n: int, m: int, engine: Engine) -> complex:
    """<A(t_n) B(t_m)> = sum_{kj} a_k b_j W(a_k, t_n; b_j, t_m).

    W(a, t_n; b, t_m) = tr[P_a Lambda_{n:m}(P_b Pi_m)] is built from
    eigenprojector insertions; it is a quasi-probability, not a distribution.
    """
    if n < m:
        raise DomainError(f"two-time function needs n >= m, got n={n}, m={m}")
    if m < 0:
        raise DomainError("timesteps must be >= 0")
    total = 0j
    for b, pb in eigenprojectors(B):
        op = Superoperator.left(pb)
        for a, pa in eigenprojectors(A):
            total += a * b * engine.correlation(op, pa, m, n)
    return complex(total)


# -- spectra -----------------------------------------------------------------
@dataclass(frozen=True)
class SpectrumResult:
    omegas: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        om = np.asarray(self.omegas, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if om.shape != vals.shape or om.ndim != 1:
            raise DomainError("omegas and values must be matching 1-d arrays")
        if np.any(np.diff(om) <= 0):
            raise DomainError("omegas must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise DomainError("spectrum has non-finite values")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "values", vals)

    def weight(self, lo: float = -np.inf, hi: float = np.inf) -> float:
        """Trapezoidal integral of S over lo < omega < hi."""
        sel = (self.omegas > lo) & (self.omegas < hi)
        x, y = self.omegas[sel], self.values[sel]
        return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x))) if len(x) > 1 else 0.0

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", "S"])
            for o, s in zip(self.omegas, self.values):
                w.writerow([repr(float(o)), repr(float(s))])
        return path

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps({"omegas": self.omegas.tolist(), "values": self.values.tolist(),
                           "meta": self.meta}, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def tail_mean(g: np.ndarray, fraction: float = 0.1) -> complex:
    """g(infinity) estimate: mean over the final ``fraction`` of the grid."""
    g = np.asarray(g)
    count = max(1, int(math.ceil(fraction * len(g))))
    return complex(np.mean(g[-count:]))


def trapezoid_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def spectrum_from_g1(taus: np.ndarray, g: np.ndarray, omegas: np.ndarray, eta: float = 0.0,
                     tail_fraction: float = 0.1, decay_tol: float = 1e-3,
                     meta: dict | None = None) -> SpectrumResult:
    """S(omega) = Re int_0^tau_max (g(tau) - g_inf) e^{-eta tau} e^{-i omega tau} dtau.

    Trapezoid rule on the uniform tau grid, no padding. If eta = 0 and g has
    not settled (tail spread above ``decay_tol`` of the peak deviation) the
    result carries ``meta["non_decaying"] = True``.
    """
    taus = np.asarray(taus, dtype=float)
    g = np.asarray(g, dtype=complex)
    if taus.shape != g.shape or len(taus) < 2:
        raise DomainError("need matching tau and g arrays with at least two points")
    dt = taus[1] - taus[0]
    if dt <= 0 or np.max(np.abs(np.diff(taus) - dt)) > 1e-9 * max(1.0, taus[-1]):
        raise DomainError("tau grid must be uniform and increasing")
    if eta < 0:
        raise DomainError("window eta must be >= 0")
    g_inf = tail_mean(g, tail_fraction)
    f = (g - g_inf) * np.exp(-eta * taus) * trapezoid_weights(len(taus), dt)
    omegas = np.asarray(omegas, dtype=float)
    values = np.real(np.exp(-1j * np.outer(omegas, taus)) @ f)
    count = max(1, int(math.ceil(tail_fraction * len(g))))
    spread = float(np.max(np.abs(g[-count:] - g_inf)))
    scale = max(float(np.max(np.abs(g - g_inf))), 1e-12 * float(np.max(np.abs(g))))
    info = {"dt": float(dt), "tau_max": float(taus[-1]), "window_eta": float(eta),
            "g_inf": [g_inf.real, g_inf.imag], "tail_fraction": tail_fraction,
            "non_decaying": bool(eta == 0 and spread > decay_tol * scale
                                 and spread > 1e-12 * float(np.max(np.abs(g))))}
    return SpectrumResult(omegas, values, {**info, **(meta or {})})


@dataclass(frozen=True)
class G1Result:
    taus: np.ndarray
    g1: np.ndarray
    spectrum: SpectrumResult
    rho_ss: np.ndarray


def g1_and_spectrum(model: Families | tuple[KernelFamily, ThreeTimeFamily], omegas: np.ndarray,
                    tau_max: float, eta: float = 0.0, rho0: np.ndarray | None = None,
                    tol: float = 1e-9, max_steps: int = 200_000) -> G1Result:
    """g1(tau) = <sigma_+(t + tau) sigma_-(t)>_ss and its emission spectrum.

    ``model`` supplies two-time kernels and three-time kernels; whether the
    latter are the full or the regression set decides the flavour.
    """
    if isinstance(model, Families):
        t2, t3 = model.kernels, model.three_time_kernels
    else:
        t2, t3 = model
    if t3.kind not in ("kernels", "regression"):
        raise DomainError("need three-time kernels, not maps")
    corr = steady_state_correlation(t2, t3, Superoperator.left(SIGMA_MINUS), tau_max,
                                    readout=SIGMA_PLUS, rho0=rho0, tol=tol, max_steps=max_steps)
    meta = {"memory_cutoff_steps": t2.cutoff, "memory_cutoff": t2.cutoff * t2.dt,
            "three_time_cutoff_steps": t3.cutoff, "regression": t3.kind == "regression",
            "steady_steps": corr.steady_steps}
    spec = spectrum_from_g1(corr.taus, corr.values, omegas, eta=eta, meta=meta)
    return G1Result(corr.taus, corr.values, spec, corr.rho_ss)


# -- non-Markovianity -----------------------------------------------------
def _state_leg(rho0: np.ndarray) -> LegTensor:
    rho0 = np.asarray(rho0, dtype=complex)
    return LegTensor((Leg(0, OUT, rho0.shape[0]),), rho0)


def markov_process_tensor(maps: MapFamily, n: int, m: int, rho0: np.ndarray) -> LegTensor:
    """E_{n,m} (x) E_{m,0} (x) rho_0 with legs [S_n, R_m, S_m, R_0, S_0]."""
    if not 0 < m < n:
        raise DomainError(f"need 0 < m < n, got m={m}, n={n}")
    if n - m > maps.horizon or m > maps.horizon:
        raise DomainError(f"maps cover {maps.horizon} steps, need {max(m, n - m)}")
    late = superop_to_choi(maps.superop(n - m), out_t=n, in_t=m)
    early = superop_to_choi(maps.superop(m), out_t=m, in_t=0)
    return late @ early @ _state_leg(rho0)


def three_time_process_tensor(e3: ThreeTimeFamily, n: int, m: int, rho0: np.ndarray) -> LegTensor:
    """Upsilon_{n,m,0} = E_{n,m,0} (x) rho_0 for a product initial state."""
    if e3.kind != "maps":
        raise DomainError("need three-time dynamical tensors")
    return e3[(n - m, m)] @ _state_leg(rho0)


@dataclass(frozen=True)
class NonMarkovReport:
    n: int
    m: int
    value: float
    confusion: float
    repetitions: float

    def __post_init__(self) -> None:
        if self.value < -1e-10:
            raise DomainError(f"relative entropy {self.value} is negative")
        if not 0 <= self.confusion <= 1:
            raise DomainError("confusion probability outside [0, 1]")

    def row(self) -> list:
        return [self.n, self.m, self.value, self.confusion]


def confusion_probability(value: float, repetitions: float) -> float:
    return 0.0 if math.isinf(value) else math.exp(-repetitions * value)


def non_markovianity(upsilon: LegTensor, markov: LegTensor, repetitions: float,
                     n: int | None = None, m: int | None = None) -> NonMarkovReport:
    """N = tr[Y (ln Y - ln Y_markov)] and the confusion probability e^{-lambda N}.

    Both tensors are used as given (unnormalized Choi operators). A support
    violation gives N = inf and confusion 0.
    """
    if sorted(upsilon.labels) != sorted(markov.labels):
        raise DomainError("process tensors live on different legs")
    if repetitions < 0:
        raise DomainError("repetitions lambda must be >= 0")
    value = relative_entropy(upsilon, markov)
    if not math.isinf(value):
        value = max(value, 0.0) if value > -1e-10 else value
    return NonMarkovReport(-1 if n is None else n, -1 if m is None else m, value,
                           confusion_probability(value, repetitions), repetitions)


def non_markovianity_sweep(e3: ThreeTimeFamily, maps: MapFamily, m: int, gaps, rho0: np.ndarray,
                           repetitions: float) -> list[NonMarkovReport]:
    """N_{m+a, m, 0} for each gap a."""
    out = []
    for a in gaps:
        n = m + a
        out.append(non_markovianity(three_time_process_tensor(e3, n, m, rho0),
                                    markov_process_tensor(maps, n, m, rho0), repetitions, n, m))
    return out


def reports_to_csv(reports, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "N", "confusion"])
        for r in reports:
            w.writerow([r.n, r.m, repr(float(r.value)), repr(float(r.confusion))])
    return path


def reports_to_json(reports, path: str | Path | None = None) -> str:
    text = json.dumps({"reports": [asdict(r) for r in reports]}, sort_keys=True)
    if path is not None:
        Path(path).write_text(text)
    return text
