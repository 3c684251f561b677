"""Command-line front end.

    memkernel <task> --config run.toml [--out DIR]
    memkernel run --config run.toml            (task taken from the config)
    memkernel diff A B [--tolerance 1e-10]

Tasks: maps, kernels, propagate, spectrum, nonmarkov. Every run writes
``manifest.json`` with the config hash, library versions, invariant checks
and the kernel-norm table. Exit codes: 0 ok, 1 diff above tolerance,
2 invalid config or input, 3 numerical failure, 4 size budget exceeded.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, container
from .errors import DomainError, NumericError, SizeError
from .mttm import families_from_oracle
from .observables import g1_and_spectrum, non_markovianity_sweep, reports_to_csv, reports_to_json
from .sysenv import MAX_DIM, ModelSpec, Oracle
from .tensornet import MAX_LEGS, frobenius_norm
from .ttm import (
    KernelFamily, MapFamily, coarse_grain, error_bound, monotone_beyond, propagate,
    reconstruct_kernels,
)

TASKS = ("maps", "kernels", "propagate", "spectrum", "nonmarkov")
EXIT_OK, EXIT_DIFF, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SIZE = 0, 1, 2, 3, 4


class ConfigError(DomainError):
    pass


# -- configuration -----------------------------------------------------------
@dataclass(frozen=True)
class GridConfig:
    dt: float = 0.1
    horizon: int = 20
    memory_cutoff: int = 10
    coarse_factor: int = 1
    three_time_cutoff: int | None = None

    def validate(self) -> list[str]:
        bad = []
        if self.dt <= 0:
            bad.append("grid.dt: must be > 0")
        if self.memory_cutoff < 1:
            bad.append("grid.memory_cutoff: must be >= 1")
        if self.horizon < self.memory_cutoff:
            bad.append("grid.horizon: must be >= grid.memory_cutoff")
        if self.coarse_factor < 1:
            bad.append("grid.coarse_factor: must be >= 1")
        if self.three_time_cutoff is not None and self.three_time_cutoff < 2:
            bad.append("grid.three_time_cutoff: must be >= 2")
        return bad


@dataclass(frozen=True)
class IOConfig:
    maps: str | None = None
    kernels: str | None = None
    out_dir: str = "out"
    format: str = "json"

    def validate(self) -> list[str]:
        return [] if self.format in ("json", "binary") else ["io.format: must be 'json' or 'binary'"]


@dataclass(frozen=True)
class SpectrumConfig:
    omega_min: float = -4.0
    omega_max: float = 4.0
    omega_points: int = 401
    tau_max: float = 60.0
    eta: float = 0.0
    regression: bool = False
    steady_tol: float = 1e-9

    def validate(self) -> list[str]:
        bad = []
        if self.omega_points < 2:
            bad.append("spectrum.omega_points: must be >= 2")
        if self.omega_max <= self.omega_min:
            bad.append("spectrum.omega_max: must exceed omega_min")
        if self.tau_max <= 0:
            bad.append("spectrum.tau_max: must be > 0")
        if self.eta < 0:
            bad.append("spectrum.eta: must be >= 0")
        return bad

    @property
    def omegas(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, self.omega_points)


@dataclass(frozen=True)
class NonMarkovConfig:
    n: int = 20
    m: int = 5
    repetitions: float = 1.0
    sweep: bool = False

    def validate(self) -> list[str]:
        bad = []
        if not 0 < self.m < self.n:
            bad.append("nonmarkov: need 0 < m < n")
        if self.repetitions < 0:
            bad.append("nonmarkov.lambda: must be >= 0")
        return bad


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    grid: GridConfig = field(default_factory=GridConfig)
    task: str | None = None
    io: IOConfig = field(default_factory=IOConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    nonmarkov: NonMarkovConfig = field(default_factory=NonMarkovConfig)
    initial_state: tuple = ((0.5, 0.0), (0.0, 0.5))

    @property
    def rho0(self) -> np.ndarray:
        return np.asarray(self.initial_state, dtype=complex)


_SECTIONS = {"model": ModelSpec, "grid": GridConfig, "io": IOConfig,
             "spectrum": SpectrumConfig, "nonmarkov": NonMarkovConfig}
_ALIASES = {("nonmarkov", "lambda"): "repetitions"}


def _coerce(section: str, cls, raw: dict) -> tuple[object | None, list[str]]:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs, bad = {}, []
    for key, value in raw.items():
        name = _ALIASES.get((section, key), key)
        if name not in fields:
            bad.append(f"{section}.{key}: unknown field")
            continue
        default = fields[name].default
        kind = type(default) if default is not None and default is not dataclasses.MISSING else None
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
            elif kind is int or name == "three_time_cutoff":
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                value = int(value)
            elif kind is float:
                if isinstance(value, bool):
                    raise TypeError
                value = float(value)
            elif kind is str or name in ("maps", "kernels"):
                if not isinstance(value, str):
                    raise TypeError
        except (TypeError, ValueError):
            bad.append(f"{section}.{key}: expected {kind.__name__ if kind else 'integer or string'}")
            continue
        kwargs[name] = value
    if bad:
        return None, bad
    try:
        obj = cls(**kwargs)
    except DomainError as exc:
        return None, [f"{section}: {exc}"]
    bad += obj.validate() if hasattr(obj, "validate") else []
    return obj, bad


def parse_config(doc: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed TOML document."""
    problems, parts = [], {}
    for key in doc:
        if key not in _SECTIONS and key not in ("task", "initial_state"):
            problems.append(f"{key}: unknown section")
    for section, cls in _SECTIONS.items():
        raw = doc.get(section, {})
        if not isinstance(raw, dict):
            problems.append(f"{section}: must be a table")
            continue
        obj, bad = _coerce(section, cls, raw)
        problems += bad
        parts[section] = obj
    task = doc.get("task")
    if task is not None and task not in TASKS:
        problems.append(f"task: must be one of {', '.join(TASKS)}")
    rho0 = doc.get("initial_state", [[0.5, 0.0], [0.0, 0.5]])
    try:
        arr = np.asarray(rho0, dtype=float)
        ok = arr.shape == (2, 2) and np.allclose(arr, arr.T) and abs(np.trace(arr) - 1) < 1e-10 \
            and np.linalg.eigvalsh(arr)[0] > -1e-12
    except (TypeError, ValueError):
        ok = False
    if not ok:
        problems.append("initial_state: must be a real symmetric 2x2 density matrix")
    if problems:
        raise ConfigError("; ".join(problems))
    return RunConfig(task=task, initial_state=tuple(map(tuple, rho0)), **parts)


def load_config(path: str | Path) -> tuple[RunConfig, str]:
    """Parsed config and the sha256 of the file bytes."""
    blob = Path(path).read_bytes()
    try:
        doc = tomllib.loads(blob.decode())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config does not parse: {exc}") from None
    return parse_config(doc), hashlib.sha256(blob).hexdigest()


# -- tasks -----------------------------------------------------------------
def _suffix(cfg: RunConfig) -> str:
    return ".json" if cfg.io.format == "json" else ".ltns"


def _oracle(cfg: RunConfig) -> Oracle:
    return Oracle(cfg.model, cfg.grid.dt, MAX_DIM, MAX_LEGS)


def _norm_table(kernels: KernelFamily) -> list[list]:
    return [[n, float(v)] for n, v in enumerate(kernels.norms(), start=1)]


def _kernel_checks(kernels: KernelFamily, l: int) -> dict:
    herm = max(superop_choi.hermiticity_defect() for superop_choi in kernels.to_tensor_set().entries.values())
    return {"kernel_hermiticity_defect": herm,
            "norms_monotone_beyond_cutoff": monotone_beyond(kernels.norms(), l) if kernels.horizon > l + 1 else None}


def _maps_source(cfg: RunConfig) -> MapFamily:
    if cfg.io.maps:
        return MapFamily.from_tensor_set(container.load(cfg.io.maps))
    return MapFamily(cfg.grid.dt, _oracle(cfg).maps(cfg.grid.horizon))


def task_maps(cfg: RunConfig, out: Path) -> dict:
    maps = MapFamily(cfg.grid.dt, _oracle(cfg).maps(cfg.grid.horizon))
    if cfg.grid.coarse_factor > 1:
        maps = coarse_grain(maps, cfg.grid.coarse_factor)
    path = container.save(out / f"maps{_suffix(cfg)}", maps.to_tensor_set(), cfg.io.format)
    kernels = reconstruct_kernels(maps)
    tp, neg = maps.cptp_defects()
    checks = {"trace_preservation_defect": tp, "min_choi_eigenvalue": neg,
              **_kernel_checks(kernels, min(cfg.grid.memory_cutoff, maps.horizon))}
    return {"outputs": [path.name], "checks": checks, "kernel_norms": _norm_table(kernels)}


def task_kernels(cfg: RunConfig, out: Path) -> dict:
    maps = _maps_source(cfg)
    if cfg.grid.coarse_factor > 1:
        maps = coarse_grain(maps, cfg.grid.coarse_factor)
    kernels = reconstruct_kernels(maps)
    cutoff = min(cfg.grid.memory_cutoff, kernels.horizon)
    kernels = kernels.with_cutoff(cutoff)
    path = container.save(out / f"kernels{_suffix(cfg)}", kernels.to_tensor_set(), cfg.io.format)
    rebuilt = propagate(kernels.with_cutoff(kernels.horizon), maps.horizon)
    checks = {"round_trip_error": float(np.max(np.linalg.norm(rebuilt.maps - maps.maps, axis=(1, 2)))),
              **_kernel_checks(kernels, cutoff)}
    return {"outputs": [path.name], "checks": checks, "kernel_norms": _norm_table(kernels)}


def task_propagate(cfg: RunConfig, out: Path) -> dict:
    if cfg.io.kernels:
        kernels = KernelFamily.from_tensor_set(container.load(cfg.io.kernels))
    else:
        maps = _maps_source(cfg)
        if cfg.grid.coarse_factor > 1:
            maps = coarse_grain(maps, cfg.grid.coarse_factor)
        kernels = reconstruct_kernels(maps)
    l = cfg.grid.memory_cutoff
    if l > kernels.horizon:
        raise DomainError(f"grid.memory_cutoff {l} exceeds the {kernels.horizon} available kernels")
    steps = cfg.grid.horizon // cfg.grid.coarse_factor if not cfg.io.kernels else cfg.grid.horizon
    prop = propagate(kernels.with_cutoff(l), steps)
    path = container.save(out / f"propagated{_suffix(cfg)}", prop.to_tensor_set(cutoff=l), cfg.io.format)
    known = kernels.horizon
    bounds = [[n, error_bound(kernels, n, l)] for n in range(1, min(steps, known) + 1)]
    tp, neg = prop.cptp_defects()
    checks = {"trace_preservation_defect": tp, "min_choi_eigenvalue": neg, "error_bounds": bounds,
              **_kernel_checks(kernels, l)}
    return {"outputs": [path.name], "checks": checks, "kernel_norms": _norm_table(kernels)}


def task_spectrum(cfg: RunConfig, out: Path) -> dict:
    sc = cfg.spectrum
    cutoff = cfg.grid.three_time_cutoff or cfg.grid.memory_cutoff
    fam = families_from_oracle(_oracle(cfg), max(cutoff, cfg.grid.memory_cutoff), sc.regression)
    t2 = fam.kernels.with_cutoff(cfg.grid.memory_cutoff)
    t3 = fam.three_time_kernels.truncated(cutoff)
    res = g1_and_spectrum((t2, t3), sc.omegas, sc.tau_max, eta=sc.eta, rho0=cfg.rho0, tol=sc.steady_tol)
    tag = "regression" if sc.regression else "full"
    spec_path = res.spectrum.to_csv(out / f"spectrum_{tag}.csv")
    g1_path = out / f"g1_{tag}.csv"
    with g1_path.open("w", encoding="utf-8") as fh:
        fh.write("tau,re,im\n")
        for t, g in zip(res.taus, res.g1):
            fh.write(f"{float(t)!r},{float(g.real)!r},{float(g.imag)!r}\n")
    json_path = out / f"spectrum_{tag}.json"
    res.spectrum.to_json(json_path)
    checks = {"steady_state_trace": float(np.trace(res.rho_ss).real),
              "non_decaying": res.spectrum.meta["non_decaying"],
              "steady_steps": res.spectrum.meta["steady_steps"],
              "negative_frequency_weight": res.spectrum.weight(hi=0.0),
              **_kernel_checks(t2, t2.cutoff)}
    return {"outputs": [spec_path.name, g1_path.name, json_path.name], "checks": checks,
            "kernel_norms": _norm_table(fam.kernels)}


def task_nonmarkov(cfg: RunConfig, out: Path) -> dict:
    nm = cfg.nonmarkov
    fam = families_from_oracle(_oracle(cfg), nm.n)
    gaps = range(1, nm.n - nm.m + 1) if nm.sweep else [nm.n - nm.m]
    reports = non_markovianity_sweep(fam.three_time, fam.maps, nm.m, gaps, cfg.rho0, nm.repetitions)
    csv_path = reports_to_csv(reports, out / "nonmarkov.csv")
    json_path = out / "nonmarkov.json"
    reports_to_json(reports, json_path)
    checks = {"min_value": min(r.value for r in reports),
              "confusion_consistent": all(abs(r.confusion - np.exp(-r.repetitions * r.value)) < 1e-15
                                          for r in reports if np.isfinite(r.value))}
    return {"outputs": [csv_path.name, json_path.name], "checks": checks,
            "kernel_norms": _norm_table(fam.kernels)}


_RUNNERS = {"maps": task_maps, "kernels": task_kernels, "propagate": task_propagate,
            "spectrum": task_spectrum, "nonmarkov": task_nonmarkov}


def run(task: str, config_path: str | Path, out_dir: str | Path | None = None) -> Path:
    """Execute one task; returns the output directory."""
    cfg, digest = load_config(config_path)
    if task not in _RUNNERS:
        raise ConfigError(f"task: must be one of {', '.join(TASKS)}")
    out = Path(out_dir or cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = _RUNNERS[task](cfg, out)
    manifest = {
        "task": task,
        "config_sha256": digest,
        "config": _jsonable(dataclasses.asdict(cfg)),
        "versions": {"memkernel": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        **result,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), sort_keys=True, indent=1))
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# -- diff --------------------------------------------------------------------
def diff(path_a: str | Path, path_b: str | Path) -> dict:
    """Per-entry Frobenius distances between two containers with matching keys and legs."""
    a, b = container.load(path_a), container.load(path_b)
    if sorted(a.keys()) != sorted(b.keys()):
        raise DomainError("containers hold different entry keys")
    rows = []
    for key in sorted(a.keys()):
        ta, tb = a[key], b[key]
        if ta.legs != tb.legs:
            raise DomainError(f"entry {list(key)}: leg structures differ")
        rows.append([list(key), frobenius_norm(ta.matrix - tb.matrix)])
    return {"entries": rows, "max": max((r[1] for r in rows), default=0.0)}


# -- entry point -------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memkernel", description="Transfer-tensor toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*TASKS, "run"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default=None)
    d = sub.add_parser("diff")
    d.add_argument("file_a")
    d.add_argument("file_b")
    d.add_argument("--tolerance", type=float, default=1e-10)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diff":
            report = diff(args.file_a, args.file_b)
            report["tolerance"] = args.tolerance
            print(json.dumps(report, sort_keys=True))
            return EXIT_OK if report["max"] <= args.tolerance else EXIT_DIFF
        task = args.command
        if task == "run":
            cfg, _ = load_config(args.config)
            if cfg.task is None:
                raise ConfigError("task: required when using 'run'")
            task = cfg.task
        out = run(task, args.config, args.out)
        print(out / "manifest.json")
        return EXIT_OK
    except SizeError as exc:
        print(f"size budget exceeded: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
