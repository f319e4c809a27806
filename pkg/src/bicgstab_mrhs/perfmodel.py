"""Data-transfer execution-time model for one iteration of each method.

Local work is priced by memory traffic over bandwidth, neighbour exchange and
global reductions by fitted latency curves, and non-blocking reductions by the
overlap rule ``max(T_calc + gamma*T_G, T_G)``.  Times are per iteration on ``p``
nodes, each with bandwidth ``b``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .core import CsrMatrix, poisson_stats
from .solvers.engine import method_schedule
from .solvers.schedule import Method
from .traffic import spmv_traffic_bytes

BW_MODES = ("ram", "llc", "effective")
CSV_HEADER = ("method", "p", "gamma", "alpha", "m", "bw_mode", "T_seconds", "R")


@dataclass(frozen=True)
class LocalFit:
    """Neighbour-exchange time: power law up to ``knee`` bytes, linear beyond."""

    c0: float = 2.4e-6
    c1: float = 6.9e-8
    n0: float = 0.56
    knee: float = 2048.0
    c0_large: float = 3.2e-6
    c1_large: float = 2e-9

    def __call__(self, l: float) -> float:
        if l <= self.knee:
            return self.c0 + self.c1 * l**self.n0
        return self.c0_large + self.c1_large * l


@dataclass(frozen=True)
class GlobalFit:
    """Allreduce time ``c0 + c1 * l**n0 * p**n1`` for an ``l``-byte message on ``p`` nodes."""

    c0: float = 3.5e-6
    c1: float = 1.7e-6
    n0: float = 0.21
    n1: float = 0.54

    def __call__(self, p: float, l: float) -> float:
        return self.c0 + self.c1 * l**self.n0 * p**self.n1


@dataclass(frozen=True)
class MachineModel:
    name: str
    ram_bandwidth: float
    llc_bandwidth: float
    local_fit: LocalFit = field(default_factory=LocalFit)
    global_fit: GlobalFit = field(default_factory=GlobalFit)
    gamma: float = 1.0
    # bandwidth that best matches measured single-node iteration times, if calibrated
    effective_bandwidth: float | None = None
    notes: str = ""

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                vals = v.values()
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                vals = (v,)
            else:
                continue
            if any(x < 0 for x in vals):
                raise ValueError(f"machine coefficient {k} must be non-negative")
        if self.ram_bandwidth <= 0 or self.llc_bandwidth <= 0:
            raise ValueError("bandwidths must be positive")

    def bandwidth(self, mode: str = "ram") -> float:
        if mode == "ram":
            return self.ram_bandwidth
        if mode == "llc":
            return self.llc_bandwidth
        if mode == "effective":
            return self.effective_bandwidth or self.ram_bandwidth
        raise ValueError(f"bandwidth mode must be one of {BW_MODES}")

    def with_gamma(self, gamma: float) -> "MachineModel":
        return replace(self, gamma=gamma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MachineModel":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown machine keys: {sorted(extra)}")
        d["local_fit"] = LocalFit(**d.get("local_fit", {}))
        d["global_fit"] = GlobalFit(**d.get("global_fit", {}))
        return cls(**d)


PRESETS = ("lomonosov", "lomonosov2")


def load_machine(name_or_path) -> MachineModel:
    """Load a shipped preset by name or a JSON machine file by path."""
    if str(name_or_path) in PRESETS:
        text = resources.files("bicgstab_mrhs.machines").joinpath(f"{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise FileNotFoundError(f"no machine preset or file named {name_or_path!r}; presets: {', '.join(PRESETS)}")
        text = path.read_text()
    return MachineModel.from_dict(json.loads(text))


def save_machine(machine: MachineModel, path) -> None:
    Path(path).write_text(json.dumps(machine.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class ProblemSpec:
    N: int
    m: int = 1
    C: float = 7.0
    # bytes exchanged with a neighbour per SpMV; assumed independent of p
    halo_bytes: float = 0.0
    precond_alpha: float = 0.0

    def __post_init__(self):
        if self.N < 1 or self.m < 1:
            raise ValueError("N and m must be >= 1")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.halo_bytes < 0 or self.precond_alpha < 0:
            raise ValueError("halo_bytes and precond_alpha must be non-negative")

    def with_m(self, m: int) -> "ProblemSpec":
        """Same problem with ``m`` columns; the halo message grows in proportion."""
        return replace(self, m=m, halo_bytes=self.halo_bytes * m / self.m)

    def with_alpha(self, alpha: float) -> "ProblemSpec":
        return replace(self, precond_alpha=alpha)

    @classmethod
    def from_matrix(cls, a: CsrMatrix, m: int = 1, alpha: float = 0.0) -> "ProblemSpec":
        # banded matrix split into row blocks: a neighbour needs `bandwidth` rows
        return cls(a.n_rows, m, a.nnz_per_row, 8.0 * m * a.bandwidth(), alpha)

    @classmethod
    def poisson(cls, *dims: int, m: int = 1, alpha: float = 0.0) -> "ProblemSpec":
        n, nnz, bw = poisson_stats(*dims)
        return cls(n, m, nnz / n, 8.0 * m * bw, alpha)


def t_vec(machine: MachineModel, spec: ProblemSpec, p: float = 1, bw_mode: str = "ram") -> float:
    """Time of one whole-vector read or write."""
    _check_p(p)
    return 8.0 * spec.N * spec.m / (machine.bandwidth(bw_mode) * p)


def sigma_mul(spec: ProblemSpec) -> float:
    """Bytes moved by one CSR multiply."""
    return spmv_traffic_bytes(spec.N, spec.m, spec.C)


def t_mul(machine: MachineModel, spec: ProblemSpec, p: float = 1, bw_mode: str = "ram") -> float:
    _check_p(p)
    return sigma_mul(spec) / (machine.bandwidth(bw_mode) * p)


def t_local(machine: MachineModel, l: float) -> float:
    return machine.local_fit(l)


def t_global(machine: MachineModel, p: float, l: float) -> float:
    _check_p(p)
    return machine.global_fit(p, l)


def t_spmv(machine: MachineModel, spec: ProblemSpec, p: float = 1, bw_mode: str = "ram") -> float:
    # neighbour exchange is hidden behind the local multiply without overhead
    return max(t_mul(machine, spec, p, bw_mode), t_local(machine, spec.halo_bytes))


def t_prec(machine: MachineModel, spec: ProblemSpec, p: float = 1, bw_mode: str = "ram") -> float:
    return spec.precond_alpha * t_vec(machine, spec, p, bw_mode)


def overlapped(t_calc: float, t_g: float, gamma: float) -> float:
    return max(t_calc + gamma * t_g, t_g)


def _check_p(p) -> None:
    if p < 1:
        raise ValueError(f"node count must be >= 1, got {p}")


def iteration_terms(machine: MachineModel, spec: ProblemSpec, method, p: float = 1,
                    gamma: float | None = None, bw_mode: str = "ram") -> dict:
    """Breakdown of :func:`t_iteration` into vector, SpMV, preconditioner and reduction parts."""
    method = Method.parse(method)
    if method.preconditioned and spec.precond_alpha <= 0:
        raise ValueError(f"{method.value} needs precond_alpha > 0")
    gamma = machine.gamma if gamma is None else gamma
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    sched = method_schedule(method, "merged")
    tv = t_vec(machine, spec, p, bw_mode)
    ts = t_spmv(machine, spec, p, bw_mode)
    tp = t_prec(machine, spec, p, bw_mode) if method.preconditioned else 0.0
    n_spmv, n_prec = sched.spmv_count, sched.precond_count
    reductions = 0.0
    for k, kind in sched.reductions:
        tg = t_global(machine, p, 8.0 * spec.m * k)
        if kind == "none":
            reductions += tg
            continue
        calc = 0.0
        if kind in ("spmv", "spmv_and_precond"):
            calc += ts
            n_spmv -= 1
        if kind in ("precond", "spmv_and_precond"):
            calc += tp
            n_prec -= 1
        reductions += overlapped(calc, tg, gamma)
    if n_spmv < 0 or n_prec < 0:
        raise ValueError(f"{method.value}: more overlapped reductions than operations to hide them")
    return {
        "vec": sched.vector_transfers * tv,
        "spmv": n_spmv * ts,
        "precond": n_prec * tp,
        "reductions": reductions,
    }


def t_iteration(machine: MachineModel, spec: ProblemSpec, method, p: float = 1,
                gamma: float | None = None, bw_mode: str = "ram") -> float:
    """Predicted time of one merged iteration of ``method`` on ``p`` nodes."""
    return sum(iteration_terms(machine, spec, method, p, gamma, bw_mode).values())


def _times(machine, spec, methods, p_range, gamma, bw_mode) -> dict[Method, np.ndarray]:
    methods = [Method.parse(x) for x in methods]
    p_range = list(p_range)
    if not methods or not p_range:
        raise ValueError("methods and p_range must be non-empty")
    return {mt: np.array([t_iteration(machine, spec, mt, p, gamma, bw_mode) for p in p_range])
            for mt in methods}


def relative_performance(machine: MachineModel, spec: ProblemSpec, methods, p_range,
                         gamma: float | None = None, bw_mode: str = "ram") -> dict[Method, np.ndarray]:
    """R^i(p) = min_j T^j(p) / T^i(p) over the given method set."""
    times = _times(machine, spec, methods, p_range, gamma, bw_mode)
    best = np.min(np.vstack(list(times.values())), axis=0)
    return {mt: best / t for mt, t in times.items()}


def speedup(times: Sequence[float]) -> np.ndarray:
    """S(p) = T(1)/T(p); ``times[0]`` must be the single-node time."""
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise ValueError("empty time series")
    return t[0] / t


def relative_speedup(machine: MachineModel, spec: ProblemSpec, methods, p_range,
                     baseline=None, gamma: float | None = None,
                     bw_mode: str = "ram") -> dict[Method, np.ndarray]:
    """P^i(p) = T^base(1) / T^i(p); the base is (P)BiCGStab matching the set by default."""
    methods = [Method.parse(x) for x in methods]
    if baseline is None:
        baseline = Method.PBICGSTAB if any(mt.preconditioned for mt in methods) else Method.BICGSTAB
    t1 = t_iteration(machine, spec, baseline, 1, gamma, bw_mode)
    times = _times(machine, spec, methods, p_range, gamma, bw_mode)
    return {mt: t1 / t for mt, t in times.items()}


def breakeven_elements(t_g: float, bandwidth: float) -> float:
    """Elements per node N*m/p at which one vector pass costs as much as a reduction."""
    return t_g * bandwidth / 8.0


def crossover(machine: MachineModel, spec: ProblemSpec, before, after, p_range,
              gamma: float | None = None, bw_mode: str = "ram") -> float | None:
    """First p in ``p_range`` where ``after`` becomes strictly faster than ``before``."""
    for p in p_range:
        if t_iteration(machine, spec, after, p, gamma, bw_mode) < t_iteration(machine, spec, before, p, gamma, bw_mode):
            return p
    return None


@dataclass(frozen=True)
class ScanRow:
    method: str
    p: float
    gamma: float
    alpha: float
    m: int
    bw_mode: str
    T_seconds: float
    R: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in CSV_HEADER)


def scan(machine: MachineModel, spec: ProblemSpec, methods, p_range, gammas=(1.0,), alphas=(2.0,),
         ms=(1,), bw_modes=("ram", "llc")) -> list[ScanRow]:
    """Long-form table of T and R over all parameter combinations.

    R is taken within the preconditioned and unpreconditioned families separately.
    Unpreconditioned methods get one row per combination with alpha = 0.
    """
    methods = [Method.parse(x) for x in methods]
    p_range, gammas, alphas, ms, bw_modes = map(list, (p_range, gammas, alphas, ms, bw_modes))
    for label, seq in (("methods", methods), ("p_range", p_range), ("gammas", gammas),
                       ("alphas", alphas), ("ms", ms), ("bw_modes", bw_modes)):
        if not seq:
            raise ValueError(f"{label} must be non-empty")
    rows: list[ScanRow] = []
    for bw in bw_modes:
        for m in ms:
            base = spec.with_m(m)
            for gamma in gammas:
                for precond in (False, True):
                    family = [mt for mt in methods if mt.preconditioned == precond]
                    if not family:
                        continue
                    for alpha in (alphas if precond else [0.0]):
                        sp = base.with_alpha(alpha)
                        times = _times(machine, sp, family, p_range, gamma, bw)
                        best = np.min(np.vstack(list(times.values())), axis=0)
                        for mt in family:
                            for k, p in enumerate(p_range):
                                rows.append(ScanRow(mt.value, p, float(gamma), float(alpha), int(m), bw,
                                                    float(times[mt][k]), float(best[k] / times[mt][k])))
    return rows


def write_csv(rows: Iterable[ScanRow], out=None) -> str:
    """Write scan rows as CSV to ``out`` (path or file) and return the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.method, r.p, r.gamma, r.alpha, r.m, r.bw_mode, repr(r.T_seconds), repr(r.R)])
    text = buf.getvalue()
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            Path(out).write_text(text)
    return text


def fit_bandwidth(machine: MachineModel, observations: Sequence[tuple[ProblemSpec, object, float]],
                  bounds=(1e9, 1e12)) -> float:
    """Single-node bandwidth minimising squared relative error against measured times.

    ``observations`` holds (problem, method, seconds-per-iteration) triples.
    """
    if not observations:
        raise ValueError("no observations to fit")

    def loss(log_b):
        mach = replace(machine, ram_bandwidth=math.exp(log_b))
        return sum((t_iteration(mach, sp, mt, 1) / t - 1.0) ** 2 for sp, mt, t in observations)

    res = minimize_scalar(loss, bounds=tuple(map(math.log, bounds)), method="bounded",
                          options={"xatol": 1e-10})
    return float(math.exp(res.x))


# Problem setups of the single-node and multi-node experiments.
TABLE5_PROBLEM = ProblemSpec.poisson(200, 200, 200, m=1, alpha=2.0)
FIG5_PROBLEM = ProblemSpec.poisson(1000, 1000, m=1, alpha=2.0)
FIG5_P_RANGE = tuple(int(p) for p in np.unique(np.round(np.logspace(0, 10, 101, base=2))))
