"""Interpreter for method step lists: one solve over all right-hand-side columns."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import CsrMatrix, as_array, spmv, spmv_transpose
from ..kernels import DEFAULT_BLOCK_ROWS, StatementGroup, column_sums, execute_group
from ..traffic import TrafficCounter
from .methods import method_def
from .precond import Preconditioner
from .schedule import (
    Check,
    Formulation,
    Group,
    IterationSchedule,
    Method,
    PrecondApply,
    Scalars,
    SpMV,
    build_schedule,
    expand_groups,
)

log = logging.getLogger(__name__)

MODES = ("converge", "fixed")
TOL_TYPES = ("relative", "absolute")


@dataclass(frozen=True)
class Breakdown:
    iteration: int
    column: int
    scalar: str

    def __str__(self):
        return f"breakdown at iteration {self.iteration}, column {self.column}: {self.scalar} vanished or is not finite"


class BreakdownError(RuntimeError):
    """A Krylov scalar division failed; ``report`` holds the state reached so far."""

    def __init__(self, info: Breakdown, report: "SolveReport | None" = None):
        super().__init__(str(info))
        self.info = info
        self.report = report


@dataclass
class SolveReport:
    method: Method
    formulation: Formulation
    iterations: int
    converged: np.ndarray
    # residual_history[k] holds one recursive residual norm per column
    residual_history: list[np.ndarray]
    true_residual: np.ndarray
    traffic: TrafficCounter
    setup_traffic: TrafficCounter
    x: np.ndarray
    eps: np.ndarray
    breakdown: Breakdown | None = None

    @property
    def converged_columns(self) -> list[bool]:
        return [bool(c) for c in self.converged]

    @property
    def iteration_traffic(self) -> TrafficCounter:
        """Traffic after the setup phase (iterations, preconditioner calls and final branch)."""
        return self.traffic - self.setup_traffic

    def history_array(self) -> np.ndarray:
        return np.vstack(self.residual_history)


@dataclass
class _State:
    iteration: int = 0
    frozen: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def method_schedule(method, formulation="merged") -> IterationSchedule:
    """Per-iteration schedule (groups, SpMVs, preconditioner calls, reductions)."""
    method = Method.parse(method)
    formulation = Formulation.parse(formulation)
    return build_schedule(method, formulation, method_def(method).iteration)


def _make_div(state: _State):
    def div(num, den, name: str, lucky=None) -> np.ndarray:
        num = np.asarray(num, dtype=float)
        den = np.asarray(den, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            q = num / den
        skip = state.frozen.copy()
        if lucky is not None:
            skip |= np.asarray(lucky, dtype=bool)
        bad = ~skip & ((den == 0) | ~np.isfinite(q))
        if bad.any():
            col = int(np.flatnonzero(bad)[0])
            raise BreakdownError(Breakdown(state.iteration, col, name))
        return np.where(skip, 0.0, q)

    return div


def solve(
    A: CsrMatrix,
    B,
    x0=None,
    *,
    method="BiCGStab",
    formulation="merged",
    precond: Preconditioner | None = None,
    tol: float = 1e-8,
    mode: str = "converge",
    iters: int = 1000,
    tol_type: str = "relative",
    threads: int = 1,
    block_rows: int = DEFAULT_BLOCK_ROWS,
    observer: Callable[[int, dict], None] | None = None,
) -> SolveReport:
    """Solve A X = B for all columns of B at once.

    ``mode="converge"`` stops once every column passes its listing's merged
    convergence test (at most ``iters`` iterations); ``mode="fixed"`` always runs
    ``iters`` iterations.  Columns that pass are frozen in both modes: their scalars
    become zero so x and r stop changing while the others continue.  ``observer`` is
    called as ``observer(iteration, storage)`` after each full iteration.

    Raises BreakdownError (with the partial report attached) when a denominator
    vanishes in a column that has not converged.
    """
    method = Method.parse(method)
    formulation = Formulation.parse(formulation)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if tol_type not in TOL_TYPES:
        raise ValueError(f"tol_type must be one of {TOL_TYPES}")
    if mode == "converge" and not tol > 0:
        raise ValueError("tol must be positive in converge mode")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    if method.preconditioned and precond is None:
        raise ValueError(f"{method.value} needs a preconditioner (e.g. identity)")
    if not method.preconditioned and precond is not None:
        raise ValueError(f"{method.value} does not take a preconditioner")

    b = np.array(as_array(B), dtype=float, order="C")
    n, m = b.shape
    if n != A.n_rows:
        raise ValueError(f"right-hand side has {n} rows, matrix has {A.n_rows}")
    if x0 is None:
        x = np.zeros((n, m))
    else:
        x = np.array(as_array(x0), dtype=float, order="C")
        if x.shape != (n, m):
            raise ValueError(f"x0 has shape {x.shape}, expected {(n, m)}")

    mdef = method_def(method)
    storage: dict[str, object] = {"b": b, "x": x}
    for v in mdef.zero_vectors:
        storage[v] = np.zeros((n, m))
    counter = TrafficCounter(n_rows=n, n_cols=m)
    state = _State(frozen=np.zeros(m, dtype=bool))
    div = _make_div(state)

    def vec(name: str) -> np.ndarray:
        if name not in storage:
            storage[name] = np.empty((n, m))
        return storage[name]

    def run_groups(groups: list[StatementGroup], n_dots: int) -> None:
        for g in groups:
            execute_group(g, storage, counter, block_rows=block_rows, threads=threads)
        if n_dots:
            counter.add_reduction(n_dots, m)

    def run_step(step) -> None:
        if isinstance(step, SpMV):
            op = spmv_transpose if step.transpose else spmv
            op(A, storage[step.src], vec(step.dst), counter)
        elif isinstance(step, PrecondApply):
            precond.apply(storage[step.src], vec(step.dst), counter)
        elif isinstance(step, Group):
            run_groups(expand_groups(step.group, formulation), len(step.group.dots))
        elif isinstance(step, Scalars):
            step.fn(storage, div)
        else:
            raise TypeError(f"unexpected step {step!r}")

    history: list[np.ndarray] = []
    eps2 = np.zeros(m)
    setup = TrafficCounter(n_rows=n, n_cols=m)
    converged = np.zeros(m, dtype=bool)

    def report(breakdown: Breakdown | None = None) -> SolveReport:
        scratch = np.empty((n, m))
        spmv(A, x, scratch)
        res = b - scratch
        return SolveReport(
            method=method,
            formulation=formulation,
            iterations=state.iteration if breakdown is None else max(state.iteration - 1, 0),
            converged=converged.copy(),
            residual_history=[h.copy() for h in history],
            true_residual=np.sqrt(column_sums(res * res)),
            traffic=counter.copy(),
            setup_traffic=setup,
            x=x,
            eps=np.sqrt(eps2),
            breakdown=breakdown,
        )

    try:
        for step in mdef.setup:
            run_step(step)
        setup = counter.copy()
        res0 = np.asarray(storage[mdef.initial_residual], dtype=float)
        eps2 = tol * tol * (storage["bb"] if tol_type == "relative" else np.ones(m))
        history.append(np.sqrt(np.maximum(res0, 0.0)))
        converged |= res0 <= 0
        state.frozen = converged.copy()

        done = False
        while state.iteration < iters and not done:
            if mode == "converge" and converged.all():
                break
            state.iteration += 1
            for step in mdef.iteration:
                if not isinstance(step, Check):
                    run_step(step)
                    continue
                est = np.asarray(storage[step.est], dtype=float)
                prev = history[-1]
                history.append(np.where(state.frozen, prev, np.sqrt(np.maximum(est, 0.0))))
                converged |= ~state.frozen & ((est < eps2) | (est <= 0))
                state.frozen = converged.copy()
                if mode == "converge" and converged.all():
                    for grp in step.branch:
                        run_groups(expand_groups(grp, formulation), len(grp.dots))
                    done = True
                    break
            if not done and observer is not None:
                observer(state.iteration, storage)
    except BreakdownError as exc:
        state.iteration = len(history)
        exc.report = report(exc.info)
        raise
    log.debug("%s/%s: %d iterations, converged=%s", method.value, formulation.value,
              state.iteration, converged.tolist())
    return report()


def verify_residual_identity(A: CsrMatrix, B, *, method="BiCGStab", iters: int = 20,
                             precond: Preconditioner | None = None) -> float:
    """Largest |theta - omega*phi - ||r_next||^2| / ||r_0||^2 over columns and iterations.

    The merged BiCGStab listings replace the dot product (r, r) by the value
    theta - omega*phi computed before r is formed; this measures how far that
    shortcut drifts from an explicit norm of the updated residual.
    """
    method = Method.parse(method)
    if method not in (Method.BICGSTAB, Method.PBICGSTAB):
        raise ValueError("the residual identity applies to BiCGStab and PBiCGStab")
    if method.preconditioned and precond is None:
        from .precond import IdentityPreconditioner

        precond = IdentityPreconditioner()
    worst = [0.0]
    ref: dict[str, np.ndarray] = {}

    def observe(it, storage):
        if "rr0" not in ref:
            ref["rr0"] = column_sums(storage["r0"] * storage["r0"])
        r = storage["r"]
        rr = column_sums(r * r)
        dev = np.abs(storage["est"] - rr) / ref["rr0"]
        worst[0] = max(worst[0], float(dev.max()))

    solve(A, B, method=method, formulation="merged", precond=precond, mode="fixed",
          iters=iters, tol=0.0, observer=observe)
    return worst[0]
