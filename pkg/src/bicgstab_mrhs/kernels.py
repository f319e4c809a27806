"""Fused vector-statement groups: traffic analysis, execution and basic splitting.

A :class:`StatementGroup` is a list of elementwise vector updates and per-column dot
products that run in one pass over the row index.  Inside a group a statement may use
a vector produced by an earlier statement of the same group without re-reading it
from memory; this register-reuse rule is what :func:`analyze_traffic` counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, MutableMapping, Sequence, Union

import numpy as np

from .core import MultiVector
from .traffic import TrafficCounter

# One scalar per right-hand-side column.
ColumnScalars = np.ndarray

Coef = Union[float, Callable[[Mapping[str, object]], object]]

DEFAULT_BLOCK_ROWS = 4096
MAX_UPDATE_OPERANDS = 4


class MalformedGroupError(ValueError):
    pass


@dataclass(frozen=True)
class Combo:
    """Linear combination ``sum(coef_k * operand_k)``; operands are vector ids or Combos."""

    terms: tuple[tuple[Coef, Union[str, "Combo"]], ...]

    def vector_ids(self) -> list[str]:
        seen: list[str] = []
        for _, op in self.terms:
            for v in op.vector_ids() if isinstance(op, Combo) else (op,):
                if v not in seen:
                    seen.append(v)
        return seen


@dataclass(frozen=True)
class Update:
    out: str
    expr: Combo

    def inputs(self) -> list[str]:
        return self.expr.vector_ids()


@dataclass(frozen=True)
class Dot:
    """Per-column dot product ``dest[c] = sum_i a[i, c] * b[i, c]``."""

    dest: str
    a: str
    b: str

    def inputs(self) -> list[str]:
        return [self.a] if self.a == self.b else [self.a, self.b]


Statement = Union[Update, Dot]


def _term(t) -> tuple[Coef, Union[str, Combo]]:
    if isinstance(t, (str, Combo)):
        return (1.0, t)
    coef, op = t
    return (coef, op)


def combo(*terms) -> Combo:
    """Build a Combo; each term is ``operand`` or ``(coef, operand)``."""
    return Combo(tuple(_term(t) for t in terms))


def update(out: str, *terms) -> Update:
    return Update(out, combo(*terms))


def dot(dest: str, a: str, b: str) -> Dot:
    return Dot(dest, a, b)


@dataclass(frozen=True)
class StatementGroup:
    statements: tuple[Statement, ...]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "statements", tuple(self.statements))
        for st in self.statements:
            if isinstance(st, Update):
                n = len(st.inputs())
                if not 1 <= n <= MAX_UPDATE_OPERANDS:
                    raise MalformedGroupError(
                        f"update of {st.out!r} has {n} operands (allowed 1..{MAX_UPDATE_OPERANDS})"
                    )
            elif not isinstance(st, Dot):
                raise MalformedGroupError(f"unknown statement {st!r}")

    @property
    def dots(self) -> list[Dot]:
        return [st for st in self.statements if isinstance(st, Dot)]

    @property
    def updates(self) -> list[Update]:
        return [st for st in self.statements if isinstance(st, Update)]

    def __len__(self):
        return len(self.statements)


def group(*statements: Statement, label: str = "") -> StatementGroup:
    return StatementGroup(tuple(statements), label)


def analyze_traffic(grp: StatementGroup, bound=None) -> tuple[int, int]:
    """Whole-vector (reads, writes) of one fused pass over ``grp``.

    A vector counts as read once if any statement consumes it before it is produced
    inside the group; each distinct output counts as one write.  When ``bound`` is
    given, operands that are neither bound nor produced earlier are rejected.
    """
    produced: set[str] = set()
    reads: set[str] = set()
    writes: set[str] = set()
    for st in grp.statements:
        for v in st.inputs():
            if v in produced:
                continue
            if bound is not None and v not in bound:
                raise MalformedGroupError(f"operand {v!r} is not bound")
            reads.add(v)
        if isinstance(st, Update):
            produced.add(st.out)
            writes.add(st.out)
    return len(reads), len(writes)


def _vectors(st: Update) -> set[str]:
    return set(st.inputs()) | {st.out}


def _split_update(st: Update) -> list[Update]:
    # BLAS-style calls take at most three vectors, output included
    if len(_vectors(st)) <= 3:
        return [st]
    terms = list(st.expr.terms)
    nested = [k for k, (_, op) in enumerate(terms) if isinstance(op, Combo)]
    tmp = f"{st.out}~tmp"
    if nested:
        k = nested[0]
        inner = terms[k][1]
        terms[k] = (terms[k][0], tmp)
    else:
        inner = Combo(tuple(terms[-2:]))
        terms = terms[:-2] + [(1.0, tmp)]
    first = Update(tmp, inner)
    return _split_update(first) + _split_update(Update(st.out, Combo(tuple(terms))))


def split_basic(grp: StatementGroup) -> list[StatementGroup]:
    """Unfused form of ``grp``: one group per statement, 4-vector updates split in two."""
    out: list[StatementGroup] = []
    for k, st in enumerate(grp.statements):
        label = f"{grp.label}[{k}]" if grp.label else ""
        if isinstance(st, Dot):
            out.append(StatementGroup((st,), label))
        else:
            out.extend(StatementGroup((s,), label) for s in _split_update(st))
    return out


def _resolve(c: Coef, storage) -> object:
    return c(storage) if callable(c) else c


def _resolve_combo(expr: Combo, storage) -> list:
    return [
        (_resolve(c, storage), _resolve_combo(op, storage) if isinstance(op, Combo) else op)
        for c, op in expr.terms
    ]


def _eval(terms, vecs, sl) -> np.ndarray:
    acc = None
    for coef, op in terms:
        val = _eval(op, vecs, sl) if isinstance(op, list) else vecs[op][sl]
        term = val.copy() if (np.isscalar(coef) and coef == 1) else val * coef
        if acc is None:
            acc = term
        else:
            acc += term
    return acc


def column_sums(a: np.ndarray) -> np.ndarray:
    """Sum over rows, column by column, with an order independent of the column count."""
    return np.ascontiguousarray(a.T).sum(axis=1)


def _as_vec(v) -> np.ndarray:
    return v.array if isinstance(v, MultiVector) else v


def execute_group(
    grp: StatementGroup,
    storage: MutableMapping[str, object],
    counter: TrafficCounter | None = None,
    *,
    block_rows: int = DEFAULT_BLOCK_ROWS,
    threads: int = 1,
) -> None:
    """Run ``grp`` as one blocked pass over the rows.

    ``storage`` maps ids to ``(N, m)`` arrays / MultiVectors and to ColumnScalars.
    Results equal executing the statements one after another on whole vectors.
    Coefficients are evaluated once, before the pass, so they must not depend on dot
    products computed by the same group.  Outputs missing from ``storage`` are
    allocated.  Dot products are reduced block by block in a fixed order, so results
    do not depend on ``threads``.
    """
    if not grp.statements:
        return
    vecs: dict[str, np.ndarray] = {}
    for st in grp.statements:
        for v in st.inputs():
            if v not in vecs:
                if v not in storage:
                    if any(isinstance(s, Update) and s.out == v for s in grp.statements):
                        continue
                    raise KeyError(f"vector {v!r} is not bound")
                vecs[v] = _as_vec(storage[v])
    shapes = {a.shape for a in vecs.values()}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch among group operands: {sorted(shapes)}")
    (n, m), = shapes
    for st in grp.updates:
        if st.out in storage:
            arr = _as_vec(storage[st.out])
            if arr.shape != (n, m):
                raise ValueError(f"output {st.out!r} has shape {arr.shape}, expected {(n, m)}")
        else:
            arr = np.empty((n, m))
            storage[st.out] = arr
        vecs[st.out] = arr

    plan = []
    for st in grp.statements:
        if isinstance(st, Update):
            plan.append((st.out, _resolve_combo(st.expr, storage)))
        else:
            plan.append((st.dest, st.a, st.b))
    dots = grp.dots
    n_blocks = max(1, -(-n // block_rows))
    partials = np.zeros((len(dots), n_blocks, m))

    def run_block(b: int) -> None:
        sl = slice(b * block_rows, min(n, (b + 1) * block_rows))
        k = 0
        for item in plan:
            if len(item) == 2:
                out, terms = item
                vecs[out][sl] = _eval(terms, vecs, sl)
            else:
                _, a, bb = item
                partials[k, b] = column_sums(vecs[a][sl] * vecs[bb][sl])
                k += 1

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, range(n_blocks)))
    else:
        for b in range(n_blocks):
            run_block(b)

    for k, d in enumerate(dots):
        storage[d.dest] = column_sums(partials[k])
    if counter is not None:
        counter.add_vectors(*analyze_traffic(grp))


def execute_sequential(grp: StatementGroup, storage: MutableMapping[str, object]) -> None:
    """Reference semantics: each statement on whole vectors with full temporaries."""
    for st in grp.statements:
        if isinstance(st, Dot):
            a, b = _as_vec(storage[st.a]), _as_vec(storage[st.b])
            storage[st.dest] = (a * b).sum(axis=0)
        else:
            terms = _resolve_combo(st.expr, storage)
            vecs = {v: _as_vec(storage[v]) for v in st.inputs()}
            storage[st.out] = _eval(terms, vecs, slice(None))


def group_traffic(groups: Sequence[StatementGroup]) -> tuple[int, int]:
    reads = writes = 0
    for g in groups:
        r, w = analyze_traffic(g)
        reads += r
        writes += w
    return reads, writes
