"""Step types that make up a method's per-iteration schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from ..kernels import StatementGroup, analyze_traffic, split_basic


class Method(str, Enum):
    BICGSTAB = "BiCGStab"
    IBICGSTAB = "IBiCGStab"
    PIPEBICGSTAB = "PipeBiCGStab"
    PBICGSTAB = "PBiCGStab"
    RBICGSTAB = "RBiCGStab"
    PPIPEBICGSTAB = "PPipeBiCGStab"

    @property
    def preconditioned(self) -> bool:
        return self in PRECONDITIONED

    @classmethod
    def parse(cls, name) -> "Method":
        if isinstance(name, cls):
            return name
        for m in cls:
            if m.value.lower() == str(name).lower():
                return m
        valid = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown method {name!r}; valid methods: {valid}")


PRECONDITIONED = frozenset({Method.PBICGSTAB, Method.RBICGSTAB, Method.PPIPEBICGSTAB})
UNPRECONDITIONED = tuple(m for m in Method if m not in PRECONDITIONED)


class Formulation(str, Enum):
    BASIC = "basic"
    MERGED = "merged"

    @classmethod
    def parse(cls, name) -> "Formulation":
        try:
            return cls(str(getattr(name, "value", name)).lower())
        except ValueError:
            raise ValueError(f"unknown formulation {name!r}; expected basic or merged") from None


OVERLAP_KINDS = ("none", "spmv", "precond", "spmv_and_precond")


@dataclass(frozen=True)
class SpMV:
    src: str
    dst: str
    transpose: bool = False


@dataclass(frozen=True)
class PrecondApply:
    src: str
    dst: str


@dataclass(frozen=True)
class Group:
    """A fused statement group; its dot products travel in one reduction message."""

    group: StatementGroup
    overlap: str = "none"

    def __post_init__(self):
        if self.overlap not in OVERLAP_KINDS:
            raise ValueError(f"overlap must be one of {OVERLAP_KINDS}")


@dataclass(frozen=True)
class Scalars:
    """Per-column scalar arithmetic; free in the traffic model."""

    fn: Callable
    label: str = ""


@dataclass(frozen=True)
class Check:
    """Convergence test on the column scalars stored under ``est``.

    ``branch`` groups run instead of the rest of the iteration once every column passes.
    """

    est: str
    branch: tuple[StatementGroup, ...] = ()


@dataclass(frozen=True)
class Reduction:
    n_dots: int
    overlappable_with: str = "none"


Step = SpMV | PrecondApply | Group | Scalars | Check


@dataclass
class IterationSchedule:
    """Traffic-relevant steps of one iteration, in execution order."""

    method: Method
    formulation: Formulation
    steps: list = field(default_factory=list)

    @property
    def groups(self) -> list[StatementGroup]:
        return [s for s in self.steps if isinstance(s, StatementGroup)]

    @property
    def reads(self) -> int:
        return sum(analyze_traffic(g)[0] for g in self.groups)

    @property
    def writes(self) -> int:
        return sum(analyze_traffic(g)[1] for g in self.groups)

    @property
    def vector_transfers(self) -> int:
        return self.reads + self.writes

    @property
    def spmv_count(self) -> int:
        return sum(isinstance(s, SpMV) for s in self.steps)

    @property
    def precond_count(self) -> int:
        return sum(isinstance(s, PrecondApply) for s in self.steps)

    @property
    def reductions(self) -> list[tuple[int, str]]:
        return [(s.n_dots, s.overlappable_with) for s in self.steps if isinstance(s, Reduction)]


def expand_groups(grp: StatementGroup, formulation: Formulation) -> list[StatementGroup]:
    return split_basic(grp) if formulation is Formulation.BASIC else [grp]


def build_schedule(method: Method, formulation: Formulation, steps: Sequence) -> IterationSchedule:
    sched = IterationSchedule(method, formulation)
    for step in steps:
        if isinstance(step, (SpMV, PrecondApply)):
            sched.steps.append(step)
        elif isinstance(step, Group):
            sched.steps.extend(expand_groups(step.group, formulation))
            if step.group.dots:
                sched.steps.append(Reduction(len(step.group.dots), step.overlap))
    return sched
