"""Preconditioners with a declared cost in whole-vector transfers."""

from __future__ import annotations

import numpy as np

from ..traffic import TrafficCounter


class Preconditioner:
    """Base class: ``apply(src, dst)`` computes dst = M^-1 src on (N, m) arrays."""

    kind = "custom"

    @property
    def transfers(self) -> int:
        raise NotImplementedError

    def _apply(self, src: np.ndarray, dst: np.ndarray) -> None:
        raise NotImplementedError

    def apply(self, src: np.ndarray, dst: np.ndarray, counter: TrafficCounter | None = None) -> None:
        if src.shape != dst.shape:
            raise ValueError(f"preconditioner shape mismatch: {src.shape} vs {dst.shape}")
        self._apply(src, dst)
        if counter is not None:
            t = self.transfers
            counter.add_vectors(t // 2, t - t // 2)
            counter.precond_applications += 1

    def describe(self) -> dict:
        return {"kind": self.kind, "transfers": self.transfers}


class IdentityPreconditioner(Preconditioner):
    """M = I: a plain copy, one read and one write."""

    kind = "identity"

    @property
    def transfers(self) -> int:
        return 2

    def _apply(self, src, dst):
        dst[...] = src


class SyntheticPreconditioner(Preconditioner):
    """Identity map that costs ``alpha`` transfers.

    Runs ``alpha/2`` scaling passes whose factors (2.0, 0.5, ...) multiply to exactly
    one, so results are bitwise those of :class:`IdentityPreconditioner`.
    """

    kind = "synthetic"

    def __init__(self, alpha: int):
        if alpha < 2 or alpha % 2:
            raise ValueError(f"synthetic preconditioner cost must be an even count >= 2, got {alpha}")
        self.alpha = int(alpha)

    @property
    def transfers(self) -> int:
        return self.alpha

    def factors(self) -> list[float]:
        passes = self.alpha // 2
        head = [1.0] if passes % 2 else []
        return head + [2.0, 0.5] * (passes // 2)

    def _apply(self, src, dst):
        f = self.factors()
        np.multiply(src, f[0], out=dst)
        for factor in f[1:]:
            dst *= factor

    def describe(self) -> dict:
        return {"kind": self.kind, "transfers": self.transfers, "alpha": self.alpha}


def make_preconditioner(kind: str | None, alpha: int | None = None) -> Preconditioner | None:
    if kind in (None, "none"):
        return None
    if kind == "identity":
        return IdentityPreconditioner()
    if kind == "synthetic":
        if alpha is None:
            raise ValueError("synthetic preconditioner needs alpha")
        return SyntheticPreconditioner(alpha)
    raise ValueError(f"unknown preconditioner {kind!r}; expected none, identity or synthetic")
