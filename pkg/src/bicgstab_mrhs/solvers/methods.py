"""The six BiCGStab-family methods as declarative setup and iteration step lists.

Each line of the merged listings that fuses several operations becomes one
:class:`Group`.  Coefficients are closures over the solve storage, where every
per-column scalar (alpha, omega, rho, ...) lives as a length-m array next to the
vectors.  ``div(num, den, name, lucky=mask)`` is the guarded division supplied by
the engine: it reports a breakdown for vanishing or non-finite denominators, except
in converged columns and in ``lucky`` columns whose residual is already exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..kernels import combo, dot, group, update
from .schedule import Check, Group, Method, PrecondApply, Scalars, SpMV


def c(name):
    return lambda s: s[name]


def neg(name):
    return lambda s: -s[name]


def neg_prod(a, b):
    return lambda s: -(s[a] * s[b])


@dataclass(frozen=True)
class MethodDef:
    method: Method
    zero_vectors: tuple[str, ...]
    setup: tuple
    iteration: tuple
    # column scalars holding (r0, r0) after setup
    initial_residual: str


def _initial_residual(*extra_outputs: str, rr: str = "rho"):
    """x0 -> r0 = b - A x0 with the squared norms of r0 and b, fused in one pass."""
    outs = [update(v, "r0") for v in ("r",) + extra_outputs]
    return (
        SpMV("x", "ax"),
        Group(group(update("r0", "b", (-1.0, "ax")), *outs, dot(rr, "r0", "r0"), dot("bb", "b", "b"),
                    label="setup")),
    )


def _bicgstab() -> MethodDef:
    def step_alpha(s, div):
        s["alpha"] = div(s["rho"], s["delta"], "delta")

    def step_omega(s, div):
        s["omega"] = div(s["phi"], s["psi"], "psi", lucky=s["theta"] == 0)
        s["est"] = s["theta"] - s["omega"] * s["phi"]

    def step_beta(s, div):
        s["beta"] = div(s["rho_next"], s["rho"], "rho") * div(s["alpha"], s["omega"], "omega")
        s["rho"] = s["rho_next"]

    xr = (
        update("x", "x", (c("alpha"), "p"), (c("omega"), "s")),
        update("r", "s", (neg("omega"), "t")),
    )
    iteration = (
        SpMV("p", "v"),
        Group(group(dot("delta", "v", "r0"), label="delta")),
        Scalars(step_alpha, "alpha"),
        Group(group(update("s", "r", (neg("alpha"), "v")), label="s")),
        SpMV("s", "t"),
        Group(group(dot("phi", "t", "s"), dot("psi", "t", "t"), dot("theta", "s", "s"), label="omega")),
        Scalars(step_omega, "omega"),
        Check("est", branch=(group(*xr, label="final"),)),
        Group(group(*xr, dot("rho_next", "r", "r0"), label="xr")),
        Scalars(step_beta, "beta"),
        Group(group(update("p", "r", (c("beta"), combo("p", (neg("omega"), "v")))), label="p")),
    )
    return MethodDef(Method.BICGSTAB, (), _initial_residual("p"), iteration, "rho")


def _pbicgstab() -> MethodDef:
    def step_alpha(s, div):
        s["alpha"] = div(s["rho"], s["delta"], "delta")

    def step_omega(s, div):
        s["omega"] = div(s["phi"], s["psi"], "psi", lucky=s["theta"] == 0)
        s["est"] = s["theta"] - s["omega"] * s["phi"]

    def step_beta(s, div):
        s["beta"] = div(s["rho_next"], s["rho"], "rho") * div(s["alpha"], s["omega"], "omega")
        s["rho"] = s["rho_next"]

    x_upd = update("x", "x", (c("alpha"), "ph"), (c("omega"), "sh"))
    r_upd = update("r", "s", (neg("omega"), "t"))
    iteration = (
        PrecondApply("p", "ph"),
        SpMV("ph", "v"),
        Group(group(dot("delta", "v", "r0"), label="delta")),
        Scalars(step_alpha, "alpha"),
        Group(group(update("s", "r", (neg("alpha"), "v")), label="s")),
        PrecondApply("s", "sh"),
        SpMV("sh", "t"),
        Group(group(dot("phi", "t", "s"), dot("psi", "t", "t"), dot("theta", "s", "s"), label="omega")),
        Scalars(step_omega, "omega"),
        Check("est", branch=(group(x_upd, label="final-x"), group(r_upd, label="final-r"))),
        Group(group(r_upd, dot("rho_next", "r", "r0"), label="r")),
        Scalars(step_beta, "beta"),
        Group(group(x_upd, label="x")),
        Group(group(update("p", "r", (c("beta"), combo("p", (neg("omega"), "v")))), label="p")),
    )
    return MethodDef(Method.PBICGSTAB, (), _initial_residual("p"), iteration, "rho")


def _ibicgstab() -> MethodDef:
    def init(s, div):
        m = s["phi"].shape
        s["sigma_prev"] = s["pi"] = s["tau"] = s["phi"] * 0.0
        s["rho"] = s["alpha"] = s["omega"] = s["phi"] * 0.0 + 1.0
        assert s["rho"].shape == m

    def step_scalars(s, div):
        rho_next = s["phi"] - s["omega"] * s["sigma_prev"] + s["omega"] * s["alpha"] * s["pi"]
        delta = div(rho_next, s["rho"], "rho") * s["alpha"]
        beta = div(delta, s["omega"], "omega")
        tau = s["sigma"] + beta * s["tau"] - delta * s["pi"]
        alpha_next = div(rho_next, tau, "tau")
        s["zcoef"] = beta * div(alpha_next, s["alpha"], "alpha")
        s["delta"], s["beta"], s["tau"] = delta, beta, tau
        s["rho"], s["alpha"] = rho_next, alpha_next

    def step_omega(s, div):
        s["omega"] = div(s["theta"], s["kappa"], "kappa", lucky=s["nu"] == 0)
        s["sigma_prev"] = s["sigma"]
        s["sigma"] = s["gamma"] - s["omega"] * s["eta"]
        s["est"] = s["nu"] - s["omega"] * s["theta"]

    setup = _initial_residual(rr="phi") + (
        SpMV("r0", "u"),
        SpMV("r0", "f0", transpose=True),
        Group(group(dot("sigma", "r0", "u"), label="sigma0")),
        Scalars(init, "init"),
    )
    iteration = (
        Scalars(step_scalars, "alpha"),
        Group(group(
            update("z", (c("alpha"), "r"), (c("zcoef"), "z"), (neg_prod("alpha", "delta"), "v")),
            update("v", "u", (c("beta"), "v"), (neg("delta"), "q")),
            update("s", "r", (neg("alpha"), "v")),
            label="zvs",
        )),
        SpMV("v", "q"),
        Group(group(
            update("t", "u", (neg("alpha"), "q")),
            dot("phi", "r0", "s"), dot("pi", "r0", "q"), dot("gamma", "f0", "s"),
            dot("eta", "f0", "t"), dot("theta", "s", "t"), dot("kappa", "t", "t"),
            dot("nu", "s", "s"),
            label="dots",
        )),
        Scalars(step_omega, "omega"),
        Group(group(
            update("r", "s", (neg("omega"), "t")),
            update("x", "x", "z", (c("omega"), "s")),
            label="rx",
        )),
        Check("est"),
        SpMV("r", "u"),
    )
    return MethodDef(Method.IBICGSTAB, ("q", "v", "z"), setup, iteration, "phi")


def _pipe_scalars_update(s, div):
    s["beta"] = div(s["alpha"], s["omega"], "omega") * div(s["rho_next"], s["rho"], "rho")
    den = s["sigma"] + s["beta"] * s["delta"] - s["beta"] * s["omega"] * s["psi"]
    s["alpha"] = div(s["rho_next"], den, "sigma+beta*delta-beta*omega*psi")
    s["rho"] = s["rho_next"]


def _pipe_omega(s, div):
    s["omega"] = div(s["theta"], s["phi"], "phi", lucky=s["pi"] == 0)
    s["est"] = s["pi"] - s["omega"] * s["theta"]


def _pipe_init(s, div):
    s["alpha"] = div(s["rho"], s["rw"], "(r0,w0)")
    s["beta"] = s["rho"] * 0.0
    s["omega"] = s["rho"] * 0.0


def _recur(out, head, prev, corr):
    """out = head + beta * (prev - omega * corr)"""
    return update(out, head, (c("beta"), combo(prev, (neg("omega"), corr))))


def _pipebicgstab() -> MethodDef:
    setup = _initial_residual() + (
        SpMV("r", "w"),
        SpMV("w", "t"),
        Group(group(dot("rw", "r0", "w"), label="rw")),
        Scalars(_pipe_init, "init"),
    )
    iteration = (
        Group(group(
            _recur("p", "r", "p", "s"),
            _recur("s", "w", "s", "z"),
            _recur("z", "t", "z", "v"),
            update("q", "r", (neg("alpha"), "s")),
            update("y", "w", (neg("alpha"), "z")),
            dot("theta", "q", "y"), dot("phi", "y", "y"), dot("pi", "q", "q"),
            label="pszqy",
        ), overlap="spmv"),
        SpMV("z", "v"),
        Scalars(_pipe_omega, "omega"),
        Group(group(
            update("x", "x", (c("alpha"), "p"), (c("omega"), "q")),
            update("r", "q", (neg("omega"), "y")),
            label="xr",
        )),
        Check("est"),
        Group(group(
            update("w", "y", (neg("omega"), combo("t", (neg("alpha"), "v")))),
            dot("rho_next", "r0", "r"), dot("psi", "r0", "z"),
            dot("sigma", "r0", "w"), dot("delta", "r0", "s"),
            label="w",
        ), overlap="spmv"),
        SpMV("w", "t"),
        Scalars(_pipe_scalars_update, "alpha"),
    )
    return MethodDef(Method.PIPEBICGSTAB, ("p", "s", "z", "v"), setup, iteration, "rho")


def _rbicgstab() -> MethodDef:
    def step_alpha(s, div):
        s["alpha"] = div(s["rho"], s["delta"], "delta")

    def step_omega(s, div):
        s["omega"] = div(s["theta"], s["phi"], "phi", lucky=s["eta"] == 0)
        s["est"] = s["eta"] - s["omega"] * s["theta"]

    def step_beta(s, div):
        rho_next = -s["omega"] * s["psi"]
        s["beta"] = div(rho_next, s["rho"], "rho") * div(s["alpha"], s["omega"], "omega")
        s["rho"] = rho_next

    x_upd = update("x", "x", (c("alpha"), "vh"), (c("omega"), "th"))
    setup = _initial_residual() + (
        PrecondApply("r0", "z"),
        Group(group(update("vh", "z"), label="vh0")),
    )
    iteration = (
        SpMV("vh", "v"),
        Group(group(dot("delta", "v", "r0"), label="delta"), overlap="precond"),
        PrecondApply("v", "s"),
        Scalars(step_alpha, "alpha"),
        Group(group(update("th", "z", (neg("alpha"), "s")), label="th")),
        SpMV("th", "t"),
        Group(group(
            update("rt", "r", (neg("alpha"), "v")),
            dot("theta", "t", "rt"), dot("phi", "t", "t"),
            dot("psi", "t", "r0"), dot("eta", "rt", "rt"),
            label="rt",
        ), overlap="precond"),
        PrecondApply("t", "q"),
        Scalars(step_omega, "omega"),
        Group(group(update("r", "rt", (neg("omega"), "t")), label="r")),
        Check("est", branch=(group(x_upd, label="final"),)),
        Scalars(step_beta, "beta"),
        Group(group(
            x_upd,
            update("z", "th", (neg("omega"), "q")),
            _recur("vh", "z", "vh", "s"),
            label="xzv",
        )),
    )
    return MethodDef(Method.RBICGSTAB, (), setup, iteration, "rho")


def _ppipebicgstab() -> MethodDef:
    x_upd = update("x", "x", (c("alpha"), "ph"), (c("omega"), "qh"))
    r_upd = update("r", "q", (neg("omega"), "y"))
    setup = _initial_residual() + (
        PrecondApply("r", "rh"),
        SpMV("rh", "w"),
        PrecondApply("w", "wh"),
        SpMV("wh", "t"),
        Group(group(dot("rw", "r0", "w"), label="rw")),
        Scalars(_pipe_init, "init"),
    )
    iteration = (
        Group(group(
            _recur("ph", "rh", "ph", "sh"),
            _recur("sh", "wh", "sh", "zh"),
            update("qh", "rh", (neg("alpha"), "sh")),
            label="hat",
        )),
        Group(group(
            _recur("s", "w", "s", "z"),
            _recur("z", "t", "z", "v"),
            update("q", "r", (neg("alpha"), "s")),
            update("y", "w", (neg("alpha"), "z")),
            dot("theta", "q", "y"), dot("phi", "y", "y"), dot("pi", "q", "q"),
            label="szqy",
        ), overlap="spmv_and_precond"),
        PrecondApply("z", "zh"),
        SpMV("zh", "v"),
        Scalars(_pipe_omega, "omega"),
        Check("est", branch=(group(x_upd, label="final-x"), group(r_upd, label="final-r"))),
        Group(group(
            x_upd,
            update("rh", "qh", (neg("omega"), combo("wh", (neg("alpha"), "zh")))),
            label="x-rh",
        )),
        Group(group(
            r_upd,
            update("w", "y", (neg("omega"), combo("t", (neg("alpha"), "v")))),
            dot("rho_next", "r0", "r"), dot("psi", "r0", "z"),
            dot("sigma", "r0", "w"), dot("delta", "r0", "s"),
            label="rw",
        ), overlap="spmv_and_precond"),
        # next-iteration values: w_{j+1} -> w-hat_{j+1} -> t_{j+1}
        PrecondApply("w", "wh"),
        SpMV("wh", "t"),
        Scalars(_pipe_scalars_update, "alpha"),
    )
    return MethodDef(
        Method.PPIPEBICGSTAB, ("ph", "sh", "zh", "s", "z", "v"), setup, iteration, "rho"
    )


_BUILDERS = {
    Method.BICGSTAB: _bicgstab,
    Method.IBICGSTAB: _ibicgstab,
    Method.PIPEBICGSTAB: _pipebicgstab,
    Method.PBICGSTAB: _pbicgstab,
    Method.RBICGSTAB: _rbicgstab,
    Method.PPIPEBICGSTAB: _ppipebicgstab,
}


def method_def(method) -> MethodDef:
    return _BUILDERS[Method.parse(method)]()
