"""Command-line entry point: solve, count, bench-fusion and model subcommands."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import perfmodel
from .core import CsrMatrix, gen_poisson_5pt, gen_poisson_7pt, read_matrix_market
from .fusion import fusion_bench
from .solvers import (
    BreakdownError,
    Formulation,
    Method,
    make_preconditioner,
    method_schedule,
    solve,
)

log = logging.getLogger("bicgstab_mrhs")

EXIT_OK, EXIT_USAGE, EXIT_BREAKDOWN = 0, 1, 2


class UsageError(Exception):
    pass


_METHOD_NAMES = [mt.value for mt in Method]

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["matrix", "method"],
    "properties": {
        "matrix": {
            "oneOf": [
                {
                    "type": "object", "additionalProperties": False, "required": ["kind", "dims"],
                    "properties": {
                        "kind": {"const": "poisson7"},
                        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                 "minItems": 3, "maxItems": 3},
                    },
                },
                {
                    "type": "object", "additionalProperties": False, "required": ["kind", "dims"],
                    "properties": {
                        "kind": {"const": "poisson5"},
                        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                 "minItems": 2, "maxItems": 2},
                    },
                },
                {
                    "type": "object", "additionalProperties": False, "required": ["kind", "path"],
                    "properties": {"kind": {"const": "file"}, "path": {"type": "string"}},
                },
            ]
        },
        "m": {"type": "integer", "minimum": 1},
        "rhs": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["ones", "random"]}, "seed": {"type": "integer"}},
        },
        "method": {"enum": _METHOD_NAMES},
        "formulation": {"enum": ["basic", "merged"]},
        "precond": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["none", "identity", "synthetic"]},
                "alpha": {"type": "integer", "minimum": 2, "multipleOf": 2},
            },
        },
        "mode": {
            "oneOf": [
                {
                    "type": "object", "additionalProperties": False, "required": ["kind"],
                    "properties": {
                        "kind": {"const": "converge"},
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                        "max_iters": {"type": "integer", "minimum": 0},
                        "tol_type": {"enum": ["relative", "absolute"]},
                    },
                },
                {
                    "type": "object", "additionalProperties": False, "required": ["kind", "n_iters"],
                    "properties": {"kind": {"const": "fixed"}, "n_iters": {"type": "integer", "minimum": 0}},
                },
            ]
        },
        "threads": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class RunConfig:
    matrix: dict
    method: str
    m: int = 1
    rhs: dict | None = None
    formulation: str = "merged"
    precond: dict | None = None
    mode: dict | None = None
    threads: int = 1

    def __post_init__(self):
        self.rhs = self.rhs or {"kind": "ones"}
        self.mode = self.mode or {"kind": "converge"}
        if self.precond is None:
            pre = Method.parse(self.method).preconditioned
            self.precond = {"kind": "identity" if pre else "none"}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            jsonschema.validate(d, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(map(str, exc.absolute_path)) or "<root>"
            raise UsageError(f"invalid run config at {where}: {exc.message}") from None
        cfg = cls(**d)
        if cfg.precond["kind"] == "synthetic" and "alpha" not in cfg.precond:
            raise UsageError("synthetic preconditioner needs alpha")
        pre = Method.parse(cfg.method).preconditioned
        if pre and cfg.precond["kind"] == "none":
            raise UsageError(f"{cfg.method} needs a preconditioner (identity or synthetic)")
        if not pre and cfg.precond["kind"] != "none":
            raise UsageError(f"{cfg.method} does not take a preconditioner")
        return cfg

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix, "method": self.method, "m": self.m, "rhs": self.rhs,
            "formulation": self.formulation, "precond": self.precond, "mode": self.mode,
            "threads": self.threads,
        }


# Named setups of the experiments; flags given on the command line override them.
PRESETS = {
    "table2": {"command": "count"},
    "table3": {
        "command": "solve",
        "config": {
            "matrix": {"kind": "poisson7", "dims": [200, 200, 200]},
            "method": "BiCGStab", "m": 1, "rhs": {"kind": "ones"},
            "mode": {"kind": "fixed", "n_iters": 1000},
        },
    },
    "table5": {
        "command": "model",
        "machine": "lomonosov2", "problem": "poisson7:200,200,200", "p": [1],
        "m": [1, 4, 16], "gamma": [1.0], "alpha": [2], "bw": ["ram"],
    },
    "fig5": {
        "command": "model",
        "machine": "lomonosov", "problem": "poisson5:1000,1000", "p": list(perfmodel.FIG5_P_RANGE),
        "m": [1], "gamma": [1.0, 0.5, 0.0], "alpha": [2], "bw": ["ram"],
    },
}


def _preset(name: str | None, command: str) -> dict:
    if name is None:
        return {}
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; presets: {', '.join(PRESETS)}")
    p = copy.deepcopy(PRESETS[name])
    if p.pop("command") != command:
        raise UsageError(f"preset {name!r} belongs to the {PRESETS[name]['command']!r} command")
    return p


def parse_matrix(text: str) -> dict:
    """``poisson7:NX,NY,NZ``, ``poisson5:NX,NY`` or a MatrixMarket path."""
    kind, sep, rest = text.partition(":")
    if sep and kind in ("poisson7", "poisson5"):
        try:
            dims = [int(v) for v in rest.split(",")]
        except ValueError:
            raise UsageError(f"bad grid size in {text!r}") from None
        return {"kind": kind, "dims": dims}
    return {"kind": "file", "path": text}


def build_matrix(spec: dict) -> CsrMatrix:
    if spec["kind"] == "poisson7":
        return gen_poisson_7pt(*spec["dims"])
    if spec["kind"] == "poisson5":
        return gen_poisson_5pt(*spec["dims"])
    return read_matrix_market(spec["path"])


def build_rhs(spec: dict, n: int, m: int) -> np.ndarray:
    if spec["kind"] == "ones":
        return np.ones((n, m))
    return np.random.default_rng(spec.get("seed", 0)).standard_normal((n, m))


def _solve_config(args) -> RunConfig:
    base = _preset(args.preset, "solve").get("config", {})
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    d = copy.deepcopy(base)
    if args.matrix:
        d["matrix"] = parse_matrix(args.matrix)
    if args.method:
        d["method"] = args.method
    if "method" in d:
        try:
            d["method"] = Method.parse(d["method"]).value
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.m is not None:
        d["m"] = args.m
    if args.rhs:
        d["rhs"] = {"kind": args.rhs}
    if args.seed is not None:
        d.setdefault("rhs", {"kind": "random"})
        d["rhs"]["seed"] = args.seed
    if args.formulation:
        d["formulation"] = args.formulation
    if args.precond:
        d["precond"] = {"kind": args.precond}
    if args.alpha is not None:
        d.setdefault("precond", {"kind": "synthetic"})
        d["precond"]["alpha"] = args.alpha
    if args.mode or args.tol is not None or args.iters is not None or args.tol_type:
        kind = args.mode or d.get("mode", {}).get("kind", "converge")
        mode = {"kind": kind}
        old = d.get("mode", {}) if d.get("mode", {}).get("kind") == kind else {}
        if kind == "fixed":
            mode["n_iters"] = args.iters if args.iters is not None else old.get("n_iters", 1000)
            if args.tol is not None or args.tol_type:
                raise UsageError("--tol/--tol-type apply to converge mode only")
        else:
            mode.update({k: v for k, v in old.items() if k != "kind"})
            if args.tol is not None:
                mode["tol"] = args.tol
            if args.iters is not None:
                mode["max_iters"] = args.iters
            if args.tol_type:
                mode["tol_type"] = args.tol_type
        d["mode"] = mode
    if args.threads is not None:
        d["threads"] = args.threads
    if "matrix" not in d:
        raise UsageError("no matrix given (use --matrix, --config or --preset)")
    d.setdefault("method", "BiCGStab")
    return RunConfig.from_dict(d)


def run_solve(cfg: RunConfig):
    """Run one configured solve; returns (report dict, residual rows, exit code)."""
    a = build_matrix(cfg.matrix)
    b = build_rhs(cfg.rhs, a.n_rows, cfg.m)
    pre = cfg.precond
    precond = make_preconditioner(pre["kind"], pre.get("alpha"))
    mode = cfg.mode
    kw = {"mode": mode["kind"]}
    if mode["kind"] == "fixed":
        kw["iters"] = mode["n_iters"]
    else:
        kw.update(tol=mode.get("tol", 1e-8), iters=mode.get("max_iters", 10000),
                  tol_type=mode.get("tol_type", "relative"))
    stamps: list[float] = []
    t0 = time.perf_counter()
    breakdown = None
    try:
        rep = solve(a, b, method=cfg.method, formulation=cfg.formulation, precond=precond,
                    threads=cfg.threads, observer=lambda it, st: stamps.append(time.perf_counter()), **kw)
    except BreakdownError as exc:
        rep, breakdown = exc.report, exc.info
    elapsed = time.perf_counter() - t0
    sched = method_schedule(cfg.method, cfg.formulation)
    results = {
        "matrix": {"n_rows": a.n_rows, "nnz": a.nnz, "nnz_per_row": a.nnz_per_row},
        "iterations": rep.iterations,
        "converged_columns": rep.converged_columns,
        "true_residual": rep.true_residual.tolist(),
        "rhs_norm": np.linalg.norm(b, axis=0).tolist(),
        "final_recursive_residual": rep.residual_history[-1].tolist() if rep.residual_history else [],
        "breakdown": None if breakdown is None else {
            "iteration": breakdown.iteration, "column": breakdown.column, "scalar": breakdown.scalar},
        "traffic": {
            "total": rep.traffic.as_dict(),
            "setup": rep.setup_traffic.as_dict(),
            "schedule_per_iteration": {"reads": sched.reads, "writes": sched.writes,
                                       "transfers": sched.vector_transfers},
        },
    }
    diffs = np.diff([t0] + stamps)
    timings = {
        "total_seconds": elapsed,
        "per_iteration_seconds": float(statistics.median(diffs[1:])) if len(diffs) > 1 else (
            float(diffs[0]) if len(diffs) else None),
    }
    report = {"config": cfg.to_dict(), "results": results, "timings": timings}
    rows = [[k] + h.tolist() for k, h in enumerate(rep.residual_history)]
    return report, rows, EXIT_BREAKDOWN if breakdown else EXIT_OK


def cmd_solve(args) -> int:
    cfg = _solve_config(args)
    report, rows, code = run_solve(cfg)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    with open(out / "residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + [f"col{c}" for c in range(cfg.m)])
        for r in rows:
            w.writerow([r[0]] + [repr(v) for v in r[1:]])
    res = report["results"]
    print(f"{cfg.method} ({cfg.formulation}) on N={res['matrix']['n_rows']}, m={cfg.m}: "
          f"{res['iterations']} iterations, converged={res['converged_columns']}")
    print(f"true residual: {res['true_residual']}")
    if report["timings"]["per_iteration_seconds"] is not None:
        print(f"time per iteration: {report['timings']['per_iteration_seconds']:.6g} s")
    if res["breakdown"]:
        bd = res["breakdown"]
        print(f"breakdown at iteration {bd['iteration']}, column {bd['column']}: {bd['scalar']}", file=sys.stderr)
    print(f"wrote {out / 'report.json'} and {out / 'residuals.csv'}")
    return code


def count_rows(methods=None, formulations=None) -> list[dict]:
    rows = []
    for mt in methods or list(Method):
        for f in formulations or list(Formulation):
            s = method_schedule(mt, f)
            rows.append({"method": Method.parse(mt).value, "formulation": Formulation.parse(f).value,
                         "read": s.reads, "write": s.writes, "total": s.vector_transfers})
    return rows


def cmd_count(args) -> int:
    _preset(args.preset, "count")
    try:
        methods = [Method.parse(args.method)] if args.method else None
        forms = [Formulation.parse(args.formulation)] if args.formulation else None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = count_rows(methods, forms)
    print(f"{'method':<15}{'formulation':<13}{'read':>6}{'write':>7}{'total':>7}" +
          (f"{'MB/iter':>12}" if args.n else ""))
    for r in rows:
        line = f"{r['method']:<15}{r['formulation']:<13}{r['read']:>6}{r['write']:>7}{r['total']:>7}"
        if args.n:
            line += f"{8 * args.n * args.m * r['total'] / 1e6:>12.3f}"
        print(line)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["method", "formulation", "read", "write", "total"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_bench_fusion(args) -> int:
    res = fusion_bench(args.n, args.reps, seed=args.seed or 0, threads=args.threads or 1)
    print(f"N = {res.n}, repetitions = {res.repetitions}")
    print(f"{'run':<5}{'median ms':>12}{'min ms':>12}{'transfers/elem':>16}{'GB/s':>9}")
    for r in res.rows():
        print(f"{r['run']:<5}{r['median_ms']:>12.2f}{r['min_ms']:>12.2f}"
              f"{r['transfers_per_element']:>16}{r['effective_GBps']:>9.2f}")
    print(f"run1/run2 = {res.ratio_1_2:.3f}, run3/run2 = {res.ratio_3_2:.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "results": {"n": res.n, "repetitions": res.repetitions, "digests": res.digests},
            "timings": {"rows": res.rows(), "ratio_1_2": res.ratio_1_2, "ratio_3_2": res.ratio_3_2},
        }, indent=2) + "\n")
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_p_range(text: str) -> list[int]:
    """``1,2,4``, ``1:128`` (every integer) or ``1:1024:log`` (powers of two)."""
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            lo, hi = int(parts[0]), int(parts[1])
            if len(parts) > 2 and parts[2] == "log":
                out = []
                p = lo
                while p <= hi:
                    out.append(p)
                    p *= 2
                return out
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad node range {text!r}") from None


def cmd_model(args) -> int:
    d = _preset(args.preset, "model")
    machine_name = args.machine or d.get("machine", "lomonosov")
    problem = args.problem or args.matrix or d.get("problem", "poisson5:1000,1000")
    p_range = parse_p_range(args.p) if args.p is not None else d.get("p", [1])
    ms = [int(v) for v in args.m_list.split(",") if v.strip()] if args.m_list is not None else d.get("m", [1])
    gammas = _floats(args.gamma) if args.gamma is not None else d.get("gamma", [1.0])
    alphas = _floats(args.alpha_list) if args.alpha_list is not None else d.get("alpha", [2])
    bws = [v for v in args.bw.split(",") if v] if args.bw is not None else d.get("bw", ["ram", "llc"])
    if not p_range or not ms or not gammas or not alphas or not bws:
        raise UsageError("empty parameter range")
    if any(p < 1 for p in p_range):
        raise UsageError("node counts must be >= 1")
    if any(not 0 <= g <= 1 for g in gammas):
        raise UsageError("gamma must lie in [0, 1]")
    if any(bw not in perfmodel.BW_MODES for bw in bws):
        raise UsageError(f"bandwidth modes: {', '.join(perfmodel.BW_MODES)}")
    try:
        machine = perfmodel.load_machine(machine_name)
        methods = [Method.parse(v) for v in args.methods.split(",")] if args.methods else list(Method)
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None
    mspec = parse_matrix(problem)
    if mspec["kind"] == "file":
        spec = perfmodel.ProblemSpec.from_matrix(read_matrix_market(mspec["path"]))
    else:
        spec = perfmodel.ProblemSpec.poisson(*mspec["dims"])
    if args.halo is not None:
        spec = perfmodel.ProblemSpec(spec.N, spec.m, spec.C, args.halo, spec.precond_alpha)
    rows = perfmodel.scan(machine, spec, methods, p_range, gammas, alphas, ms, bws)
    text = perfmodel.write_csv(rows, args.out)
    if args.out:
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bicgstab-mrhs", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("solve", help="solve A X = B and write report.json + residuals.csv")
    s.add_argument("--preset", help="table3")
    s.add_argument("--config", help="JSON run config")
    s.add_argument("--matrix", help="poisson7:NX,NY,NZ | poisson5:NX,NY | file.mtx")
    s.add_argument("--m", type=int)
    s.add_argument("--rhs", choices=["ones", "random"])
    s.add_argument("--seed", type=int)
    s.add_argument("--method", help=", ".join(_METHOD_NAMES))
    s.add_argument("--formulation", choices=["basic", "merged"])
    s.add_argument("--precond", choices=["none", "identity", "synthetic"])
    s.add_argument("--alpha", type=int, help="synthetic preconditioner cost in vector transfers")
    s.add_argument("--mode", choices=["converge", "fixed"])
    s.add_argument("--tol", type=float)
    s.add_argument("--tol-type", choices=["relative", "absolute"])
    s.add_argument("--iters", type=int, help="max iterations (converge) or iteration count (fixed)")
    s.add_argument("--threads", type=int)
    s.add_argument("--out", help="output directory (default .)")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("count", help="vector reads/writes per iteration")
    c.add_argument("--preset", help="table2")
    c.add_argument("--method")
    c.add_argument("--formulation")
    c.add_argument("--m", type=int, default=1)
    c.add_argument("--n", type=int, help="vector length; adds a bytes-per-iteration column")
    c.add_argument("--out", help="CSV output")
    c.set_defaults(func=cmd_count)

    b = sub.add_parser("bench-fusion", help="fused versus separate vector loops")
    b.add_argument("--n", type=int, help="vector length (default: 4x last-level cache)")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seed", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--out", help="JSON output")
    b.set_defaults(func=cmd_bench_fusion)

    md = sub.add_parser("model", help="predicted iteration times and relative performance (CSV)")
    md.add_argument("--preset", help="table5 | fig5")
    md.add_argument("--machine", help="lomonosov | lomonosov2 | machine.json")
    md.add_argument("--problem", help="poisson7:NX,NY,NZ | poisson5:NX,NY | file.mtx")
    md.add_argument("--matrix", help="alias of --problem")
    md.add_argument("--methods")
    md.add_argument("--p", help="1,2,4 | 1:128 | 1:1024:log")
    md.add_argument("--m", dest="m_list", help="comma list of RHS counts")
    md.add_argument("--gamma", help="comma list in [0,1]")
    md.add_argument("--alpha", dest="alpha_list", help="comma list of preconditioner costs")
    md.add_argument("--bw", help="comma list of ram, llc, effective")
    md.add_argument("--halo", type=float, help="override neighbour message bytes (m = 1)")
    md.add_argument("--out", help="CSV output")
    md.set_defaults(func=cmd_model)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("missing command: solve, count, bench-fusion or model")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
