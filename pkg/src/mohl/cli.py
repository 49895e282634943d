"""Command-line entry point.

Subcommands: ``run``, ``compare``, ``tolerance-study`` and ``rerun``.
Exit codes: 0 success, 2 solver failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from . import cases as cases_mod
from . import postprocess as pp
from .bvp import BVPError
from .reference import CflViolation, GridConfig, PicardNonConvergence, admissible_dt, euler_explicit_run, euler_implicit_run
from .stepper import StepFailure, run_simulation

log = logging.getLogger("mohl")

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3

METHODS = ("mohl", "euler-implicit", "euler-explicit")
THREADS_ENV = "MOHL_THREADS"

_CONFIG_ERRORS = (cases_mod.ConfigError, cases_mod.UnknownPreset, cases_mod.MissingData,
                  cases_mod.SchemaViolation, cases_mod.NonMonotoneTime, FileNotFoundError)
_SOLVER_ERRORS = (StepFailure, BVPError, PicardNonConvergence, CflViolation, FloatingPointError)


class SolverFailure(RuntimeError):
    pass


@dataclass
class MethodSpec:
    """Solver choice and its numerical options; ``None`` means the case default."""

    method: str = "mohl"
    tol: float | None = None
    dt: float | None = None
    dx: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise cases_mod.ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        for name in ("tol", "dt", "dx"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise cases_mod.ConfigError(f"{name} must be positive")

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        """``"method=mohl,tol=1e-5,dt=0.1"``."""
        kw = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            if "=" not in part:
                raise cases_mod.ConfigError(f"expected key=value, got {part!r}")
            k, v = (s.strip() for s in part.split("=", 1))
            if k not in ("method", "tol", "dt", "dx"):
                raise cases_mod.ConfigError(f"unknown option {k!r}")
            try:
                kw[k] = v if k == "method" else float(v)
            except ValueError as exc:
                raise cases_mod.ConfigError(f"{k} must be a number, got {v!r}") from exc
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"method": self.method, "tol": self.tol, "dt": self.dt, "dx": self.dx}


@dataclass
class RunManifest:
    command: str
    case: str
    case_config: dict | None
    method: dict
    grid: dict
    wall_seconds: float
    iterations: dict
    mesh_sizes: dict
    outputs: list = field(default_factory=list)
    host: dict = field(default_factory=dict)
    status: str = "ok"
    message: str = ""

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(self.__dict__, indent=2, default=_jsonable))
        return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def host_fingerprint() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "mohl": __version__,
        "kernel_backend": _kernels.backend(),
    }


# ---------------------------------------------------------------------------
# case loading and execution


def load_case(name_or_path: str, sensor_csv: str | None = None):
    """Preset name or JSON case file."""
    if name_or_path in cases_mod.PRESETS:
        return cases_mod.preset(name_or_path, sensor_csv=sensor_csv)
    path = Path(name_or_path)
    if path.suffix.lower() == ".json" or path.exists():
        return cases_mod.load_case(path)
    raise cases_mod.UnknownPreset(name_or_path)


def execute(case, spec: MethodSpec, tau_star: float | None = None, keep_solutions: bool = False):
    """Run ``case`` with ``spec``; returns the result and the grid description."""
    if tau_star is not None:
        case = case.replace(tau_star=tau_star)
    if spec.method == "mohl":
        if spec.dt is not None:
            case = case.replace(dt_star=spec.dt)
        opts = case.layer_options(spec.tol, spec.tol)
        res = run_simulation(case, keep_solutions=keep_solutions, options=opts)
        grid = {"dt_star": case.dt_star, "moisture_tol": opts.moisture.rel_tol, "heat_tol": opts.heat.rel_tol,
                "initial_nodes": opts.initial_nodes}
        return res, grid
    dx = spec.dx if spec.dx is not None else 1e-2
    out_dt = case.dt_star
    probe = GridConfig.from_spacing(dx, 1.0, case.model)
    if spec.method == "euler-implicit":
        dt = spec.dt if spec.dt is not None else 1e-2
        grid = GridConfig(probe.intervals, dt)
        k = out_dt / dt
        res = euler_implicit_run(case, grid, output_dt=out_dt if abs(k - round(k)) < 1e-9 else None)
    else:
        dt = spec.dt if spec.dt is not None else admissible_dt(case, probe.intervals, out_dt)
        grid = GridConfig(probe.intervals, dt)
        k = out_dt / dt
        res = euler_explicit_run(case, grid, output_dt=out_dt if abs(k - round(k)) < 1e-9 else None)
    return res, {"dx_star": grid.dx_star, "dt_star": grid.dt_star, "n_x": grid.n_x, **res.meta}


def _mesh_stats(res) -> dict:
    out = {}
    for name in ("mesh_v", "mesh_u"):
        arr = np.asarray(getattr(res, name))
        out[name] = arr.tolist()
        if arr.size:
            out[name + "_min"] = int(arr.min())
            out[name + "_max"] = int(arr.max())
            out[name + "_mean"] = float(arr.mean())
    return out


def _check(res):
    if res.error is not None:
        raise SolverFailure(str(res.error))


# ---------------------------------------------------------------------------
# commands


def _spec_from_args(args) -> MethodSpec:
    return MethodSpec(args.method, args.tol, args.dt, args.dx)


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.case == "appendix_c":
        return _run_appendix_c(args, out)
    case = load_case(args.case, args.sensor_csv)
    spec = _spec_from_args(args)
    res, grid = execute(case, spec, args.tau)
    return _write_run(out, "run", args.case, case, spec, grid, res, args.tau)


def _write_run(out: Path, command: str, case_name: str, case, spec: MethodSpec, grid: dict, res,
               tau: float | None) -> int:
    files = [pp.export_csv(pp.fields_table(res), out / "fields.csv")]
    if res.times.size:
        files.append(pp.export_csv(pp.flux_table(pp.boundary_fluxes(res, case.model, 0.0)), out / "fluxes.csv"))
    manifest = RunManifest(
        command=command, case=case_name, case_config=cases_mod.case_to_dict(case), method=spec.to_dict(),
        grid={**grid, "tau_star": case.tau_star if tau is None else tau},
        wall_seconds=res.wall_seconds,
        iterations={"v": np.asarray(res.iterations_v).tolist(), "u": np.asarray(res.iterations_u).tolist()},
        mesh_sizes=_mesh_stats(res), outputs=[str(f) for f in files], host=host_fingerprint(),
    )
    if res.error is not None:
        manifest.status = "solver-failure"
        manifest.message = str(res.error)
    manifest.write(out / "manifest.json")
    _check(res)
    return EXIT_OK


def _run_appendix_c(args, out: Path) -> int:
    bench = cases_mod.preset("appendix_c")
    tol = args.tol if args.tol is not None else 1e-8
    t0 = time.perf_counter()
    sol = cases_mod.solve_interface_benchmark(bench, tol=tol)
    wall = time.perf_counter() - t0
    x = np.linspace(-1.0, 1.0, 401)
    val, der = sol.evaluate(x)
    exact = cases_mod.interface_analytic_solution(bench, x)
    files = [
        pp.export_csv(pp.Table(("x", "u", "du_dx"), list(zip(x.tolist(), val[0].tolist(), val[1].tolist()))),
                      out / "solution.csv"),
        pp.export_csv(pp.Table(("x", "u_num", "u_analytic", "abs_error"),
                               list(zip(x.tolist(), val[0].tolist(), exact.tolist(),
                                        np.abs(val[0] - exact).tolist()))),
                      out / "error_vs_analytic.csv"),
    ]
    RunManifest(
        command="run", case="appendix_c", case_config=None,
        method={"method": "mohl", "tol": tol, "dt": None, "dx": None},
        grid={"k1": bench.k1, "k2": bench.k2, "mode": bench.mode, "nodes": sol.mesh.size},
        wall_seconds=wall, iterations={"newton": sol.stats.newton_iterations},
        mesh_sizes={"nodes": sol.mesh.size}, outputs=[str(f) for f in files], host=host_fingerprint(),
        message=f"max abs error {float(np.max(np.abs(val[0] - exact))):.3e}",
    ).write(out / "manifest.json")
    return EXIT_OK


def cmd_compare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    case = load_case(args.case, args.sensor_csv)
    base_spec = MethodSpec.parse(args.baseline)
    cand_spec = MethodSpec.parse(args.candidate)
    base, _ = execute(case, base_spec, args.tau)
    _check(base)
    cand, _ = execute(case, cand_spec, args.tau)
    _check(cand)
    report = pp.compare_results(cand, base)
    files = [pp.export_csv(pp.error_table(report), out / "errors.csv")]
    ratio = cand.wall_seconds / base.wall_seconds if base.wall_seconds > 0 else float("nan")
    timing = pp.Table(
        ("role", "method", "wall_seconds", "ratio", "eps_inf_u", "eps_inf_v"),
        [("baseline", base_spec.method, base.wall_seconds, 1.0, 0.0, 0.0),
         ("candidate", cand_spec.method, cand.wall_seconds, ratio, report.eps_inf_u, report.eps_inf_v)],
    )
    files.append(pp.export_csv(timing, out / "timing.csv"))
    RunManifest(
        command="compare", case=args.case, case_config=cases_mod.case_to_dict(case),
        method={"baseline": base_spec.to_dict(), "candidate": cand_spec.to_dict()},
        grid={"tau_star": args.tau}, wall_seconds=base.wall_seconds + cand.wall_seconds,
        iterations={}, mesh_sizes=_mesh_stats(cand), outputs=[str(f) for f in files], host=host_fingerprint(),
        message=f"eps_inf_u {report.eps_inf_u:.3e} eps_inf_v {report.eps_inf_v:.3e} ratio {ratio:.3f}",
    ).write(out / "manifest.json")
    print(f"eps_inf_u={report.eps_inf_u:.3e} eps_inf_v={report.eps_inf_v:.3e} "
          f"time ratio (candidate/baseline)={ratio:.3f}")
    return EXIT_OK


STUDY_COLUMNS = ("tol", "status", "eps_inf_u", "eps_inf_v", "mesh_v_min", "mesh_v_mean", "mesh_v_max",
                 "mesh_u_min", "mesh_u_mean", "mesh_u_max", "wall_seconds", "message")


def tolerance_study(case, tols, oracle, tau_star: float | None = None, threads: int = 1) -> list[dict]:
    """One record per tolerance; failures are recorded and the study continues."""

    def one(tol):
        rec = {"tol": tol}
        try:
            res, _ = execute(case, MethodSpec("mohl", tol=tol), tau_star)
        except _SOLVER_ERRORS as exc:
            return {**rec, "status": "solver-failure", "message": str(exc)}
        rec["wall_seconds"] = res.wall_seconds
        for name in ("mesh_v", "mesh_u"):
            arr = np.asarray(getattr(res, name))
            if arr.size:
                rec.update({f"{name}_min": int(arr.min()), f"{name}_mean": float(arr.mean()),
                            f"{name}_max": int(arr.max())})
        if res.error is not None:
            return {**rec, "status": "solver-failure", "message": str(res.error)}
        rep = pp.compare_results(res, oracle)
        return {**rec, "status": "ok", "eps_inf_u": rep.eps_inf_u, "eps_inf_v": rep.eps_inf_v, "message": ""}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, tols))
    return [one(t) for t in tols]


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise cases_mod.ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise cases_mod.ConfigError(f"{THREADS_ENV} must be at least 1")
    return n


def cmd_tolerance_study(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    case = load_case(args.case, args.sensor_csv)
    try:
        tols = [float(t) for t in args.tols.split(",") if t.strip()]
    except ValueError as exc:
        raise cases_mod.ConfigError(f"bad tolerance list {args.tols!r}") from exc
    if not tols or min(tols) <= 0:
        raise cases_mod.ConfigError("need a nonempty list of positive tolerances")
    oracle_spec = MethodSpec("euler-implicit", dt=args.oracle_dt, dx=args.oracle_dx)
    oracle, grid = execute(case, oracle_spec, args.tau)
    _check(oracle)
    rows = tolerance_study(case, tols, oracle, args.tau, _threads())
    files = [pp.export_csv(pp.rows_table(STUDY_COLUMNS, rows), out / "tolerance_study.csv")]
    RunManifest(
        command="tolerance-study", case=args.case, case_config=cases_mod.case_to_dict(case),
        method={"tols": tols, "oracle": oracle_spec.to_dict()}, grid={"oracle": grid, "tau_star": args.tau},
        wall_seconds=oracle.wall_seconds + sum(r.get("wall_seconds", 0.0) for r in rows),
        iterations={}, mesh_sizes={}, outputs=[str(f) for f in files], host=host_fingerprint(),
    ).write(out / "manifest.json")
    for r in rows:
        print(f"tol={r['tol']:.0e} status={r['status']} eps_inf_u={r.get('eps_inf_u', float('nan')):.3e} "
              f"eps_inf_v={r.get('eps_inf_v', float('nan')):.3e} mesh_v_max={r.get('mesh_v_max', '-')}")
    return EXIT_OK


def cmd_rerun(args) -> int:
    """Repeat a ``run`` from its manifest; the embedded case config is used verbatim."""
    try:
        data = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise cases_mod.ConfigError(f"cannot read manifest {args.manifest}: {exc}") from exc
    if data.get("command") != "run" or data.get("case_config") is None:
        if data.get("case") == "appendix_c":
            ns = argparse.Namespace(tol=data["method"]["tol"])
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            return _run_appendix_c(ns, out)
        raise cases_mod.ConfigError("only manifests written by 'run' can be replayed")
    case = cases_mod.case_from_dict(data["case_config"])
    spec = MethodSpec(**data["method"])
    tau = data["grid"].get("tau_star")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res, grid = execute(case, spec, tau)
    return _write_run(out, "run", data["case"], case, spec, grid, res, tau)


# ---------------------------------------------------------------------------
# argument parsing


def _add_case_args(p):
    p.add_argument("case", help="preset name (%s) or JSON case file" % ", ".join(cases_mod.PRESETS))
    p.add_argument("--sensor-csv", default=None, help="sensor file for the experimental preset")
    p.add_argument("--tau", type=float, default=None, help="final dimensionless time (default: case value)")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mohl", description="Coupled heat and moisture transfer by the "
                                     "method of horizontal lines, with finite-difference references.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a case and write fields, fluxes and a manifest")
    _add_case_args(p)
    p.add_argument("--method", choices=METHODS, default="mohl")
    p.add_argument("--tol", type=float, default=None, help="collocation tolerance (both fields)")
    p.add_argument("--dt", type=float, default=None, help="dimensionless time step")
    p.add_argument("--dx", type=float, default=None, help="grid spacing of the finite-difference methods")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="error profiles and timing of a candidate against a baseline")
    _add_case_args(p)
    p.add_argument("--baseline", default="method=euler-implicit,dx=1e-3,dt=1e-3")
    p.add_argument("--candidate", default="method=mohl")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tolerance-study", help="accuracy and mesh size across tolerances")
    _add_case_args(p)
    p.add_argument("--tols", default="1e-1,1e-2,1e-3,1e-4,1e-5,1e-6")
    p.add_argument("--oracle-dx", type=float, default=1e-3)
    p.add_argument("--oracle-dt", type=float, default=1e-3)
    p.set_defaults(func=cmd_tolerance_study)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        for name in ("tol", "dt", "dx"):
            val = getattr(args, name, None)
            if val is not None and not val > 0:
                raise cases_mod.ConfigError(f"--{name} must be positive")
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, *_SOLVER_ERRORS) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except pp.IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
