"""Command-line entry point.

Subcommands:

* ``validate <network.json>``          parse and check a network file
* ``run <scenario...> --out <path>``   integrate and write trajectory CSV
* ``settle <scenario>``                integrate to equilibrium, print summary
* ``solve <network> --pm <file>``      run the optimization oracle
* ``check <scenario...>``              full pipeline: run, settle, oracle, report

Exit codes: 0 success; 1 validation or parse error; 2 numerical failure
(timeout, non-finite state, iteration cap); 3 a `check` report failed.
Errors are emitted as one JSON object per line on standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import FullState, check_theorem1
from .errors import InfeasibleProblemError, NumericalError, OlfcError, ValidationError
from .network import load_network
from .oracle import solve_olc
from .simulator import load_scenario, run, settle

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_CHECK_FAILED = 3


class _Parser(argparse.ArgumentParser):
    """argparse with the parse-error exit code pinned to the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("validation", message)
        raise SystemExit(EXIT_VALIDATION)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dt", type=float, default=None, help="integration step override [s]")
    p.add_argument("--t-end", type=float, default=None, help="horizon override [s]")
    p.add_argument("--selection", choices=["minnorm", "left", "right", "mid"], default=None,
                   help="subgradient selection rule override")
    p.add_argument("--mismatch", choices=["model", "estimate"], default=None,
                   help="power mismatch source override")
    p.add_argument("--epsilon", type=float, default=None, help="controller time-scale override")
    p.add_argument("--log-decimation", type=int, default=None, help="record every k-th step")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="olfc", description="distributed load-frequency control simulator and oracle")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="parse and validate a network file")
    p_val.add_argument("network", help="network JSON file")

    p_run = sub.add_parser("run", help="integrate scenarios and write trajectory CSVs")
    p_run.add_argument("scenario", nargs="+", help="scenario JSON file(s)")
    p_run.add_argument("--out", required=True, help="output CSV path (directory when several scenarios)")
    p_run.add_argument("--jobs", type=int, default=1, help="scenarios to run concurrently")
    _add_sim_flags(p_run)

    p_settle = sub.add_parser("settle", help="integrate a scenario to equilibrium")
    p_settle.add_argument("scenario", help="scenario JSON file")
    p_settle.add_argument("--tol", type=float, default=1e-8, help="settle tolerance on the state derivative")
    p_settle.add_argument("--t-max", type=float, default=600.0, help="settle time budget [s of model time]")
    _add_sim_flags(p_settle)

    p_solve = sub.add_parser("solve", help="solve the allocation problem with the oracle")
    p_solve.add_argument("network", help="network JSON file")
    p_solve.add_argument("--pm", required=True, help="text file with the injection vector p_m")
    p_solve.add_argument("--tol", type=float, default=1e-6, help="oracle objective tolerance")

    p_check = sub.add_parser("check", help="run, settle, solve and verify the optimality claims")
    p_check.add_argument("scenario", nargs="+", help="scenario JSON file(s)")
    p_check.add_argument("--tol", type=float, default=1e-4, help="acceptance tolerance")
    p_check.add_argument("--t-max", type=float, default=600.0, help="settle time budget [s of model time]")
    p_check.add_argument("--jobs", type=int, default=1, help="scenarios to check concurrently")
    p_check.add_argument("--out", default=None, help="write the machine-readable reports to this JSON file")
    _add_sim_flags(p_check)

    return parser


def _apply_overrides(scenario, ns):
    cfg = scenario.config
    cfg_kwargs = {}
    if ns.selection is not None:
        cfg_kwargs["selection"] = ns.selection
    if ns.mismatch is not None:
        cfg_kwargs["mismatch"] = ns.mismatch
    if ns.epsilon is not None:
        cfg_kwargs["epsilon"] = ns.epsilon
    if cfg_kwargs:
        cfg = dataclasses.replace(cfg, **cfg_kwargs)
    scn_kwargs = {"config": cfg}
    if ns.dt is not None:
        scn_kwargs["dt"] = ns.dt
    if getattr(ns, "t_end", None) is not None:
        scn_kwargs["t_end"] = ns.t_end
    if ns.log_decimation is not None:
        scn_kwargs["log_decimation"] = ns.log_decimation
    return dataclasses.replace(scenario, **scn_kwargs)


def _out_path(out: str, paths: list[str], current: str) -> Path:
    out_p = Path(out)
    if len(paths) > 1 or out_p.is_dir() or out.endswith("/"):
        out_p.mkdir(parents=True, exist_ok=True)
        return out_p / (Path(current).stem + ".csv")
    out_p.parent.mkdir(parents=True, exist_ok=True)
    return out_p


def _run_job(args: tuple) -> dict:
    path, out, all_paths, ns_dict = args
    ns = argparse.Namespace(**ns_dict)
    scenario = _apply_overrides(load_scenario(path), ns)
    log = run(scenario)
    csv_path = _out_path(out, all_paths, path)
    log.to_csv(csv_path)
    return {
        "scenario": path,
        "out": str(csv_path),
        "records": int(log.times.size),
        "t_end": float(log.times[-1]),
    }


def _check_job(args: tuple) -> dict:
    path, tol, t_max, ns_dict = args
    ns = argparse.Namespace(**ns_dict)
    scenario = _apply_overrides(load_scenario(path), ns)
    model = scenario.load_model()
    log = run(scenario, model)
    p_m = log.p_m_final
    sr = settle(
        model,
        p_m,
        tol=1e-8,
        t_max=t_max,
        plant=log.final_plant(model),
        ctrl=log.final_controller(),
        config=scenario.config,
        dt=scenario.dt,
    )
    if sr.timed_out:
        raise NumericalError(f"{path}: closed loop did not settle within {t_max:g} s (residual {sr.residual:.3e})")
    sol = solve_olc(model, model.costs, p_m, tol=1e-6)
    report = check_theorem1(model, FullState(sr.plant, sr.ctrl), sol, tol=tol, p_m=p_m)
    edge = model.incidence.T @ sr.ctrl.phi
    flows = model.susceptances * sr.plant.theta_e
    return {
        "scenario": path,
        "settle_time": sr.t,
        "report": report.to_dict(),
        "flows": flows.tolist(),
        "edge_angles": edge.tolist(),
        "objective": sol.objective,
        "mu": sr.ctrl.mu.tolist(),
    }


def _print_check_table(result: dict) -> None:
    rep = result["report"]
    checks = rep["checks"]
    detail = {
        "frequency_restored": f"|omega|_inf = {rep['omega_inf']:.3e}",
        "kkt": f"max residual = {rep['kkt']['max_residual']:.3e}",
        "theta_matches_phi": f"gap = {rep['theta_phi_gap']:.3e}",
        "line_limits": f"violation = {rep['line_violation']:.3e}",
        "p_l_matches_oracle": f"gap = {rep['p_l_gap']:.3e}",
    }
    print(f"scenario: {result['scenario']}")
    print(f"  settled at t = {result['settle_time']:.3f} s; objective = {result['objective']:.9g}; "
          f"mu spread = {rep['mu_spread']:.3e}")
    for name, ok in checks.items():
        print(f"  {name:<22} {'PASS' if ok else 'FAIL':<6} {detail.get(name, '')}")
    print(f"  {'overall':<22} {'PASS' if rep['passed'] else 'FAIL'}")


def _map_jobs(fn, job_args: list[tuple], jobs: int) -> list:
    if jobs <= 1 or len(job_args) == 1:
        return [fn(a) for a in job_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, job_args))


def _ns_dict(ns: argparse.Namespace) -> dict:
    keys = ("dt", "t_end", "selection", "mismatch", "epsilon", "log_decimation")
    return {k: getattr(ns, k, None) for k in keys}


def _cmd_validate(ns) -> int:
    model = load_network(ns.network)
    print(f"ok: {model.n} buses ({model.n_g} generators), {model.m} lines")
    return EXIT_OK


def _cmd_run(ns) -> int:
    job_args = [(p, ns.out, ns.scenario, _ns_dict(ns)) for p in ns.scenario]
    for res in _map_jobs(_run_job, job_args, ns.jobs):
        print(f"wrote {res['out']} ({res['records']} records, t_end = {res['t_end']:g} s)")
    return EXIT_OK


def _cmd_settle(ns) -> int:
    scenario = _apply_overrides(load_scenario(ns.scenario), ns)
    model = scenario.load_model()
    log = run(scenario, model)
    p_m = log.p_m_final
    sr = settle(
        model,
        p_m,
        tol=ns.tol,
        t_max=ns.t_max,
        plant=log.final_plant(model),
        ctrl=log.final_controller(),
        config=scenario.config,
        dt=scenario.dt,
    )
    from .costs import project_box  # local import to keep CLI import light
    from .dynamics import Injection, assemble_frequencies

    p_l = project_box(sr.ctrl.d, model.load_box)
    omega = assemble_frequencies(model, sr.plant, Injection(p_m=p_m, p_l=p_l))
    print(json.dumps(_jsonify({
        "converged": sr.converged,
        "t": sr.t,
        "residual": sr.residual,
        "omega_inf": float(np.max(np.abs(omega))),
        "p_l": p_l,
        "mu": sr.ctrl.mu,
        "mu_spread": float(np.max(sr.ctrl.mu) - np.min(sr.ctrl.mu)),
    })))
    if sr.timed_out:
        _emit_error("numerical", f"did not settle within {ns.t_max:g} s (residual {sr.residual:.3e})")
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_solve(ns) -> int:
    model = load_network(ns.network)
    try:
        p_m = np.loadtxt(ns.pm, dtype=float, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read injection vector from {ns.pm}: {exc}") from exc
    sol = solve_olc(model, model.costs, p_m, tol=ns.tol)
    print(json.dumps(_jsonify({
        "objective": sol.objective,
        "dual_objective": sol.dual_objective,
        "p_l_star": sol.p_l_star,
        "phi_star": sol.phi_star,
        "mu_star": sol.mu_star,
        "eta_plus_star": sol.eta_plus_star,
        "eta_minus_star": sol.eta_minus_star,
        "iterations": sol.iterations,
        "balance_residual": sol.balance_residual,
    })))
    return EXIT_OK


def _cmd_check(ns) -> int:
    job_args = [(p, ns.tol, ns.t_max, _ns_dict(ns)) for p in ns.scenario]
    results = _map_jobs(_check_job, job_args, ns.jobs)
    all_passed = True
    for res in results:
        _print_check_table(res)
        all_passed &= bool(res["report"]["passed"])
    if ns.out:
        Path(ns.out).parent.mkdir(parents=True, exist_ok=True)
        Path(ns.out).write_text(json.dumps(_jsonify(results), indent=2) + "\n")
    return EXIT_OK if all_passed else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        handler = {
            "validate": _cmd_validate,
            "run": _cmd_run,
            "settle": _cmd_settle,
            "solve": _cmd_solve,
            "check": _cmd_check,
        }[ns.command]
        return handler(ns)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    except (ValidationError, InfeasibleProblemError) as exc:
        _emit_error("validation", str(exc))
        return EXIT_VALIDATION
    except NumericalError as exc:
        _emit_error("numerical", str(exc))
        return EXIT_NUMERICAL
    except OlfcError as exc:
        _emit_error("error", str(exc))
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
